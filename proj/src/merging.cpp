// SPDX-License-Identifier: Apache-2.0
#include "moec/merging.hpp"

#include <algorithm>
#include <sstream>

#include "moec/error.hpp"
#include "moec/similarity.hpp"

namespace moec {

std::size_t auto_capacity(std::size_t num_experts) { return num_experts <= 128 ? 16 : 32; }

const char* method_name(CompressMethod m) {
    switch (m) {
    case CompressMethod::ream: return "ream";
    case CompressMethod::prune_reap: return "reap";
    case CompressMethod::prune_freq: return "freq";
    case CompressMethod::cluster: return "hcsmoe";
    }
    return "?";
}

const char* merge_weight_name(MergeWeightKind k) {
    switch (k) {
    case MergeWeightKind::reap: return "reap";
    case MergeWeightKind::freq: return "freq";
    case MergeWeightKind::uniform: return "uniform";
    }
    return "?";
}

const char* alignment_name(AlignmentMode m) {
    switch (m) {
    case AlignmentMode::none: return "none";
    case AlignmentMode::wt: return "wt";
    case AlignmentMode::act: return "act";
    case AlignmentMode::combined: return "combined";
    }
    return "?";
}

CompressMethod parse_method(const std::string& text) {
    if (text == "ream") return CompressMethod::ream;
    if (text == "reap") return CompressMethod::prune_reap;
    if (text == "freq") return CompressMethod::prune_freq;
    if (text == "hcsmoe") return CompressMethod::cluster;
    throw ArgumentError("unknown method '" + text + "' (ream|reap|freq|hcsmoe)");
}

MergeWeightKind parse_merge_weights(const std::string& text) {
    if (text == "reap") return MergeWeightKind::reap;
    if (text == "freq") return MergeWeightKind::freq;
    if (text == "uniform") return MergeWeightKind::uniform;
    throw ArgumentError("unknown merge weights '" + text + "' (reap|freq|uniform)");
}

AlignmentMode parse_alignment(const std::string& text) {
    if (text == "none") return AlignmentMode::none;
    if (text == "wt") return AlignmentMode::wt;
    if (text == "act") return AlignmentMode::act;
    if (text == "combined") return AlignmentMode::combined;
    throw ArgumentError("unknown alignment '" + text + "' (none|wt|act|combined)");
}

Matrix method_similarity(const LayerStats& stats, const CompressionConfig& cfg) {
    if (cfg.method == CompressMethod::cluster) return sim_expert_outputs(stats);
    Matrix sim = cfg.use_gated_outputs ? sim_gated_outputs(stats) : sim_expert_outputs(stats);
    if (cfg.use_gate_sim) {
        const Matrix g = sim_gate_logits(stats);
        for (std::size_t k = 0; k < sim.data.size(); ++k) sim.data[k] += g.data[k];
    }
    return sim;
}

GroupingPlan plan_layer(const LayerStats& stats, const CompressionConfig& cfg) {
    switch (cfg.method) {
    case CompressMethod::prune_reap: return prune_select(saliency_reap(stats), cfg.n_keep);
    case CompressMethod::prune_freq: return prune_select(saliency_freq(stats), cfg.n_keep);
    case CompressMethod::cluster:
        return cluster_avg_linkage(method_similarity(stats, cfg), cfg.n_keep);
    case CompressMethod::ream: break;
    }
    const SaliencyVector sal =
        cfg.saliency == SaliencyKind::reap ? saliency_reap(stats) : saliency_freq(stats);
    const Matrix sim = method_similarity(stats, cfg);
    if (!cfg.pseudo_prune_grouping) return nearest_centroid(sal, sim, cfg.n_keep);
    const std::size_t cap = cfg.capacity ? cfg.capacity : auto_capacity(stats.num_experts);
    return pseudo_prune(sal, sim, cfg.n_keep, cap);
}

Vector merge_weight_values(const LayerStats& stats, MergeWeightKind kind) {
    switch (kind) {
    case MergeWeightKind::reap: return saliency_reap(stats).values;
    case MergeWeightKind::freq: return saliency_freq(stats).values;
    case MergeWeightKind::uniform: break;
    }
    return Vector(stats.num_experts, 1.0);
}

namespace {

void accumulate(Matrix& acc, const Matrix& m, double w) {
    for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += w * m.data[k];
}

} // namespace

MergedGroup merge_group(const MoELayer& layer, const LayerStats* stats, std::size_t centroid,
                        const std::vector<std::size_t>& members, const Vector& weight_of,
                        AlignmentMode mode) {
    const std::size_t n = layer.num_experts();
    if (centroid >= n) throw ArgumentError("merge_group: centroid index out of range");
    for (std::size_t m : members)
        if (m >= n || m == centroid) throw ArgumentError("merge_group: bad member index");

    MergedGroup out;
    if (members.empty()) {
        out.weights = layer.experts[centroid]; // singleton passes through untouched
        return out;
    }

    // Align every member against the original centroid, in ascending member
    // order (also the provenance order).
    std::vector<std::size_t> sorted_members = members;
    std::sort(sorted_members.begin(), sorted_members.end());
    std::vector<ExpertWeights> aligned(sorted_members.size());
    for (std::size_t i = 0; i < sorted_members.size(); ++i) {
        AlignedMember am = align_member(layer.experts[centroid], layer.experts[sorted_members[i]],
                                        stats, centroid, sorted_members[i], mode);
        aligned[i] = std::move(am.weights);
        out.member_perms.push_back(std::move(am.perm));
        if (am.act_fallback) ++out.act_fallbacks;
    }

    // Fixed summation order: ascending original expert index.
    std::vector<std::pair<std::size_t, const ExpertWeights*>> group;
    group.emplace_back(centroid, &layer.experts[centroid]);
    for (std::size_t i = 0; i < sorted_members.size(); ++i)
        group.emplace_back(sorted_members[i], &aligned[i]);
    std::sort(group.begin(), group.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double total = 0.0;
    for (const auto& [idx, w] : group) total += weight_of[idx];
    const bool uniform = total < 1e-12;
    if (uniform) total = double(group.size());

    const ExpertWeights& shape = layer.experts[centroid];
    out.weights.gate_proj = Matrix(shape.gate_proj.rows, shape.gate_proj.cols);
    out.weights.up_proj = Matrix(shape.up_proj.rows, shape.up_proj.cols);
    out.weights.down_proj = Matrix(shape.down_proj.rows, shape.down_proj.cols);
    for (const auto& [idx, w] : group) {
        const double s = uniform ? 1.0 : weight_of[idx];
        accumulate(out.weights.gate_proj, w->gate_proj, s);
        accumulate(out.weights.up_proj, w->up_proj, s);
        accumulate(out.weights.down_proj, w->down_proj, s);
    }
    for (Matrix* m : {&out.weights.gate_proj, &out.weights.up_proj, &out.weights.down_proj})
        for (double& v : m->data) v /= total;
    return out;
}

Matrix reduce_gate(const Matrix& gate, const std::vector<std::size_t>& centroids) {
    std::vector<bool> seen(gate.rows, false);
    for (std::size_t c : centroids) {
        if (c >= gate.rows) throw ArgumentError("reduce_gate: centroid index out of range");
        if (seen[c]) throw ArgumentError("reduce_gate: duplicate centroid index");
        seen[c] = true;
    }
    Matrix out(centroids.size(), gate.cols);
    for (std::size_t r = 0; r < centroids.size(); ++r)
        for (std::size_t c = 0; c < gate.cols; ++c) out.at(r, c) = gate.at(centroids[r], c);
    return out;
}

CompressedLayer compress_layer(const MoELayer& layer, const LayerStats& stats,
                               const CompressionConfig& cfg) {
    const std::size_t n = layer.num_experts();
    if (cfg.n_keep < 1 || cfg.n_keep > n)
        throw ArgumentError("compress_layer: n_keep=" + std::to_string(cfg.n_keep) +
                            " outside [1, " + std::to_string(n) + "]");
    if (layer.top_k > cfg.n_keep)
        throw ArgumentError("compress_layer: n_keep below top_k");

    CompressedLayer out;
    if (cfg.n_keep == n) {
        out.layer = layer; // identity compression is a bit-exact copy
        out.prov.plan = identity_plan(n);
        out.prov.perms.resize(n);
        return out;
    }

    out.prov.plan = plan_layer(stats, cfg);
    const GroupingPlan& plan = out.prov.plan;
    const Vector weight_of = merge_weight_values(stats, cfg.merge_weights);

    out.layer.top_k = layer.top_k;
    out.layer.gate = reduce_gate(layer.gate, plan.centroids);
    out.layer.experts.resize(plan.centroids.size());
    out.prov.perms.resize(plan.centroids.size());
    const std::ptrdiff_t slots = static_cast<std::ptrdiff_t>(plan.centroids.size());
    std::vector<std::size_t> fallbacks(plan.centroids.size(), 0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ss = 0; ss < slots; ++ss) {
        const std::size_t s = static_cast<std::size_t>(ss);
        std::vector<std::size_t> members;
        for (std::size_t e : plan.groups[s])
            if (e != plan.centroids[s]) members.push_back(e);
        MergedGroup mg = merge_group(layer, &stats, plan.centroids[s], members, weight_of,
                                     cfg.alignment);
        out.layer.experts[s] = std::move(mg.weights);
        out.prov.perms[s] = std::move(mg.member_perms);
        fallbacks[s] = mg.act_fallbacks;
    }
    for (std::size_t f : fallbacks) out.prov.act_fallbacks += f;
    return out;
}

ModelSpec compress_model(const ModelSpec& model, const std::vector<Vector>& calib_tokens,
                         const CompressionConfig& cfg, CompressionProvenance* prov) {
    if (model.layers.empty()) throw ArgumentError("compress_model: model has no layers");
    if (calib_tokens.empty() && cfg.n_keep != model.num_experts())
        throw ArgumentError("compress_model: empty calibration set");

    CompressionProvenance local;
    CompressionProvenance& report = prov ? *prov : local;
    report.config = cfg;
    report.layers.clear();

    ModelSpec out = model;
    if (cfg.n_keep == model.num_experts()) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            LayerProvenance lp;
            lp.plan = identity_plan(model.layers[l].num_experts());
            lp.perms.resize(lp.plan.centroids.size());
            report.layers.push_back(std::move(lp));
        }
        return out; // bit-exact copy, no statistics needed
    }

    const CollectOptions copts{cfg.dense_capture, cfg.renormalize_topk};
    const ForwardOptions fopts{cfg.renormalize_topk};
    out.layers.clear();
    std::vector<Vector> streams = calib_tokens;

    if (cfg.sequential) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            const LayerStats stats = collect_layer_stats(model.layers[l], streams, copts);
            CompressedLayer cl = compress_layer(model.layers[l], stats, cfg);
            out.layers.push_back(std::move(cl.layer));
            report.layers.push_back(std::move(cl.prov));
            advance_streams(out.layers[l], streams, fopts);
        }
    } else {
        std::vector<LayerStats> all;
        all.reserve(model.layers.size());
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            all.push_back(collect_layer_stats(model.layers[l], streams, copts));
            advance_streams(model.layers[l], streams, fopts);
        }
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            CompressedLayer cl = compress_layer(model.layers[l], all[l], cfg);
            out.layers.push_back(std::move(cl.layer));
            report.layers.push_back(std::move(cl.prov));
        }
    }
    return out;
}

std::string write_manifest(const CompressionProvenance& prov) {
    const CompressionConfig& c = prov.config;
    std::ostringstream os;
    os << "moec compression manifest\n";
    os << "method " << method_name(c.method) << " n_keep " << c.n_keep << " capacity "
       << c.capacity << " merge_weights " << merge_weight_name(c.merge_weights) << " alignment "
       << alignment_name(c.alignment) << "\n";
    os << "saliency " << (c.saliency == SaliencyKind::reap ? "reap" : "freq") << " sequential "
       << (c.sequential ? 1 : 0) << " dense_capture " << (c.dense_capture ? 1 : 0)
       << " renormalize_topk " << (c.renormalize_topk ? 1 : 0) << " gate_sim "
       << (c.use_gate_sim ? 1 : 0) << " gated_outputs " << (c.use_gated_outputs ? 1 : 0)
       << " pseudo_prune " << (c.pseudo_prune_grouping ? 1 : 0) << "\n";
    for (std::size_t l = 0; l < prov.layers.size(); ++l) {
        const LayerProvenance& lp = prov.layers[l];
        os << "layer " << l << " kept " << lp.plan.centroids.size() << " act_fallbacks "
           << lp.act_fallbacks << "\n";
        os << dump_plan(lp.plan);
        for (std::size_t s = 0; s < lp.perms.size(); ++s) {
            std::size_t pi = 0;
            for (std::size_t e : lp.plan.groups[s]) {
                if (e == lp.plan.centroids[s]) continue;
                os << "perm slot " << s << " member " << e << ":";
                const auto& perm = lp.perms[s][pi++];
                for (std::size_t q : perm) os << ' ' << q;
                os << "\n";
            }
        }
    }
    return os.str();
}

} // namespace moec
