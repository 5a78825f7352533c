// SPDX-License-Identifier: Apache-2.0
#include "moec/model.hpp"

#include <cmath>
#include <numeric>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec {

ExpertResult expert_forward(const ExpertWeights& e, const Vector& x) {
    if (e.gate_proj.cols != x.size())
        throw ShapeError("expert_forward: input length does not match d_model");
    const Vector g = gemv(e.gate_proj, x);
    const Vector u = gemv(e.up_proj, x);
    ExpertResult r;
    r.hidden.resize(g.size());
    for (std::size_t q = 0; q < g.size(); ++q) r.hidden[q] = silu(g[q]) * u[q];
    r.y = gemv(e.down_proj, r.hidden);
    return r;
}

RoutingTrace route_token(const MoELayer& layer, const Vector& x, const ForwardOptions& opts) {
    if (layer.gate.cols != x.size())
        throw ShapeError("route_token: input length does not match gate width");
    if (layer.top_k < 1 || layer.top_k > layer.num_experts())
        throw ArgumentError("route_token: top_k outside [1, num_experts]");
    RoutingTrace t;
    t.logits = gemv(layer.gate, x);
    t.probs = softmax(t.logits);
    t.masked = topk_mask(t.probs, layer.top_k);
    if (opts.renormalize_topk) {
        double s = 0.0;
        for (double v : t.masked) s += v;
        if (s > 0.0)
            for (double& v : t.masked) v /= s;
    }
    for (std::size_t i = 0; i < t.masked.size(); ++i)
        if (t.masked[i] != 0.0) t.active.push_back(i);
    return t;
}

MoEResult moe_forward(const MoELayer& layer, const Vector& x, const ForwardOptions& opts) {
    MoEResult r;
    r.trace = route_token(layer, x, opts);
    r.y.assign(x.size(), 0.0);
    for (std::size_t i : r.trace.active) {
        ExpertResult er = expert_forward(layer.experts[i], x);
        const double w = r.trace.masked[i];
        for (std::size_t d = 0; d < r.y.size(); ++d) r.y[d] += w * er.y[d];
        r.trace.outputs.push_back(std::move(er.y));
        r.trace.hidden.push_back(std::move(er.hidden));
    }
    return r;
}

ModelResult model_forward(const ModelSpec& model, const Vector& token, const ForwardOptions& opts) {
    ModelResult out;
    out.pre_logit = token;
    out.traces.reserve(model.num_layers);
    for (const MoELayer& layer : model.layers) {
        MoEResult r = moe_forward(layer, out.pre_logit, opts);
        for (std::size_t d = 0; d < out.pre_logit.size(); ++d) out.pre_logit[d] += r.y[d];
        out.traces.push_back(std::move(r.trace));
    }
    return out;
}

void advance_streams(const MoELayer& layer, std::vector<Vector>& streams, const ForwardOptions& opts) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(streams.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        Vector& x = streams[static_cast<std::size_t>(t)];
        const MoEResult r = moe_forward(layer, x, opts);
        for (std::size_t d = 0; d < x.size(); ++d) x[d] += r.y[d];
    }
}

namespace ref {
void advance_streams(const MoELayer& layer, std::vector<Vector>& streams, const ForwardOptions& opts) {
    for (Vector& x : streams) {
        const MoEResult r = moe_forward(layer, x, opts);
        for (std::size_t d = 0; d < x.size(); ++d) x[d] += r.y[d];
    }
}
} // namespace ref

// --- synthetic models ------------------------------------------------------

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = std_dev * rng.gaussian();
    return m;
}

void snap_f32(Matrix& m) {
    for (double& v : m.data) v = quantize_f32(v);
}

void snap_f32(ExpertWeights& e) {
    snap_f32(e.gate_proj);
    snap_f32(e.up_proj);
    snap_f32(e.down_proj);
}

ExpertWeights random_expert(Rng& rng, std::size_t d_model, std::size_t d_ff) {
    ExpertWeights e;
    e.gate_proj = random_matrix(rng, d_ff, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)));
    e.up_proj = random_matrix(rng, d_ff, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)));
    e.down_proj = random_matrix(rng, d_model, d_ff, 1.0 / std::sqrt(static_cast<double>(d_ff)));
    return e;
}

// Hidden-neuron relabeling: slot q of the result takes source neuron perm[q].
ExpertWeights apply_hidden_perm(const ExpertWeights& e, const std::vector<std::size_t>& perm) {
    ExpertWeights out;
    out.gate_proj = Matrix(e.gate_proj.rows, e.gate_proj.cols);
    out.up_proj = Matrix(e.up_proj.rows, e.up_proj.cols);
    out.down_proj = Matrix(e.down_proj.rows, e.down_proj.cols);
    const std::size_t d_ff = e.gate_proj.rows;
    for (std::size_t q = 0; q < d_ff; ++q) {
        const std::size_t s = perm[q];
        for (std::size_t c = 0; c < e.gate_proj.cols; ++c) {
            out.gate_proj.at(q, c) = e.gate_proj.at(s, c);
            out.up_proj.at(q, c) = e.up_proj.at(s, c);
        }
        for (std::size_t r = 0; r < e.down_proj.rows; ++r)
            out.down_proj.at(r, q) = e.down_proj.at(r, s);
    }
    return out;
}

void add_noise(Matrix& m, Rng& rng, double scale) {
    for (double& v : m.data) v += scale * rng.gaussian();
}

// Unit vector along all-ones; the token generator biases every token to have
// a positive component along this direction (shared convention).
Vector ones_direction(std::size_t d) {
    Vector u(d, 1.0 / std::sqrt(static_cast<double>(d)));
    return u;
}

} // namespace

ModelSpec synth_model(std::size_t d_model, std::size_t d_ff, std::size_t num_layers,
                      std::size_t num_experts, std::size_t top_k, const RedundancyPlan& plan,
                      std::uint64_t seed, double router_scale) {
    if (d_model == 0 || d_ff == 0 || num_layers == 0 || num_experts == 0)
        throw ArgumentError("synth_model: all dimensions must be positive");
    if (top_k < 1 || top_k > num_experts)
        throw ArgumentError("synth_model: top_k outside [1, num_experts]");
    const bool redundant = plan.base_experts > 0;
    if (redundant && plan.base_experts * plan.clones_per_base != num_experts)
        throw ArgumentError("synth_model: base_experts * clones_per_base must equal num_experts");

    ModelSpec model;
    model.d_model = d_model;
    model.d_ff = d_ff;
    model.num_layers = num_layers;
    model.top_k = top_k;
    model.seed = seed;

    const double row_std = router_scale / std::sqrt(static_cast<double>(d_model));
    const Vector u = ones_direction(d_model);

    for (std::size_t l = 0; l < num_layers; ++l) {
        Rng rng(derive_seed(seed, 0x6d6f6543ULL, l));
        MoELayer layer;
        layer.top_k = top_k;
        layer.gate = Matrix(num_experts, d_model);
        layer.experts.resize(num_experts);

        if (!redundant) {
            for (std::size_t e = 0; e < num_experts; ++e) layer.experts[e] = random_expert(rng, d_model, d_ff);
            for (double& v : layer.gate.data) v = row_std * rng.gaussian();
        } else {
            const std::size_t nb = plan.base_experts;
            // Bases first (indices < nb), then replica blocks.
            for (std::size_t b = 0; b < nb; ++b) layer.experts[b] = random_expert(rng, d_model, d_ff);
            for (std::size_t r = 1; r < plan.clones_per_base; ++r)
                for (std::size_t b = 0; b < nb; ++b) {
                    ExpertWeights clone = layer.experts[b];
                    if (plan.permute_hidden) {
                        std::vector<std::size_t> perm(d_ff);
                        std::iota(perm.begin(), perm.end(), 0);
                        // Fisher-Yates on the generator's uniform stream.
                        for (std::size_t q = d_ff - 1; q > 0; --q) {
                            const std::size_t j = static_cast<std::size_t>(rng.next_u64() % (q + 1));
                            std::swap(perm[q], perm[j]);
                        }
                        clone = apply_hidden_perm(clone, perm);
                    }
                    if (plan.noise_scale > 0.0) {
                        add_noise(clone.gate_proj, rng, plan.noise_scale);
                        add_noise(clone.up_proj, rng, plan.noise_scale);
                        add_noise(clone.down_proj, rng, plan.noise_scale);
                    }
                    layer.experts[r * nb + b] = std::move(clone);
                }

            // Base router rows are always independent draws.
            for (std::size_t b = 0; b < nb; ++b)
                for (std::size_t c = 0; c < d_model; ++c) layer.gate.at(b, c) = row_std * rng.gaussian();
            for (std::size_t r = 1; r < plan.clones_per_base; ++r)
                for (std::size_t b = 0; b < nb; ++b) {
                    const std::size_t e = r * nb + b;
                    for (std::size_t c = 0; c < d_model; ++c) {
                        double v;
                        switch (plan.router_mode) {
                            case RouterMode::independent:
                                v = row_std * rng.gaussian();
                                break;
                            case RouterMode::cold_clone:
                                v = plan.gate_jitter * row_std * rng.gaussian() - plan.gate_depress * u[c];
                                break;
                            case RouterMode::warm_clone:
                                v = layer.gate.at(b, c) + plan.gate_jitter * row_std * rng.gaussian() -
                                    plan.gate_depress * u[c];
                                break;
                            default:
                                v = row_std * rng.gaussian();
                                break;
                        }
                        layer.gate.at(e, c) = v;
                    }
                }
        }

        for (ExpertWeights& e : layer.experts) snap_f32(e);
        snap_f32(layer.gate);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

ModelSpec synth_specialist_model(std::size_t d_model, std::size_t d_ff, std::size_t num_layers,
                                 std::size_t num_experts, std::size_t top_k,
                                 const std::vector<Vector>& directions, double gain,
                                 std::uint64_t seed, double row_noise) {
    if (directions.empty()) throw ArgumentError("synth_specialist_model: no directions given");
    for (const Vector& d : directions)
        if (d.size() != d_model) throw ShapeError("synth_specialist_model: direction length != d_model");

    ModelSpec model = synth_model(d_model, d_ff, num_layers, num_experts, top_k, RedundancyPlan{}, seed);
    const double row_std = row_noise / std::sqrt(static_cast<double>(d_model));
    for (std::size_t l = 0; l < num_layers; ++l) {
        Rng rng(derive_seed(seed, 0x53504543ULL, l));
        MoELayer& layer = model.layers[l];
        for (std::size_t e = 0; e < num_experts; ++e) {
            const Vector& dir = directions[e % directions.size()];
            for (std::size_t c = 0; c < d_model; ++c)
                layer.gate.at(e, c) = quantize_f32(gain * dir[c] + row_std * rng.gaussian());
            // Open the expert's hidden gates preferentially on its own domain
            // so output magnitude tracks domain membership.
            for (std::size_t q = 0; q < d_ff; ++q) {
                const double coeff = 0.6 + 0.3 * rng.gaussian();
                for (std::size_t c = 0; c < d_model; ++c)
                    layer.experts[e].gate_proj.at(q, c) =
                        quantize_f32(layer.experts[e].gate_proj.at(q, c) + coeff * dir[c]);
            }
        }
    }
    return model;
}

} // namespace moec
