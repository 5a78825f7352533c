// SPDX-License-Identifier: Apache-2.0
#include "moec/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "moec/error.hpp"
#include "moec/rng.hpp"

namespace moec {

MixtureRatio make_ratio(double c4, double math, double code) {
    if (c4 < 0.0 || math < 0.0 || code < 0.0)
        throw ArgumentError("mixture ratio: negative weight");
    const double sum = c4 + math + code;
    if (sum <= 0.0) throw ArgumentError("mixture ratio: all weights zero");
    return MixtureRatio{c4 / sum, math / sum, code / sum};
}

std::array<std::size_t, kNumDomains> mixture_counts(const MixtureRatio& ratio, std::size_t num_tokens) {
    if (num_tokens == 0) throw ArgumentError("mixture_counts: num_tokens must be positive");
    std::array<std::size_t, kNumDomains> counts{};
    std::array<double, kNumDomains> rem{};
    std::size_t assigned = 0;
    for (std::size_t d = 0; d < kNumDomains; ++d) {
        const double exact = ratio[d] * static_cast<double>(num_tokens);
        counts[d] = static_cast<std::size_t>(std::floor(exact));
        rem[d] = exact - std::floor(exact);
        assigned += counts[d];
    }
    std::array<std::size_t, kNumDomains> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rem[a] != rem[b]) return rem[a] > rem[b];
        return a < b;
    });
    for (std::size_t i = 0; assigned < num_tokens; ++i, ++assigned) counts[order[i % kNumDomains]] += 1;
    return counts;
}

namespace {

constexpr double kBias = 1.5;
constexpr std::uint64_t kMeanSeed = 0x0d0a115eedULL;

Vector ones_unit(std::size_t d) {
    return Vector(d, 1.0 / std::sqrt(static_cast<double>(d)));
}

} // namespace

std::array<Vector, kNumDomains> domain_directions(std::size_t d_model) {
    if (d_model == 0) throw ArgumentError("domain_directions: d_model must be positive");
    const Vector u = ones_unit(d_model);
    std::array<Vector, kNumDomains> dirs;
    for (std::size_t d = 0; d < kNumDomains; ++d) {
        // Deterministic retry loop guards degenerate draws at tiny d_model.
        for (std::uint64_t salt = 0;; ++salt) {
            Rng rng(derive_seed(kMeanSeed, d, salt));
            Vector v(d_model);
            for (double& x : v) x = rng.gaussian();
            double dot_u = 0.0;
            for (std::size_t i = 0; i < d_model; ++i) dot_u += v[i] * u[i];
            for (std::size_t i = 0; i < d_model; ++i) v[i] -= dot_u * u[i];
            const double n = l2_norm(v);
            if (n < 1e-6) continue;
            for (double& x : v) x /= n;
            bool ok = true;
            for (std::size_t p = 0; p < d; ++p) {
                Vector diff(d_model);
                for (std::size_t i = 0; i < d_model; ++i) diff[i] = dirs[p][i] - v[i];
                if (l2_norm(diff) < 1.0) ok = false; // keep pairwise mean distance >= 1
            }
            if (!ok) continue;
            dirs[d] = std::move(v);
            break;
        }
    }
    return dirs;
}

std::array<Vector, kNumDomains> domain_means(std::size_t d_model) {
    const Vector u = ones_unit(d_model);
    std::array<Vector, kNumDomains> means = domain_directions(d_model);
    for (std::size_t d = 0; d < kNumDomains; ++d)
        for (std::size_t i = 0; i < d_model; ++i) means[d][i] += kBias * u[i];
    return means;
}

CalibrationSet build_mixture(const MixtureRatio& ratio, std::size_t d_model, std::size_t num_tokens,
                             std::uint64_t seed, double scale) {
    if (num_tokens == 0) throw ArgumentError("build_mixture: num_tokens must be positive");
    if (scale < 0.0) throw ArgumentError("build_mixture: negative scale");
    const auto counts = mixture_counts(ratio, num_tokens);
    const auto means = domain_means(d_model);

    CalibrationSet set;
    set.tokens.reserve(num_tokens);
    set.labels.reserve(num_tokens);
    for (std::size_t d = 0; d < kNumDomains; ++d) {
        Rng rng(derive_seed(seed, 0x746f6b00ULL + d));
        for (std::size_t i = 0; i < counts[d]; ++i) {
            Vector tok(d_model);
            for (std::size_t c = 0; c < d_model; ++c) tok[c] = means[d][c] + scale * rng.gaussian();
            set.tokens.push_back(std::move(tok));
            set.labels.push_back(static_cast<int>(d));
        }
    }
    return set;
}

LayerStats collect_layer_stats(const MoELayer& layer, const std::vector<Vector>& inputs,
                               const CollectOptions& opts) {
    if (inputs.empty()) throw ArgumentError("collect_layer_stats: empty token batch");
    const std::size_t T = inputs.size();
    const std::size_t N = layer.num_experts();
    for (const Vector& x : inputs)
        if (x.size() != layer.gate.cols) throw ShapeError("collect_layer_stats: token length != d_model");

    LayerStats s;
    s.num_tokens = T;
    s.num_experts = N;
    s.top_k = layer.top_k;
    s.dense = opts.dense_capture;
    s.gate_logits = Matrix(T, N);
    s.softmax_probs = Matrix(T, N);
    s.masked_probs = Matrix(T, N);
    s.route_mask.assign(T * N, 0);
    s.active_counts.assign(N, 0);
    s.experts.resize(N);

    const ForwardOptions fwd{opts.renormalize_topk};

    // Pass 1: routing, one slot per token.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(T); ++ti) {
        const std::size_t t = static_cast<std::size_t>(ti);
        const RoutingTrace tr = route_token(layer, inputs[t], fwd);
        for (std::size_t e = 0; e < N; ++e) {
            s.gate_logits.at(t, e) = tr.logits[e];
            s.softmax_probs.at(t, e) = tr.probs[e];
            s.masked_probs.at(t, e) = tr.masked[e];
        }
        for (std::size_t e : tr.active) s.route_mask[t * N + e] = 1;
    }

    // Pass 2: captured-token lists in ascending token order.
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t e = 0; e < N; ++e) {
            if (s.route_mask[t * N + e]) s.active_counts[e] += 1;
            if (opts.dense_capture || s.route_mask[t * N + e]) s.experts[e].tokens.push_back(t);
        }

    // Pass 3: expert evaluations for captured pairs, expert-parallel.
    const std::size_t d_model = layer.gate.cols;
    const std::size_t d_ff = N > 0 ? layer.experts[0].gate_proj.rows : 0;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ei = 0; ei < static_cast<std::ptrdiff_t>(N); ++ei) {
        const std::size_t e = static_cast<std::size_t>(ei);
        LayerStats::ExpertCapture& cap = s.experts[e];
        const std::size_t cnt = cap.tokens.size();
        cap.outputs = Matrix(cnt, d_model);
        cap.gated = Matrix(cnt, d_model);
        cap.hidden = Matrix(d_ff, cnt);
        for (std::size_t r = 0; r < cnt; ++r) {
            const std::size_t t = cap.tokens[r];
            const ExpertResult er = expert_forward(layer.experts[e], inputs[t]);
            const double sigma = s.softmax_probs.at(t, e);
            for (std::size_t d = 0; d < d_model; ++d) {
                cap.outputs.at(r, d) = er.y[d];
                cap.gated.at(r, d) = sigma * er.y[d];
            }
            for (std::size_t q = 0; q < d_ff; ++q) cap.hidden.at(q, r) = er.hidden[q];
        }
    }
    return s;
}

namespace ref {

LayerStats collect_layer_stats(const MoELayer& layer, const std::vector<Vector>& inputs,
                               const CollectOptions& opts) {
    if (inputs.empty()) throw ArgumentError("collect_layer_stats: empty token batch");
    const std::size_t T = inputs.size();
    const std::size_t N = layer.num_experts();
    const std::size_t d_model = layer.gate.cols;
    const std::size_t d_ff = N > 0 ? layer.experts[0].gate_proj.rows : 0;

    LayerStats s;
    s.num_tokens = T;
    s.num_experts = N;
    s.top_k = layer.top_k;
    s.dense = opts.dense_capture;
    s.gate_logits = Matrix(T, N);
    s.softmax_probs = Matrix(T, N);
    s.masked_probs = Matrix(T, N);
    s.route_mask.assign(T * N, 0);
    s.active_counts.assign(N, 0);
    s.experts.resize(N);

    const ForwardOptions fwd{opts.renormalize_topk};
    std::vector<std::vector<Vector>> outs(N), gated(N), hid(N);
    for (std::size_t t = 0; t < T; ++t) {
        const RoutingTrace tr = route_token(layer, inputs[t], fwd);
        for (std::size_t e = 0; e < N; ++e) {
            s.gate_logits.at(t, e) = tr.logits[e];
            s.softmax_probs.at(t, e) = tr.probs[e];
            s.masked_probs.at(t, e) = tr.masked[e];
        }
        for (std::size_t e : tr.active) {
            s.route_mask[t * N + e] = 1;
            s.active_counts[e] += 1;
        }
        for (std::size_t e = 0; e < N; ++e) {
            if (!opts.dense_capture && !s.route_mask[t * N + e]) continue;
            const ExpertResult er = expert_forward(layer.experts[e], inputs[t]);
            s.experts[e].tokens.push_back(t);
            Vector g(d_model);
            for (std::size_t d = 0; d < d_model; ++d) g[d] = tr.probs[e] * er.y[d];
            outs[e].push_back(er.y);
            gated[e].push_back(std::move(g));
            hid[e].push_back(er.hidden);
        }
    }
    for (std::size_t e = 0; e < N; ++e) {
        const std::size_t cnt = s.experts[e].tokens.size();
        LayerStats::ExpertCapture& cap = s.experts[e];
        cap.outputs = Matrix(cnt, d_model);
        cap.gated = Matrix(cnt, d_model);
        cap.hidden = Matrix(d_ff, cnt);
        for (std::size_t r = 0; r < cnt; ++r) {
            for (std::size_t d = 0; d < d_model; ++d) {
                cap.outputs.at(r, d) = outs[e][r][d];
                cap.gated.at(r, d) = gated[e][r][d];
            }
            for (std::size_t q = 0; q < d_ff; ++q) cap.hidden.at(q, r) = hid[e][r][q];
        }
    }
    return s;
}

} // namespace ref

std::vector<Matrix> normalize_hidden_profiles(const LayerStats& stats) {
    std::vector<Matrix> profiles(stats.num_experts);
    for (std::size_t e = 0; e < stats.num_experts; ++e) {
        const Matrix& h = stats.experts[e].hidden;
        if (h.cols == 0) continue; // empty profile marker
        Matrix p = h;
        for (std::size_t q = 0; q < p.rows; ++q) {
            const double n = l2_norm(p.row(q), p.cols);
            if (n < 1e-12) continue; // zero rows stay zero
            for (std::size_t c = 0; c < p.cols; ++c) p.at(q, c) /= n;
        }
        profiles[e] = std::move(p);
    }
    return profiles;
}

} // namespace moec

