// SPDX-License-Identifier: Apache-2.0
#include "moec/similarity.hpp"

#include <cstddef>

namespace moec {

namespace {

// Calls fn(token, slot_a, slot_b) for every token captured by both experts,
// walking the two ascending token lists in lockstep.
template <typename Fn>
void for_shared_tokens(const LayerStats::ExpertCapture& a, const LayerStats::ExpertCapture& b,
                       Fn&& fn) {
    std::size_t p = 0, q = 0;
    while (p < a.tokens.size() && q < b.tokens.size()) {
        if (a.tokens[p] < b.tokens[q]) {
            ++p;
        } else if (a.tokens[p] > b.tokens[q]) {
            ++q;
        } else {
            fn(a.tokens[p], p, q);
            ++p;
            ++q;
        }
    }
}

} // namespace

Matrix sim_gate_logits(const LayerStats& stats) {
    const std::size_t n = stats.num_experts;
    // Transpose so each expert's logit series is contiguous.
    Matrix series(n, stats.num_tokens);
    for (std::size_t t = 0; t < stats.num_tokens; ++t)
        for (std::size_t e = 0; e < n; ++e) series.at(e, t) = stats.gate_logits.at(t, e);
    Matrix out(n, n);
    const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < pn; ++si) {
        const std::size_t i = static_cast<std::size_t>(si);
        for (std::size_t j = i; j < n; ++j) {
            const double s = cosine_sim(series.row(i), series.row(j), stats.num_tokens);
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

Matrix sim_expert_outputs(const LayerStats& stats) {
    const std::size_t n = stats.num_experts;
    Matrix out(n, n);
    const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < pn; ++si) {
        const std::size_t i = static_cast<std::size_t>(si);
        const LayerStats::ExpertCapture& ci = stats.experts[i];
        for (std::size_t j = i; j < n; ++j) {
            const LayerStats::ExpertCapture& cj = stats.experts[j];
            double sum = 0.0;
            std::size_t cnt = 0;
            for_shared_tokens(ci, cj, [&](std::size_t, std::size_t p, std::size_t q) {
                sum += cosine_sim(ci.outputs.row(p), cj.outputs.row(q), ci.outputs.cols);
                ++cnt;
            });
            const double s = cnt ? sum / double(cnt) : 0.0;
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

Matrix sim_gated_outputs(const LayerStats& stats) {
    const std::size_t n = stats.num_experts;
    Matrix out(n, n);
    const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t si = 0; si < pn; ++si) {
        const std::size_t i = static_cast<std::size_t>(si);
        const LayerStats::ExpertCapture& ci = stats.experts[i];
        for (std::size_t j = i; j < n; ++j) {
            const LayerStats::ExpertCapture& cj = stats.experts[j];
            double sum = 0.0;
            std::size_t cnt = 0;
            for_shared_tokens(ci, cj, [&](std::size_t t, std::size_t p, std::size_t q) {
                // The softmax weights are positive scalars, so they cancel in
                // the cosine; scaling them in explicitly would underflow long
                // before the weight itself rounds to zero. Only an exact-zero
                // weight makes the scaled vector (and hence the term) zero.
                const double wi = stats.softmax_probs.at(t, i);
                const double wj = stats.softmax_probs.at(t, j);
                if (wi > 0.0 && wj > 0.0)
                    sum += cosine_sim(ci.outputs.row(p), cj.outputs.row(q), ci.outputs.cols);
                ++cnt;
            });
            const double s = cnt ? sum / double(cnt) : 0.0;
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

Matrix sim_ream(const LayerStats& stats) {
    Matrix g = sim_gate_logits(stats);
    const Matrix e = sim_gated_outputs(stats);
    for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += e.data[k];
    return g;
}

} // namespace moec
