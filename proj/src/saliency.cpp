// SPDX-License-Identifier: Apache-2.0
#include "moec/saliency.hpp"

#include "moec/linalg.hpp"

namespace moec {

SaliencyVector saliency_freq(const LayerStats& stats) {
    SaliencyVector out;
    out.kind = SaliencyKind::freq;
    out.values.assign(stats.num_experts, 0.0);
    if (stats.num_tokens == 0) return out;
    for (std::size_t e = 0; e < stats.num_experts; ++e)
        out.values[e] = double(stats.active_counts[e]) / double(stats.num_tokens);
    return out;
}

SaliencyVector saliency_reap(const LayerStats& stats) {
    SaliencyVector out;
    out.kind = SaliencyKind::reap;
    out.values.assign(stats.num_experts, 0.0);
    for (std::size_t e = 0; e < stats.num_experts; ++e) {
        const LayerStats::ExpertCapture& cap = stats.experts[e];
        double sum = 0.0;
        std::size_t n_active = 0;
        for (std::size_t i = 0; i < cap.tokens.size(); ++i) {
            const std::size_t t = cap.tokens[i];
            if (!stats.mask(t, e)) continue; // dense capture also holds inactive tokens
            sum += stats.masked_probs.at(t, e) * l2_norm(cap.outputs.row(i), cap.outputs.cols);
            ++n_active;
        }
        out.values[e] = n_active ? sum / double(n_active) : 0.0;
    }
    return out;
}

} // namespace moec
