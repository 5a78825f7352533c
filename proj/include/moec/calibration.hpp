// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "moec/model.hpp"

namespace moec {

// Calibration domains (C4-like general text, math, code proxies).
inline constexpr std::size_t kNumDomains = 3;
inline constexpr const char* kDomainNames[kNumDomains] = {"c4", "math", "code"};

// Normalized mixing ratio over the three domains.
struct MixtureRatio {
    double c4 = 0.0;
    double math = 0.0;
    double code = 0.0;

    double operator[](std::size_t d) const { return d == 0 ? c4 : (d == 1 ? math : code); }
};

// Builds a normalized ratio; throws on negatives or an all-zero triple.
MixtureRatio make_ratio(double c4, double math, double code);

// Largest-remainder apportionment of num_tokens over the three domains
// (remainder ties favor the lower domain index).
std::array<std::size_t, kNumDomains> mixture_counts(const MixtureRatio& ratio, std::size_t num_tokens);

// Fixed domain means: a common +1.5 offset along ones/sqrt(d) (every token
// has a positive component along that shared bias direction) plus unit
// domain-specific parts orthogonal to it, pairwise mean distance >= 1.
std::array<Vector, kNumDomains> domain_means(std::size_t d_model);

// The domain-specific unit directions (without the common bias part).
std::array<Vector, kNumDomains> domain_directions(std::size_t d_model);

struct CalibrationSet {
    std::vector<Vector> tokens;
    std::vector<int> labels; // domain index per token
};

// Gaussian tokens around the domain means, block-ordered by domain,
// deterministic in (ratio, d_model, num_tokens, seed).
CalibrationSet build_mixture(const MixtureRatio& ratio, std::size_t d_model, std::size_t num_tokens,
                             std::uint64_t seed, double scale = 0.25);

// Per-layer routing/activation statistics over a token batch. Sparse capture
// stores expert outputs only for (token, expert) pairs the router selected;
// dense capture evaluates every expert on every token (oracle mode).
struct LayerStats {
    std::size_t num_tokens = 0;
    std::size_t num_experts = 0;
    std::size_t top_k = 0;
    bool dense = false;

    Matrix gate_logits;                  // num_tokens x num_experts
    Matrix softmax_probs;                // num_tokens x num_experts
    Matrix masked_probs;                 // num_tokens x num_experts (zeros where inactive)
    std::vector<std::uint8_t> route_mask; // num_tokens x num_experts
    std::vector<std::size_t> active_counts;

    struct ExpertCapture {
        std::vector<std::size_t> tokens; // ascending token indices
        Matrix outputs;                  // |tokens| x d_model
        Matrix gated;                    // |tokens| x d_model (softmax-weighted outputs)
        Matrix hidden;                   // d_ff x |tokens|
    };
    std::vector<ExpertCapture> experts;

    bool mask(std::size_t t, std::size_t e) const { return route_mask[t * num_experts + e] != 0; }
};

struct CollectOptions {
    bool dense_capture = false;
    bool renormalize_topk = false;
};

// Token-parallel collection; bit-identical for any worker count (per-slot
// writes, per-expert aggregation in ascending token order).
LayerStats collect_layer_stats(const MoELayer& layer, const std::vector<Vector>& inputs,
                               const CollectOptions& opts = {});

namespace ref {
// Straightforward serial collection, kept as the comparison baseline.
LayerStats collect_layer_stats(const MoELayer& layer, const std::vector<Vector>& inputs,
                               const CollectOptions& opts = {});
} // namespace ref

// Per-expert activation profiles: each hidden matrix with every neuron row
// L2-normalized over the expert's captured tokens (zero rows stay zero).
// Experts with no captured tokens yield an empty matrix.
std::vector<Matrix> normalize_hidden_profiles(const LayerStats& stats);

} // namespace moec
