// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moec/linalg.hpp"

namespace moec {

// SwiGLU expert: E(x) = down * (silu(gate_proj * x) ⊙ (up * x)).
struct ExpertWeights {
    Matrix gate_proj; // d_ff x d_model
    Matrix up_proj;   // d_ff x d_model
    Matrix down_proj; // d_model x d_ff
};

// One MoE block: router gate (num_experts x d_model, one row per expert so
// expert removal is contiguous) plus the expert list.
struct MoELayer {
    Matrix gate;
    std::vector<ExpertWeights> experts;
    std::size_t top_k = 1;

    std::size_t num_experts() const { return experts.size(); }
};

struct ModelSpec {
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::size_t num_layers = 0;
    std::size_t top_k = 1;
    std::uint64_t seed = 0;
    std::vector<MoELayer> layers;

    std::size_t num_experts() const { return layers.empty() ? 0 : layers[0].num_experts(); }
};

struct ForwardOptions {
    // Eq-style routing keeps the raw softmax values of the selected experts;
    // set to true to renormalize the selected weights to sum to 1.
    bool renormalize_topk = false;
};

struct ExpertResult {
    Vector y;      // d_model
    Vector hidden; // d_ff, pre-down activations (exposed for calibration capture)
};

// Routing record for one token at one layer. Active experts are listed in
// ascending index order; outputs/hidden run parallel to `active`.
struct RoutingTrace {
    Vector logits;
    Vector probs;  // full softmax
    Vector masked; // top-k masked routing weights (zeros elsewhere)
    std::vector<std::size_t> active;
    std::vector<Vector> outputs;
    std::vector<Vector> hidden;
};

struct MoEResult {
    Vector y;
    RoutingTrace trace;
};

ExpertResult expert_forward(const ExpertWeights& e, const Vector& x);

// Routing only (logits/softmax/mask), no expert evaluation.
RoutingTrace route_token(const MoELayer& layer, const Vector& x, const ForwardOptions& opts = {});

MoEResult moe_forward(const MoELayer& layer, const Vector& x, const ForwardOptions& opts = {});

struct ModelResult {
    Vector pre_logit;
    std::vector<RoutingTrace> traces; // one per layer
};

ModelResult model_forward(const ModelSpec& model, const Vector& token, const ForwardOptions& opts = {});

// Residual streams for a batch, advanced in place through one layer
// (x += moe(x)). Token-parallel; bit-identical for any thread count.
void advance_streams(const MoELayer& layer, std::vector<Vector>& streams, const ForwardOptions& opts = {});

namespace ref {
// Serial baseline for the batched forward path.
void advance_streams(const MoELayer& layer, std::vector<Vector>& streams, const ForwardOptions& opts = {});
} // namespace ref

// --- synthetic model generation ------------------------------------------

enum class RouterMode {
    independent, // every router row drawn independently
    cold_clone,  // clone rows depressed along the shared token-bias direction
    warm_clone,  // clone rows = base row + jitter - mild depression
};

struct RedundancyPlan {
    std::size_t base_experts = 0;   // 0: no redundancy structure, all experts independent
    std::size_t clones_per_base = 1;
    double noise_scale = 0.0;       // gaussian noise added to clone expert matrices
    bool permute_hidden = false;    // random hidden-neuron permutation per clone
    RouterMode router_mode = RouterMode::independent;
    double gate_depress = 0.0;      // magnitude of the ones-direction depression for clone rows
    double gate_jitter = 0.0;       // relative jitter of clone rows
};

// Expert layout with a redundancy plan: index r*base_experts + b is replica r
// of base b (replica 0 is the base itself). All weights are snapped to
// float32 so container round-trips are bit-exact. Fully seed-deterministic.
ModelSpec synth_model(std::size_t d_model, std::size_t d_ff, std::size_t num_layers,
                      std::size_t num_experts, std::size_t top_k, const RedundancyPlan& plan,
                      std::uint64_t seed, double router_scale = 2.0);

// Experts whose router rows point along the given unit directions (cycled
// over the expert index), used for domain-routing fixtures.
ModelSpec synth_specialist_model(std::size_t d_model, std::size_t d_ff, std::size_t num_layers,
                                 std::size_t num_experts, std::size_t top_k,
                                 const std::vector<Vector>& directions, double gain,
                                 std::uint64_t seed, double row_noise = 0.5);

} // namespace moec
