// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "moec/alignment.hpp"
#include "moec/calibration.hpp"
#include "moec/grouping.hpp"
#include "moec/model.hpp"
#include "moec/saliency.hpp"

namespace moec {

enum class CompressMethod { ream, prune_reap, prune_freq, cluster };
enum class MergeWeightKind { reap, freq, uniform };

struct CompressionConfig {
    std::size_t n_keep = 0;   // experts kept per layer
    std::size_t capacity = 0; // group capacity; 0 = auto (16 for N <= 128, else 32)
    CompressMethod method = CompressMethod::ream;
    MergeWeightKind merge_weights = MergeWeightKind::reap;
    AlignmentMode alignment = AlignmentMode::combined;
    SaliencyKind saliency = SaliencyKind::reap;
    bool sequential = true;
    bool dense_capture = false;
    bool renormalize_topk = false;
    bool use_gate_sim = true;        // include router-logit similarity in the grouping score
    bool use_gated_outputs = true;   // router-scaled vs raw output similarity
    bool pseudo_prune_grouping = true; // capacity-bounded greedy vs nearest-centroid
};

std::size_t auto_capacity(std::size_t num_experts);

const char* method_name(CompressMethod m);
const char* merge_weight_name(MergeWeightKind k);
const char* alignment_name(AlignmentMode m);
CompressMethod parse_method(const std::string& text);
MergeWeightKind parse_merge_weights(const std::string& text);
AlignmentMode parse_alignment(const std::string& text);

// Grouping similarity under the config's method and ablation toggles.
Matrix method_similarity(const LayerStats& stats, const CompressionConfig& cfg);

// Full grouping decision for one layer (requires n_keep < N for ream's
// pseudo-pruning; identity compression is short-circuited by compress_layer).
GroupingPlan plan_layer(const LayerStats& stats, const CompressionConfig& cfg);

// Per-expert merge weights for the configured kind (uniform = all ones).
Vector merge_weight_values(const LayerStats& stats, MergeWeightKind kind);

struct MergedGroup {
    ExpertWeights weights;
    std::vector<std::vector<std::size_t>> member_perms; // per member, ascending member order
    std::size_t act_fallbacks = 0;
};

// Weighted average of the centroid and its aligned members (ascending
// original index); weight total below 1e-12 falls back to a uniform mean.
// `members` excludes the centroid itself.
MergedGroup merge_group(const MoELayer& layer, const LayerStats* stats, std::size_t centroid,
                        const std::vector<std::size_t>& members, const Vector& weight_of,
                        AlignmentMode mode);

// Gate rows gathered at the centroid indices, in the given order.
Matrix reduce_gate(const Matrix& gate, const std::vector<std::size_t>& centroids);

struct LayerProvenance {
    GroupingPlan plan;
    std::vector<std::vector<std::vector<std::size_t>>> perms; // [slot][member][neuron]
    std::size_t act_fallbacks = 0;
};

struct CompressedLayer {
    MoELayer layer;
    LayerProvenance prov;
};

CompressedLayer compress_layer(const MoELayer& layer, const LayerStats& stats,
                               const CompressionConfig& cfg);

struct CompressionProvenance {
    CompressionConfig config;
    std::vector<LayerProvenance> layers;
};

// Whole-model compression. sequential=true recollects statistics per layer
// through the already-compressed prefix; sequential=false measures every
// layer on the original model's streams.
ModelSpec compress_model(const ModelSpec& model, const std::vector<Vector>& calib_tokens,
                         const CompressionConfig& cfg, CompressionProvenance* prov = nullptr);

// Human-readable provenance sidecar (config, per-layer plans, permutations).
std::string write_manifest(const CompressionProvenance& prov);

} // namespace moec
