// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "moec/linalg.hpp"
#include "moec/saliency.hpp"

namespace moec {

enum class GroupingMethod { pseudo_prune, prune, cluster_avg, nearest, identity };

inline constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);

// Partition of the original experts into kept groups. Slots are canonical:
// sorted by ascending centroid index, members sorted ascending (centroid
// included). assignment[e] is e's slot, or kUnassigned for pruned experts.
struct GroupingPlan {
    GroupingMethod method = GroupingMethod::identity;
    std::size_t capacity = 0; // 0 = unlimited
    std::vector<std::size_t> centroids;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> assignment;

    std::size_t num_kept() const { return centroids.size(); }
};

// Saliency-ranked centroid selection (ties: lower index), then each centroid
// in rank order claims up to `capacity` of the most-similar still-unassigned
// non-centroids (ties: lower index), unconditionally; capacity 0 removes the
// bound. Throws ArgumentError if n_keep is not in [1, N) or a nonzero
// capacity cannot absorb all non-centroids.
GroupingPlan pseudo_prune(const SaliencyVector& saliency, const Matrix& similarity,
                          std::size_t n_keep, std::size_t capacity);

// Keep the top-n_keep experts by saliency, drop the rest.
GroupingPlan prune_select(const SaliencyVector& saliency, std::size_t n_keep);

// Agglomerative average-linkage clustering on distance 1 - similarity down to
// n_keep clusters; each cluster is represented by the member with the highest
// mean similarity to its co-members.
GroupingPlan cluster_avg_linkage(const Matrix& similarity, std::size_t n_keep);

// Saliency-ranked centroids; every non-centroid joins its most similar
// centroid (no capacity bound).
GroupingPlan nearest_centroid(const SaliencyVector& saliency, const Matrix& similarity,
                              std::size_t n_keep);

// Keep every expert as its own group, in original order.
GroupingPlan identity_plan(std::size_t num_experts);

// Structural checks (slot canonicalization, assignment consistency, no
// duplicate membership); throws ArgumentError on violation.
void validate_plan(const GroupingPlan& plan, std::size_t num_experts);

// One line per slot: "centroid <idx> members <m0,m1,...>".
std::string dump_plan(const GroupingPlan& plan);

} // namespace moec
