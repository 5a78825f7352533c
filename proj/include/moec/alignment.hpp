// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "moec/calibration.hpp"
#include "moec/linalg.hpp"
#include "moec/model.hpp"

namespace moec {

enum class AlignmentMode { none, wt, act, combined };

struct Assignment {
    std::vector<std::size_t> perm; // perm[col] = row assigned to that column
    double total = 0.0;            // sum of cost[perm[col]][col]
};

// Minimum-cost linear assignment (Jonker-Volgenant shortest augmenting
// paths). Deterministic tie handling: a zero matrix yields the identity.
Assignment hungarian(const Matrix& cost);

// cost[p][q] = L2 distance between neuron p's profile row (centroid) and
// neuron q's profile row (member); profiles must cover the same token set.
Matrix cost_act(const Matrix& profile_c, const Matrix& profile_j);

// cost[p][q] = L2 distance between per-neuron weight signatures, where a
// signature concatenates the gate_proj row, up_proj row, and down_proj
// column of that neuron.
Matrix cost_wt(const ExpertWeights& e_c, const ExpertWeights& e_j);

// Hidden-activation profiles of two experts restricted to the tokens both
// captured, each neuron row L2-normalized over that shared set. Returns
// false (profiles untouched) when no tokens are shared.
bool shared_activation_profiles(const LayerStats& stats, std::size_t expert_c,
                                std::size_t expert_j, Matrix& profile_c, Matrix& profile_j);

struct AlignedMember {
    ExpertWeights weights;
    std::vector<std::size_t> perm; // perm[slot] = member neuron placed on that slot
    bool act_fallback = false;     // activation cost requested but no shared tokens
};

// Builds the cost matrix per mode (combined = activation + weight costs,
// falling back to weights-only when no activations are shared), solves the
// assignment, and returns the member with its hidden neurons reordered to
// the centroid's slots. mode none returns the member unchanged.
AlignedMember align_member(const ExpertWeights& e_c, const ExpertWeights& e_j,
                           const LayerStats* stats, std::size_t expert_c, std::size_t expert_j,
                           AlignmentMode mode);

// Slot q of the result takes the member's neuron perm[q]: rows of
// gate_proj/up_proj, columns of down_proj move together.
ExpertWeights permute_hidden(const ExpertWeights& e, const std::vector<std::size_t>& perm);

} // namespace moec
