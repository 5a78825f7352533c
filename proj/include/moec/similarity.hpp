// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moec/calibration.hpp"
#include "moec/linalg.hpp"

namespace moec {

// All similarity functions return a symmetric num_experts x num_experts matrix.

// Cosine similarity between per-expert series of raw router logits across
// the calibration tokens.
Matrix sim_gate_logits(const LayerStats& stats);

// Mean per-token cosine similarity between raw expert outputs, taken over the
// tokens both experts were captured on (co-active tokens unless the stats were
// collected densely). Pairs with no shared tokens score 0.
Matrix sim_expert_outputs(const LayerStats& stats);

// Same as sim_expert_outputs but on router-scaled outputs sigma_i(x) * E_i(x),
// with sigma taken from the full softmax (no top-k masking). A token where
// either expert's softmax weight underflows to exactly zero contributes 0.
Matrix sim_gated_outputs(const LayerStats& stats);

// Combined score: sim_gate_logits + sim_gated_outputs.
Matrix sim_ream(const LayerStats& stats);

} // namespace moec
