// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moec/calibration.hpp"

namespace moec {

enum class SaliencyKind { freq, reap };

struct SaliencyVector {
    std::vector<double> values; // one per expert
    SaliencyKind kind = SaliencyKind::freq;
};

// Fraction of tokens on which each expert was routed.
SaliencyVector saliency_freq(const LayerStats& stats);

// Mean over each expert's active tokens of (routing weight * output L2 norm);
// never-active experts score 0.
SaliencyVector saliency_reap(const LayerStats& stats);

} // namespace moec
