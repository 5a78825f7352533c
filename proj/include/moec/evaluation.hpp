// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "moec/calibration.hpp"
#include "moec/linalg.hpp"
#include "moec/model.hpp"

namespace moec {

struct FidelityReport {
    std::vector<double> per_layer_mse;    // teacher-forced: original inputs per layer
    std::vector<double> per_layer_cosine; // mean per-token cosine of layer outputs
    double pre_logit_mse = 0.0;           // end-to-end final residual streams
    double pre_logit_cosine = 0.0;
    std::size_t num_eval_tokens = 0;
};

// Compares layer outputs teacher-forced on the ORIGINAL model's residual
// stream, plus end-to-end pre-logit streams. Models must agree on d_model
// and layer count.
FidelityReport fidelity(const ModelSpec& original, const ModelSpec& compressed,
                        const std::vector<Vector>& eval_tokens, const ForwardOptions& opts = {});

// Final residual-stream matrix (num_tokens x d_model). Token-parallel.
Matrix prelogit_matrix(const ModelSpec& model, const std::vector<Vector>& tokens,
                       const ForwardOptions& opts = {});

namespace ref {
// Serial baseline for the batched pre-logit pass.
Matrix prelogit_matrix(const ModelSpec& model, const std::vector<Vector>& tokens,
                       const ForwardOptions& opts = {});
} // namespace ref

// Count of singular values above max(rows, cols) * eps * sigma_max, computed
// from the Gram matrix's eigenvalues (cyclic Jacobi).
double numerical_rank(const Matrix& embeddings);

struct ScorePoint {
    double mc = 0.0;  // general-domain fidelity score (higher is better)
    double gen = 0.0; // code-domain fidelity score (higher is better)
    std::string label;
};

// Indices of points not dominated on (mc, gen); duplicates of frontier
// points are all kept.
std::vector<std::size_t> pareto_frontier(const std::vector<ScorePoint>& points);

// Area dominated by the frontier of `points` relative to (ref_x, ref_y).
// Every frontier point must strictly dominate the reference.
double hypervolume(const std::vector<ScorePoint>& points, double ref_x, double ref_y);

// One unit below the per-axis minimum over all points.
std::pair<double, double> default_reference(const std::vector<ScorePoint>& points);

struct CorrelationCell {
    double r = 0.0;
    bool defined = false; // false when a column has zero variance
};

struct CorrelationTable {
    CorrelationCell domain_vs_score[kNumDomains][2]; // [domain][0 = mc, 1 = gen]
    CorrelationCell mc_vs_gen;
};

// Pearson r between each domain fraction and each score axis, plus the two
// axes against each other. Lists must align and hold at least 3 entries.
CorrelationTable correlation_table(const std::vector<MixtureRatio>& mixtures,
                                   const std::vector<ScorePoint>& scores);

} // namespace moec
