// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moec/calibration.hpp"
#include "moec/evaluation.hpp"
#include "moec/merging.hpp"
#include "moec/model.hpp"

namespace moec {

// "a:b:c" with nonnegative components, not all zero; normalized on parse.
MixtureRatio parse_ratio(const std::string& text);
std::string format_ratio(const MixtureRatio& ratio); // parseable "a:b:c"

// The ten standard calibration mixtures swept by `sweep`.
std::vector<MixtureRatio> standard_ratios();

// Small text sidecar describing a calibration stream (ratio, size, seed).
struct MixtureSpec {
    MixtureRatio ratio;
    std::size_t num_tokens = 0;
    std::uint64_t seed = 0;
};

std::string write_mixture_spec(const MixtureSpec& spec);
MixtureSpec parse_mixture_spec(const std::string& text);

// Fidelity score in dB: -10*log10(mse), floored at mse = 1e-30.
double fidelity_db(double mse);

// Held-out scoring token sets (general-domain and code-domain), seeded
// independently of any calibration stream derived from `seed`.
std::vector<Vector> mc_eval_tokens(std::size_t d_model, std::size_t num_tokens,
                                   std::uint64_t seed);
std::vector<Vector> gen_eval_tokens(std::size_t d_model, std::size_t num_tokens,
                                    std::uint64_t seed);

struct ScoreRow {
    std::string method;
    std::string label; // mixture ratio string
    double mc = 0.0;
    double gen = 0.0;
    bool on_frontier = false;
    std::vector<double> mc_layer_mse;  // teacher-forced per-layer MSE, general set
    std::vector<double> gen_layer_mse; // teacher-forced per-layer MSE, code set
};

ScoreRow score_model(const ModelSpec& original, const ModelSpec& compressed,
                     const std::vector<Vector>& mc_tokens, const std::vector<Vector>& gen_tokens,
                     const std::string& method, const std::string& label,
                     const ForwardOptions& opts = {});

// Recomputes the per-method frontier flags in place.
void mark_frontiers(std::vector<ScoreRow>& rows);

// Columns: method,label,mc,gen,on_frontier,mc_mse_layer<i>...,gen_mse_layer<i>...
std::string write_score_csv(const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> parse_score_csv(const std::string& text);

// Per-method defaults layered onto a base config (cluster baseline pairs
// with frequency merge weights and activation alignment).
CompressionConfig method_defaults(CompressionConfig base, CompressMethod method);

struct SweepOptions {
    std::vector<CompressMethod> methods;
    std::vector<MixtureRatio> ratios;
    std::size_t calib_tokens = 256;
    std::size_t eval_tokens = 256;
    std::uint64_t seed = 1;
    CompressionConfig base; // method is overridden per run
};

// One compression + scoring run per (method, ratio); equals the
// concatenation of individual runs with the same seeds.
std::vector<ScoreRow> run_sweep(const ModelSpec& model, const SweepOptions& opts);

// Per-method Pareto/hypervolume/correlation summary over a score table,
// using a shared reference one unit below the global per-axis minimum.
std::string write_report(const std::vector<ScoreRow>& rows);

} // namespace moec
