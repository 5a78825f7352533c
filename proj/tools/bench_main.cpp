// SPDX-License-Identifier: Apache-2.0
// moec-bench: wall time of the parallel kernels against their serial
// references, with bitwise-equality checks on the results.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"

#include "moec/calibration.hpp"
#include "moec/evaluation.hpp"
#include "moec/linalg.hpp"
#include "moec/model.hpp"
#include "moec/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool bits_equal(const moec::Matrix& a, const moec::Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool bits_equal(const std::vector<moec::Vector>& a, const std::vector<moec::Vector>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].size() != b[i].size() ||
            std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0)
            return false;
    return true;
}

bool stats_equal(const moec::LayerStats& a, const moec::LayerStats& b) {
    if (a.num_tokens != b.num_tokens || a.num_experts != b.num_experts || a.top_k != b.top_k ||
        a.dense != b.dense)
        return false;
    if (!bits_equal(a.gate_logits, b.gate_logits) || !bits_equal(a.softmax_probs, b.softmax_probs) ||
        !bits_equal(a.masked_probs, b.masked_probs))
        return false;
    if (a.route_mask != b.route_mask || a.active_counts != b.active_counts) return false;
    for (std::size_t e = 0; e < a.num_experts; ++e) {
        const auto& ca = a.experts[e];
        const auto& cb = b.experts[e];
        if (ca.tokens != cb.tokens || !bits_equal(ca.outputs, cb.outputs) ||
            !bits_equal(ca.gated, cb.gated) || !bits_equal(ca.hidden, cb.hidden))
            return false;
    }
    return true;
}

void print_row(const char* name, double serial_ms, double parallel_ms, bool equal) {
    std::printf("%-22s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx   bitwise %s\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, equal ? "equal" : "DIFFERS");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial-reference vs parallel-kernel benchmark"};
    std::size_t tokens = 2048, mat_n = 384;
    std::uint64_t seed = 7;
    app.add_option("--tokens", tokens, "token batch size");
    app.add_option("--matmul-size", mat_n, "square matmul dimension");
    app.add_option("--seed", seed, "fixture seed");
    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled (serial build)\n");
#endif

    moec::Rng rng(seed);
    moec::Matrix a(mat_n, mat_n), b(mat_n, mat_n);
    for (double& v : a.data) v = rng.gaussian();
    for (double& v : b.data) v = rng.gaussian();
    Clock::time_point t0 = Clock::now();
    const moec::Matrix c_ref = moec::ref::matmul(a, b);
    const double mm_serial = ms_since(t0);
    t0 = Clock::now();
    const moec::Matrix c_par = moec::matmul(a, b);
    const double mm_parallel = ms_since(t0);
    print_row("matmul", mm_serial, mm_parallel, bits_equal(c_ref, c_par));

    moec::RedundancyPlan plan;
    const moec::ModelSpec model = moec::synth_model(64, 128, 4, 32, 4, plan, seed);
    const moec::CalibrationSet calib =
        moec::build_mixture(moec::make_ratio(1, 1, 1), model.d_model, tokens, seed + 1);

    std::vector<moec::Vector> streams_ref = calib.tokens;
    t0 = Clock::now();
    moec::ref::advance_streams(model.layers[0], streams_ref);
    const double adv_serial = ms_since(t0);
    std::vector<moec::Vector> streams_par = calib.tokens;
    t0 = Clock::now();
    moec::advance_streams(model.layers[0], streams_par);
    const double adv_parallel = ms_since(t0);
    print_row("advance_streams", adv_serial, adv_parallel, bits_equal(streams_ref, streams_par));

    t0 = Clock::now();
    const moec::LayerStats st_ref = moec::ref::collect_layer_stats(model.layers[0], calib.tokens);
    const double col_serial = ms_since(t0);
    t0 = Clock::now();
    const moec::LayerStats st_par = moec::collect_layer_stats(model.layers[0], calib.tokens);
    const double col_parallel = ms_since(t0);
    print_row("collect_layer_stats", col_serial, col_parallel, stats_equal(st_ref, st_par));

    t0 = Clock::now();
    const moec::Matrix pl_ref = moec::ref::prelogit_matrix(model, calib.tokens);
    const double pl_serial = ms_since(t0);
    t0 = Clock::now();
    const moec::Matrix pl_par = moec::prelogit_matrix(model, calib.tokens);
    const double pl_parallel = ms_since(t0);
    print_row("prelogit_matrix", pl_serial, pl_parallel, bits_equal(pl_ref, pl_par));

    return 0;
}
