// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"

#include "moec/calibration.hpp"
#include "moec/error.hpp"
#include "moec/evaluation.hpp"
#include "moec/merging.hpp"
#include "moec/model.hpp"
#include "moec/rng.hpp"

using namespace moec;

namespace {

ExpertWeights scaled_identity_expert(std::size_t d, double s) {
    ExpertWeights e;
    e.gate_proj = Matrix(d, d);
    e.up_proj = Matrix(d, d);
    e.down_proj = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        e.gate_proj.at(i, i) = s;
        e.up_proj.at(i, i) = s;
        e.down_proj.at(i, i) = s;
    }
    return e;
}

bool experts_bit_equal(const ExpertWeights& a, const ExpertWeights& b) {
    return a.gate_proj.data == b.gate_proj.data && a.up_proj.data == b.up_proj.data &&
           a.down_proj.data == b.down_proj.data;
}

bool models_bit_equal(const ModelSpec& a, const ModelSpec& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].gate.data != b.layers[l].gate.data ||
            a.layers[l].experts.size() != b.layers[l].experts.size())
            return false;
        for (std::size_t e = 0; e < a.layers[l].experts.size(); ++e)
            if (!experts_bit_equal(a.layers[l].experts[e], b.layers[l].experts[e])) return false;
    }
    return true;
}

} // namespace

TEST_CASE("merge_group computes the weighted mean of aligned members") {
    // Experts are scaled identities: alignment has nothing to reorder, so the
    // merge is the plain weighted average (1*I + 3*2I)/4 = 1.75*I.
    MoELayer layer;
    layer.top_k = 1;
    layer.gate = Matrix(2, 3);
    layer.experts = {scaled_identity_expert(3, 1.0), scaled_identity_expert(3, 2.0)};

    const MergedGroup g =
        merge_group(layer, nullptr, 0, {1}, Vector{1.0, 3.0}, AlignmentMode::none);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const double expect = i == j ? 1.75 : 0.0;
            CHECK(g.weights.gate_proj.at(i, j) == expect);
            CHECK(g.weights.up_proj.at(i, j) == expect);
            CHECK(g.weights.down_proj.at(i, j) == expect);
        }
}

TEST_CASE("zero merge weights fall back to the uniform mean") {
    MoELayer layer;
    layer.top_k = 1;
    layer.gate = Matrix(2, 3);
    layer.experts = {scaled_identity_expert(3, 1.0), scaled_identity_expert(3, 3.0)};
    const MergedGroup g =
        merge_group(layer, nullptr, 0, {1}, Vector{0.0, 0.0}, AlignmentMode::none);
    CHECK(g.weights.down_proj.at(0, 0) == 2.0); // (1 + 3) / 2
}

TEST_CASE("a singleton group copies the centroid bit-exactly") {
    Rng rng(121);
    MoELayer layer;
    layer.top_k = 1;
    layer.gate = Matrix(1, 6);
    ExpertWeights e;
    e.gate_proj = Matrix(8, 6);
    e.up_proj = Matrix(8, 6);
    e.down_proj = Matrix(6, 8);
    for (double& v : e.gate_proj.data) v = quantize_f32(rng.gaussian());
    for (double& v : e.up_proj.data) v = quantize_f32(rng.gaussian());
    for (double& v : e.down_proj.data) v = quantize_f32(rng.gaussian());
    layer.experts = {e};
    const MergedGroup g = merge_group(layer, nullptr, 0, {}, Vector{0.37}, AlignmentMode::combined);
    CHECK(experts_bit_equal(g.weights, layer.experts[0]));
    CHECK(g.member_perms.empty());
}

TEST_CASE("reduce_gate gathers centroid rows and validates indices") {
    Matrix gate(3, 2);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) gate.at(i, j) = double(10 * i + j);
    const Matrix r = reduce_gate(gate, {2, 0});
    CHECK(r.rows == 2);
    CHECK(r.at(0, 0) == 20.0);
    CHECK(r.at(0, 1) == 21.0);
    CHECK(r.at(1, 0) == 0.0);
    CHECK(r.at(1, 1) == 1.0);
    CHECK_THROWS_AS(reduce_gate(gate, {3}), ArgumentError);
    CHECK_THROWS_AS(reduce_gate(gate, {0, 0}), ArgumentError);
}

TEST_CASE("compress_layer validates n_keep against top_k and bounds") {
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 122);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 32, 123);
    const LayerStats s = collect_layer_stats(m.layers[0], cal.tokens);
    CompressionConfig cfg;
    cfg.n_keep = 1; // below top_k = 2
    CHECK_THROWS_AS(compress_layer(m.layers[0], s, cfg), ArgumentError);
    cfg.n_keep = 7;
    CHECK_THROWS_AS(compress_layer(m.layers[0], s, cfg), ArgumentError);
    cfg.n_keep = 0;
    CHECK_THROWS_AS(compress_layer(m.layers[0], s, cfg), ArgumentError);
}

TEST_CASE("keeping every expert reproduces the layer bit-exactly in order") {
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 124);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 32, 125);
    const LayerStats s = collect_layer_stats(m.layers[0], cal.tokens);
    CompressionConfig cfg;
    cfg.n_keep = 6;
    const CompressedLayer c = compress_layer(m.layers[0], s, cfg);
    CHECK(c.layer.gate.data == m.layers[0].gate.data);
    REQUIRE(c.layer.experts.size() == 6);
    for (std::size_t e = 0; e < 6; ++e)
        CHECK(experts_bit_equal(c.layer.experts[e], m.layers[0].experts[e]));
    CHECK(c.prov.plan.method == GroupingMethod::identity);
}

TEST_CASE("merging is invariant to member enumeration order via canonical plans") {
    // Two equal-weight members merged into one centroid; the plan builder
    // sorts members, so merge order is pinned regardless of claim order.
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 126);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 48, 127);
    const LayerStats s = collect_layer_stats(m.layers[0], cal.tokens);

    const MergedGroup a =
        merge_group(m.layers[0], &s, 0, {1, 2}, Vector{1.0, 1.0, 1.0}, AlignmentMode::none);
    const MergedGroup b =
        merge_group(m.layers[0], &s, 0, {2, 1}, Vector{1.0, 1.0, 1.0}, AlignmentMode::none);
    CHECK(a.weights.gate_proj.data == b.weights.gate_proj.data);
    CHECK(a.weights.up_proj.data == b.weights.up_proj.data);
    CHECK(a.weights.down_proj.data == b.weights.down_proj.data);
}

TEST_CASE("compressing cold noiseless duplicates is numerically transparent") {
    // Clones are exact (hidden-permuted) copies whose router rows are pushed
    // far below the bases on biased tokens: they carry no routing mass, so
    // collapsing each pair back onto its base must leave the function intact.
    RedundancyPlan plan;
    plan.base_experts = 4;
    plan.clones_per_base = 2;
    plan.noise_scale = 0.0;
    plan.permute_hidden = true;
    plan.router_mode = RouterMode::cold_clone;
    plan.gate_depress = 80.0;
    plan.gate_jitter = 0.01;
    const ModelSpec m = synth_model(12, 20, 2, 8, 2, plan, 128);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 12, 128, 129);

    CompressionConfig cfg;
    cfg.n_keep = 4;
    cfg.capacity = 1;
    cfg.dense_capture = true; // cold clones leave no sparse footprint
    cfg.merge_weights = MergeWeightKind::uniform;
    const ModelSpec c = compress_model(m, cal.tokens, cfg);
    REQUIRE(c.num_experts() == 4);

    // The kept experts are the bases themselves, bit for bit.
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t e = 0; e < 4; ++e)
            CHECK(experts_bit_equal(c.layers[l].experts[e], m.layers[l].experts[e]));

    const CalibrationSet eval = build_mixture(make_ratio(1, 1, 1), 12, 128, 130);
    const FidelityReport rep = fidelity(m, c, eval.tokens);
    CHECK(rep.pre_logit_mse < 1e-12);
    CHECK(rep.pre_logit_cosine > 1.0 - 1e-12);
}

TEST_CASE("single-layer models make sequential and non-sequential identical") {
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 131);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 64, 132);
    CompressionConfig cfg;
    cfg.n_keep = 4;
    cfg.sequential = true;
    const ModelSpec a = compress_model(m, cal.tokens, cfg);
    cfg.sequential = false;
    const ModelSpec b = compress_model(m, cal.tokens, cfg);
    CHECK(models_bit_equal(a, b));
}

TEST_CASE("sequential statistics match a fresh pass through the hybrid model") {
    const ModelSpec m = synth_model(8, 12, 2, 6, 2, RedundancyPlan{}, 133);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 48, 134);

    CompressionConfig cfg;
    cfg.n_keep = 4;
    cfg.sequential = true;
    CompressionProvenance prov;
    const ModelSpec c = compress_model(m, cal.tokens, cfg, &prov);
    REQUIRE(prov.layers.size() == 2);

    // Rebuild layer 1's input streams by hand: tokens advanced through the
    // compressed layer 0. Layer 1 statistics then determine its plan.
    std::vector<Vector> streams = cal.tokens;
    advance_streams(c.layers[0], streams);
    const LayerStats s1 = collect_layer_stats(m.layers[1], streams);
    const CompressedLayer again = compress_layer(m.layers[1], s1, cfg);
    CHECK(again.prov.plan.centroids == prov.layers[1].plan.centroids);
    CHECK(again.prov.plan.groups == prov.layers[1].plan.groups);
    CHECK(models_bit_equal(ModelSpec{8, 12, 1, 2, 0, {again.layer}},
                           ModelSpec{8, 12, 1, 2, 0, {c.layers[1]}}));
}

TEST_CASE("non-sequential statistics come from the original model's streams") {
    const ModelSpec m = synth_model(8, 12, 2, 6, 2, RedundancyPlan{}, 135);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 48, 136);

    CompressionConfig cfg;
    cfg.n_keep = 4;
    cfg.sequential = false;
    CompressionProvenance prov;
    compress_model(m, cal.tokens, cfg, &prov);

    std::vector<Vector> streams = cal.tokens;
    advance_streams(m.layers[0], streams); // original layer 0, not compressed
    const LayerStats s1 = collect_layer_stats(m.layers[1], streams);
    const CompressedLayer again = compress_layer(m.layers[1], s1, cfg);
    CHECK(again.prov.plan.centroids == prov.layers[1].plan.centroids);
    CHECK(again.prov.plan.groups == prov.layers[1].plan.groups);
}

TEST_CASE("identity compression copies the whole model without calibration") {
    const ModelSpec m = synth_model(8, 12, 2, 6, 2, RedundancyPlan{}, 137);
    CompressionConfig cfg;
    cfg.n_keep = 6;
    CompressionProvenance prov;
    const ModelSpec c = compress_model(m, {}, cfg, &prov); // no tokens needed
    CHECK(models_bit_equal(m, c));
    for (const LayerProvenance& lp : prov.layers)
        CHECK(lp.plan.method == GroupingMethod::identity);

    cfg.n_keep = 4;
    CHECK_THROWS_AS(compress_model(m, {}, cfg), ArgumentError); // real work needs tokens
}

TEST_CASE("config name round-trips") {
    CHECK(parse_method(method_name(CompressMethod::ream)) == CompressMethod::ream);
    CHECK(parse_method(method_name(CompressMethod::prune_reap)) == CompressMethod::prune_reap);
    CHECK(parse_method(method_name(CompressMethod::prune_freq)) == CompressMethod::prune_freq);
    CHECK(parse_method(method_name(CompressMethod::cluster)) == CompressMethod::cluster);
    CHECK(parse_merge_weights("uniform") == MergeWeightKind::uniform);
    CHECK(parse_alignment("combined") == AlignmentMode::combined);
    CHECK_THROWS_AS(parse_method("unknown"), ArgumentError);
    CHECK_THROWS_AS(parse_merge_weights("unknown"), ArgumentError);
    CHECK_THROWS_AS(parse_alignment("unknown"), ArgumentError);
    CHECK(auto_capacity(128) == 16);
    CHECK(auto_capacity(129) == 32);
}

TEST_CASE("the manifest lists config, plans and permutations") {
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 138);
    const CalibrationSet cal = build_mixture(make_ratio(1, 1, 1), 8, 64, 139);
    CompressionConfig cfg;
    cfg.n_keep = 3;
    CompressionProvenance prov;
    compress_model(m, cal.tokens, cfg, &prov);
    const std::string text = write_manifest(prov);
    CHECK(text.find("method ream") != std::string::npos);
    CHECK(text.find("layer 0") != std::string::npos);
    CHECK(text.find("centroid ") != std::string::npos);
}
