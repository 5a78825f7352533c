// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include "doctest.h"

#include "moec/error.hpp"
#include "moec/model.hpp"
#include "moec/rng.hpp"

using namespace moec;

namespace {

bool bits_equal(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool models_bit_equal(const ModelSpec& a, const ModelSpec& b) {
    if (a.d_model != b.d_model || a.d_ff != b.d_ff || a.num_layers != b.num_layers ||
        a.top_k != b.top_k || a.layers.size() != b.layers.size())
        return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        const MoELayer& la = a.layers[l];
        const MoELayer& lb = b.layers[l];
        if (!bits_equal(la.gate, lb.gate) || la.experts.size() != lb.experts.size()) return false;
        for (std::size_t e = 0; e < la.experts.size(); ++e) {
            if (!bits_equal(la.experts[e].gate_proj, lb.experts[e].gate_proj) ||
                !bits_equal(la.experts[e].up_proj, lb.experts[e].up_proj) ||
                !bits_equal(la.experts[e].down_proj, lb.experts[e].down_proj))
                return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("expert_forward matches a hand-rolled SwiGLU evaluation") {
    ExpertWeights e;
    e.gate_proj = Matrix(3, 2);
    e.up_proj = Matrix(3, 2);
    e.down_proj = Matrix(2, 3);
    const double gp[6] = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
    const double up[6] = {1.0, 0.5, -0.5, 1.25, 0.8, -2.0};
    const double dn[6] = {0.3, -0.6, 1.1, 0.9, 0.2, -0.4};
    std::memcpy(e.gate_proj.data.data(), gp, sizeof gp);
    std::memcpy(e.up_proj.data.data(), up, sizeof up);
    std::memcpy(e.down_proj.data.data(), dn, sizeof dn);

    const Vector x = {0.7, -1.3};
    const ExpertResult r = expert_forward(e, x);

    Vector h(3);
    for (std::size_t q = 0; q < 3; ++q) {
        const double g = e.gate_proj.at(q, 0) * x[0] + e.gate_proj.at(q, 1) * x[1];
        const double u = e.up_proj.at(q, 0) * x[0] + e.up_proj.at(q, 1) * x[1];
        h[q] = silu(g) * u;
    }
    for (std::size_t q = 0; q < 3; ++q) CHECK(r.hidden[q] == doctest::Approx(h[q]).epsilon(1e-15));
    for (std::size_t i = 0; i < 2; ++i) {
        const double y = e.down_proj.at(i, 0) * h[0] + e.down_proj.at(i, 1) * h[1] +
                         e.down_proj.at(i, 2) * h[2];
        CHECK(r.y[i] == doctest::Approx(y).epsilon(1e-14));
    }
}

TEST_CASE("route_token masks to top-k without renormalizing by default") {
    const ModelSpec m = synth_model(8, 12, 1, 6, 2, RedundancyPlan{}, 21);
    Rng rng(22);
    Vector x(8);
    for (double& v : x) v = rng.gaussian();

    const RoutingTrace t = route_token(m.layers[0], x);
    CHECK(t.active.size() == 2);
    double active_sum = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t e = 0; e < 6; ++e) {
        if (t.masked[e] != 0.0) {
            ++nonzero;
            CHECK(t.masked[e] == t.probs[e]); // raw softmax value, no renormalization
            active_sum += t.masked[e];
        }
    }
    CHECK(nonzero == 2);
    CHECK(active_sum < 1.0); // the other four experts hold the remaining mass

    ForwardOptions renorm;
    renorm.renormalize_topk = true;
    const RoutingTrace tr = route_token(m.layers[0], x, renorm);
    double s = 0.0;
    for (double v : tr.masked) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr.active == t.active); // renormalization never changes the selection
}

TEST_CASE("top_k == num_experts routes densely") {
    const ModelSpec m = synth_model(8, 12, 1, 5, 5, RedundancyPlan{}, 23);
    Rng rng(24);
    Vector x(8);
    for (double& v : x) v = rng.gaussian();
    const RoutingTrace t = route_token(m.layers[0], x);
    CHECK(t.active.size() == 5);
    for (std::size_t e = 0; e < 5; ++e) CHECK(t.masked[e] == t.probs[e]);
}

TEST_CASE("moe_forward equals the masked-weight sum of expert outputs") {
    const ModelSpec m = synth_model(8, 16, 1, 6, 3, RedundancyPlan{}, 25);
    Rng rng(26);
    Vector x(8);
    for (double& v : x) v = rng.gaussian();

    const MoEResult r = moe_forward(m.layers[0], x);
    Vector y(8, 0.0);
    for (std::size_t k = 0; k < r.trace.active.size(); ++k) {
        const std::size_t e = r.trace.active[k];
        const ExpertResult er = expert_forward(m.layers[0].experts[e], x);
        for (std::size_t i = 0; i < 8; ++i) y[i] += r.trace.masked[e] * er.y[i];
        for (std::size_t i = 0; i < 8; ++i)
            CHECK(r.trace.outputs[k][i] == er.y[i]); // trace stores raw outputs
    }
    for (std::size_t i = 0; i < 8; ++i) CHECK(r.y[i] == doctest::Approx(y[i]).epsilon(1e-12));
}

TEST_CASE("model_forward is the residual composition of layers") {
    const ModelSpec m = synth_model(8, 16, 3, 6, 2, RedundancyPlan{}, 27);
    Rng rng(28);
    Vector x(8);
    for (double& v : x) v = rng.gaussian();

    const ModelResult r = model_forward(m, x);
    CHECK(r.traces.size() == 3);
    Vector s = x;
    for (const MoELayer& layer : m.layers) {
        const MoEResult mr = moe_forward(layer, s);
        for (std::size_t i = 0; i < 8; ++i) s[i] += mr.y[i];
    }
    for (std::size_t i = 0; i < 8; ++i) CHECK(r.pre_logit[i] == s[i]);
}

TEST_CASE("advance_streams matches the serial reference bitwise") {
    const ModelSpec m = synth_model(16, 32, 1, 8, 2, RedundancyPlan{}, 29);
    Rng rng(30);
    std::vector<Vector> streams(37, Vector(16));
    for (Vector& s : streams)
        for (double& v : s) v = rng.gaussian();

    std::vector<Vector> a = streams, b = streams;
    advance_streams(m.layers[0], a);
    ref::advance_streams(m.layers[0], b);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t)
        CHECK(std::memcmp(a[t].data(), b[t].data(), 16 * sizeof(double)) == 0);
}

TEST_CASE("synth_model is seed-deterministic and seed-sensitive") {
    RedundancyPlan plan;
    plan.base_experts = 4;
    plan.clones_per_base = 2;
    plan.noise_scale = 0.05;
    plan.permute_hidden = true;
    plan.router_mode = RouterMode::warm_clone;
    plan.gate_depress = 1.0;
    plan.gate_jitter = 0.3;
    const ModelSpec a = synth_model(16, 24, 2, 8, 2, plan, 77);
    const ModelSpec b = synth_model(16, 24, 2, 8, 2, plan, 77);
    const ModelSpec c = synth_model(16, 24, 2, 8, 2, plan, 78);
    CHECK(models_bit_equal(a, b));
    CHECK(!models_bit_equal(a, c));
}

TEST_CASE("synth_model weights are float32-snapped") {
    const ModelSpec m = synth_model(8, 12, 1, 4, 2, RedundancyPlan{}, 31);
    for (double v : m.layers[0].gate.data) CHECK(v == double(float(v)));
    for (const ExpertWeights& e : m.layers[0].experts) {
        for (double v : e.gate_proj.data) CHECK(v == double(float(v)));
        for (double v : e.down_proj.data) CHECK(v == double(float(v)));
    }
}

TEST_CASE("hidden-permuted noiseless clones are functionally equivalent") {
    RedundancyPlan plan;
    plan.base_experts = 3;
    plan.clones_per_base = 2;
    plan.noise_scale = 0.0;
    plan.permute_hidden = true;
    plan.router_mode = RouterMode::cold_clone;
    plan.gate_depress = 80.0;
    plan.gate_jitter = 0.01;
    const ModelSpec m = synth_model(8, 16, 1, 6, 2, plan, 33);

    Rng rng(34);
    for (int trial = 0; trial < 5; ++trial) {
        Vector x(8);
        for (double& v : x) v = rng.gaussian();
        for (std::size_t b = 0; b < 3; ++b) {
            const ExpertResult base = expert_forward(m.layers[0].experts[b], x);
            const ExpertResult clone = expert_forward(m.layers[0].experts[3 + b], x);
            for (std::size_t i = 0; i < 8; ++i)
                CHECK(clone.y[i] == doctest::Approx(base.y[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("cold-clone router rows keep clones inactive on biased tokens") {
    RedundancyPlan plan;
    plan.base_experts = 4;
    plan.clones_per_base = 2;
    plan.router_mode = RouterMode::cold_clone;
    plan.gate_depress = 80.0;
    plan.gate_jitter = 0.01;
    const ModelSpec m = synth_model(16, 24, 1, 8, 2, plan, 35);

    // Tokens with a positive ones-direction component (the calibration bias).
    Rng rng(36);
    const double inv = 1.0 / std::sqrt(16.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vector x(16);
        for (double& v : x) v = 1.5 * inv + 0.25 * rng.gaussian();
        const RoutingTrace t = route_token(m.layers[0], x);
        for (std::size_t e : t.active) CHECK(e < 4); // clones (indices 4..7) never win
    }
}
