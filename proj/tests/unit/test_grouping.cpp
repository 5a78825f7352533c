// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"

#include "moec/error.hpp"
#include "moec/grouping.hpp"
#include "moec/rng.hpp"

using namespace moec;

namespace {

SaliencyVector sal(std::vector<double> v) {
    SaliencyVector s;
    s.values = std::move(v);
    s.kind = SaliencyKind::reap;
    return s;
}

Matrix sym_random(Rng& rng, std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 2.0 * rng.uniform() - 1.0;
            m.at(i, j) = v;
            m.at(j, i) = v;
        }
    }
    return m;
}

} // namespace

TEST_CASE("pseudo-prune follows the hand trace on four experts") {
    // Saliency ranks: e3 (0.9) > e0 (0.8) > e2 (0.3) > e1 (0.1); keep 2.
    // Centroid 3 claims first. Similarity: sim(3,1)=0.9 > sim(3,2)=0.2,
    // so with capacity 1 it takes e1; centroid 0 absorbs the remaining e2.
    Matrix sim(4, 4);
    const double vals[16] = {1.0, 0.3, 0.6, 0.1,  //
                             0.3, 1.0, 0.4, 0.9,  //
                             0.6, 0.4, 1.0, 0.2,  //
                             0.1, 0.9, 0.2, 1.0};
    std::copy(vals, vals + 16, sim.data.begin());

    const GroupingPlan p = pseudo_prune(sal({0.8, 0.1, 0.3, 0.9}), sim, 2, 1);
    validate_plan(p, 4);
    REQUIRE(p.centroids == std::vector<std::size_t>{0, 3});
    CHECK(p.groups[0] == std::vector<std::size_t>{0, 2});
    CHECK(p.groups[1] == std::vector<std::size_t>{1, 3});
    CHECK(p.assignment == std::vector<std::size_t>{0, 1, 0, 1});
}

TEST_CASE("the top-ranked centroid can claim a full pair when capacity allows") {
    // Saliency 4 > 3 > 2 > 1; capacity 2; expert 0 prefers 2 over 3 but has
    // room for both, so centroid 1 ends up a singleton.
    Matrix sim(4, 4);
    const double vals[16] = {1.0, 0.0, 0.8, 0.6,  //
                             0.0, 1.0, 0.5, 0.5,  //
                             0.8, 0.5, 1.0, 0.0,  //
                             0.6, 0.5, 0.0, 1.0};
    std::copy(vals, vals + 16, sim.data.begin());
    const GroupingPlan p = pseudo_prune(sal({4, 3, 2, 1}), sim, 2, 2);
    validate_plan(p, 4);
    CHECK(p.centroids == std::vector<std::size_t>{0, 1});
    CHECK(p.groups[0] == std::vector<std::size_t>{0, 2, 3});
    CHECK(p.groups[1] == std::vector<std::size_t>{1});
    CHECK(p.assignment == std::vector<std::size_t>{0, 1, 0, 0});
}

TEST_CASE("keeping all but one expert produces exactly one assignment") {
    Rng rng(90);
    const Matrix sim = sym_random(rng, 5);
    const GroupingPlan p = pseudo_prune(sal({5, 4, 3, 2, 1}), sim, 4, 1);
    validate_plan(p, 5);
    CHECK(p.num_kept() == 4);
    std::size_t assigned = 0;
    for (const auto& g : p.groups) assigned += g.size() - 1;
    CHECK(assigned == 1);
}

TEST_CASE("pseudo-prune claims unconditionally even at negative similarity") {
    // Both non-centroids are closer to centroid 1, but rank order gives
    // centroid 0 the first pick and capacity forces a negative-similarity
    // claim for the leftover.
    Matrix sim(4, 4);
    const double vals[16] = {1.0, 0.0, -0.9, -0.8,  //
                             0.0, 1.0, 0.7,  0.6,   //
                             -0.9, 0.7, 1.0, 0.0,   //
                             -0.8, 0.6, 0.0, 1.0};
    std::copy(vals, vals + 16, sim.data.begin());
    const GroupingPlan p = pseudo_prune(sal({0.9, 0.8, 0.0, 0.0}), sim, 2, 1);
    validate_plan(p, 4);
    CHECK(p.centroids == std::vector<std::size_t>{0, 1});
    // Centroid 0 (higher saliency) picks its best non-centroid: e3 (-0.8 > -0.9).
    CHECK(p.groups[0] == std::vector<std::size_t>{0, 3});
    CHECK(p.groups[1] == std::vector<std::size_t>{1, 2});
}

TEST_CASE("pseudo-prune tie-breaks saliency and similarity toward the lower index") {
    Matrix sim(3, 3);
    for (std::size_t i = 0; i < 3; ++i) sim.at(i, i) = 1.0;
    // All off-diagonal similarities equal: member ties resolve to lower index.
    sim.at(0, 1) = sim.at(1, 0) = 0.5;
    sim.at(0, 2) = sim.at(2, 0) = 0.5;
    sim.at(1, 2) = sim.at(2, 1) = 0.5;
    const GroupingPlan p = pseudo_prune(sal({0.7, 0.7, 0.7}), sim, 1, 2);
    CHECK(p.centroids == std::vector<std::size_t>{0}); // saliency tie -> lowest index
    CHECK(p.groups[0] == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("pseudo-prune validates n_keep and capacity feasibility") {
    Rng rng(91);
    const Matrix sim = sym_random(rng, 6);
    const SaliencyVector s = sal({6, 5, 4, 3, 2, 1});
    CHECK_THROWS_AS(pseudo_prune(s, sim, 0, 4), ArgumentError);
    CHECK_THROWS_AS(pseudo_prune(s, sim, 6, 4), ArgumentError);
    // 4 leftovers over 2 centroids need capacity >= 2.
    CHECK_THROWS_AS(pseudo_prune(s, sim, 2, 1), ArgumentError);
    CHECK_NOTHROW(pseudo_prune(s, sim, 2, 2));
    // capacity 0 means unlimited.
    CHECK_NOTHROW(pseudo_prune(s, sim, 2, 0));
}

TEST_CASE("pseudo-prune at scale: 128 experts to 96 with capacity 16") {
    Rng rng(92);
    const std::size_t n = 128, keep = 96;
    Matrix sim = sym_random(rng, n);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform();
    const GroupingPlan p = pseudo_prune(sal(v), sim, keep, 16);
    validate_plan(p, n);
    CHECK(p.num_kept() == keep);

    // 32 non-centroids, each centroid takes at most 16: exactly two centroids
    // absorb everything (16 + 16), the other 94 stay singletons.
    std::size_t absorbers = 0, singletons = 0, max_size = 0;
    for (const auto& g : p.groups) {
        max_size = std::max(max_size, g.size());
        if (g.size() == 1) ++singletons;
        if (g.size() > 1) ++absorbers;
        CHECK(g.size() <= 17);
    }
    CHECK(absorbers == 2);
    CHECK(singletons == 94);
    CHECK(max_size == 17);

    // The two absorbers are the two highest-saliency centroids.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    const std::set<std::size_t> top2 = {order[0], order[1]};
    for (std::size_t slot = 0; slot < p.groups.size(); ++slot)
        if (p.groups[slot].size() > 1) CHECK(top2.count(p.centroids[slot]) == 1);
}

TEST_CASE("prune_select keeps the top saliency set and drops the rest") {
    const GroupingPlan p = prune_select(sal({0.2, 0.9, 0.4, 0.9, 0.1}), 3);
    validate_plan(p, 5);
    CHECK(p.centroids == std::vector<std::size_t>{1, 2, 3});
    for (const auto& g : p.groups) CHECK(g.size() == 1);
    CHECK(p.assignment[0] == kUnassigned);
    CHECK(p.assignment[4] == kUnassigned);
    CHECK(p.assignment[1] == 0);
    CHECK(p.assignment[2] == 1);
    CHECK(p.assignment[3] == 2);
    CHECK_THROWS_AS(prune_select(sal({1, 2}), 0), ArgumentError);
    CHECK_THROWS_AS(prune_select(sal({1, 2}), 3), ArgumentError);
    // n_keep == N is allowed for plain pruning.
    CHECK_NOTHROW(prune_select(sal({1, 2}), 2));
}

TEST_CASE("average-linkage clustering merges exact duplicates first") {
    // Experts 0 and 3 are identical (sim 1), others dissimilar.
    Matrix sim(4, 4);
    const double vals[16] = {1.0, 0.1, 0.2, 1.0,  //
                             0.1, 1.0, 0.3, 0.1,  //
                             0.2, 0.3, 1.0, 0.2,  //
                             1.0, 0.1, 0.2, 1.0};
    std::copy(vals, vals + 16, sim.data.begin());
    const GroupingPlan p = cluster_avg_linkage(sim, 3);
    validate_plan(p, 4);
    REQUIRE(p.num_kept() == 3);
    bool found = false;
    for (const auto& g : p.groups)
        if (g == std::vector<std::size_t>{0, 3}) found = true;
    CHECK(found);
}

TEST_CASE("average-linkage respects the requested cluster count") {
    Rng rng(93);
    const Matrix sim = sym_random(rng, 10);
    for (std::size_t k = 1; k <= 10; ++k) {
        const GroupingPlan p = cluster_avg_linkage(sim, k);
        validate_plan(p, 10);
        CHECK(p.num_kept() == k);
        std::size_t covered = 0;
        for (const auto& g : p.groups) covered += g.size();
        CHECK(covered == 10); // clustering never discards an expert
    }
}

TEST_CASE("nearest-centroid assignment can differ from capacity-bounded grouping") {
    // Three low-saliency experts all most similar to centroid 0; capacity 1
    // forces pseudo-prune to spill two of them to centroid 1.
    Matrix sim(5, 5);
    for (std::size_t i = 0; i < 5; ++i) sim.at(i, i) = 1.0;
    auto set = [&](std::size_t i, std::size_t j, double v) {
        sim.at(i, j) = v;
        sim.at(j, i) = v;
    };
    set(0, 2, 0.9);
    set(0, 3, 0.8);
    set(0, 4, 0.7);
    set(1, 2, 0.2);
    set(1, 3, 0.3);
    set(1, 4, 0.1);
    const SaliencyVector s = sal({1.0, 0.9, 0.1, 0.1, 0.1});

    const GroupingPlan near = nearest_centroid(s, sim, 2);
    validate_plan(near, 5);
    CHECK(near.groups[0] == std::vector<std::size_t>{0, 2, 3, 4});
    CHECK(near.groups[1] == std::vector<std::size_t>{1});

    const GroupingPlan bounded = pseudo_prune(s, sim, 2, 2);
    validate_plan(bounded, 5);
    CHECK(bounded.groups[0] == std::vector<std::size_t>{0, 2, 3});
    CHECK(bounded.groups[1] == std::vector<std::size_t>{1, 4});
}

TEST_CASE("identity plan keeps every expert in place") {
    const GroupingPlan p = identity_plan(5);
    validate_plan(p, 5);
    CHECK(p.num_kept() == 5);
    for (std::size_t e = 0; e < 5; ++e) {
        CHECK(p.centroids[e] == e);
        CHECK(p.groups[e] == std::vector<std::size_t>{e});
        CHECK(p.assignment[e] == e);
    }
}

TEST_CASE("validate_plan rejects malformed plans") {
    GroupingPlan p = identity_plan(3);
    GroupingPlan bad = p;
    bad.centroids = {1, 0, 2}; // not ascending
    std::swap(bad.groups[0], bad.groups[1]);
    bad.assignment = {1, 0, 2};
    CHECK_THROWS_AS(validate_plan(bad, 3), ArgumentError);

    bad = p;
    bad.groups[1] = {0, 1}; // duplicate membership of 0
    CHECK_THROWS_AS(validate_plan(bad, 3), ArgumentError);

    bad = p;
    bad.assignment[2] = 0; // assignment disagrees with groups
    CHECK_THROWS_AS(validate_plan(bad, 3), ArgumentError);

    bad = p;
    bad.groups[2] = {1, 2}; // centroid 2's group gained 1 but 1 is elsewhere
    CHECK_THROWS_AS(validate_plan(bad, 3), ArgumentError);
}

TEST_CASE("random pseudo-prune plans always validate") {
    Rng rng(94);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 4 + std::size_t(rng.uniform() * 28.0);
        const std::size_t keep = 1 + std::size_t(rng.uniform() * double(n - 1));
        const Matrix sim = sym_random(rng, n);
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform();
        const GroupingPlan p = pseudo_prune(sal(v), sim, keep, 0);
        validate_plan(p, n);
        CHECK(p.num_kept() == keep);
        std::size_t covered = 0;
        for (const auto& g : p.groups) covered += g.size();
        CHECK(covered == n);
    }
}

TEST_CASE("dump_plan prints one canonical line per slot") {
    Matrix sim(3, 3);
    for (std::size_t i = 0; i < 3; ++i) sim.at(i, i) = 1.0;
    sim.at(0, 2) = sim.at(2, 0) = 0.9;
    const GroupingPlan p = pseudo_prune(sal({0.9, 0.8, 0.1}), sim, 2, 1);
    CHECK(dump_plan(p) == "centroid 0 members 0,2\ncentroid 1 members 1\n");
}
