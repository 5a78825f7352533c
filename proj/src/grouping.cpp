// SPDX-License-Identifier: Apache-2.0
#include "moec/grouping.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "moec/error.hpp"

namespace moec {

namespace {

// Expert indices sorted by saliency descending, ties broken by lower index.
std::vector<std::size_t> saliency_order(const SaliencyVector& saliency) {
    std::vector<std::size_t> order(saliency.values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return saliency.values[a] > saliency.values[b];
    });
    return order;
}

void check_similarity_shape(const Matrix& similarity, std::size_t n) {
    if (similarity.rows != n || similarity.cols != n)
        throw ShapeError("grouping: similarity matrix is " + std::to_string(similarity.rows) +
                         "x" + std::to_string(similarity.cols) + ", expected " +
                         std::to_string(n) + "x" + std::to_string(n));
}

// Sorts slots by ascending centroid index, sorts members, fills assignment.
void canonicalize(GroupingPlan& plan, std::size_t num_experts) {
    std::vector<std::size_t> slot_order(plan.centroids.size());
    std::iota(slot_order.begin(), slot_order.end(), 0);
    std::sort(slot_order.begin(), slot_order.end(),
              [&](std::size_t a, std::size_t b) { return plan.centroids[a] < plan.centroids[b]; });
    std::vector<std::size_t> centroids;
    std::vector<std::vector<std::size_t>> groups;
    centroids.reserve(plan.centroids.size());
    groups.reserve(plan.groups.size());
    for (std::size_t s : slot_order) {
        centroids.push_back(plan.centroids[s]);
        std::sort(plan.groups[s].begin(), plan.groups[s].end());
        groups.push_back(std::move(plan.groups[s]));
    }
    plan.centroids = std::move(centroids);
    plan.groups = std::move(groups);
    plan.assignment.assign(num_experts, kUnassigned);
    for (std::size_t s = 0; s < plan.groups.size(); ++s)
        for (std::size_t e : plan.groups[s]) plan.assignment[e] = s;
}

} // namespace

GroupingPlan pseudo_prune(const SaliencyVector& saliency, const Matrix& similarity,
                          std::size_t n_keep, std::size_t capacity) {
    const std::size_t n = saliency.values.size();
    check_similarity_shape(similarity, n);
    if (n_keep < 1 || n_keep >= n)
        throw ArgumentError("pseudo_prune: n_keep=" + std::to_string(n_keep) +
                            " outside [1, " + std::to_string(n) + ")");
    if (capacity > 0 && (n - n_keep) > n_keep * capacity)
        throw ArgumentError("pseudo_prune: capacity " + std::to_string(capacity) +
                            " cannot absorb " + std::to_string(n - n_keep) +
                            " non-centroids across " + std::to_string(n_keep) + " groups");

    const std::vector<std::size_t> order = saliency_order(saliency);
    std::vector<bool> is_centroid(n, false);
    for (std::size_t r = 0; r < n_keep; ++r) is_centroid[order[r]] = true;

    std::vector<std::size_t> pool;
    pool.reserve(n - n_keep);
    for (std::size_t e = 0; e < n; ++e)
        if (!is_centroid[e]) pool.push_back(e);

    GroupingPlan plan;
    plan.method = GroupingMethod::pseudo_prune;
    plan.capacity = capacity;
    for (std::size_t r = 0; r < n_keep; ++r) {
        const std::size_t c = order[r];
        std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
            const double sa = similarity.at(c, a);
            const double sb = similarity.at(c, b);
            if (sa != sb) return sa > sb;
            return a < b;
        });
        const std::size_t take = capacity == 0 ? pool.size() : std::min(capacity, pool.size());
        std::vector<std::size_t> group(pool.begin(), pool.begin() + take);
        pool.erase(pool.begin(), pool.begin() + take);
        group.push_back(c);
        plan.centroids.push_back(c);
        plan.groups.push_back(std::move(group));
    }
    canonicalize(plan, n);
    return plan;
}

GroupingPlan prune_select(const SaliencyVector& saliency, std::size_t n_keep) {
    const std::size_t n = saliency.values.size();
    if (n_keep < 1 || n_keep > n)
        throw ArgumentError("prune_select: n_keep=" + std::to_string(n_keep) + " outside [1, " +
                            std::to_string(n) + "]");
    const std::vector<std::size_t> order = saliency_order(saliency);
    GroupingPlan plan;
    plan.method = GroupingMethod::prune;
    for (std::size_t r = 0; r < n_keep; ++r) {
        plan.centroids.push_back(order[r]);
        plan.groups.push_back({order[r]});
    }
    canonicalize(plan, n);
    return plan;
}

GroupingPlan cluster_avg_linkage(const Matrix& similarity, std::size_t n_keep) {
    const std::size_t n = similarity.rows;
    check_similarity_shape(similarity, n);
    if (n_keep < 1 || n_keep > n)
        throw ArgumentError("cluster_avg_linkage: n_keep=" + std::to_string(n_keep) +
                            " outside [1, " + std::to_string(n) + "]");

    Matrix dist(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dist.at(i, j) = 1.0 - similarity.at(i, j);

    std::vector<bool> active(n, true);
    std::vector<std::size_t> size(n, 1);
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};

    std::size_t clusters = n;
    while (clusters > n_keep) {
        std::size_t bi = kUnassigned, bj = kUnassigned;
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const double d = dist.at(i, j);
                if (bi == kUnassigned || d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        // Average-linkage update: the distance from any cluster k to the
        // merged cluster is the size-weighted mean of its distances to the
        // two parts.
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double d = (double(size[bi]) * dist.at(bi, k) + double(size[bj]) * dist.at(bj, k)) /
                             double(size[bi] + size[bj]);
            dist.at(bi, k) = d;
            dist.at(k, bi) = d;
        }
        members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
        size[bi] += size[bj];
        active[bj] = false;
        --clusters;
    }

    GroupingPlan plan;
    plan.method = GroupingMethod::cluster_avg;
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        std::vector<std::size_t> group = members[i];
        std::sort(group.begin(), group.end());
        // Representative: the member most similar on average to its
        // co-members (a singleton represents itself).
        std::size_t rep = group[0];
        double best_mean = 0.0;
        bool first = true;
        for (std::size_t cand : group) {
            double acc = 0.0;
            for (std::size_t other : group)
                if (other != cand) acc += similarity.at(cand, other);
            const double mean = group.size() > 1 ? acc / double(group.size() - 1) : 0.0;
            if (first || mean > best_mean) {
                best_mean = mean;
                rep = cand;
                first = false;
            }
        }
        plan.centroids.push_back(rep);
        plan.groups.push_back(std::move(group));
    }
    canonicalize(plan, n);
    return plan;
}

GroupingPlan nearest_centroid(const SaliencyVector& saliency, const Matrix& similarity,
                              std::size_t n_keep) {
    const std::size_t n = saliency.values.size();
    check_similarity_shape(similarity, n);
    if (n_keep < 1 || n_keep > n)
        throw ArgumentError("nearest_centroid: n_keep=" + std::to_string(n_keep) + " outside [1, " +
                            std::to_string(n) + "]");
    const std::vector<std::size_t> order = saliency_order(saliency);
    GroupingPlan plan;
    plan.method = GroupingMethod::nearest;
    std::vector<std::size_t> slot_of(n, kUnassigned);
    for (std::size_t r = 0; r < n_keep; ++r) {
        plan.centroids.push_back(order[r]);
        plan.groups.push_back({order[r]});
        slot_of[order[r]] = r;
    }
    for (std::size_t e = 0; e < n; ++e) {
        if (slot_of[e] != kUnassigned) continue;
        std::size_t best = plan.centroids[0];
        for (std::size_t c : plan.centroids) {
            if (similarity.at(c, e) > similarity.at(best, e)) best = c;
            // ties keep the earlier (lower-index after canonical sort is not
            // yet applied, so compare on expert index explicitly)
            else if (similarity.at(c, e) == similarity.at(best, e) && c < best)
                best = c;
        }
        plan.groups[slot_of[best]].push_back(e);
    }
    canonicalize(plan, n);
    return plan;
}

GroupingPlan identity_plan(std::size_t num_experts) {
    GroupingPlan plan;
    plan.method = GroupingMethod::identity;
    for (std::size_t e = 0; e < num_experts; ++e) {
        plan.centroids.push_back(e);
        plan.groups.push_back({e});
    }
    plan.assignment.resize(num_experts);
    std::iota(plan.assignment.begin(), plan.assignment.end(), 0);
    return plan;
}

void validate_plan(const GroupingPlan& plan, std::size_t num_experts) {
    if (plan.centroids.size() != plan.groups.size())
        throw ArgumentError("plan: centroid/group count mismatch");
    if (plan.assignment.size() != num_experts)
        throw ArgumentError("plan: assignment length mismatch");
    if (!std::is_sorted(plan.centroids.begin(), plan.centroids.end()) ||
        std::adjacent_find(plan.centroids.begin(), plan.centroids.end()) != plan.centroids.end())
        throw ArgumentError("plan: centroids not strictly ascending");
    std::vector<std::size_t> seen(num_experts, kUnassigned);
    for (std::size_t s = 0; s < plan.groups.size(); ++s) {
        const auto& group = plan.groups[s];
        if (!std::is_sorted(group.begin(), group.end()))
            throw ArgumentError("plan: group members not sorted");
        bool has_centroid = false;
        for (std::size_t e : group) {
            if (e >= num_experts) throw ArgumentError("plan: member index out of range");
            if (seen[e] != kUnassigned) throw ArgumentError("plan: duplicate membership");
            seen[e] = s;
            if (e == plan.centroids[s]) has_centroid = true;
        }
        if (!has_centroid) throw ArgumentError("plan: group missing its centroid");
        if (plan.capacity > 0 && group.size() > plan.capacity + 1)
            throw ArgumentError("plan: group exceeds capacity");
    }
    for (std::size_t e = 0; e < num_experts; ++e)
        if (plan.assignment[e] != seen[e]) throw ArgumentError("plan: assignment inconsistent");
}

std::string dump_plan(const GroupingPlan& plan) {
    std::ostringstream os;
    for (std::size_t s = 0; s < plan.centroids.size(); ++s) {
        os << "centroid " << plan.centroids[s] << " members ";
        for (std::size_t i = 0; i < plan.groups[s].size(); ++i) {
            if (i) os << ',';
            os << plan.groups[s][i];
        }
        os << '\n';
    }
    return os.str();
}

} // namespace moec
