// SPDX-License-Identifier: Apache-2.0
#include "moec/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "moec/error.hpp"

namespace moec {

Assignment hungarian(const Matrix& cost) {
    if (cost.rows != cost.cols)
        throw ShapeError("hungarian: cost matrix is " + std::to_string(cost.rows) + "x" +
                         std::to_string(cost.cols) + ", expected square");
    if (cost.rows == 0) throw ArgumentError("hungarian: empty cost matrix");
    const std::size_t n = cost.rows;
    const double kInf = std::numeric_limits<double>::max();

    // 1-indexed potentials/links with a sentinel column 0.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> link(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        link[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = link[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[link[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (link[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            link[j0] = link[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    Assignment out;
    out.perm.resize(n);
    for (std::size_t j = 1; j <= n; ++j) out.perm[j - 1] = link[j] - 1;
    for (std::size_t j = 0; j < n; ++j) out.total += cost.at(out.perm[j], j);
    return out;
}

namespace {

double row_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Per-neuron weight signature rows: [gate_proj row | up_proj row | down_proj col].
Matrix weight_signatures(const ExpertWeights& e) {
    const std::size_t d_ff = e.gate_proj.rows;
    const std::size_t d_model = e.gate_proj.cols;
    Matrix sig(d_ff, 3 * d_model);
    for (std::size_t p = 0; p < d_ff; ++p) {
        double* out = sig.row(p);
        const double* g = e.gate_proj.row(p);
        const double* up = e.up_proj.row(p);
        for (std::size_t c = 0; c < d_model; ++c) {
            out[c] = g[c];
            out[d_model + c] = up[c];
            out[2 * d_model + c] = e.down_proj.at(c, p);
        }
    }
    return sig;
}

Matrix pairwise_distances(const Matrix& a, const Matrix& b) {
    Matrix cost(a.rows, b.rows);
    const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t sp = 0; sp < pn; ++sp) {
        const std::size_t p = static_cast<std::size_t>(sp);
        for (std::size_t q = 0; q < b.rows; ++q)
            cost.at(p, q) = row_distance(a.row(p), b.row(q), a.cols);
    }
    return cost;
}

} // namespace

Matrix cost_act(const Matrix& profile_c, const Matrix& profile_j) {
    if (profile_c.rows != profile_j.rows || profile_c.cols != profile_j.cols)
        throw ShapeError("cost_act: profile shapes differ");
    return pairwise_distances(profile_c, profile_j);
}

Matrix cost_wt(const ExpertWeights& e_c, const ExpertWeights& e_j) {
    if (e_c.gate_proj.rows != e_j.gate_proj.rows || e_c.gate_proj.cols != e_j.gate_proj.cols ||
        e_c.up_proj.rows != e_j.up_proj.rows || e_c.up_proj.cols != e_j.up_proj.cols ||
        e_c.down_proj.rows != e_j.down_proj.rows || e_c.down_proj.cols != e_j.down_proj.cols)
        throw ShapeError("cost_wt: expert shapes differ");
    return pairwise_distances(weight_signatures(e_c), weight_signatures(e_j));
}

bool shared_activation_profiles(const LayerStats& stats, std::size_t expert_c,
                                std::size_t expert_j, Matrix& profile_c, Matrix& profile_j) {
    const LayerStats::ExpertCapture& cc = stats.experts[expert_c];
    const LayerStats::ExpertCapture& cj = stats.experts[expert_j];
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    std::size_t p = 0, q = 0;
    while (p < cc.tokens.size() && q < cj.tokens.size()) {
        if (cc.tokens[p] < cj.tokens[q]) {
            ++p;
        } else if (cc.tokens[p] > cj.tokens[q]) {
            ++q;
        } else {
            slots.emplace_back(p, q);
            ++p;
            ++q;
        }
    }
    if (slots.empty()) return false;

    const std::size_t d_ff = cc.hidden.rows;
    profile_c = Matrix(d_ff, slots.size());
    profile_j = Matrix(d_ff, slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s)
        for (std::size_t r = 0; r < d_ff; ++r) {
            profile_c.at(r, s) = cc.hidden.at(r, slots[s].first);
            profile_j.at(r, s) = cj.hidden.at(r, slots[s].second);
        }
    // Normalize per neuron over the shared tokens only; dead neurons stay zero.
    for (Matrix* prof : {&profile_c, &profile_j})
        for (std::size_t r = 0; r < d_ff; ++r) {
            double* row = prof->row(r);
            const double norm = l2_norm(row, prof->cols);
            if (norm < 1e-12) continue;
            for (std::size_t s = 0; s < prof->cols; ++s) row[s] /= norm;
        }
    return true;
}

AlignedMember align_member(const ExpertWeights& e_c, const ExpertWeights& e_j,
                           const LayerStats* stats, std::size_t expert_c, std::size_t expert_j,
                           AlignmentMode mode) {
    const std::size_t d_ff = e_j.gate_proj.rows;
    AlignedMember out;
    if (mode == AlignmentMode::none) {
        out.weights = e_j;
        out.perm.resize(d_ff);
        std::iota(out.perm.begin(), out.perm.end(), 0);
        return out;
    }

    Matrix cost;
    bool have_act = false;
    if (mode == AlignmentMode::act || mode == AlignmentMode::combined) {
        Matrix prof_c, prof_j;
        if (stats != nullptr &&
            shared_activation_profiles(*stats, expert_c, expert_j, prof_c, prof_j)) {
            cost = cost_act(prof_c, prof_j);
            have_act = true;
        } else {
            out.act_fallback = true;
        }
    }
    if (!have_act) {
        cost = cost_wt(e_c, e_j);
    } else if (mode == AlignmentMode::combined) {
        const Matrix wt = cost_wt(e_c, e_j);
        for (std::size_t k = 0; k < cost.data.size(); ++k) cost.data[k] += wt.data[k];
    }

    // hungarian assigns rows to columns; transposing puts member neurons on
    // rows and centroid slots on columns, so perm[slot] = member neuron.
    Matrix t(cost.cols, cost.rows);
    for (std::size_t r = 0; r < cost.rows; ++r)
        for (std::size_t c = 0; c < cost.cols; ++c) t.at(c, r) = cost.at(r, c);
    out.perm = hungarian(t).perm;
    out.weights = permute_hidden(e_j, out.perm);
    return out;
}

ExpertWeights permute_hidden(const ExpertWeights& e, const std::vector<std::size_t>& perm) {
    const std::size_t d_ff = e.gate_proj.rows;
    if (perm.size() != d_ff)
        throw ShapeError("permute_hidden: perm length " + std::to_string(perm.size()) +
                         " != d_ff " + std::to_string(d_ff));
    std::vector<bool> seen(d_ff, false);
    for (std::size_t s : perm) {
        if (s >= d_ff || seen[s]) throw ArgumentError("permute_hidden: not a permutation");
        seen[s] = true;
    }
    ExpertWeights out;
    out.gate_proj = Matrix(e.gate_proj.rows, e.gate_proj.cols);
    out.up_proj = Matrix(e.up_proj.rows, e.up_proj.cols);
    out.down_proj = Matrix(e.down_proj.rows, e.down_proj.cols);
    for (std::size_t q = 0; q < d_ff; ++q) {
        const std::size_t s = perm[q];
        for (std::size_t c = 0; c < e.gate_proj.cols; ++c) {
            out.gate_proj.at(q, c) = e.gate_proj.at(s, c);
            out.up_proj.at(q, c) = e.up_proj.at(s, c);
        }
        for (std::size_t r = 0; r < e.down_proj.rows; ++r) out.down_proj.at(r, q) = e.down_proj.at(r, s);
    }
    return out;
}

} // namespace moec
