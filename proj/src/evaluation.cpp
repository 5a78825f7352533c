// SPDX-License-Identifier: Apache-2.0
#include "moec/evaluation.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include "moec/error.hpp"

namespace moec {

FidelityReport fidelity(const ModelSpec& original, const ModelSpec& compressed,
                        const std::vector<Vector>& eval_tokens, const ForwardOptions& opts) {
    if (original.d_model != compressed.d_model)
        throw ShapeError("fidelity: d_model differs");
    if (original.layers.size() != compressed.layers.size())
        throw ShapeError("fidelity: layer counts differ");
    if (eval_tokens.empty()) throw ArgumentError("fidelity: no evaluation tokens");

    const std::size_t L = original.layers.size();
    const std::size_t T = eval_tokens.size();
    const std::size_t d = original.d_model;

    FidelityReport rep;
    rep.num_eval_tokens = T;
    rep.per_layer_mse.assign(L, 0.0);
    rep.per_layer_cosine.assign(L, 0.0);

    // Teacher-forced pass: both layers see the original model's stream.
    std::vector<Vector> streams = eval_tokens;
    Matrix sq(T, L), cs(T, L); // per-token slots, aggregated in fixed order
    for (std::size_t l = 0; l < L; ++l) {
        const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(T);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t st = 0; st < pt; ++st) {
            const std::size_t t = static_cast<std::size_t>(st);
            const Vector yo = moe_forward(original.layers[l], streams[t], opts).y;
            const Vector yc = moe_forward(compressed.layers[l], streams[t], opts).y;
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = yo[k] - yc[k];
                acc += diff * diff;
            }
            sq.at(t, l) = acc;
            cs.at(t, l) = cosine_sim(yo, yc);
            for (std::size_t k = 0; k < d; ++k) streams[t][k] += yo[k];
        }
        for (std::size_t t = 0; t < T; ++t) {
            rep.per_layer_mse[l] += sq.at(t, l);
            rep.per_layer_cosine[l] += cs.at(t, l);
        }
        rep.per_layer_mse[l] /= double(T * d);
        rep.per_layer_cosine[l] /= double(T);
    }

    // End-to-end pass through the compressed model; `streams` already holds
    // the original model's final states.
    std::vector<Vector> comp_streams = eval_tokens;
    for (std::size_t l = 0; l < L; ++l) advance_streams(compressed.layers[l], comp_streams, opts);
    double mse = 0.0, cos_sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = streams[t][k] - comp_streams[t][k];
            mse += diff * diff;
        }
        cos_sum += cosine_sim(streams[t], comp_streams[t]);
    }
    rep.pre_logit_mse = mse / double(T * d);
    rep.pre_logit_cosine = cos_sum / double(T);
    return rep;
}

Matrix prelogit_matrix(const ModelSpec& model, const std::vector<Vector>& tokens,
                       const ForwardOptions& opts) {
    std::vector<Vector> streams = tokens;
    for (const MoELayer& layer : model.layers) advance_streams(layer, streams, opts);
    Matrix out(tokens.size(), model.d_model);
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t k = 0; k < model.d_model; ++k) out.at(t, k) = streams[t][k];
    return out;
}

namespace ref {

Matrix prelogit_matrix(const ModelSpec& model, const std::vector<Vector>& tokens,
                       const ForwardOptions& opts) {
    std::vector<Vector> streams = tokens;
    for (const MoELayer& layer : model.layers) ref::advance_streams(layer, streams, opts);
    Matrix out(tokens.size(), model.d_model);
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t k = 0; k < model.d_model; ++k) out.at(t, k) = streams[t][k];
    return out;
}

} // namespace ref

namespace {

// Cyclic Jacobi eigenvalues of a symmetric matrix (destroys its argument).
Vector jacobi_eigenvalues(Matrix a) {
    const std::size_t n = a.rows;
    for (std::size_t sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        double diag = 0.0;
        for (std::size_t p = 0; p < n; ++p) diag += a.at(p, p) * a.at(p, p);
        if (off <= DBL_EPSILON * DBL_EPSILON * (diag + 1e-300)) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double b = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (b >= 0.0 ? 1.0 : -1.0) / (std::fabs(b) + std::sqrt(b * b + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    Vector eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a.at(i, i);
    return eig;
}

} // namespace

double numerical_rank(const Matrix& m) {
    if (m.rows == 0 || m.cols == 0) throw ArgumentError("numerical_rank: empty matrix");
    const std::size_t n = std::min(m.rows, m.cols);
    Matrix gram(n, n);
    if (m.cols <= m.rows) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < m.rows; ++k) acc += m.at(k, i) * m.at(k, j);
                gram.at(i, j) = acc;
                gram.at(j, i) = acc;
            }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < m.cols; ++k) acc += m.at(i, k) * m.at(j, k);
                gram.at(i, j) = acc;
                gram.at(j, i) = acc;
            }
    }
    const Vector eig = jacobi_eigenvalues(std::move(gram));
    double lmax = 0.0;
    for (double l : eig) lmax = std::max(lmax, l);
    if (lmax <= 0.0) return 0.0;
    // Gram eigenvalues carry absolute error on the order of eps * lambda_max,
    // so a true-zero singular value surfaces as sqrt(eps) * sigma_max. The
    // relative cut therefore lives in the eigenvalue domain: lambda >
    // max_dim * eps * lambda_max, i.e. sigma > sqrt(max_dim * eps) * sigma_max.
    const double thresh = double(std::max(m.rows, m.cols)) * DBL_EPSILON * lmax;
    double rank = 0.0;
    for (double l : eig)
        if (l > thresh) rank += 1.0;
    return rank;
}

std::vector<std::size_t> pareto_frontier(const std::vector<ScorePoint>& points) {
    if (points.empty()) throw ArgumentError("pareto_frontier: no points");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (j == i) continue;
            const bool ge = points[j].mc >= points[i].mc && points[j].gen >= points[i].gen;
            const bool strict = points[j].mc > points[i].mc || points[j].gen > points[i].gen;
            dominated = ge && strict;
        }
        if (!dominated) out.push_back(i);
    }
    return out;
}

double hypervolume(const std::vector<ScorePoint>& points, double ref_x, double ref_y) {
    const std::vector<std::size_t> idx = pareto_frontier(points);
    std::vector<ScorePoint> front;
    front.reserve(idx.size());
    for (std::size_t i : idx) {
        if (!(points[i].mc > ref_x && points[i].gen > ref_y))
            throw ArgumentError("hypervolume: frontier point (" + std::to_string(points[i].mc) +
                                ", " + std::to_string(points[i].gen) +
                                ") does not dominate the reference");
        front.push_back(points[i]);
    }
    std::sort(front.begin(), front.end(), [](const ScorePoint& a, const ScorePoint& b) {
        if (a.mc != b.mc) return a.mc > b.mc;
        return a.gen > b.gen;
    });
    double hv = 0.0;
    double prev_gen = ref_y;
    for (const ScorePoint& p : front) {
        if (p.gen > prev_gen) {
            hv += (p.mc - ref_x) * (p.gen - prev_gen);
            prev_gen = p.gen;
        }
    }
    return hv;
}

std::pair<double, double> default_reference(const std::vector<ScorePoint>& points) {
    if (points.empty()) throw ArgumentError("default_reference: no points");
    double mx = points[0].mc, mg = points[0].gen;
    for (const ScorePoint& p : points) {
        mx = std::min(mx, p.mc);
        mg = std::min(mg, p.gen);
    }
    return {mx - 1.0, mg - 1.0};
}

CorrelationTable correlation_table(const std::vector<MixtureRatio>& mixtures,
                                   const std::vector<ScorePoint>& scores) {
    if (mixtures.size() != scores.size())
        throw ArgumentError("correlation_table: list lengths differ");
    if (mixtures.size() < 3) throw ArgumentError("correlation_table: need at least 3 rows");

    const std::size_t n = mixtures.size();
    std::vector<double> axis[2];
    axis[0].resize(n);
    axis[1].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        axis[0][i] = scores[i].mc;
        axis[1][i] = scores[i].gen;
    }

    CorrelationTable table;
    for (std::size_t d = 0; d < kNumDomains; ++d) {
        std::vector<double> frac(n);
        for (std::size_t i = 0; i < n; ++i) frac[i] = mixtures[i][d];
        for (std::size_t a = 0; a < 2; ++a) {
            try {
                table.domain_vs_score[d][a].r = pearson(frac, axis[a]);
                table.domain_vs_score[d][a].defined = true;
            } catch (const NumericalError&) {
                table.domain_vs_score[d][a].defined = false;
            }
        }
    }
    try {
        table.mc_vs_gen.r = pearson(axis[0], axis[1]);
        table.mc_vs_gen.defined = true;
    } catch (const NumericalError&) {
        table.mc_vs_gen.defined = false;
    }
    return table;
}

} // namespace moec
