// SPDX-License-Identifier: Apache-2.0
#include "moec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "moec/error.hpp"

namespace moec {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    Matrix c(a.rows, b.cols);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static) if (a.rows * a.cols * b.cols > 32768)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Vector gemv(const Matrix& m, const Vector& x) {
    if (m.cols != x.size())
        throw ShapeError("gemv: matrix has " + std::to_string(m.cols) + " cols, vector has " +
                         std::to_string(x.size()));
    Vector y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.row(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < m.cols; ++k) acc += row[k] * x[k];
        y[i] = acc;
    }
    return y;
}

Vector softmax(const Vector& v) {
    if (v.empty()) throw ShapeError("softmax: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& p : out) p /= sum;
    return out;
}

Vector topk_mask(const Vector& v, std::size_t k) {
    if (k < 1 || k > v.size())
        throw ArgumentError("topk_mask: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(v.size()) + "]");
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;
    });
    Vector out(v.size(), 0.0);
    for (std::size_t r = 0; r < k; ++r) out[idx[r]] = v[idx[r]];
    return out;
}

double l2_norm(const double* v, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += v[i] * v[i];
    return std::sqrt(acc);
}

double l2_norm(const Vector& v) { return l2_norm(v.data(), v.size()); }

double cosine_sim(const double* a, const double* b, std::size_t n) {
    const double na = l2_norm(a, n);
    const double nb = l2_norm(b, n);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

double cosine_sim(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_sim: lengths differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    return cosine_sim(a.data(), b.data(), a.size());
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ShapeError("pearson: lengths differ");
    if (xs.size() < 2)
        throw ArgumentError("pearson: need at least two samples");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw NumericalError("pearson: zero variance, correlation undefined");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double silu(double z) { return z / (1.0 + std::exp(-z)); }

namespace ref {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeError("ref::matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

} // namespace ref

} // namespace moec
