// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace moec {

using Vector = std::vector<double>;

// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    bool empty() const { return data.empty(); }
};

// c = a * b. Row-parallel; each output entry accumulates over k in
// ascending order, so results are bit-identical to ref::matmul.
Matrix matmul(const Matrix& a, const Matrix& b);

// y = m * x.
Vector gemv(const Matrix& m, const Vector& x);

// Numerically stable (max-subtracted) softmax.
Vector softmax(const Vector& v);

// Keeps the k largest entries (ties: lower index wins), zeroes the rest.
Vector topk_mask(const Vector& v, std::size_t k);

double l2_norm(const double* v, std::size_t n);
double l2_norm(const Vector& v);

// Cosine similarity; returns 0 when either vector's norm is below 1e-12.
double cosine_sim(const double* a, const double* b, std::size_t n);
double cosine_sim(const Vector& a, const Vector& b);

// Pearson correlation; throws NumericalError on zero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

double silu(double z);

// Snap to the nearest float32 value (storage precision of the container).
inline double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

namespace ref {
// Naive triple-loop product, kept as the serial baseline for the parallel
// kernel; also serves as the oracle in tests.
Matrix matmul(const Matrix& a, const Matrix& b);
} // namespace ref

} // namespace moec
