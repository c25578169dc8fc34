#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gcoop/common.hpp"

namespace gcoop {

// Row-major dense matrix of doubles. All training math runs in 64-bit.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {v_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {v_.data() + r * cols_, cols_}; }

    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    std::span<double> flat() { return {v_.data(), v_.size()}; }
    std::span<const double> flat() const { return {v_.data(), v_.size()}; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

void add_inplace(Matrix& a, const Matrix& b);

bool all_finite(std::span<const double> v);
void require_finite(std::span<const double> v, const char* what);

double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> v);

// <u, v> / (|u| |v|), clamped to [-1, 1].
// Raises ZeroVector when either norm <= 1e-12, DimensionMismatch on size.
double cosine_sim(std::span<const double> u, std::span<const double> v);

// Gradients of cosine_sim(u, v) with respect to u:
//   v / (|u||v|) - cos(u,v) * u / |u|^2
std::vector<double> cosine_sim_grad_u(std::span<const double> u, std::span<const double> v);

struct SoftmaxCeResult {
    double loss = 0.0;
    std::vector<double> probs;
    std::vector<double> dlogits;  // probs - onehot(target)
};

// Max-subtracted softmax; loss computed via log-sum-exp, never log(prob).
SoftmaxCeResult softmax_ce(std::span<const double> logits, std::size_t target);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace gcoop
