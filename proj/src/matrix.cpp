#include "gcoop/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gcoop {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) raise(ErrorCode::DimensionMismatch, "matmul inner dims");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) raise(ErrorCode::DimensionMismatch, "matmul_nt inner dims");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) raise(ErrorCode::DimensionMismatch, "matmul_tn inner dims");
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
        }
    return c;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) raise(ErrorCode::DimensionMismatch, "add_inplace shape");
    for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(std::span<const double> v, const char* what) {
    if (!all_finite(v)) raise(ErrorCode::NonFiniteEvaluation, std::string("non-finite values in ") + what);
}

double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) raise(ErrorCode::DimensionMismatch, "cosine_sim vector sizes");
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu <= 1e-12 || nv <= 1e-12) raise(ErrorCode::ZeroVector, "cosine_sim near-zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::vector<double> cosine_sim_grad_u(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) raise(ErrorCode::DimensionMismatch, "cosine_sim_grad_u vector sizes");
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu <= 1e-12 || nv <= 1e-12) raise(ErrorCode::ZeroVector, "cosine_sim_grad_u near-zero vector");
    const double c = dot(u, v) / (nu * nv);
    std::vector<double> g(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) g[i] = v[i] / (nu * nv) - c * u[i] / (nu * nu);
    return g;
}

SoftmaxCeResult softmax_ce(std::span<const double> logits, std::size_t target) {
    if (target >= logits.size()) raise(ErrorCode::IndexOutOfRange, "softmax_ce target index");
    require_finite(logits, "softmax_ce logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    SoftmaxCeResult r;
    r.probs.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        r.probs[i] = std::exp(logits[i] - m);
        sum += r.probs[i];
    }
    for (double& p : r.probs) p /= sum;
    // loss = logsumexp(logits) - logits[target]
    r.loss = m + std::log(sum) - logits[target];
    r.dlogits = r.probs;
    r.dlogits[target] -= 1.0;
    return r;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) raise(ErrorCode::EmptySet, "softmax of empty logits");
    require_finite(logits, "softmax logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

}  // namespace gcoop
