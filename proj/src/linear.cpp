#include "gcoop/linear.hpp"

#include <algorithm>
#include <cmath>

namespace gcoop {

LinearClassifier::LinearClassifier(std::size_t n_out, std::size_t dim, std::uint64_t seed)
    : weight(n_out, dim), bias(n_out, 0.0) {
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& x : weight.values()) x = rng.uniform(-scale, scale);
}

std::vector<double> LinearClassifier::logits(std::span<const double> x) const {
    if (x.size() != weight.cols()) raise(ErrorCode::DimensionMismatch, "linear input width");
    std::vector<double> z(n_out());
    for (std::size_t k = 0; k < n_out(); ++k) z[k] = dot(weight.row(k), x) + bias[k];
    return z;
}

std::size_t LinearClassifier::predict(std::span<const double> x) const {
    const auto z = logits(x);
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
        if (z[k] > z[best]) best = k;
    return best;
}

double LinearClassifier::confidence(std::span<const double> x) const {
    const auto p = softmax(logits(x));
    return *std::max_element(p.begin(), p.end());
}

double linear_ce_and_grad(const LinearClassifier& clf, const Matrix& features,
                          const std::vector<std::uint32_t>& labels,
                          const std::vector<std::size_t>& batch, std::vector<double>& grad) {
    const std::size_t n_out = clf.n_out();
    const std::size_t dim = clf.weight.cols();
    grad.assign(n_out * dim + n_out, 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const std::size_t i : batch) {
        const auto ce = softmax_ce(clf.logits(features.row(i)), labels[i]);
        loss += ce.loss * inv_b;
        for (std::size_t k = 0; k < n_out; ++k) {
            const double d = ce.dlogits[k] * inv_b;
            if (d == 0.0) continue;
            for (std::size_t j = 0; j < dim; ++j) grad[k * dim + j] += d * features(i, j);
            grad[n_out * dim + k] += d;
        }
    }
    return loss;
}

namespace {

void apply_grad(LinearClassifier& clf, OptimizerState& opt, const std::vector<double>& grad) {
    // one flat parameter view: W rows then b
    std::vector<double> params(clf.weight.values());
    params.insert(params.end(), clf.bias.begin(), clf.bias.end());
    optimizer_step(opt, params, grad);
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(clf.weight.size()),
              clf.weight.values().begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(clf.weight.size()), params.end(),
              clf.bias.begin());
}

}  // namespace

LinearClassifier train_linear_fullbatch(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                        std::size_t n_out, std::size_t epochs, double lr,
                                        std::uint64_t seed) {
    if (labels.size() != features.rows()) raise(ErrorCode::CountMismatch, "label count != sample count");
    LinearClassifier clf(n_out, features.cols(), seed);
    OptimizerState opt = OptimizerState::sgd(lr);
    std::vector<std::size_t> all(features.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<double> grad;
    for (std::size_t e = 0; e < epochs; ++e) {
        const double loss = linear_ce_and_grad(clf, features, labels, all, grad);
        if (!std::isfinite(loss)) raise(ErrorCode::NonFiniteLoss, "linear training diverged");
        apply_grad(clf, opt, grad);
    }
    return clf;
}

LinearClassifier train_linear_minibatch(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                        std::size_t n_out, std::size_t epochs, std::size_t steps_per_epoch,
                                        OptimizerState opt, std::uint64_t seed,
                                        const std::function<std::vector<std::size_t>()>& next_batch) {
    if (labels.size() != features.rows()) raise(ErrorCode::CountMismatch, "label count != sample count");
    LinearClassifier clf(n_out, features.cols(), seed);
    std::vector<double> grad;
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const auto batch = next_batch();
            const double loss = linear_ce_and_grad(clf, features, labels, batch, grad);
            if (!std::isfinite(loss)) raise(ErrorCode::NonFiniteLoss, "linear training diverged");
            apply_grad(clf, opt, grad);
        }
    }
    return clf;
}

}  // namespace gcoop
