#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gcoop/matrix.hpp"
#include "gcoop/optim.hpp"

namespace gcoop {

// Plain softmax linear head: logits = W x + b.
struct LinearClassifier {
    Matrix weight;             // n_out x dim
    std::vector<double> bias;  // n_out

    LinearClassifier() = default;
    LinearClassifier(std::size_t n_out, std::size_t dim, std::uint64_t seed);

    std::size_t n_out() const { return weight.rows(); }
    std::vector<double> logits(std::span<const double> x) const;
    std::size_t predict(std::span<const double> x) const;  // ties -> lowest id
    // max softmax probability; lies in (1/n_out, 1].
    double confidence(std::span<const double> x) const;
};

// Mean softmax-CE over the listed samples plus its gradient in (W|b) layout.
double linear_ce_and_grad(const LinearClassifier& clf, const Matrix& features,
                          const std::vector<std::uint32_t>& labels,
                          const std::vector<std::size_t>& batch, std::vector<double>& grad);

// Full-batch gradient descent for the given epochs.
LinearClassifier train_linear_fullbatch(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                        std::size_t n_out, std::size_t epochs, double lr,
                                        std::uint64_t seed);

// Minibatch training. The batch supplier is called once per step and returns
// the sample indices for that step.
LinearClassifier train_linear_minibatch(const Matrix& features, const std::vector<std::uint32_t>& labels,
                                        std::size_t n_out, std::size_t epochs, std::size_t steps_per_epoch,
                                        OptimizerState opt, std::uint64_t seed,
                                        const std::function<std::vector<std::size_t>()>& next_batch);

}  // namespace gcoop
