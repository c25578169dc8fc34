#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gcoop/common.hpp"

namespace gcoop {

enum class OptKind { Sgd, Adam };

OptKind opt_kind_from_string(const std::string& s);
const char* opt_kind_name(OptKind k);

// Single-writer state owned by a trainer. Moment accumulators take the
// parameter shape on the first step and must keep it afterwards.
struct OptimizerState {
    OptKind kind = OptKind::Sgd;
    double learning_rate = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;

    static OptimizerState sgd(double lr) {
        OptimizerState s;
        s.kind = OptKind::Sgd;
        s.learning_rate = lr;
        return s;
    }
    static OptimizerState adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        OptimizerState s;
        s.kind = OptKind::Adam;
        s.learning_rate = lr;
        s.adam_beta1 = b1;
        s.adam_beta2 = b2;
        s.adam_eps = eps;
        return s;
    }
};

// SGD: p -= lr * g. Adam: bias-corrected update on the stored moments.
void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

}  // namespace gcoop
