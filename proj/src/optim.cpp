#include "gcoop/optim.hpp"

#include <cmath>
#include <string>

namespace gcoop {

OptKind opt_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptKind::Sgd;
    if (s == "adam") return OptKind::Adam;
    raise(ErrorCode::ConfigInvalid, "unknown optimizer '" + s + "' (expected sgd|adam)");
}

const char* opt_kind_name(OptKind k) { return k == OptKind::Sgd ? "sgd" : "adam"; }

void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) raise(ErrorCode::DimensionMismatch, "optimizer_step param/grad sizes");
    if (state.kind == OptKind::Adam) {
        if (state.first_moment.empty()) {
            state.first_moment.assign(params.size(), 0.0);
            state.second_moment.assign(params.size(), 0.0);
        }
        if (state.first_moment.size() != params.size())
            raise(ErrorCode::DimensionMismatch, "optimizer_step accumulator shape");
    }
    state.step_count += 1;
    if (state.kind == OptKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= state.learning_rate * grads[i];
        return;
    }
    const double b1 = state.adam_beta1;
    const double b2 = state.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = b1 * m + (1.0 - b1) * grads[i];
        v = b2 * v + (1.0 - b2) * grads[i] * grads[i];
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.adam_eps);
    }
}

}  // namespace gcoop
