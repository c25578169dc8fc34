#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gcoop/common.hpp"

namespace gcoop {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences: component i = (f(x + h e_i) - f(x - h e_i)) / (2h).
// Raises NonFiniteEvaluation when f returns NaN/Inf at a probe point.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h);

// ||a - b||_2 / max(1e-12, ||a||_2, ||b||_2)
double rel_error(std::span<const double> a, std::span<const double> b);

}  // namespace gcoop
