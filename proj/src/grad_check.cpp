#include "gcoop/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "gcoop/matrix.hpp"

namespace gcoop {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
    if (h <= 0.0) raise(ErrorCode::ConfigInvalid, "finite_diff_grad requires h > 0");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = probe[i];
        probe[i] = xi + h;
        const double fp = f(probe);
        probe[i] = xi - h;
        const double fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            raise(ErrorCode::NonFiniteEvaluation, "finite_diff_grad probe evaluation");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) raise(ErrorCode::DimensionMismatch, "rel_error sizes");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double na = norm2(a);
    const double nb = norm2(b);
    return std::sqrt(diff) / std::max({1e-12, na, nb});
}

}  // namespace gcoop
