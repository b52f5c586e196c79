#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "errors.hpp"

namespace rexit {

// Adaptive Gauss-Kronrod (7/15) with an absolute error target. Boost takes a
// relative tolerance, so it is rescaled from a coarse L1 estimate.
template <class F>
double integrate(F&& f, double a, double b, double abs_tol = 1e-10, unsigned max_depth = 60) {
    using gk = boost::math::quadrature::gauss_kronrod<double, 15>;
    if (a == b) return 0.0;
    double l1 = 0.0;
    gk::integrate(f, a, b, 0, 0.0, nullptr, &l1);
    double rel = std::clamp(0.1 * abs_tol / std::max(l1, 1e-300), 1e-14, 1e-3);
    double err = 0.0;
    double v = gk::integrate(f, a, b, max_depth, rel, &err);
    if (!std::isfinite(v) || err > abs_tol)
        throw numerical_error("quadrature on [" + std::to_string(a) + ", " + std::to_string(b) +
                              "] missed tolerance: error estimate " + std::to_string(err));
    return v;
}

} // namespace rexit
