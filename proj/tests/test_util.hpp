#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lord/rng.hpp"
#include "lord/tensor.hpp"

namespace lord::testutil {

// Central finite difference of a scalar function of one tensor entry.
inline double central_diff(const std::function<double(const Tensor&)>& f, Tensor x, int index, double h = 1e-5) {
    Tensor hi = x, lo = x;
    hi[index] += h;
    lo[index] -= h;
    return (f(hi) - f(lo)) / (2.0 * h);
}

// Relative-error check with an absolute floor near zero.
inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-4, double abs_tol = 1e-6) {
    const double diff = std::fabs(analytic - numeric);
    if (diff < abs_tol) return true;
    const double denom = std::max(std::fabs(analytic), std::fabs(numeric));
    return diff / denom < rel_tol;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace lord::testutil
