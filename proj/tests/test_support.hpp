#pragma once

#include "semid/bench.hpp"

namespace semid::testing {

using semid::random_oe_jacobian;

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double d = b.norm();
    return d == 0.0 ? a.norm() : (a - b).norm() / d;
}

} // namespace semid::testing
