#pragma once

#include "semid/error.hpp"
#include "semid/types.hpp"

#include <cmath>

namespace semid {

namespace detail {
inline void check_same_shape(const ConstRowBlock& sim, const ConstRowBlock& ref, const char* who) {
    if (sim.rows() != ref.rows() || sim.cols() != ref.cols())
        throw DimensionError(std::string(who) + ": simulated and reference sequences differ in shape");
    if (ref.rows() < 1) throw DimensionError(std::string(who) + ": empty sequences");
}
} // namespace detail

/// Per-channel root-mean-squared error.
inline Vector rmse(const ConstRowBlock& sim, const ConstRowBlock& ref) {
    detail::check_same_shape(sim, ref, "rmse");
    const double n = static_cast<double>(ref.rows());
    return ((sim - ref).array().square().colwise().sum() / n).sqrt().transpose();
}

/// Per-channel best-fit rate 1 - ||ref - sim|| / ||ref - mean(ref)|| as a
/// fraction (1 is a perfect fit, 0 matches the mean predictor).
inline Vector bfr(const ConstRowBlock& sim, const ConstRowBlock& ref) {
    detail::check_same_shape(sim, ref, "bfr");
    Vector out(ref.cols());
    for (Index c = 0; c < ref.cols(); ++c) {
        const double mean = ref.col(c).mean();
        const double denom = (ref.col(c).array() - mean).matrix().norm();
        if (denom == 0.0) throw DegenerateReferenceError(static_cast<std::size_t>(c));
        out(c) = 1.0 - (ref.col(c) - sim.col(c)).norm() / denom;
    }
    return out;
}

} // namespace semid
