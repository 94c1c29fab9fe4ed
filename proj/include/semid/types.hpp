#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace semid {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-major dense matrix. Trajectories are stored one time step per row so
/// that a contiguous run of rows maps onto the time-major, channel-minor
/// layout of the optimization vector without copies.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ConstRowBlock = Eigen::Ref<const RowMatrix>;

/// Map a contiguous slice of a flat vector as a (rows x cols) row-major block.
inline Eigen::Map<const RowMatrix> as_rows(const Vector& flat, Index offset, Index rows, Index cols) {
    return Eigen::Map<const RowMatrix>(flat.data() + offset, rows, cols);
}

inline Eigen::Map<RowMatrix> as_rows(Vector& flat, Index offset, Index rows, Index cols) {
    return Eigen::Map<RowMatrix>(flat.data() + offset, rows, cols);
}

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

} // namespace semid
