#pragma once

#include "semid/error.hpp"
#include "semid/flops.hpp"
#include "semid/types.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace semid {

/// Constraint Jacobian in compressed-row form. Rows are constraints in time
/// order; each row stores its dense theta block followed by the trajectory
/// columns of its time window (the stored pattern is structural: entries of
/// the identity diagonal block that are zero are still stored).
///
/// The last `rows()` columns form the trajectory block J_{h,w}, which is
/// block lower triangular with `block_size()`-square diagonal blocks.
class SparseJacobian {
public:
    SparseJacobian() = default;
    SparseJacobian(Index rows, Index cols, Index n_theta, Index block_size)
        : rows_(rows), cols_(cols), n_theta_(n_theta), block_size_(block_size) {
        if (rows > cols) throw DimensionError("jacobian: more constraints than variables");
        if (block_size < 1 || rows % block_size != 0) throw DimensionError("jacobian: rows must be whole blocks");
        row_ptr_.reserve(static_cast<std::size_t>(rows) + 1);
        row_ptr_.push_back(0);
    }

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    Index n_theta() const noexcept { return n_theta_; }
    Index block_size() const noexcept { return block_size_; }
    /// First column of the trajectory block w.
    Index w_offset() const noexcept { return cols_ - rows_; }
    Index nnz() const noexcept { return static_cast<Index>(values_.size()); }

    void reserve(std::size_t nnz) {
        cols_idx_.reserve(nnz);
        values_.reserve(nnz);
    }

    /// Appends an entry to the row currently being built; columns must increase.
    void push(Index col, double value) {
        if (col < 0 || col >= cols_) throw DimensionError("jacobian: column out of range");
        if (cols_idx_.size() > static_cast<std::size_t>(row_ptr_.back()) && cols_idx_.back() >= col)
            throw DimensionError("jacobian: columns within a row must be strictly increasing");
        cols_idx_.push_back(col);
        values_.push_back(value);
    }

    void finish_row() {
        if (static_cast<Index>(row_ptr_.size()) > rows_) throw DimensionError("jacobian: too many rows");
        row_ptr_.push_back(static_cast<Index>(values_.size()));
    }

    bool complete() const noexcept { return static_cast<Index>(row_ptr_.size()) == rows_ + 1; }

    std::span<const Index> row_cols(Index r) const {
        return {cols_idx_.data() + row_ptr_[r], static_cast<std::size_t>(row_ptr_[r + 1] - row_ptr_[r])};
    }
    std::span<const double> row_values(Index r) const {
        return {values_.data() + row_ptr_[r], static_cast<std::size_t>(row_ptr_[r + 1] - row_ptr_[r])};
    }
    std::span<double> row_values(Index r) {
        return {values_.data() + row_ptr_[r], static_cast<std::size_t>(row_ptr_[r + 1] - row_ptr_[r])};
    }

    double coeff(Index r, Index c) const {
        auto cols = row_cols(r);
        auto it = std::lower_bound(cols.begin(), cols.end(), c);
        return (it != cols.end() && *it == c) ? row_values(r)[static_cast<std::size_t>(it - cols.begin())] : 0.0;
    }

    Matrix to_dense() const {
        Matrix d = Matrix::Zero(rows_, cols_);
        for (Index r = 0; r < rows_; ++r) {
            auto cols = row_cols(r);
            auto vals = row_values(r);
            for (std::size_t e = 0; e < cols.size(); ++e) d(r, cols[e]) = vals[e];
        }
        return d;
    }

private:
    Index rows_ = 0, cols_ = 0, n_theta_ = 0, block_size_ = 1;
    std::vector<Index> row_ptr_;
    std::vector<Index> cols_idx_;
    std::vector<double> values_;
};

/// J v, summing each row left to right over its stored entries.
inline Vector multiply(const SparseJacobian& j, const Vector& v, FlopLedger* ledger = nullptr) {
    if (v.size() != j.cols()) throw DimensionError("multiply: vector length must equal the number of columns");
    Vector out(j.rows());
    for (Index r = 0; r < j.rows(); ++r) {
        auto cols = j.row_cols(r);
        auto vals = j.row_values(r);
        double acc = 0.0;
        for (std::size_t e = 0; e < cols.size(); ++e) acc += vals[e] * v(cols[e]);
        out(r) = acc;
    }
    if (ledger) ledger->matvec += static_cast<std::uint64_t>(j.nnz());
    return out;
}

/// J^T w, accumulating rows in increasing order.
inline Vector multiply_transpose(const SparseJacobian& j, const Vector& w, FlopLedger* ledger = nullptr) {
    if (w.size() != j.rows()) throw DimensionError("multiply_transpose: vector length must equal the number of rows");
    Vector out = Vector::Zero(j.cols());
    for (Index r = 0; r < j.rows(); ++r) {
        auto cols = j.row_cols(r);
        auto vals = j.row_values(r);
        const double wr = w(r);
        for (std::size_t e = 0; e < cols.size(); ++e) out(cols[e]) += vals[e] * wr;
    }
    if (ledger) ledger->matvec += static_cast<std::uint64_t>(j.nnz());
    return out;
}

} // namespace semid
