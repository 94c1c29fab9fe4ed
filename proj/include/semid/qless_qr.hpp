#pragma once

#include "semid/error.hpp"
#include "semid/flops.hpp"
#include "semid/housegen.hpp"
#include "semid/sparse_jacobian.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace semid {

/// Upper-triangular factor R (m x m) with R^T R = J J^T, stored row by row
/// (row k holds columns k..m-1). Q is never formed.
class TriangularFactor {
public:
    TriangularFactor() = default;
    explicit TriangularFactor(Index m) : m_(m), packed_(static_cast<std::size_t>(m * (m + 1) / 2), 0.0) {}

    Index size() const noexcept { return m_; }

    double& at(Index i, Index j) { return packed_[offset(i) + static_cast<std::size_t>(j - i)]; }
    double at(Index i, Index j) const { return packed_[offset(i) + static_cast<std::size_t>(j - i)]; }

    /// Row i, columns i..m-1.
    double* row(Index i) { return packed_.data() + offset(i); }
    const double* row(Index i) const { return packed_.data() + offset(i); }

    Matrix to_dense() const {
        Matrix r = Matrix::Zero(m_, m_);
        for (Index i = 0; i < m_; ++i)
            for (Index j = i; j < m_; ++j) r(i, j) = at(i, j);
        return r;
    }

    FlopLedger ledger;
    /// Number of stored entries of each Householder vector (pivot included).
    std::vector<Index> reflector_nnz;

private:
    std::size_t offset(Index i) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(m_) -
               static_cast<std::size_t>(i) * static_cast<std::size_t>(i - 1) / 2;
    }

    Index m_ = 0;
    std::vector<double> packed_;
};

inline constexpr double kBreakdownTolerance = 1e-12;

namespace detail {

inline void throw_breakdown(Index k, double pivot, double column_norm) {
    throw RankBreakdownError(static_cast<std::size_t>(k),
                             "rank breakdown at constraint column " + std::to_string(k) + " (|R_kk| = " +
                                 std::to_string(std::abs(pivot)) + ", column norm " + std::to_string(column_norm) +
                                 ")");
}

} // namespace detail

/// Q-less Householder QR of J^T exploiting its sparsity.
///
/// Columns of J^T (constraints) are processed left to right in natural
/// order. If every stored entry of column c lies in rows below c + W, then
/// reflector k (and all fill it creates) lives in rows [k, k + W), so the
/// pending part of the matrix is held as a dense W-row window over all
/// columns, addressed cyclically by row mod W, together with a bitset of
/// each column's structural pattern. Rows enter the window from J and leave
/// it into R. Arithmetic is the dense window update; the ledger charges the
/// structural counts: 3 nnz(x) per housegen, |pattern(u) & pattern(X_j)| per
/// inner product and nnz(u) per rank-one column update, for every column
/// sharing a structural nonzero with u. Fill-in is the pattern union.
inline TriangularFactor qless_qr(const SparseJacobian& j) {
    const Index m = j.rows(), n = j.cols();
    TriangularFactor r(m);
    r.reflector_nnz.resize(static_cast<std::size_t>(m));
    if (m == 0) return r;

    // Entries of J^T grouped by row (variable), plus the window width.
    Index w = 1;
    std::vector<double> col_norm(static_cast<std::size_t>(m));
    std::vector<Index> row_start(static_cast<std::size_t>(n) + 1, 0);
    for (Index c = 0; c < m; ++c) {
        auto idx = j.row_cols(c);
        auto val = j.row_values(c);
        double sq = 0.0;
        for (std::size_t e = 0; e < idx.size(); ++e) {
            ++row_start[static_cast<std::size_t>(idx[e]) + 1];
            w = std::max(w, idx[e] - c + 1);
            sq += val[e] * val[e];
        }
        col_norm[static_cast<std::size_t>(c)] = std::sqrt(sq);
    }
    for (std::size_t i = 1; i < row_start.size(); ++i) row_start[i] += row_start[i - 1];
    std::vector<Index> entry_col(static_cast<std::size_t>(row_start.back()));
    std::vector<double> entry_val(entry_col.size());
    {
        std::vector<Index> fill(row_start.begin(), row_start.end() - 1);
        for (Index c = 0; c < m; ++c) {
            auto idx = j.row_cols(c);
            auto val = j.row_values(c);
            for (std::size_t e = 0; e < idx.size(); ++e) {
                const auto at = static_cast<std::size_t>(fill[static_cast<std::size_t>(idx[e])]++);
                entry_col[at] = c;
                entry_val[at] = val[e];
            }
        }
    }

    const Index words = (w + 63) / 64;
    Matrix front = Matrix::Zero(w, m);
    std::vector<std::uint64_t> pattern(static_cast<std::size_t>(m * words), 0);
    auto bits = [&](Index c) { return pattern.data() + c * words; };
    auto set_bit = [](std::uint64_t* b, Index pos) { b[pos / 64] |= std::uint64_t{1} << (pos % 64); };
    auto clear_bit = [](std::uint64_t* b, Index pos) { b[pos / 64] &= ~(std::uint64_t{1} << (pos % 64)); };
    auto test_bit = [](const std::uint64_t* b, Index pos) { return (b[pos / 64] >> (pos % 64)) & 1U; };
    auto load_row = [&](Index row) {
        const Index pos = row % w;
        for (Index e = row_start[static_cast<std::size_t>(row)]; e < row_start[static_cast<std::size_t>(row) + 1]; ++e) {
            const Index c = entry_col[static_cast<std::size_t>(e)];
            front(pos, c) = entry_val[static_cast<std::size_t>(e)];
            set_bit(bits(c), pos);
        }
    };
    for (Index row = 0; row < std::min(w, n); ++row) load_row(row);

    SparseVector xk;
    Vector u(w);
    std::vector<std::uint64_t> upat(static_cast<std::size_t>(words));
    Vector v;
    for (Index k = 0; k < m; ++k) {
        xk.index.clear();
        xk.value.clear();
        const Index last = std::min(k + w, n);
        for (Index row = k; row < last; ++row) {
            const Index pos = row % w;
            if (test_bit(bits(k), pos)) {
                xk.index.push_back(row);
                xk.value.push_back(front(pos, k));
            }
        }
        const Reflector h = housegen(xk, k, &r.ledger);
        if (std::abs(h.nu) < kBreakdownTolerance * col_norm[static_cast<std::size_t>(k)] || h.nu == 0.0)
            detail::throw_breakdown(k, h.nu, col_norm[static_cast<std::size_t>(k)]);
        r.at(k, k) = h.nu;
        const auto nu = static_cast<std::uint64_t>(h.u.nnz());
        r.reflector_nnz[static_cast<std::size_t>(k)] = static_cast<Index>(nu);

        u.setZero();
        std::fill(upat.begin(), upat.end(), 0);
        for (std::size_t e = 0; e < h.u.nnz(); ++e) {
            const Index pos = h.u.index[e] % w;
            u(pos) = h.u.value[e];
            set_bit(upat.data(), pos);
        }

        const Index rest = m - k - 1;
        const Index pos_k = k % w;
        double* rrow = r.row(k);
        if (rest > 0) {
            auto block = front.rightCols(rest);
            v.noalias() = block.transpose() * u;
            block.noalias() -= u * v.transpose();
            for (Index jc = k + 1; jc < m; ++jc) {
                std::uint64_t* b = bits(jc);
                std::uint64_t common = 0;
                for (Index t = 0; t < words; ++t) common += static_cast<std::uint64_t>(std::popcount(b[t] & upat[static_cast<std::size_t>(t)]));
                if (common == 0) continue;
                r.ledger.inner_product += common;
                r.ledger.rank1_update += nu;
                for (Index t = 0; t < words; ++t) b[t] |= upat[static_cast<std::size_t>(t)];
            }
            for (Index jc = k + 1; jc < m; ++jc) {
                rrow[jc - k] = front(pos_k, jc);
                front(pos_k, jc) = 0.0;
                clear_bit(bits(jc), pos_k);
            }
        }
        if (k + w < n) load_row(k + w);
    }
    return r;
}

/// Dense reference path: Householder QR of the explicitly formed J^T.
/// The ledger carries the dense per-instruction counts.
inline TriangularFactor qless_qr_dense(const SparseJacobian& j) {
    const Index m = j.rows(), n = j.cols();
    Matrix jt = j.to_dense().transpose();
    std::vector<double> col_norm(static_cast<std::size_t>(m));
    for (Index c = 0; c < m; ++c) col_norm[static_cast<std::size_t>(c)] = jt.col(c).norm();
    Eigen::HouseholderQR<Eigen::Ref<Matrix>> qr(jt);

    TriangularFactor r(m);
    for (Index i = 0; i < m; ++i) {
        const double d = jt(i, i);
        if (std::abs(d) < kBreakdownTolerance * col_norm[static_cast<std::size_t>(i)] || d == 0.0)
            detail::throw_breakdown(i, d, col_norm[static_cast<std::size_t>(i)]);
        double* row = r.row(i);
        for (Index c = i; c < m; ++c) row[c - i] = jt(i, c);
    }
    for (Index k = 1; k <= m; ++k) {
        const auto len = static_cast<std::uint64_t>(n - k + 1), rest = static_cast<std::uint64_t>(m - k);
        r.ledger.housegen += 3 * len;
        r.ledger.inner_product += len * rest;
        r.ledger.rank1_update += len * rest;
    }
    return r;
}

/// Solves (R^T R) sigma = rhs by forward then backward substitution.
inline Vector solve_step_system(const TriangularFactor& r, const Vector& rhs, FlopLedger* ledger = nullptr) {
    const Index m = r.size();
    if (rhs.size() != m) throw DimensionError("solve_step_system: right-hand side length mismatch");
    Vector z = rhs;
    // R^T z = rhs, column-oriented over the rows of R.
    for (Index k = 0; k < m; ++k) {
        const double* row = r.row(k);
        z(k) /= row[0];
        const double zk = z(k);
        for (Index i = k + 1; i < m; ++i) z(i) -= row[i - k] * zk;
    }
    // R sigma = z.
    for (Index i = m; i-- > 0;) {
        const double* row = r.row(i);
        double acc = z(i);
        for (Index c = i + 1; c < m; ++c) acc -= row[c - i] * z(c);
        z(i) = acc / row[0];
    }
    if (ledger) ledger->triangular_solve += static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(m + 1);
    return z;
}

} // namespace semid
