#pragma once

#include "semid/error.hpp"

#include <cstdint>

namespace semid {

/// Multiplication/division counts per instruction class. Additions are not
/// counted; housegen is charged three operations per nonzero of its argument
/// (norm, normalization, final scaling).
struct FlopLedger {
    std::uint64_t housegen = 0;
    std::uint64_t inner_product = 0; ///< v = u^T X
    std::uint64_t rank1_update = 0;  ///< X -= u v
    std::uint64_t matvec = 0;
    std::uint64_t triangular_solve = 0;

    std::uint64_t factorization() const { return housegen + inner_product + rank1_update; }
    std::uint64_t total() const { return factorization() + matvec + triangular_solve; }

    FlopLedger& operator+=(const FlopLedger& o) {
        housegen += o.housegen;
        inner_product += o.inner_product;
        rank1_update += o.rank1_update;
        matvec += o.matvec;
        triangular_solve += o.triangular_solve;
        return *this;
    }
};

/// Closed-form FLOP sums of the structured Q-less Householder QR of J^T for
/// the output-error layout (n_theta dense rows, then p-wide output blocks,
/// dynamical order phi, N samples).
struct FlopPrediction {
    std::int64_t m = 0;
    std::int64_t housegen = 0;      ///< sum_k 3 chi(k)
    std::int64_t inner_product = 0; ///< sum_k psi(k)
    std::int64_t rank1_update = 0;  ///< sum_k zeta(k)
    std::int64_t total() const { return housegen + inner_product + rank1_update; }
};

/// Per-column counts of the nominal (fill-free) sparsity model, k is 1-based.
class FlopModel {
public:
    FlopModel(std::int64_t n_theta, std::int64_t p, std::int64_t phi, std::int64_t N)
        : nt_(n_theta), p_(p), phi_(phi), N_(N), m_(p * (N - phi)) {
        if (n_theta < 0 || p < 1 || phi < 1) throw DimensionError("flop model: need n_theta >= 0, p >= 1, phi >= 1");
        if (!(m_ > n_theta)) throw DimensionError("flop model: need m = p (N - phi) > n_theta");
    }

    std::int64_t m() const { return m_; }

    std::int64_t chi(std::int64_t k) const { return k <= nt_ ? nt_ - k + 1 + p_ * (1 + phi_) : p_ * (1 + phi_); }
    std::int64_t chi1(std::int64_t k) const { return k <= nt_ ? chi(k) : chi(k) + 1; }

    std::int64_t psi2(std::int64_t k) const {
        const std::int64_t i = (k % p_) + 1;
        return (p_ - i) * p_ * (phi_ + 1) + p_ * p_ * phi_ * (phi_ + 1) / 2;
    }
    std::int64_t psi(std::int64_t k) const { return k <= nt_ ? (nt_ - k + 1) * (m_ - k) + psi2(k) : psi2(k); }
    std::int64_t zeta(std::int64_t k) const { return (m_ - k) * chi1(k); }

    /// Direct summation of the per-column terms.
    FlopPrediction summed() const {
        FlopPrediction f;
        f.m = m_;
        for (std::int64_t k = 1; k <= m_; ++k) {
            f.housegen += 3 * chi(k);
            f.inner_product += psi(k);
            f.rank1_update += zeta(k);
        }
        return f;
    }

    /// Closed forms of the three sums.
    FlopPrediction closed_form() const {
        const std::int64_t m = m_, nt = nt_, c = p_ * (phi_ + 1);
        FlopPrediction f;
        f.m = m;
        f.housegen = 3 * m * c + 3 * (nt * nt + nt) / 2;
        f.inner_product = m * (nt * nt + nt) / 2 - nt * (nt * nt + 3 * nt + 2) / 6 + m * c * (c - 1) / 2;
        f.rank1_update = (m * m - m) / 2 * (c + 1) + m * (nt * nt - nt) / 2 - nt * (nt * nt - 1) / 6;
        return f;
    }

    /// Matrix-vector product counts for J v and J^T w: one multiplication
    /// per stored entry, n_theta + p (phi + 1) per row.
    std::int64_t matvec_stored() const { return m_ * (nt_ + p_ * (phi_ + 1)); }
    /// The tabulated sparse mat-vec count m (n_theta + p phi).
    std::int64_t matvec_tabulated() const { return m_ * (nt_ + p_ * phi_); }

private:
    std::int64_t nt_, p_, phi_, N_, m_;
};

inline FlopPrediction predict_flops(std::int64_t n_theta, std::int64_t p, std::int64_t phi, std::int64_t N) {
    return FlopModel(n_theta, p, phi, N).closed_form();
}

} // namespace semid
