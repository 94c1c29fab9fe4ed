#pragma once

#include "semid/flops.hpp"
#include "semid/types.hpp"

#include <cmath>
#include <vector>

namespace semid {

/// Sparse vector with strictly increasing indices.
struct SparseVector {
    std::vector<Index> index;
    std::vector<double> value;

    std::size_t nnz() const noexcept { return index.size(); }
};

struct Reflector {
    SparseVector u;
    double nu = 0.0;
};

/// Householder generator: returns (u, nu) with (I - u u^T) x = nu e_pivot.
///
/// `pivot` is the position of the first element of the reflected subvector;
/// every index of `x` must be >= pivot. The returned `u` always stores the
/// pivot entry. For x = 0 the result is u = sqrt(2) e_pivot, nu = 0.
inline Reflector housegen(const SparseVector& x, Index pivot, FlopLedger* ledger = nullptr) {
    Reflector r;
    double sq = 0.0;
    for (double v : x.value) sq += v * v;
    r.nu = std::sqrt(sq);

    const bool has_pivot = !x.index.empty() && x.index.front() == pivot;
    r.u.index.reserve(x.nnz() + (has_pivot ? 0 : 1));
    r.u.value.reserve(x.nnz() + (has_pivot ? 0 : 1));
    if (!has_pivot) {
        r.u.index.push_back(pivot);
        r.u.value.push_back(0.0);
    }
    r.u.index.insert(r.u.index.end(), x.index.begin(), x.index.end());
    r.u.value.insert(r.u.value.end(), x.value.begin(), x.value.end());

    if (r.nu == 0.0) {
        for (double& v : r.u.value) v = 0.0;
        r.u.value.front() = std::sqrt(2.0);
        return r;
    }
    if (ledger) ledger->housegen += 3 * static_cast<std::uint64_t>(x.nnz());

    for (double& v : r.u.value) v /= r.nu;
    double& u1 = r.u.value.front();
    if (u1 >= 0.0) {
        u1 += 1.0;
        r.nu = -r.nu;
    } else {
        u1 -= 1.0;
    }
    const double scale = std::sqrt(std::abs(u1));
    for (double& v : r.u.value) v /= scale;
    return r;
}

/// Dense convenience overload; the pivot is element 0.
inline std::pair<Vector, double> housegen(const Vector& x) {
    SparseVector sx;
    for (Index i = 0; i < x.size(); ++i) {
        if (x(i) != 0.0) {
            sx.index.push_back(i);
            sx.value.push_back(x(i));
        }
    }
    const Reflector r = housegen(sx, 0);
    Vector u = Vector::Zero(x.size());
    for (std::size_t e = 0; e < r.u.nnz(); ++e) u(r.u.index[e]) = r.u.value[e];
    return {u, r.nu};
}

} // namespace semid
