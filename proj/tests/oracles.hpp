#pragma once

// Test-side oracles, independent of the library's computation paths:
// dense convolution-matrix algebra, exhaustive sequence enumeration helpers,
// and 1-D numerical maximization.

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <vector>

#include "embp/constellation.hpp"

namespace oracle {

using embp::cplx;

// Dense (N+L) x N convolution matrix of Eq.-(1) shape.
inline std::vector<std::vector<cplx>> dense_h(std::span<const cplx> h, int n_sym) {
    const int L = static_cast<int>(h.size()) - 1;
    std::vector<std::vector<cplx>> m(n_sym + L, std::vector<cplx>(n_sym, cplx{0.0, 0.0}));
    for (int c = 0; c < n_sym; ++c)
        for (int l = 0; l <= L; ++l) m[c + l][c] = h[l];
    return m;
}

inline std::vector<cplx> matvec(const std::vector<std::vector<cplx>>& m,
                                std::span<const cplx> v) {
    std::vector<cplx> out(m.size(), cplx{0.0, 0.0});
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < v.size(); ++c) out[r] += m[r][c] * v[c];
    return out;
}

inline std::vector<cplx> herm_matvec(const std::vector<std::vector<cplx>>& m,
                                     std::span<const cplx> v) {
    const std::size_t cols = m.front().size();
    std::vector<cplx> out(cols, cplx{0.0, 0.0});
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += std::conj(m[r][c]) * v[r];
    return out;
}

// G = H^H H as a dense matrix.
inline std::vector<std::vector<cplx>> herm_gram(const std::vector<std::vector<cplx>>& m) {
    const std::size_t cols = m.front().size();
    std::vector<std::vector<cplx>> g(cols, std::vector<cplx>(cols, cplx{0.0, 0.0}));
    for (std::size_t a = 0; a < cols; ++a)
        for (std::size_t b = 0; b < cols; ++b)
            for (std::size_t r = 0; r < m.size(); ++r) g[a][b] += std::conj(m[r][a]) * m[r][b];
    return g;
}

// Iterates all M^N symbol-index sequences.
inline void for_each_sequence(int n_sym, int m, const std::function<void(const std::vector<int>&)>& f) {
    std::vector<int> idx(n_sym, 0);
    while (true) {
        f(idx);
        int pos = 0;
        while (pos < n_sym && ++idx[pos] == m) idx[pos++] = 0;
        if (pos == n_sym) return;
    }
}

// log p(y | c) for one sequence, from first principles (callers add the
// log prior when they need the joint).
inline double sequence_log_likelihood(std::span<const cplx> y, std::span<const cplx> h,
                                      double sigma2, std::span<const cplx> c) {
    const int L = static_cast<int>(h.size()) - 1;
    const int n_sym = static_cast<int>(c.size());
    double lp = 0.0;
    for (int r = 0; r < n_sym + L; ++r) {
        cplx mean{0.0, 0.0};
        for (int l = std::max(0, r - n_sym + 1); l <= std::min(L, r); ++l) mean += h[l] * c[r - l];
        lp += -std::log(M_PI * sigma2) - std::norm(y[r] - mean) / sigma2;
    }
    return lp;
}

// Golden-section maximization of a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-10) {
    const double inv_phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

} // namespace oracle
