#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "embp/constellation.hpp"
#include "embp/errors.hpp"

namespace embp {

// Solves the dense complex system A x = b by Gaussian elimination with partial
// pivoting. A is row-major n x n. Throws IdentifiabilityError when A is
// (numerically) singular. Systems here are (L+1) x (L+1) normal equations.
inline std::vector<cplx> solve_dense(std::vector<cplx> a, std::vector<cplx> b) {
    const int n = static_cast<int>(b.size());
    double scale = 0.0;
    for (const cplx& v : a) scale = std::max(scale, std::abs(v));
    const double tol = scale * n * 1e-13;

    for (int col = 0; col < n; ++col) {
        int piv = col;
        double best = std::abs(a[col * n + col]);
        for (int r = col + 1; r < n; ++r) {
            const double m = std::abs(a[r * n + col]);
            if (m > best) {
                best = m;
                piv = r;
            }
        }
        if (!(best > tol))
            throw IdentifiabilityError("solve_dense: singular system (pivot " +
                                       std::to_string(col) + ")");
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
            std::swap(b[piv], b[col]);
        }
        const cplx inv = 1.0 / a[col * n + col];
        for (int r = col + 1; r < n; ++r) {
            const cplx f = a[r * n + col] * inv;
            if (f == cplx{0.0, 0.0}) continue;
            for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<cplx> x(n);
    for (int r = n - 1; r >= 0; --r) {
        cplx acc = b[r];
        for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * x[c];
        x[r] = acc / a[r * n + r];
    }
    return x;
}

} // namespace embp
