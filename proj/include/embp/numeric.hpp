#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace embp {

// Log-domain factor values are clamped to this magnitude before any
// exponentiation path; the factor dynamics at high SNR would overflow exp()
// otherwise.
inline constexpr double kFactorClamp = 700.0;

inline double clamp_log(double x) { return std::clamp(x, -kFactorClamp, kFactorClamp); }

// log(sum_i exp(v_i)) with max-subtraction; -inf input rows are handled.
inline double logsumexp(std::span<const double> v) {
    if (v.size() == 2) { // binary alphabets dominate the BPSK hot loops
        const double m = std::max(v[0], v[1]);
        if (!std::isfinite(m)) return m;
        return m + std::log1p(std::exp(std::min(v[0], v[1]) - m));
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// Shift a log-domain vector so its logsumexp becomes 0.
inline void normalize_log(std::span<double> v) {
    const double z = logsumexp(v);
    for (double& x : v) x -= z;
}

// In-place softmax of a log-domain row.
inline void softmax(std::span<double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        s += x;
    }
    for (double& x : v) x /= s;
}

// Entropy of a probability row, with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace embp
