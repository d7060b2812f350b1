#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/em.hpp"
#include "embp/graph.hpp"

namespace embp {

inline constexpr double kLlrClamp = 50.0;

// Per-bit log-likelihood ratios, N x m.
struct Llrs {
    int block_len = 0;
    int bits_per_symbol = 0;
    std::vector<double> v;

    double at(int n, int i) const { return v[n * bits_per_symbol + i]; }
};

inline double squared_error(std::span<const cplx> estimate, std::span<const cplx> truth) {
    if (estimate.size() != truth.size())
        throw InvalidParameter("squared_error: tap vectors differ in length");
    double s = 0.0;
    for (std::size_t l = 0; l < truth.size(); ++l) s += std::norm(estimate[l] - truth[l]);
    return s;
}

// Bit-metric demapper: L_{n,i} = log P(b_i = 0) - log P(b_i = 1), clamped.
inline Llrs bmd_llrs(const Beliefs& beliefs, const Constellation& cst) {
    const int m = cst.bits_per_symbol();
    Llrs out;
    out.block_len = beliefs.block_len;
    out.bits_per_symbol = m;
    out.v.resize(static_cast<std::size_t>(beliefs.block_len) * m);
    for (int n = 0; n < beliefs.block_len; ++n)
        for (int i = 0; i < m; ++i) {
            double p0 = 0.0, p1 = 0.0;
            for (int a = 0; a < cst.size(); ++a)
                (cst.bit_labels[a][i] == 0 ? p0 : p1) += beliefs.at(n, a);
            const double llr = std::log(p0) - std::log(p1);
            out.v[n * m + i] = std::isnan(llr) ? 0.0 : std::clamp(llr, -kLlrClamp, kLlrClamp);
        }
    return out;
}

inline std::vector<std::uint8_t> hard_bits(const Llrs& llrs) {
    std::vector<std::uint8_t> bits(llrs.v.size());
    for (std::size_t i = 0; i < llrs.v.size(); ++i) bits[i] = llrs.v[i] < 0.0 ? 1 : 0;
    return bits;
}

inline double ber(std::span<const std::uint8_t> decisions, std::span<const std::uint8_t> truth) {
    if (decisions.size() != truth.size())
        throw InvalidParameter("ber: bit vectors differ in length");
    std::size_t errors = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) errors += decisions[i] != truth[i];
    return static_cast<double>(errors) / static_cast<double>(truth.size());
}

inline double ber(const Llrs& llrs, std::span<const std::uint8_t> truth) {
    const std::vector<std::uint8_t> bits = hard_bits(llrs);
    return ber(bits, truth);
}

// Sample-mean BMI estimate over D labeled blocks:
// log2 M - (1/(D N)) sum_{i,n,d} log2(exp(-(-1)^{b} L) + 1).
inline double bmi_estimate(std::span<const Llrs> blocks,
                           std::span<const std::vector<std::uint8_t>> bits, int n_points) {
    if (blocks.size() != bits.size())
        throw InvalidParameter("bmi_estimate: block counts differ");
    if (blocks.empty()) throw InvalidParameter("bmi_estimate: no blocks");
    const double log2e = 1.0 / std::log(2.0);
    double acc = 0.0;
    std::size_t nd = 0;
    for (std::size_t d = 0; d < blocks.size(); ++d) {
        const Llrs& l = blocks[d];
        if (bits[d].size() != l.v.size())
            throw InvalidParameter("bmi_estimate: bit labels do not match llr shape");
        for (std::size_t i = 0; i < l.v.size(); ++i) {
            const double sign = bits[d][i] == 0 ? 1.0 : -1.0;
            acc += log1pexp(-sign * l.v[i]) * log2e;
        }
        nd += static_cast<std::size_t>(l.block_len);
    }
    return std::log2(static_cast<double>(n_points)) - acc / static_cast<double>(nd);
}

// ---------------------------------------------------------------------------
// Constellation phase ambiguity.
//
// A symmetric constellation maps to itself under a small group of rotations
// ({+1,-1} for BPSK, the quarter turns for QPSK), so (h, c) and
// (r h, r^-1 c) are indistinguishable to any blind receiver. Blind outputs
// are evaluated modulo this group, as a single reference symbol would resolve
// it in a deployed system. Each rotation is represented by the scalar and the
// induced permutation of constellation indices.
struct AmbiguityRotation {
    cplx scalar{1.0, 0.0};
    std::vector<int> index_map; // point a maps to point index_map[a]
};

inline std::vector<AmbiguityRotation> ambiguity_rotations(const Constellation& cst) {
    std::vector<AmbiguityRotation> out;
    const int M = cst.size();
    const int steps = M == 2 ? 2 : 4;
    for (int s = 0; s < steps; ++s) {
        AmbiguityRotation rot;
        rot.scalar = std::polar(1.0, 2.0 * std::numbers::pi * s / steps);
        rot.index_map.resize(M);
        bool ok = true;
        for (int a = 0; a < M && ok; ++a) {
            const cplx target = rot.scalar * cst.points[a];
            int found = -1;
            for (int b = 0; b < M; ++b)
                if (std::abs(target - cst.points[b]) < 1e-9) found = b;
            if (found < 0) ok = false;
            rot.index_map[a] = found;
        }
        if (ok) out.push_back(std::move(rot));
    }
    return out;
}

// Rotation whose scaled estimate is closest to the reference taps.
inline AmbiguityRotation best_rotation(std::span<const cplx> estimate,
                                       std::span<const cplx> reference,
                                       const Constellation& cst) {
    const std::vector<AmbiguityRotation> rotations = ambiguity_rotations(cst);
    double best = std::numeric_limits<double>::infinity();
    AmbiguityRotation pick = rotations.front();
    for (const AmbiguityRotation& rot : rotations) {
        double se = 0.0;
        for (std::size_t l = 0; l < reference.size(); ++l)
            se += std::norm(rot.scalar * estimate[l] - reference[l]);
        if (se < best) {
            best = se;
            pick = rot;
        }
    }
    return pick;
}

inline double ambiguity_resolved_se(std::span<const cplx> estimate,
                                    std::span<const cplx> reference,
                                    const Constellation& cst) {
    const AmbiguityRotation rot = best_rotation(estimate, reference, cst);
    double se = 0.0;
    for (std::size_t l = 0; l < reference.size(); ++l)
        se += std::norm(rot.scalar * estimate[l] - reference[l]);
    return se;
}

// Re-labels detector beliefs after resolving the channel rotation. With
// rot.scalar * h_est ~ h_true the receiver's symbol labels satisfy
// c_label = rot.scalar * c_true, so the belief about the true symbol at point
// a is the receiver's mass on the rotated point.
inline Beliefs rotate_beliefs(const Beliefs& b, const AmbiguityRotation& rot) {
    Beliefs out = b;
    for (int n = 0; n < b.block_len; ++n)
        for (int a = 0; a < b.n_points; ++a)
            out.p[n * b.n_points + a] = b.at(n, rot.index_map[a]);
    return out;
}

struct KlDiagnostic {
    double elbo = 0.0;
    double log_evidence = 0.0;
    double kl = 0.0;
};

// ELBO / exact-evidence / KL-gap triple for one factorized posterior; the
// evidence comes from the trellis, so the usual state-space guard applies.
inline KlDiagnostic kl_qp_diagnostic(const PosteriorApprox& q, const ChannelParams& params,
                                     std::span<const cplx> y, const Constellation& cst) {
    KlDiagnostic out;
    out.elbo = elbo(q, params, y, cst);
    out.log_evidence = bcjr_map(y, params, cst).log_evidence;
    out.kl = out.log_evidence - out.elbo;
    return out;
}

// Order statistics used by the experiment CSVs.
struct SummaryStats {
    double mean = 0.0;
    double median = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
};

inline SummaryStats summarize(std::vector<double> values) {
    if (values.empty()) throw InvalidParameter("summarize: empty sample");
    SummaryStats s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    auto order_stat = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    s.median = order_stat(0.5);
    s.p25 = order_stat(0.25);
    s.p75 = order_stat(0.75);
    return s;
}

} // namespace embp
