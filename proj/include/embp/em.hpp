#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/channel.hpp"
#include "embp/graph.hpp"
#include "embp/numeric.hpp"

namespace embp {

// Factorized posterior approximation: beliefs or exact marginals.
using PosteriorApprox = Beliefs;

// Lower clamp for the noise-variance update; approximate posteriors can push
// the residual estimate to (or below) zero, which Eqs. for F and I cannot take.
inline constexpr double kSigma2Floor = 1e-8;

// The pieces of E_Q[log p(y,c|theta)]: B = sum |y_n|^2, per-symbol tables
// C_n(c) and per-distance pair tables D_d(c_n, c_m).
struct BcdTerms {
    double b_energy = 0.0;
    std::vector<double> c_table;              // N*M
    std::vector<std::vector<double>> d_table; // [d-1][a*M + b]
    int block_len = 0;
    int n_points = 0;
    int memory = 0; // L; the observation has N+L entries

    int band() const { return static_cast<int>(d_table.size()); }
    double c_at(int n, int a) const { return c_table[n * n_points + a]; }
    double d_at(int d, int a, int b) const { return d_table[d - 1][a * n_points + b]; }
};

inline BcdTerms bcd_terms(std::span<const cplx> y, std::span<const cplx> h,
                          const Constellation& cst) {
    const MatchedStats stats = matched_stats(y, h);
    BcdTerms t;
    t.block_len = stats.block_len;
    t.n_points = cst.size();
    t.memory = stats.memory();
    t.b_energy = norm2(y);
    const int M = t.n_points;
    t.c_table.resize(t.block_len * M);
    for (int n = 0; n < t.block_len; ++n)
        for (int a = 0; a < M; ++a) {
            const cplx c = cst.points[a];
            t.c_table[n * M + a] =
                2.0 * (stats.x[n] * std::conj(c)).real() - stats.r[0].real() * std::norm(c);
        }
    const int band = std::min(stats.memory(), t.block_len - 1);
    t.d_table.resize(band);
    for (int d = 1; d <= band; ++d) {
        t.d_table[d - 1].resize(M * M);
        for (int a = 0; a < M; ++a)
            for (int b = 0; b < M; ++b)
                t.d_table[d - 1][a * M + b] =
                    2.0 * (stats.r[d] * cst.points[b] * std::conj(cst.points[a])).real();
    }
    return t;
}

// ---------------------------------------------------------------------------
// Closed-form parameter updates.
//
// The public operations take a factorized posterior q and expand the pairwise
// expectations as products of marginals, exactly as the update equations are
// written. The *_moments variants take precomputed low-order moments instead,
// which lets the monotonicity probe feed the exact pairwise correlations from
// the trellis.

// The expected residual E_Q ||y - Hc||^2 spreads over the N+L observation
// entries, so the maximizing noise variance divides by N+L.
inline double update_sigma2_moments(double b_energy, const MatchedStats& stats,
                                    const SymbolMoments& mo) {
    const int n_sym = stats.block_len;
    double exp_c = 0.0;
    for (int n = 0; n < n_sym; ++n)
        exp_c += 2.0 * (stats.x[n] * std::conj(mo.mean[n])).real() -
                 stats.r[0].real() * mo.power[n];
    double exp_d = 0.0;
    for (int d = 1; d <= static_cast<int>(mo.pair.size()); ++d)
        for (int n = d; n < n_sym; ++n)
            exp_d += 2.0 * (stats.r[d] * mo.pair[d - 1][n - d]).real();
    return std::max((b_energy - exp_c + exp_d) / (n_sym + stats.memory()), kSigma2Floor);
}

// Eq.-(17)-style noise update from a factorized posterior and the B/C/D terms.
inline double update_sigma2(const PosteriorApprox& q, const BcdTerms& terms,
                            OpCounters* ops = nullptr) {
    const int n_sym = terms.block_len;
    const int M = terms.n_points;
    if (q.block_len != n_sym || q.n_points != M)
        throw InvalidParameter("update_sigma2: posterior shape mismatch");
    double acc = 0.0;
    for (int n = 0; n < n_sym; ++n) {
        for (int a = 0; a < M; ++a) {
            double inner = terms.c_at(n, a);
            for (int d = 1; d <= std::min(terms.band(), n); ++d)
                for (int b = 0; b < M; ++b) inner -= q.at(n - d, b) * terms.d_at(d, a, b);
            acc += q.at(n, a) * inner;
        }
    }
    if (ops) {
        ops->add += static_cast<std::uint64_t>(n_sym) * M * (terms.band() * M + 2);
        ops->mult += static_cast<std::uint64_t>(n_sym) * M * (terms.band() * M + 1);
    }
    return std::max((terms.b_energy - acc) / (n_sym + terms.memory), kSigma2Floor);
}

inline cplx update_tap_moments(int ell, std::span<const cplx> y, std::span<const cplx> h,
                               const SymbolMoments& mo) {
    const int memory = static_cast<int>(h.size()) - 1;
    const int n_sym = mo.block_len();
    cplx num{0.0, 0.0};
    double den = 0.0;
    for (int n = 0; n < n_sym; ++n) {
        num += y[n + ell] * std::conj(mo.mean[n]);
        den += mo.power[n];
    }
    for (int k = 0; k <= memory; ++k) {
        if (k == ell) continue;
        const int d = std::abs(ell - k);
        if (d > static_cast<int>(mo.pair.size())) continue;
        const double sg = ell > k ? 1.0 : -1.0;
        cplx corr{0.0, 0.0};
        for (int n = d; n < n_sym; ++n) {
            const cplx z = mo.pair[d - 1][n - d]; // E[c_{n-d} c_n*]
            corr += cplx{z.real(), -sg * z.imag()};
        }
        num -= corr * h[k];
    }
    if (den <= 0.0) throw DegeneratePosterior("update_tap: zero posterior symbol energy");
    return num / den;
}

// Eq.-(18)-style single-tap update from a factorized posterior.
inline cplx update_tap(int ell, const PosteriorApprox& q, std::span<const cplx> y,
                       std::span<const cplx> h, const Constellation& cst,
                       OpCounters* ops = nullptr) {
    const int memory = static_cast<int>(h.size()) - 1;
    if (ell < 0 || ell > memory) throw InvalidParameter("update_tap: tap index out of range");
    const SymbolMoments mo = product_moments(q, cst, memory);
    if (ops) {
        ops->mult += static_cast<std::uint64_t>(q.block_len) * (4 * q.n_points + 4 * memory + 6);
        ops->add += static_cast<std::uint64_t>(q.block_len) * (4 * q.n_points + 2 * memory + 4);
    }
    return update_tap_moments(ell, y, h, mo);
}

// ---------------------------------------------------------------------------
// EM schedules and the interleaved EMBP loop.

// Per-iteration momentum weights of the M-step, one row of length L+2 per EM
// iteration (taps h_0..h_L first, sigma^2 last). A zero entry means the
// corresponding closed-form update is not even computed.
struct EmSchedule {
    int iterations = 0; // T
    int n_params = 0;   // L+2
    std::vector<double> beta;

    std::span<const double> row(int t) const {
        return {beta.data() + static_cast<std::size_t>(t) * n_params,
                static_cast<std::size_t>(n_params)};
    }

    // Exactly one parameter per iteration, cycling h_0, ..., h_L, sigma^2.
    static EmSchedule serial(int iterations, int memory) {
        EmSchedule s{iterations, memory + 2, {}};
        s.beta.assign(static_cast<std::size_t>(iterations) * s.n_params, 0.0);
        for (int t = 0; t < iterations; ++t) s.beta[t * s.n_params + t % s.n_params] = 1.0;
        return s;
    }
    static EmSchedule parallel(int iterations, int memory) {
        EmSchedule s{iterations, memory + 2, {}};
        s.beta.assign(static_cast<std::size_t>(iterations) * s.n_params, 1.0);
        return s;
    }
    // No parameter updates: EMBP degenerates to plain BP detection.
    static EmSchedule detect_only(int iterations, int memory) {
        EmSchedule s{iterations, memory + 2, {}};
        s.beta.assign(static_cast<std::size_t>(iterations) * s.n_params, 0.0);
        return s;
    }
};

// One M-step: the selected entries (nonzero momentum weights) are replaced by
// the momentum-blended closed-form updates, all computed from the current
// beliefs and the current values of the other parameters.
inline ChannelParams em_step(std::span<const cplx> y, const ChannelParams& theta,
                             const PosteriorApprox& q, std::span<const double> beta_em,
                             const Constellation& cst, OpCounters* ops = nullptr) {
    const int memory = theta.memory();
    if (static_cast<int>(beta_em.size()) != memory + 2)
        throw InvalidParameter("em_step: momentum vector must have L+2 entries");
    ChannelParams next = theta;
    std::vector<std::pair<int, cplx>> tap_updates;
    for (int k = 0; k <= memory; ++k)
        if (beta_em[k] != 0.0)
            tap_updates.emplace_back(k, update_tap(k, q, y, theta.h, cst, ops));
    double sigma2_update = 0.0;
    const bool update_noise = beta_em[memory + 1] != 0.0;
    if (update_noise) sigma2_update = update_sigma2(q, bcd_terms(y, theta.h, cst), ops);

    for (const auto& [k, value] : tap_updates) {
        const double b = beta_em[k];
        next.h[k] = b == 1.0 ? value : b * value + (1.0 - b) * theta.h[k];
        if (ops && b != 1.0) {
            ops->mult += 4;
            ops->add += 2;
        }
    }
    if (update_noise) {
        const double b = beta_em[memory + 1];
        next.sigma2 = b == 1.0 ? sigma2_update
                               : std::max(b * sigma2_update + (1.0 - b) * theta.sigma2,
                                          kSigma2Floor);
    }
    return next;
}

struct EmbpResult {
    ChannelParams theta;
    Beliefs beliefs;
    std::vector<ChannelParams> trace; // theta^(0) .. theta^(T)
};

// The interleaved loop: per iteration, rebuild the factor tables from the
// current parameter estimate, run one weighted BP iteration on the persistent
// message state, compute beliefs, then apply the scheduled M-step.
inline EmbpResult embp_run(std::span<const cplx> y, const ChannelParams& theta0,
                           const Constellation& cst, const EmSchedule& schedule,
                           std::span<const double> beta_bp = {}, OpCounters* ops = nullptr) {
    const int T = schedule.iterations;
    if (T < 1) throw InvalidParameter("embp_run: schedule must have at least one iteration");
    if (schedule.n_params != theta0.memory() + 2)
        throw InvalidParameter("embp_run: schedule width must be L+2");
    if (!beta_bp.empty() && static_cast<int>(beta_bp.size()) != T)
        throw InvalidParameter("embp_run: beta_bp length must equal T");

    EmbpResult out;
    out.theta = theta0;
    out.trace.reserve(T + 1);
    out.trace.push_back(theta0);

    MessageState st;
    for (int t = 1; t <= T; ++t) {
        const FactorGraph g =
            build_graph(matched_stats(y, out.theta.h), out.theta.sigma2, cst, ops);
        if (t == 1) st = bp_init(g);
        bp_iteration(g, st, beta_bp.empty() ? 1.0 : beta_bp[t - 1], ops, t);
        out.beliefs = compute_beliefs(g, st, ops);
        out.theta = em_step(y, out.theta, out.beliefs, schedule.row(t - 1), cst, ops);
        out.trace.push_back(out.theta);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ELBO and the exact-E-step monotonicity probe.

// L(Q, theta) = E_Q[log p(c,y|theta)] + H(Q) for a factorized Q.
inline double elbo(const PosteriorApprox& q, const ChannelParams& theta, std::span<const cplx> y,
                   const Constellation& cst) {
    const MatchedStats stats = matched_stats(y, theta.h);
    const int n_sym = stats.block_len;
    if (q.block_len != n_sym || q.n_points != cst.size())
        throw InvalidParameter("elbo: posterior shape mismatch");
    const SymbolMoments mo = product_moments(q, cst, stats.memory());
    double exp_c = 0.0;
    for (int n = 0; n < n_sym; ++n)
        exp_c += 2.0 * (stats.x[n] * std::conj(mo.mean[n])).real() -
                 stats.r[0].real() * mo.power[n];
    double exp_d = 0.0;
    for (int d = 1; d <= static_cast<int>(mo.pair.size()); ++d)
        for (int n = d; n < n_sym; ++n)
            exp_d += 2.0 * (stats.r[d] * mo.pair[d - 1][n - d]).real();
    double ent = 0.0;
    for (int n = 0; n < n_sym; ++n) ent += entropy(q.row(n));
    // N log M from the symbol prior, N+L Gaussian normalizers from the
    // observation entries.
    const double a_term =
        n_sym * std::log(static_cast<double>(cst.size())) +
        static_cast<double>(y.size()) * std::log(std::numbers::pi * theta.sigma2);
    return -a_term + (-norm2(y) + exp_c - exp_d) / theta.sigma2 + ent;
}

// EM iterations with the exact E-step (trellis posteriors including the banded
// pairwise correlations) and serial single-parameter M-steps. Returns the
// log-evidence sequence log p(y | theta^(t)), t = 0..T, which the EM guarantee
// makes nondecreasing.
inline std::vector<double> em_monotonicity_probe(std::span<const cplx> y,
                                                 const ChannelParams& theta0,
                                                 const Constellation& cst, int iterations) {
    ChannelParams theta = theta0;
    const int n_params = theta.memory() + 2;
    std::vector<double> evidence;
    evidence.reserve(iterations + 1);

    detail::Trellis tr(y, theta, cst);
    tr.run();
    evidence.push_back(tr.evidence());
    for (int t = 1; t <= iterations; ++t) {
        const SymbolMoments mo = bcjr_pair_moments(y, theta, cst);
        const int k = (t - 1) % n_params;
        if (k <= theta.memory())
            theta.h[k] = update_tap_moments(k, y, theta.h, mo);
        else
            theta.sigma2 = update_sigma2_moments(norm2(y), matched_stats(y, theta.h), mo);
        detail::Trellis step(y, theta, cst);
        step.run();
        evidence.push_back(step.evidence());
    }
    return evidence;
}

} // namespace embp
