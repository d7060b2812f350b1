#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "embp/channel.hpp"
#include "embp/constellation.hpp"
#include "embp/errors.hpp"
#include "embp/numeric.hpp"

namespace embp {

// Tally of real-valued additions, multiplications and log-sum-exp element
// operations. Routines accept an optional counter and tally what they execute.
struct OpCounters {
    std::uint64_t add = 0;
    std::uint64_t mult = 0;
    std::uint64_t lse = 0;
};

// Ungerboeck factor graph of one received block, in the log domain.
//
// Symbol-local factors F_n(c) = Re{2 x_n c* - G_nn |c|^2} / sigma2 sit in an
// N x M table. The pairwise factors I_{n,m}(c_n,c_m) = -2 Re{G_{n,m} c_m c_n*}
// / sigma2 exist only for 1 <= n-m <= L; because G is Toeplitz they depend on
// the pair only through the distance d = n-m, so one M x M table per distance
// is stored. All entries are clamped to +-700 (dynamic-range guard).
struct FactorGraph {
    int block_len = 0; // N
    int n_points = 0;  // M
    int memory = 0;    // L

    std::vector<double> f;                          // N*M, f[n*M + a]
    std::vector<std::vector<double>> pair_factor;   // [d-1][a*M + b], d = 1..band

    // Largest distance that has at least one edge.
    int band() const { return std::min(memory, block_len - 1); }
    int edges_at(int d) const { return block_len - d; } // upper node n = d..N-1

    double f_at(int n, int a) const { return f[n * n_points + a]; }
    double pair_at(int d, int a, int b) const { return pair_factor[d - 1][a * n_points + b]; }
};

// All variable->factor (mu) and factor->variable (nu) messages of one block.
// Edge (n, m = n-d) stores four length-M log-domain vectors: the *_hi pair
// lives on the variable-n side, the *_lo pair on the variable-m side. Rows are
// indexed by (d, n-d). Every stored message is normalized to logsumexp == 0.
struct MessageState {
    int block_len = 0;
    int n_points = 0;
    std::vector<std::vector<double>> mu_hi, mu_lo, nu_hi, nu_lo; // [d-1][(n-d)*M + a]

    bool shaped_for(const FactorGraph& g) const {
        return block_len == g.block_len && n_points == g.n_points &&
               static_cast<int>(nu_hi.size()) == g.band();
    }
};

// Per-symbol categorical beliefs b_n(c); each row sums to one.
struct Beliefs {
    int block_len = 0;
    int n_points = 0;
    std::vector<double> p; // p[n*M + a]

    std::span<double> row(int n) { return {p.data() + n * n_points, static_cast<std::size_t>(n_points)}; }
    std::span<const double> row(int n) const {
        return {p.data() + n * n_points, static_cast<std::size_t>(n_points)};
    }
    double at(int n, int a) const { return p[n * n_points + a]; }
};

// The EM machinery consumes posteriors only through low-order moments:
// per-symbol means s_n = E[c_n], powers E[|c_n|^2], and the banded pairwise
// correlations z_{d,n} = E[c_{n-d} c_n*]. A factorized posterior fills z with
// s_{n-d} s_n*; an exact trellis posterior fills it with the true pairwise
// moment.
struct SymbolMoments {
    std::vector<cplx> mean;              // length N
    std::vector<double> power;           // length N
    std::vector<std::vector<cplx>> pair; // [d-1][n-d] = E[c_{n-d} c_n*], d = 1..band
    int block_len() const { return static_cast<int>(mean.size()); }
};

inline SymbolMoments product_moments(const Beliefs& q, const Constellation& cst, int memory) {
    const int n_sym = q.block_len;
    const int M = q.n_points;
    SymbolMoments mo;
    mo.mean.assign(n_sym, cplx{0.0, 0.0});
    mo.power.assign(n_sym, 0.0);
    for (int n = 0; n < n_sym; ++n)
        for (int a = 0; a < M; ++a) {
            mo.mean[n] += q.at(n, a) * cst.points[a];
            mo.power[n] += q.at(n, a) * std::norm(cst.points[a]);
        }
    const int band = std::min(memory, n_sym - 1);
    mo.pair.resize(band);
    for (int d = 1; d <= band; ++d) {
        mo.pair[d - 1].resize(n_sym - d);
        for (int n = d; n < n_sym; ++n)
            mo.pair[d - 1][n - d] = mo.mean[n - d] * std::conj(mo.mean[n]);
    }
    return mo;
}

// ---------------------------------------------------------------------------
// Graph construction

inline FactorGraph build_graph(const MatchedStats& stats, double sigma2, const Constellation& cst,
                               OpCounters* ops = nullptr) {
    if (sigma2 <= 0.0) throw InvalidParameter("build_graph: sigma2 must be > 0");
    FactorGraph g;
    g.block_len = stats.block_len;
    g.n_points = cst.size();
    g.memory = stats.memory();
    const int M = g.n_points;
    const double inv_s2 = 1.0 / sigma2;

    g.f.resize(g.block_len * M);
    for (int n = 0; n < g.block_len; ++n)
        for (int a = 0; a < M; ++a) {
            const cplx c = cst.points[a];
            const double v =
                inv_s2 * (2.0 * (stats.x[n] * std::conj(c)).real() - stats.r[0].real() * std::norm(c));
            g.f[n * M + a] = clamp_log(v);
        }
    const int band = g.band();
    g.pair_factor.resize(band);
    for (int d = 1; d <= band; ++d) {
        g.pair_factor[d - 1].resize(M * M);
        for (int a = 0; a < M; ++a)
            for (int b = 0; b < M; ++b) {
                const double v =
                    -2.0 * inv_s2 * (stats.r[d] * cst.points[b] * std::conj(cst.points[a])).real();
                g.pair_factor[d - 1][a * M + b] = clamp_log(v);
            }
    }
    if (ops) {
        // One complex multiply per F entry plus the |c|^2 correction, one per I entry.
        ops->mult += static_cast<std::uint64_t>(g.block_len) * M * 3;
        ops->add += static_cast<std::uint64_t>(g.block_len) * M * 2;
        for (int d = 1; d <= band; ++d) {
            ops->mult += static_cast<std::uint64_t>(M) * M * 5;
            ops->add += static_cast<std::uint64_t>(M) * M * 2;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Message passing

// Unbiased initial state: every message entry is -log M (logsumexp 0).
inline MessageState bp_init(const FactorGraph& g) {
    MessageState st;
    st.block_len = g.block_len;
    st.n_points = g.n_points;
    const double u = -std::log(static_cast<double>(g.n_points));
    const int band = g.band();
    st.mu_hi.resize(band);
    st.mu_lo.resize(band);
    st.nu_hi.resize(band);
    st.nu_lo.resize(band);
    for (int d = 1; d <= band; ++d) {
        const std::size_t len = static_cast<std::size_t>(g.edges_at(d)) * g.n_points;
        st.mu_hi[d - 1].assign(len, u);
        st.mu_lo[d - 1].assign(len, u);
        st.nu_hi[d - 1].assign(len, u);
        st.nu_lo[d - 1].assign(len, u);
    }
    return st;
}

namespace detail {

// beta * fresh + (1-beta) * old, normalized to logsumexp 0 and stored in out.
// beta == 0 leaves the old message untouched (exact no-op).
inline void combine_and_store(std::span<double> out, std::span<const double> fresh, double beta,
                              OpCounters* ops) {
    const int M = static_cast<int>(out.size());
    if (beta == 0.0) return;
    if (beta == 1.0) {
        for (int a = 0; a < M; ++a) out[a] = fresh[a];
    } else {
        for (int a = 0; a < M; ++a) out[a] = beta * fresh[a] + (1.0 - beta) * out[a];
        if (ops) {
            ops->mult += 2 * static_cast<std::uint64_t>(M);
            ops->add += static_cast<std::uint64_t>(M);
        }
    }
    normalize_log(out);
    // The normalizing shift is bookkept as additions; the lse counter tracks
    // the marginalization sums and belief normalizers only.
    if (ops) ops->add += static_cast<std::uint64_t>(M);
}

// F_n plus the sum of all incident factor->variable messages, for every
// variable. This is the common part of the mu updates and the beliefs.
inline std::vector<double> variable_totals(const FactorGraph& g, const MessageState& st,
                                           OpCounters* ops) {
    const int M = g.n_points;
    std::vector<double> tot(g.f); // start from F
    const int band = g.band();
    for (int d = 1; d <= band; ++d)
        for (int n = d; n < g.block_len; ++n) {
            const int row = (n - d) * M;
            for (int a = 0; a < M; ++a) {
                tot[n * M + a] += st.nu_hi[d - 1][row + a];           // factor (n, n-d) at side n
                tot[(n - d) * M + a] += st.nu_lo[d - 1][row + a];     // same factor at side n-d
            }
            if (ops) ops->add += 2 * static_cast<std::uint64_t>(M);
        }
    return tot;
}

} // namespace detail

// One flooding iteration: all mu messages from the previous nu (Eq. 8 pattern),
// then all nu messages from the fresh mu (Eq. 9 pattern), each blended as
// beta * new + (1-beta) * old in the log domain. Values of beta outside (0,1]
// are permitted (over-relaxation).
inline void bp_iteration(const FactorGraph& g, MessageState& st, double beta,
                         OpCounters* ops = nullptr, int iteration_index = 0) {
    if (!st.shaped_for(g)) throw InvalidParameter("bp_iteration: state does not match graph");
    if (!std::isfinite(beta)) throw InvalidParameter("bp_iteration: beta must be finite");
    if (beta == 0.0) return; // both floods degenerate to no-ops
    const int M = g.n_points;
    const int band = g.band();

    // Variable -> factor flood.
    const std::vector<double> tot = detail::variable_totals(g, st, ops);
    std::vector<double> fresh(M);
    for (int d = 1; d <= band; ++d)
        for (int n = d; n < g.block_len; ++n) {
            const int row = (n - d) * M;
            for (int a = 0; a < M; ++a) fresh[a] = tot[n * M + a] - st.nu_hi[d - 1][row + a];
            detail::combine_and_store({st.mu_hi[d - 1].data() + row, static_cast<std::size_t>(M)},
                                      fresh, beta, ops);
            for (int a = 0; a < M; ++a) fresh[a] = tot[(n - d) * M + a] - st.nu_lo[d - 1][row + a];
            detail::combine_and_store({st.mu_lo[d - 1].data() + row, static_cast<std::size_t>(M)},
                                      fresh, beta, ops);
            if (ops) ops->add += 2 * static_cast<std::uint64_t>(M);
        }

    // Factor -> variable flood, consuming the fresh mu.
    std::vector<double> terms(M);
    for (int d = 1; d <= band; ++d) {
        const std::vector<double>& pf = g.pair_factor[d - 1];
        for (int n = d; n < g.block_len; ++n) {
            const int row = (n - d) * M;
            for (int a = 0; a < M; ++a) {
                for (int b = 0; b < M; ++b) terms[b] = pf[a * M + b] + st.mu_lo[d - 1][row + b];
                fresh[a] = logsumexp(terms);
            }
            if (ops) {
                ops->add += static_cast<std::uint64_t>(M) * M;
                ops->lse += static_cast<std::uint64_t>(M) * M;
            }
            detail::combine_and_store({st.nu_hi[d - 1].data() + row, static_cast<std::size_t>(M)},
                                      fresh, beta, ops);
            for (int b = 0; b < M; ++b) {
                for (int a = 0; a < M; ++a) terms[a] = pf[a * M + b] + st.mu_hi[d - 1][row + a];
                fresh[b] = logsumexp(terms);
            }
            if (ops) {
                ops->add += static_cast<std::uint64_t>(M) * M;
                ops->lse += static_cast<std::uint64_t>(M) * M;
            }
            detail::combine_and_store({st.nu_lo[d - 1].data() + row, static_cast<std::size_t>(M)},
                                      fresh, beta, ops);
        }
    }

    for (int d = 1; d <= band; ++d)
        for (const std::vector<double>* arr :
             {&st.mu_hi[d - 1], &st.mu_lo[d - 1], &st.nu_hi[d - 1], &st.nu_lo[d - 1]})
            for (double v : *arr)
                if (!std::isfinite(v))
                    throw NumericalFailure("bp_iteration: non-finite message", iteration_index);
}

// Beliefs per Eq.-(10) style combination of all incident messages.
inline Beliefs compute_beliefs(const FactorGraph& g, const MessageState& st,
                               OpCounters* ops = nullptr) {
    if (!st.shaped_for(g)) throw InvalidParameter("compute_beliefs: state does not match graph");
    Beliefs b;
    b.block_len = g.block_len;
    b.n_points = g.n_points;
    b.p = detail::variable_totals(g, st, ops);
    for (int n = 0; n < g.block_len; ++n) {
        softmax(b.row(n));
        if (ops) {
            ops->lse += static_cast<std::uint64_t>(g.n_points);
            ops->mult += static_cast<std::uint64_t>(g.n_points);
        }
    }
    return b;
}

// Full coherent detector: build the graph from (h, sigma2), run T weighted BP
// iterations from the unbiased state, return the beliefs.
inline Beliefs bp_detect(std::span<const cplx> y, const ChannelParams& params,
                         const Constellation& cst, int iterations,
                         std::span<const double> beta_schedule = {}, OpCounters* ops = nullptr) {
    if (iterations < 1) throw InvalidParameter("bp_detect: need at least one iteration");
    if (!beta_schedule.empty() && static_cast<int>(beta_schedule.size()) != iterations)
        throw InvalidParameter("bp_detect: beta schedule length must equal T");
    const FactorGraph g = build_graph(matched_stats(y, params.h), params.sigma2, cst, ops);
    MessageState st = bp_init(g);
    for (int t = 1; t <= iterations; ++t) {
        const double beta = beta_schedule.empty() ? 1.0 : beta_schedule[t - 1];
        bp_iteration(g, st, beta, ops, t);
    }
    return compute_beliefs(g, st, ops);
}

// Instrumented operation counts for T E-steps (message update + beliefs each).
inline OpCounters op_counters(const FactorGraph& g, int iterations) {
    OpCounters ops;
    if (iterations == 0) return ops;
    MessageState st = bp_init(g);
    for (int t = 1; t <= iterations; ++t) {
        bp_iteration(g, st, 1.0, &ops, t);
        compute_beliefs(g, st, &ops);
    }
    return ops;
}

} // namespace embp
