#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "embp/channel.hpp"
#include "embp/graph.hpp"
#include "embp/linalg.hpp"
#include "embp/numeric.hpp"

namespace embp {

// Known symbols inside a block: distinct positions (0-based) and their
// constellation indices.
struct PilotConfig {
    std::vector<int> positions;
    std::vector<int> sym_idx;

    static PilotConfig prefix_of_block(const TransmissionBlock& block, int count) {
        PilotConfig p;
        p.positions.resize(count);
        p.sym_idx.resize(count);
        for (int i = 0; i < count; ++i) {
            p.positions[i] = i;
            p.sym_idx[i] = block.sym_idx[i];
        }
        return p;
    }
};

struct ExactPosterior {
    Beliefs beliefs;
    double log_evidence = 0.0;
};

namespace detail {

inline double log_gauss(const cplx& y, const cplx& mean, double sigma2) {
    return -std::log(std::numbers::pi * sigma2) - std::norm(y - mean) / sigma2;
}

inline std::int64_t ipow(std::int64_t base, int exp) {
    std::int64_t r = 1;
    for (int i = 0; i < exp; ++i) r *= base;
    return r;
}

// Trellis workspace shared by the MAP detector and the pairwise-moment
// extraction. State digit i (base M, least significant first) holds the symbol
// index of lag i+1; symbols before the block start contribute zero to every
// emission, which the time-aware mean computation enforces.
struct Trellis {
    int n_sym, M, L;
    std::int64_t n_states;
    const Constellation* cst;
    std::span<const cplx> y;
    std::vector<cplx> h;
    double sigma2;

    std::vector<cplx> isi_tail; // per state: sum_{l>=1} h_l c_{n-l}, valid once n >= L
    std::vector<double> alpha;  // (N+1) x S, alpha[0] = initial point mass
    std::vector<double> beta;   // N x S, beta[n-1][s] = log p(y_{n+1..} | state s)

    Trellis(std::span<const cplx> y_in, const ChannelParams& params, const Constellation& c)
        : n_sym(static_cast<int>(y_in.size()) - params.memory()),
          M(c.size()),
          L(params.memory()),
          cst(&c),
          y(y_in),
          h(params.h),
          sigma2(params.sigma2) {
        if (sigma2 <= 0.0) throw InvalidParameter("bcjr: sigma2 must be > 0");
        if (n_sym < 1) throw InvalidParameter("bcjr: observation shorter than channel");
        n_states = ipow(M, L);
        if (n_states > (1 << 16)) throw StateSpaceTooLarge("bcjr: M^L exceeds 2^16 states");
    }

    int digit(std::int64_t s, int i) const {
        for (int k = 0; k < i; ++k) s /= M;
        return static_cast<int>(s % M);
    }
    std::int64_t next_state(std::int64_t s, int a) const {
        return L == 0 ? 0 : (s % ipow(M, L - 1)) * M + a;
    }

    // ISI part of the emission mean at step n (0-based), before adding h_0 c_n.
    cplx isi_mean(int n, std::int64_t s) const {
        if (n >= L) return isi_tail[s];
        cplx acc{0.0, 0.0};
        for (int l = 1; l <= std::min(L, n); ++l) acc += h[l] * cst->points[digit(s, l - 1)];
        return acc;
    }

    double emission(int n, std::int64_t s, int a) const {
        return log_gauss(y[n], isi_mean(n, s) + h[0] * cst->points[a], sigma2);
    }

    // log p(y_{N+1..N+L} | final state s): the tail observations are fully
    // determined by the last L symbols.
    double tail_logp(std::int64_t s) const {
        double acc = 0.0;
        for (int j = 1; j <= L; ++j) {
            cplx mean{0.0, 0.0};
            for (int l = j; l <= L; ++l) {
                const int sym_pos = n_sym - 1 + j - l;
                if (sym_pos >= 0) mean += h[l] * cst->points[digit(s, l - j)];
            }
            acc += log_gauss(y[n_sym - 1 + j], mean, sigma2);
        }
        return acc;
    }

    void run_forward() {
        const double neg_inf = -std::numeric_limits<double>::infinity();
        const double log_prior = -std::log(static_cast<double>(M));

        isi_tail.assign(n_states, cplx{0.0, 0.0});
        for (std::int64_t s = 0; s < n_states; ++s)
            for (int l = 1; l <= L; ++l) isi_tail[s] += h[l] * cst->points[digit(s, l - 1)];

        alpha.assign(static_cast<std::size_t>(n_sym + 1) * n_states, neg_inf);
        alpha[0] = 0.0; // canonical all-zero boundary state
        for (int n = 0; n < n_sym; ++n) {
            double* prev = alpha.data() + static_cast<std::size_t>(n) * n_states;
            double* cur = alpha.data() + static_cast<std::size_t>(n + 1) * n_states;
            for (std::int64_t s = 0; s < n_states; ++s) {
                if (prev[s] == neg_inf) continue;
                for (int a = 0; a < M; ++a) {
                    const std::int64_t ns = next_state(s, a);
                    const double v = prev[s] + log_prior + emission(n, s, a);
                    cur[ns] = cur[ns] == neg_inf ? v : std::max(cur[ns], v) +
                              std::log1p(std::exp(-std::abs(cur[ns] - v)));
                }
            }
        }
    }

    void run() {
        run_forward();
        const double neg_inf = -std::numeric_limits<double>::infinity();
        const double log_prior = -std::log(static_cast<double>(M));
        std::vector<double> incoming(M);
        beta.assign(static_cast<std::size_t>(n_sym) * n_states, neg_inf);
        {
            double* last = beta.data() + static_cast<std::size_t>(n_sym - 1) * n_states;
            for (std::int64_t s = 0; s < n_states; ++s) last[s] = tail_logp(s);
        }
        for (int n = n_sym - 1; n >= 1; --n) {
            const double* nxt = beta.data() + static_cast<std::size_t>(n) * n_states;
            double* cur = beta.data() + static_cast<std::size_t>(n - 1) * n_states;
            for (std::int64_t s = 0; s < n_states; ++s) {
                for (int a = 0; a < M; ++a)
                    incoming[a] = log_prior + emission(n, s, a) + nxt[next_state(s, a)];
                cur[s] = logsumexp(incoming);
            }
        }
    }

    double evidence() const {
        const double* last = alpha.data() + static_cast<std::size_t>(n_sym) * n_states;
        std::vector<double> v(n_states);
        for (std::int64_t s = 0; s < n_states; ++s) v[s] = last[s] + tail_logp(s);
        return logsumexp(v);
    }

    // Visits every transition of step n with its unnormalized log posterior.
    template <typename F>
    void for_transitions(int n, F&& f) const {
        const double neg_inf = -std::numeric_limits<double>::infinity();
        const double log_prior = -std::log(static_cast<double>(M));
        const double* prev = alpha.data() + static_cast<std::size_t>(n) * n_states;
        const double* nxt = beta.data() + static_cast<std::size_t>(n) * n_states;
        for (std::int64_t s = 0; s < n_states; ++s) {
            if (prev[s] == neg_inf) continue;
            for (int a = 0; a < M; ++a)
                f(s, a, prev[s] + log_prior + emission(n, s, a) + nxt[next_state(s, a)]);
        }
    }
};

} // namespace detail

// log p(y|theta) alone, from the forward recursion (no backward pass).
inline double bcjr_evidence(std::span<const cplx> y, const ChannelParams& params,
                            const Constellation& cst) {
    detail::Trellis tr(y, params, cst);
    tr.run_forward();
    return tr.evidence();
}

// Exact symbol-wise posteriors and log evidence via the forward-backward
// algorithm on the M^L trellis. Guarded to M^L <= 2^16 states.
inline ExactPosterior bcjr_map(std::span<const cplx> y, const ChannelParams& params,
                               const Constellation& cst) {
    detail::Trellis tr(y, params, cst);
    tr.run();
    ExactPosterior out;
    out.log_evidence = tr.evidence();
    out.beliefs.block_len = tr.n_sym;
    out.beliefs.n_points = tr.M;
    out.beliefs.p.assign(static_cast<std::size_t>(tr.n_sym) * tr.M, 0.0);
    std::vector<double> row(tr.M, -std::numeric_limits<double>::infinity());
    for (int n = 0; n < tr.n_sym; ++n) {
        std::vector<std::vector<double>> parts(tr.M);
        tr.for_transitions(n, [&](std::int64_t, int a, double lp) { parts[a].push_back(lp); });
        for (int a = 0; a < tr.M; ++a) row[a] = logsumexp(parts[a]);
        softmax(std::span<double>(row));
        for (int a = 0; a < tr.M; ++a) out.beliefs.p[n * tr.M + a] = row[a];
    }
    return out;
}

// Exact low-order posterior moments (means, powers, banded pairwise
// correlations) from the trellis transition posteriors. These carry the exact
// E-step of the EM convergence guarantee.
inline SymbolMoments bcjr_pair_moments(std::span<const cplx> y, const ChannelParams& params,
                                       const Constellation& cst) {
    detail::Trellis tr(y, params, cst);
    tr.run();
    const int n_sym = tr.n_sym;
    const int band = std::min(tr.L, n_sym - 1);
    SymbolMoments mo;
    mo.mean.assign(n_sym, cplx{0.0, 0.0});
    mo.power.assign(n_sym, 0.0);
    mo.pair.resize(band);
    for (int d = 1; d <= band; ++d) mo.pair[d - 1].assign(n_sym - d, cplx{0.0, 0.0});

    std::vector<double> lp_buf;
    std::vector<std::int64_t> s_buf;
    std::vector<int> a_buf;
    for (int n = 0; n < n_sym; ++n) {
        lp_buf.clear();
        s_buf.clear();
        a_buf.clear();
        tr.for_transitions(n, [&](std::int64_t s, int a, double lp) {
            lp_buf.push_back(lp);
            s_buf.push_back(s);
            a_buf.push_back(a);
        });
        const double z = logsumexp(lp_buf);
        for (std::size_t i = 0; i < lp_buf.size(); ++i) {
            const double w = std::exp(lp_buf[i] - z);
            const cplx cn = cst.points[a_buf[i]];
            mo.mean[n] += w * cn;
            mo.power[n] += w * std::norm(cn);
            for (int d = 1; d <= std::min(band, n); ++d) {
                const cplx cm = cst.points[tr.digit(s_buf[i], d - 1)];
                mo.pair[d - 1][n - d] += w * cm * std::conj(cn);
            }
        }
    }
    return mo;
}

// Exhaustive-enumeration posterior; test oracle. Guarded to M^N <= 2^20.
inline ExactPosterior brute_posterior(std::span<const cplx> y, const ChannelParams& params,
                                      const Constellation& cst) {
    const int L = params.memory();
    const int n_sym = static_cast<int>(y.size()) - L;
    const int M = cst.size();
    if (n_sym < 1) throw InvalidParameter("brute_posterior: observation shorter than channel");
    double log_count = n_sym * std::log2(static_cast<double>(M));
    if (log_count > 20.0) throw StateSpaceTooLarge("brute_posterior: M^N exceeds 2^20");
    const std::int64_t total = detail::ipow(M, n_sym);

    std::vector<int> idx(n_sym, 0);
    std::vector<double> logp(total);
    std::vector<cplx> c(n_sym);
    const double log_prior = -n_sym * std::log(static_cast<double>(M));
    for (std::int64_t seq = 0; seq < total; ++seq) {
        std::int64_t v = seq;
        for (int n = 0; n < n_sym; ++n) {
            idx[n] = static_cast<int>(v % M);
            c[n] = cst.points[idx[n]];
            v /= M;
        }
        double lp = log_prior;
        for (int r = 0; r < n_sym + L; ++r) {
            cplx mean{0.0, 0.0};
            const int lo = std::max(0, r - n_sym + 1);
            const int hi = std::min(L, r);
            for (int l = lo; l <= hi; ++l) mean += params.h[l] * c[r - l];
            lp += detail::log_gauss(y[r], mean, params.sigma2);
        }
        logp[seq] = lp;
    }
    ExactPosterior out;
    out.log_evidence = logsumexp(logp);
    out.beliefs.block_len = n_sym;
    out.beliefs.n_points = M;
    out.beliefs.p.assign(static_cast<std::size_t>(n_sym) * M, 0.0);
    for (std::int64_t seq = 0; seq < total; ++seq) {
        const double w = std::exp(logp[seq] - out.log_evidence);
        std::int64_t v = seq;
        for (int n = 0; n < n_sym; ++n) {
            out.beliefs.p[n * M + static_cast<int>(v % M)] += w;
            v /= M;
        }
    }
    return out;
}

namespace detail {

// Least-squares channel fit over the given convolution rows; symbol values are
// looked up through `sym`, which returns false for unknown positions. Rows may
// only reference known or out-of-range (zero) symbols.
inline std::vector<cplx> ls_channel_fit(std::span<const cplx> y, int n_sym, int memory,
                                        const std::function<bool(int, cplx&)>& sym,
                                        std::span<const int> rows) {
    const int nh = memory + 1;
    if (static_cast<int>(rows.size()) < nh)
        throw IdentifiabilityError("channel fit: fewer usable rows than unknowns");
    std::vector<cplx> gram(nh * nh, cplx{0.0, 0.0});
    std::vector<cplx> rhs(nh, cplx{0.0, 0.0});
    std::vector<cplx> arow(nh);
    for (int r : rows) {
        for (int l = 0; l <= memory; ++l) {
            const int j = r - l;
            cplx v{0.0, 0.0};
            if (j >= 0 && j < n_sym && !sym(j, v))
                throw InvalidParameter("channel fit: row references unknown symbol");
            arow[l] = v;
        }
        for (int i = 0; i <= memory; ++i) {
            for (int k = 0; k <= memory; ++k) gram[i * nh + k] += std::conj(arow[i]) * arow[k];
            rhs[i] += std::conj(arow[i]) * y[r];
        }
    }
    return solve_dense(std::move(gram), std::move(rhs));
}

} // namespace detail

// Pilot-based ML channel estimate: least squares over the convolution rows
// whose in-range contributing symbols are all pilots.
inline std::vector<cplx> ml_pilot_estimate(std::span<const cplx> y, const PilotConfig& pilots,
                                           int memory, const Constellation& cst) {
    const int n_sym = static_cast<int>(y.size()) - memory;
    std::vector<int> value(n_sym, -1);
    for (std::size_t i = 0; i < pilots.positions.size(); ++i) {
        const int pos = pilots.positions[i];
        if (pos < 0 || pos >= n_sym) throw InvalidParameter("pilots: position out of range");
        value[pos] = pilots.sym_idx[i];
    }
    std::vector<int> rows;
    for (int r = 0; r < n_sym + memory; ++r) {
        bool ok = true;
        for (int j = std::max(0, r - memory); j <= std::min(n_sym - 1, r); ++j)
            if (value[j] < 0) {
                ok = false;
                break;
            }
        if (ok) rows.push_back(r);
    }
    auto sym = [&](int j, cplx& v) {
        if (value[j] < 0) return false;
        v = cst.points[value[j]];
        return true;
    };
    return detail::ls_channel_fit(y, n_sym, memory, sym, rows);
}

struct DdMapResult {
    std::vector<cplx> h_refined;
    Beliefs beliefs;
};

// Decision-directed refinement: pilot ML estimate, MAP detection, hard
// decisions, full-block least squares, second MAP detection.
inline DdMapResult dd_map_estimate(std::span<const cplx> y, const PilotConfig& pilots, int memory,
                                   double sigma2, const Constellation& cst) {
    const int n_sym = static_cast<int>(y.size()) - memory;
    std::vector<cplx> h1 = ml_pilot_estimate(y, pilots, memory, cst);
    const ExactPosterior first = bcjr_map(y, ChannelParams{h1, sigma2}, cst);

    std::vector<int> decided(n_sym);
    for (int n = 0; n < n_sym; ++n) {
        const auto row = first.beliefs.row(n);
        decided[n] =
            static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    for (std::size_t i = 0; i < pilots.positions.size(); ++i)
        decided[pilots.positions[i]] = pilots.sym_idx[i];

    std::vector<int> rows(n_sym + memory);
    for (int r = 0; r < n_sym + memory; ++r) rows[r] = r;
    auto sym = [&](int j, cplx& v) {
        v = cst.points[decided[j]];
        return true;
    };
    DdMapResult out;
    out.h_refined = detail::ls_channel_fit(y, n_sym, memory, sym, rows);
    out.beliefs = bcjr_map(y, ChannelParams{out.h_refined, sigma2}, cst).beliefs;
    return out;
}

} // namespace embp
