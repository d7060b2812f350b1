#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "embp/channel.hpp"
#include "embp/em.hpp"
#include "embp/numeric.hpp"

namespace embp {

// Variational linear-equalizer state: FIR taps of the equalizer, the channel
// parameter estimate, and the Gaussian soft-demapper temperature.
struct VaeState {
    std::vector<cplx> phi;
    ChannelParams theta;
    double sigma2_vae = 1.0;

    int eq_memory() const { return static_cast<int>(phi.size()) - 1; } // L_LE
};

// Output alignment of the equalizer: the nominal channel delay of the impulse
// initialization (ceil(L/2)) plus the equalizer center tap, so that
// c_hat_n = y[n + ceil(L/2)] when phi is the center impulse. Keeping the
// demapper and the impulse channel estimate time-consistent at the start is
// what lets a handful of ascent steps work.
inline int vae_alignment(int memory, int eq_memory) {
    return (memory + 1) / 2 + eq_memory / 2;
}

// c_hat = phi * y (linear convolution with the alignment above); out-of-range
// observations contribute zero.
inline std::vector<cplx> vae_equalize(std::span<const cplx> phi, std::span<const cplx> y,
                                      int block_len, int align) {
    std::vector<cplx> chat(block_len, cplx{0.0, 0.0});
    const int y_len = static_cast<int>(y.size());
    for (int n = 0; n < block_len; ++n) {
        cplx acc{0.0, 0.0};
        for (int k = 0; k < static_cast<int>(phi.size()); ++k) {
            const int j = n + align - k;
            if (j >= 0 && j < y_len) acc += phi[k] * y[j];
        }
        chat[n] = acc;
    }
    return chat;
}

namespace detail {

struct DemapResult {
    Beliefs q;
    double entropy_total = 0.0;
};

// Gaussian soft demapper: q_n = softmax_a(-|c_hat_n - c_a|^2 / sigma2_vae).
// The per-symbol entropy falls out of the same pass.
inline DemapResult demap(std::span<const cplx> chat, double sigma2_vae, const Constellation& cst) {
    const int n_sym = static_cast<int>(chat.size());
    const int M = cst.size();
    DemapResult out;
    out.q.block_len = n_sym;
    out.q.n_points = M;
    out.q.p.resize(static_cast<std::size_t>(n_sym) * M);
    std::vector<double> u(M);
    for (int n = 0; n < n_sym; ++n) {
        for (int a = 0; a < M; ++a) u[a] = -std::norm(chat[n] - cst.points[a]) / sigma2_vae;
        const double z = logsumexp(u);
        double qu = 0.0;
        for (int a = 0; a < M; ++a) {
            const double p = std::exp(u[a] - z);
            out.q.p[n * M + a] = p;
            qu += p * u[a];
        }
        out.entropy_total += z - qu;
    }
    return out;
}

struct ETerms {
    double exp_c = 0.0;
    double exp_d = 0.0;
};

inline ETerms expectation_terms(const MatchedStats& stats, const SymbolMoments& mo) {
    ETerms t;
    const int n_sym = stats.block_len;
    for (int n = 0; n < n_sym; ++n)
        t.exp_c += 2.0 * (stats.x[n] * std::conj(mo.mean[n])).real() -
                   stats.r[0].real() * mo.power[n];
    for (int d = 1; d <= static_cast<int>(mo.pair.size()); ++d)
        for (int n = d; n < n_sym; ++n)
            t.exp_d += 2.0 * (stats.r[d] * mo.pair[d - 1][n - d]).real();
    return t;
}

} // namespace detail

// The demapper distribution Q_Phi for given equalizer taps and temperature.
inline PosteriorApprox vae_q(std::span<const cplx> phi, double sigma2_vae,
                             std::span<const cplx> y, int block_len, int align,
                             const Constellation& cst) {
    return detail::demap(vae_equalize(phi, y, block_len, align), sigma2_vae, cst).q;
}

// L(Q, theta); same ELBO the EM machinery maximizes.
inline double vae_elbo(const PosteriorApprox& q, const ChannelParams& theta,
                       std::span<const cplx> y, const Constellation& cst) {
    return elbo(q, theta, y, cst);
}

// ---------------------------------------------------------------------------
// Packed real-parameter view of the VAE state.
//
// Layout: Re phi | Im phi | Re h | Im h | log sigma2 | log sigma2_vae.
// The variances are ascended in log parametrization to stay positive.

struct VaeProblem {
    int block_len;  // N
    int memory;     // L
    int eq_memory;  // L_LE
    int align;
    std::span<const cplx> y;
    const Constellation* cst;

    int n_phi() const { return eq_memory + 1; }
    int n_h() const { return memory + 1; }
    int n_params() const { return 2 * n_phi() + 2 * n_h() + 2; }

    std::vector<double> pack(const VaeState& s) const {
        std::vector<double> v(n_params());
        for (int k = 0; k < n_phi(); ++k) {
            v[k] = s.phi[k].real();
            v[n_phi() + k] = s.phi[k].imag();
        }
        const int hb = 2 * n_phi();
        for (int l = 0; l < n_h(); ++l) {
            v[hb + l] = s.theta.h[l].real();
            v[hb + n_h() + l] = s.theta.h[l].imag();
        }
        v[hb + 2 * n_h()] = std::log(s.theta.sigma2);
        v[hb + 2 * n_h() + 1] = std::log(s.sigma2_vae);
        return v;
    }

    VaeState unpack(std::span<const double> v) const {
        VaeState s;
        s.phi.resize(n_phi());
        for (int k = 0; k < n_phi(); ++k) s.phi[k] = {v[k], v[n_phi() + k]};
        const int hb = 2 * n_phi();
        s.theta.h.resize(n_h());
        for (int l = 0; l < n_h(); ++l) s.theta.h[l] = {v[hb + l], v[hb + n_h() + l]};
        s.theta.sigma2 = std::exp(v[hb + 2 * n_h()]);
        s.sigma2_vae = std::exp(v[hb + 2 * n_h() + 1]);
        return s;
    }

    double elbo_of_params(std::span<const double> v) const {
        const VaeState s = unpack(v);
        const PosteriorApprox q = vae_q(s.phi, s.sigma2_vae, y, block_len, align, *cst);
        return vae_elbo(q, s.theta, y, *cst);
    }

    // Relabels the packed parameters by an integer symbol-timing shift tau:
    // the channel estimate moves by +tau taps, the equalizer by -tau, so the
    // interior configuration is unchanged and only the block edges (which pin
    // absolute timing) feel the difference.
    std::vector<double> shifted_params(std::span<const double> v, int tau) const {
        std::vector<double> out(v.begin(), v.end());
        const int np = n_phi(), nh_ = n_h(), hb = 2 * np;
        for (int l = 0; l < nh_; ++l) {
            const int src = l - tau;
            const bool ok = src >= 0 && src < nh_;
            out[hb + l] = ok ? v[hb + src] : 0.0;
            out[hb + nh_ + l] = ok ? v[hb + nh_ + src] : 0.0;
        }
        for (int k = 0; k < np; ++k) {
            const int src = k + tau;
            const bool ok = src >= 0 && src < np;
            out[k] = ok ? v[src] : 0.0;
            out[np + k] = ok ? v[np + src] : 0.0;
        }
        return out;
    }
};

// Central finite-difference gradient of the ELBO over all packed parameters
// (step 1e-5). Each evaluation is exact; stages of the pipeline that a
// parameter cannot touch are served from the base-point cache.
inline std::vector<double> vae_elbo_gradient(const VaeProblem& p, std::span<const double> v,
                                             double step = 1e-5) {
    const VaeState base = p.unpack(v);
    const Constellation& cst = *p.cst;
    const int n_sym = p.block_len;
    const double b_energy = norm2(p.y);

    const std::vector<cplx> chat = vae_equalize(base.phi, p.y, n_sym, p.align);
    const detail::DemapResult dm = detail::demap(chat, base.sigma2_vae, cst);
    const SymbolMoments mo = product_moments(dm.q, cst, p.memory);
    const MatchedStats stats = matched_stats(p.y, base.theta.h);

    const double n_obs = static_cast<double>(p.y.size());
    auto elbo_value = [&](const detail::ETerms& t, double ent, double sigma2) {
        return -n_sym * std::log(static_cast<double>(cst.size())) -
               n_obs * std::log(std::numbers::pi * sigma2) +
               (-b_energy + t.exp_c - t.exp_d) / sigma2 + ent;
    };

    // One shifted view of y per equalizer tap: d(c_hat_n)/d(phi_k) = y[n+align-k].
    const int y_len = static_cast<int>(p.y.size());
    std::vector<std::vector<cplx>> yshift(p.n_phi());
    for (int k = 0; k < p.n_phi(); ++k) {
        yshift[k].assign(n_sym, cplx{0.0, 0.0});
        for (int n = 0; n < n_sym; ++n) {
            const int j = n + p.align - k;
            if (j >= 0 && j < y_len) yshift[k][n] = p.y[j];
        }
    }

    std::vector<double> grad(p.n_params());
    std::vector<cplx> work(n_sym);

    auto demapper_side = [&](const std::vector<cplx>& chat_pert, double sigma2_vae) {
        const detail::DemapResult d = detail::demap(chat_pert, sigma2_vae, cst);
        const SymbolMoments m = product_moments(d.q, cst, p.memory);
        return elbo_value(detail::expectation_terms(stats, m), d.entropy_total,
                          base.theta.sigma2);
    };
    for (int k = 0; k < p.n_phi(); ++k) {
        for (const bool imag_part : {false, true}) {
            const cplx dir = imag_part ? cplx{0.0, step} : cplx{step, 0.0};
            for (int n = 0; n < n_sym; ++n) work[n] = chat[n] + dir * yshift[k][n];
            const double up = demapper_side(work, base.sigma2_vae);
            for (int n = 0; n < n_sym; ++n) work[n] = chat[n] - dir * yshift[k][n];
            const double dn = demapper_side(work, base.sigma2_vae);
            grad[(imag_part ? p.n_phi() : 0) + k] = (up - dn) / (2.0 * step);
        }
    }

    // Channel-side perturbations keep the demapper fixed: only x and r move.
    const int hb = 2 * p.n_phi();
    auto channel_side = [&](int l, cplx delta) {
        MatchedStats s2 = stats;
        for (int n = 0; n < n_sym; ++n) s2.x[n] += std::conj(delta) * p.y[n + l];
        std::vector<cplx> h2 = base.theta.h;
        h2[l] += delta;
        for (int d = 0; d <= p.memory; ++d) {
            cplx acc{0.0, 0.0};
            for (int k = 0; k + d <= p.memory; ++k) acc += std::conj(h2[k]) * h2[k + d];
            s2.r[d] = acc;
        }
        return elbo_value(detail::expectation_terms(s2, mo), dm.entropy_total,
                          base.theta.sigma2);
    };
    for (int l = 0; l < p.n_h(); ++l) {
        for (const bool imag_part : {false, true}) {
            const cplx dir = imag_part ? cplx{0.0, step} : cplx{step, 0.0};
            const double up = channel_side(l, dir);
            const double dn = channel_side(l, -dir);
            grad[hb + (imag_part ? p.n_h() : 0) + l] = (up - dn) / (2.0 * step);
        }
    }

    const detail::ETerms base_terms = detail::expectation_terms(stats, mo);
    const double ls2 = std::log(base.theta.sigma2);
    grad[hb + 2 * p.n_h()] =
        (elbo_value(base_terms, dm.entropy_total, std::exp(ls2 + step)) -
         elbo_value(base_terms, dm.entropy_total, std::exp(ls2 - step))) /
        (2.0 * step);
    const double lsv = std::log(base.sigma2_vae);
    grad[hb + 2 * p.n_h() + 1] =
        (demapper_side(chat, std::exp(lsv + step)) - demapper_side(chat, std::exp(lsv - step))) /
        (2.0 * step);
    return grad;
}

struct VaeResult {
    ChannelParams theta;
    VaeState state;
    std::vector<double> elbo_trace;         // initial value, then after each step
    std::vector<std::vector<cplx>> h_trace; // h^(0) .. h^(S)
};

// Blind initializer: impulse-initialized equalizer and channel estimate,
// then s_vae Adam ascent steps on the ELBO over all packed parameters.
// An explicit theta_init (e.g. a genie-noised channel) replaces the impulse.
inline VaeResult vae_le_run(std::span<const cplx> y, int memory, const Constellation& cst,
                            int s_vae, std::span<const double> lr_schedule = {},
                            const std::optional<ChannelParams>& theta_init = std::nullopt,
                            int eq_memory = -1) {
    if (s_vae < 1) throw InvalidParameter("vae_le_run: need at least one ascent step");
    if (!lr_schedule.empty() && static_cast<int>(lr_schedule.size()) != s_vae)
        throw InvalidParameter("vae_le_run: learning-rate schedule length must equal s_vae");
    if (eq_memory < 0) eq_memory = 2 * memory;
    const int n_sym = static_cast<int>(y.size()) - memory;
    if (n_sym < 1) throw InvalidParameter("vae_le_run: observation shorter than channel");

    VaeProblem prob{n_sym, memory, eq_memory, vae_alignment(memory, eq_memory), y, &cst};

    VaeState st;
    st.phi.assign(eq_memory + 1, cplx{0.0, 0.0});
    st.phi[eq_memory / 2] = cplx{1.0, 0.0};
    if (theta_init) {
        st.theta = *theta_init;
        if (static_cast<int>(st.theta.h.size()) != memory + 1)
            throw InvalidParameter("vae_le_run: init channel length mismatch");
    } else {
        st.theta.h.assign(memory + 1, cplx{0.0, 0.0});
        st.theta.h[(memory + 1) / 2] = cplx{1.0, 0.0};
        st.theta.sigma2 = 1.0;
    }
    st.sigma2_vae = 1.0;

    std::vector<double> v = prob.pack(st);
    std::vector<double> m(v.size(), 0.0), w(v.size(), 0.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    VaeResult out;
    out.h_trace.push_back(st.theta.h);
    out.elbo_trace.push_back(prob.elbo_of_params(v));
    if (!std::isfinite(out.elbo_trace.front()))
        throw NumericalFailure("vae_le_run: non-finite elbo", 0);
    for (int s = 1; s <= s_vae; ++s) {
        const std::vector<double> g = vae_elbo_gradient(prob, v);
        const double lr = lr_schedule.empty() ? 0.1 : lr_schedule[s - 1];
        for (std::size_t i = 0; i < v.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            w[i] = beta2 * w[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / (1.0 - std::pow(beta1, s));
            const double what = w[i] / (1.0 - std::pow(beta2, s));
            v[i] += lr * mhat / (std::sqrt(what) + eps);
        }
        double value = prob.elbo_of_params(v);
        if (!std::isfinite(value)) throw NumericalFailure("vae_le_run: non-finite elbo", s);
        // Symbol-timing snap: gradient flow cannot cross the integer-shift
        // valleys of the blind likelihood, so test the relabeled candidates
        // and keep the best-ELBO one. Adam moments move with the parameters.
        int best_tau = 0;
        for (const int tau : {-2, -1, 1, 2}) {
            const double cand = prob.elbo_of_params(prob.shifted_params(v, tau));
            if (cand > value) {
                value = cand;
                best_tau = tau;
            }
        }
        if (best_tau != 0) {
            v = prob.shifted_params(v, best_tau);
            m = prob.shifted_params(m, best_tau);
            w = prob.shifted_params(w, best_tau);
        }
        out.elbo_trace.push_back(value);
        out.h_trace.push_back(prob.unpack(v).theta.h);
    }
    out.state = prob.unpack(v);
    out.theta = out.state.theta;
    return out;
}

} // namespace embp
