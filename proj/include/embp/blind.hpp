#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/em.hpp"
#include "embp/weights.hpp"
#include "embp/vae_init.hpp"

namespace embp {

// Fully blind joint estimation/detection receiver.
//
// The interior of the blind likelihood is nearly invariant to relabeling the
// symbol timing by an integer shift (only the block edges pin it), and the
// joint ascent regularly settles into those shifted optima. The receiver
// therefore stabilizes the plain EMBP loop with two blind devices:
//   - shift snaps: integer-shift relabelings of the running estimate are
//     scored by the BP-beliefs ELBO and adopted when they win;
//   - restarts: an initialization ladder (VAE-LE first, then impulses at
//     several delays) arbitrated by the model evidence, stopping early once
//     two tries agree.
// Everything is driven by the observation alone; the constellation's phase
// ambiguity is inherent and left to the evaluation layer.

struct BlindOptions {
    int s_vae = 10;
    std::vector<double> vae_lr;     // empty: constant 0.1
    int em_iters = 0;               // final-stage T; 0 selects 3*(L+2)
    int snap_cycles = 3;            // stabilization cycles of length L+2
    int max_impulse_tries = 3;      // restart ladder length after the VAE try
    const ChannelParams* vae_init = nullptr;     // precomputed VAE estimate
    const TrainedWeights* weights = nullptr;     // trained final stage
};

namespace detail {

inline ChannelParams shift_taps(const ChannelParams& p, int tau) {
    ChannelParams out = p;
    const int L = p.memory();
    for (int l = 0; l <= L; ++l) {
        const int src = l - tau;
        out.h[l] = (src >= 0 && src <= L) ? p.h[src] : cplx{0.0, 0.0};
    }
    return out;
}

// Shift snap on a channel estimate: candidates are probed with a short BP
// detection pass and compared through the ELBO. Returns true if theta moved.
inline bool snap_shift(std::span<const cplx> y, ChannelParams& theta, const Beliefs& beliefs,
                       const Constellation& cst, OpCounters* ops) {
    const int L = theta.memory();
    double best = elbo(beliefs, theta, y, cst);
    int best_tau = 0;
    for (const int tau : {-2, -1, 1, 2}) {
        const ChannelParams cand = shift_taps(theta, tau);
        if (norm2(cand.h) < 1e-6) continue;
        const Beliefs probe = bp_detect(y, cand, cst, L + 2, {}, ops);
        const double e = elbo(probe, cand, y, cst);
        if (e > best) {
            best = e;
            best_tau = tau;
        }
    }
    if (best_tau == 0) return false;
    theta = shift_taps(theta, best_tau);
    return true;
}

inline ChannelParams impulse_at(int memory, int position) {
    ChannelParams p;
    p.h.assign(memory + 1, cplx{0.0, 0.0});
    p.h[position] = cplx{1.0, 0.0};
    p.sigma2 = 1.0;
    return p;
}

} // namespace detail

struct ChainResult {
    EmbpResult run;
    ChannelParams stabilized; // estimate entering the final stage
};

// One snap-stabilized EMBP chain: short serial cycles with a shift snap after
// each, a full final run, and a final snap with re-run when it fires.
inline ChainResult embp_chain(std::span<const cplx> y, const ChannelParams& theta0,
                              const Constellation& cst, const BlindOptions& opt = {},
                              OpCounters* ops = nullptr) {
    const int L = theta0.memory();
    const int T = opt.em_iters > 0 ? opt.em_iters : 3 * (L + 2);
    ChannelParams theta = theta0;
    for (int cycle = 0; cycle < opt.snap_cycles; ++cycle) {
        const EmbpResult rc = embp_run(y, theta, cst, EmSchedule::serial(L + 2, L), {}, ops);
        theta = rc.theta;
        detail::snap_shift(y, theta, rc.beliefs, cst, ops);
    }
    auto final_stage = [&](const ChannelParams& init) {
        if (opt.weights) return EmbpRunner{*opt.weights}(y, init, cst, ops);
        return embp_run(y, init, cst, EmSchedule::serial(T, L), {}, ops);
    };
    ChainResult out;
    out.stabilized = theta;
    out.run = final_stage(theta);
    ChannelParams snapped = out.run.theta;
    if (detail::snap_shift(y, snapped, out.run.beliefs, cst, ops)) {
        out.stabilized = snapped;
        out.run = final_stage(snapped);
    }
    return out;
}

// Candidate score for the restart arbiter: the exact model evidence when the
// trellis is tractable, otherwise the BP-beliefs ELBO.
inline double blind_score(std::span<const cplx> y, const EmbpResult& run,
                          const Constellation& cst) {
    const int L = run.theta.memory();
    if (std::pow(static_cast<double>(cst.size()), L) <= 65536.0)
        return bcjr_evidence(y, run.theta, cst);
    return elbo(run.beliefs, run.theta, y, cst);
}

struct BlindResult {
    EmbpResult run;
    ChannelParams stabilized; // winner's final-stage input, for reuse
    double score = 0.0;
    int tries = 0;
};

// The full blind receiver for one block.
inline BlindResult blind_embp(std::span<const cplx> y, int memory, const Constellation& cst,
                              const BlindOptions& opt = {}, OpCounters* ops = nullptr) {
    const int L = memory;
    BlindResult best;
    best.score = -std::numeric_limits<double>::infinity();
    double runner_up = best.score;
    auto consider = [&](const ChannelParams& init) {
        ChainResult chain = embp_chain(y, init, cst, opt, ops);
        const double score = blind_score(y, chain.run, cst);
        ++best.tries;
        if (score > best.score) {
            runner_up = best.score;
            best.score = score;
            best.run = std::move(chain.run);
            best.stabilized = std::move(chain.stabilized);
        } else {
            runner_up = std::max(runner_up, score);
        }
    };

    if (opt.vae_init) {
        consider(*opt.vae_init);
    } else {
        const std::vector<double> lrs =
            opt.vae_lr.empty() ? std::vector<double>(opt.s_vae, 0.1) : opt.vae_lr;
        consider(vae_le_run(y, L, cst, opt.s_vae, lrs).theta);
    }

    // Impulse ladder spread over the delay range; stop once two tries found
    // the same optimum (scores within one nat).
    std::vector<int> positions = {(L + 1) / 2};
    if (L >= 1) positions.push_back(std::max(0, (L + 1) / 2 - 2));
    if (L >= 2) positions.push_back(std::min(L, (L + 1) / 2 + 2));
    for (int i = 0; i < std::min<int>(opt.max_impulse_tries, positions.size()); ++i) {
        if (std::isfinite(runner_up) && best.score - runner_up < 1.0) break;
        consider(detail::impulse_at(L, positions[i]));
    }
    return best;
}

} // namespace embp
