#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "embp/blind.hpp"
#include "embp/channel.hpp"
#include "embp/em.hpp"
#include "embp/metrics.hpp"
#include "embp/parallel.hpp"
#include "embp/vae_init.hpp"
#include "embp/weights.hpp"

namespace embp {

enum class LossKind { mse, neg_bmi };

inline LossKind loss_by_name(const std::string& name) {
    if (name == "mse") return LossKind::mse;
    if (name == "neg-bmi" || name == "neg_bmi" || name == "bmi") return LossKind::neg_bmi;
    throw InvalidParameter("unknown loss: " + name);
}

struct TrainConfig {
    LossKind loss = LossKind::mse;
    int batches = 200;
    int batch_size = 100;
    double snr_lo_db = 0.0;
    double snr_hi_db = 12.0;
    int block_len = 100; // N
    int memory = 5;      // L
    int em_iters = 0;    // T; 0 selects the 3*(L+2) default
    int k_em_target = -1; // total parameter updates kept; -1 keeps all
    double step_size = 0.01;
    std::uint64_t seed = 1;
    Pdp pdp = Pdp::uniform;
    const Constellation* cst = &Constellation::bpsk();
    int s_vae = 10;
    double lr_vae = 0.1;
    double lambda_l1 = 0.1;
    double spsa_delta = 0.05;
    // Model selection on a held-out batch: fall back to the (equally pruned)
    // identity weights when they validate better than the trained ones.
    bool validate_against_identity = true;

    int iters() const { return em_iters > 0 ? em_iters : 3 * (memory + 2); }
    int n_em_weights() const { return iters() * (memory + 2); }
    int pruned_count() const {
        const int target = k_em_target < 0 ? n_em_weights() : k_em_target;
        return n_em_weights() - target;
    }
    void validate() const {
        if (batch_size < 1) throw InvalidParameter("train: batch_size must be >= 1");
        if (batches < 0) throw InvalidParameter("train: batches must be >= 0");
        if (snr_lo_db > snr_hi_db) throw InvalidParameter("train: snr range inverted");
        if (memory < 0 || block_len < 1) throw InvalidParameter("train: bad block shape");
        if (k_em_target > n_em_weights())
            throw InvalidParameter("train: k_em_target exceeds T*(L+2)");
        if (pruned_count() < 0) throw InvalidParameter("train: negative prune count");
    }
};

// ---------------------------------------------------------------------------
// Dataset

struct DatasetSample {
    TransmissionBlock block;
};

// Deterministic tuple stream: sample `index` depends only on (config seed,
// index), never on evaluation order.
inline DatasetSample sample_tuple(const TrainConfig& cfg, std::uint64_t index) {
    Rng rng = Rng(cfg.seed).stream(index);
    ChannelParams params = sample_channel(cfg.memory, cfg.pdp, rng);
    params.sigma2 = sigma2_for_snr(*cfg.cst, rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db));
    DatasetSample s;
    s.block = make_block(cfg.block_len, *cfg.cst, params, rng);
    return s;
}

inline std::vector<DatasetSample> sample_batch(const TrainConfig& cfg, std::uint64_t first,
                                               int count) {
    std::vector<DatasetSample> out(count);
    for (int i = 0; i < count; ++i) out[i] = sample_tuple(cfg, first + i);
    return out;
}

// ---------------------------------------------------------------------------
// Loss

namespace detail {

// Worst-case scores for blocks that fail numerically during training.
inline double failure_mse() { return 10.0; }
inline Llrs failure_llrs(std::span<const std::uint8_t> bits, int block_len,
                         int bits_per_symbol) {
    // Maximally wrong clamped LLR on every bit.
    Llrs l;
    l.block_len = block_len;
    l.bits_per_symbol = bits_per_symbol;
    l.v.resize(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i)
        l.v[i] = bits[i] == 0 ? -kLlrClamp : kLlrClamp;
    return l;
}

} // namespace detail

// Mean loss of the weighted blind pipeline over a batch: VAE-LE
// initialization, then the snap-stabilized EMBP chain whose final stage runs
// the candidate weights (the same configuration the weights are deployed in).
// Losses are evaluated modulo the constellation phase ambiguity; numerically
// failed blocks score their worst case instead of aborting.
inline double batch_loss(const TrainedWeights& weights, std::span<const DatasetSample> batch,
                         LossKind kind, const TrainConfig& cfg) {
    weights.check_shape();
    const Constellation& cst = *cfg.cst;
    const int n = static_cast<int>(batch.size());
    std::vector<double> se(n, 0.0);
    std::vector<Llrs> llrs(n);
    std::vector<std::vector<std::uint8_t>> bits(n);

    BlindOptions opts;
    opts.s_vae = cfg.s_vae;
    opts.weights = &weights;

    parallel_for(n, [&](int i) {
        const TransmissionBlock& block = batch[i].block;
        bits[i] = block.bits;
        try {
            const VaeResult init = vae_le_run(block.y, cfg.memory, cst, cfg.s_vae,
                                              std::vector<double>(cfg.s_vae, cfg.lr_vae));
            const ChainResult chain = embp_chain(block.y, init.theta, cst, opts);
            se[i] = ambiguity_resolved_se(chain.run.theta.h, block.truth.h, cst);
            const AmbiguityRotation rot =
                best_rotation(chain.run.theta.h, block.truth.h, cst);
            llrs[i] = bmd_llrs(rotate_beliefs(chain.run.beliefs, rot), cst);
        } catch (const NumericalFailure&) {
            se[i] = detail::failure_mse();
            llrs[i] = detail::failure_llrs(block.bits, block.block_len(),
                                           cst.bits_per_symbol());
        }
    });

    if (kind == LossKind::mse) {
        double acc = 0.0;
        for (double v : se) acc += v;
        return acc / n;
    }
    return -bmi_estimate(llrs, bits, cst.size());
}

// L1 pressure on the K' smallest-|beta| EM entries.
inline double l1_smallest(std::span<const double> beta_em, int k_prime) {
    if (k_prime <= 0) return 0.0;
    std::vector<double> mag(beta_em.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(beta_em[i]);
    std::sort(mag.begin(), mag.end());
    double acc = 0.0;
    for (int i = 0; i < k_prime; ++i) acc += mag[i];
    return acc;
}

namespace detail {

inline void prune_smallest(TrainedWeights& w, int k_final) {
    if (k_final <= 0) return;
    const int n_em = static_cast<int>(w.beta_em.size());
    std::vector<int> order(n_em);
    for (int i = 0; i < n_em; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(w.beta_em[a]) < std::abs(w.beta_em[b]);
    });
    for (int i = 0; i < k_final; ++i) {
        w.beta_em[order[i]] = 0.0;
        w.mask[order[i]] = 0;
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Training: simultaneous-perturbation stochastic gradients with Adam moments
// over the T + T*(L+2) momentum weights, an L1 schedule-sparsity term whose
// support K' ramps up linearly, a final hard prune of the K' smallest
// |beta_EM| entries, and held-out validation against the identity weights.
inline TrainedWeights train_weights(const TrainConfig& cfg) {
    cfg.validate();
    const int T = cfg.iters();
    const int n_bp = T;
    const int n_em = cfg.n_em_weights();
    TrainedWeights w = TrainedWeights::identity(T, cfg.memory);
    if (cfg.batches == 0) return w;

    std::vector<double> theta(n_bp + n_em);
    std::copy(w.beta_bp.begin(), w.beta_bp.end(), theta.begin());
    std::copy(w.beta_em.begin(), w.beta_em.end(), theta.begin() + n_bp);

    auto weights_of = [&](std::span<const double> v) {
        TrainedWeights cur = w;
        std::copy(v.begin(), v.begin() + n_bp, cur.beta_bp.begin());
        std::copy(v.begin() + n_bp, v.end(), cur.beta_em.begin());
        return cur;
    };
    auto objective = [&](std::span<const double> v, std::span<const DatasetSample> batch,
                         int k_prime) {
        return batch_loss(weights_of(v), batch, cfg.loss, cfg) +
               cfg.lambda_l1 * l1_smallest(v.subspan(n_bp), k_prime);
    };

    Rng perturb_rng = Rng(cfg.seed).stream(0x5053414bULL); // SPSA stream
    std::vector<double> m(theta.size(), 0.0), vmom(theta.size(), 0.0);
    std::vector<double> delta(theta.size()), plus(theta.size()), minus(theta.size());
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const int k_final = cfg.pruned_count();

    double initial_loss = 0.0;
    int bad_streak = 0;
    for (int step = 0; step < cfg.batches; ++step) {
        const int k_prime =
            cfg.batches > 1 ? static_cast<int>(std::lround(
                                  static_cast<double>(k_final) * step / (cfg.batches - 1)))
                            : k_final;
        const std::vector<DatasetSample> batch =
            sample_batch(cfg, static_cast<std::uint64_t>(step) * cfg.batch_size,
                         cfg.batch_size);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            delta[i] = perturb_rng.uniform() < 0.5 ? -1.0 : 1.0;
            plus[i] = theta[i] + cfg.spsa_delta * delta[i];
            minus[i] = theta[i] - cfg.spsa_delta * delta[i];
        }
        const double loss_plus = objective(plus, batch, k_prime);
        const double loss_minus = objective(minus, batch, k_prime);
        const double mid = 0.5 * (loss_plus + loss_minus);
        if (step == 0) initial_loss = mid;
        if (mid > initial_loss + 10.0 * std::max(std::abs(initial_loss), 0.1)) {
            if (++bad_streak >= 50)
                throw NumericalFailure("train_weights: loss diverged (initial " +
                                           std::to_string(initial_loss) + ", current " +
                                           std::to_string(mid) + ")",
                                       step);
        } else {
            bad_streak = 0;
        }
        const double scale = (loss_plus - loss_minus) / (2.0 * cfg.spsa_delta);
        const int t = step + 1;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = scale * delta[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            vmom[i] = beta2 * vmom[i] + (1.0 - beta2) * g * g;
            const double mhat = m[i] / (1.0 - std::pow(beta1, t));
            const double vhat = vmom[i] / (1.0 - std::pow(beta2, t));
            theta[i] -= cfg.step_size * mhat / (std::sqrt(vhat) + eps);
        }
    }

    std::copy(theta.begin(), theta.begin() + n_bp, w.beta_bp.begin());
    std::copy(theta.begin() + n_bp, theta.end(), w.beta_em.begin());
    detail::prune_smallest(w, k_final);

    if (cfg.validate_against_identity) {
        TrainedWeights fallback = TrainedWeights::identity(T, cfg.memory);
        detail::prune_smallest(fallback, k_final);
        const std::vector<DatasetSample> holdout = sample_batch(
            cfg, static_cast<std::uint64_t>(cfg.batches) * cfg.batch_size,
            2 * cfg.batch_size);
        if (batch_loss(fallback, holdout, cfg.loss, cfg) <
            batch_loss(w, holdout, cfg.loss, cfg))
            return fallback;
    }
    return w;
}

} // namespace embp
