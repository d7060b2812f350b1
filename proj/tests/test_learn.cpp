#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "embp/learn.hpp"

using namespace embp;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.block_len = 24;
    cfg.memory = 2;
    cfg.em_iters = 4;
    cfg.batches = 3;
    cfg.batch_size = 4;
    cfg.s_vae = 2;
    cfg.seed = 901;
    // the weight-trajectory tests below inspect the raw SPSA outcome
    cfg.validate_against_identity = false;
    return cfg;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("dataset stream is deterministic and well-shaped") {
    const TrainConfig cfg = tiny_config();
    const DatasetSample a = sample_tuple(cfg, 5);
    const DatasetSample b = sample_tuple(cfg, 5);
    REQUIRE(a.block.sym_idx == b.block.sym_idx);
    REQUIRE(a.block.y.size() == b.block.y.size());
    for (std::size_t i = 0; i < a.block.y.size(); ++i) REQUIRE(a.block.y[i] == b.block.y[i]);
    REQUIRE(static_cast<int>(a.block.sym_idx.size()) == cfg.block_len);
    REQUIRE(static_cast<int>(a.block.y.size()) == cfg.block_len + cfg.memory);
    const DatasetSample c = sample_tuple(cfg, 6);
    REQUIRE(c.block.sym_idx != a.block.sym_idx);
}

TEST_CASE("dataset snr values cover the configured range uniformly") {
    TrainConfig cfg = tiny_config();
    cfg.snr_lo_db = 0.0;
    cfg.snr_hi_db = 12.0;
    const int draws = 10000, bins = 10;
    std::vector<int> hist(bins, 0);
    for (int i = 0; i < draws; ++i) {
        const DatasetSample s = sample_tuple(cfg, i);
        const double snr = snr_db(*cfg.cst, s.block.truth.sigma2);
        REQUIRE(snr >= cfg.snr_lo_db - 1e-9);
        REQUIRE(snr <= cfg.snr_hi_db + 1e-9);
        const int bin = std::min(bins - 1, static_cast<int>(snr / 12.0 * bins));
        ++hist[bin];
    }
    double chi2 = 0.0;
    const double expect = static_cast<double>(draws) / bins;
    for (int b = 0; b < bins; ++b) chi2 += (hist[b] - expect) * (hist[b] - expect) / expect;
    REQUIRE(chi2 < 21.67); // chi^2_9 critical value at p = 0.01
}

TEST_CASE("identity weights reproduce the plain pipeline bit-exactly") {
    const TrainConfig cfg = tiny_config();
    const TrainedWeights id = TrainedWeights::identity(cfg.iters(), cfg.memory);
    const std::vector<DatasetSample> batch = sample_batch(cfg, 0, 4);

    const double loss = batch_loss(id, batch, LossKind::mse, cfg);
    double want = 0.0;
    BlindOptions opts;
    opts.s_vae = cfg.s_vae;
    opts.weights = &id;
    for (const DatasetSample& s : batch) {
        const VaeResult init =
            vae_le_run(s.block.y, cfg.memory, *cfg.cst, cfg.s_vae,
                       std::vector<double>(cfg.s_vae, cfg.lr_vae));
        const ChainResult chain = embp_chain(s.block.y, init.theta, *cfg.cst, opts);
        want += ambiguity_resolved_se(chain.run.theta.h, s.block.truth.h, *cfg.cst);
    }
    REQUIRE(loss == want / 4);

    // The weighted runner with identity weights equals the plain serial run.
    const EmbpRunner runner = apply_weights(id);
    const VaeResult init =
        vae_le_run(batch[0].block.y, cfg.memory, *cfg.cst, cfg.s_vae,
                   std::vector<double>(cfg.s_vae, cfg.lr_vae));
    const EmbpResult a = runner(batch[0].block.y, init.theta, *cfg.cst);
    const EmbpResult b = embp_run(batch[0].block.y, init.theta, *cfg.cst,
                                  EmSchedule::serial(cfg.iters(), cfg.memory));
    REQUIRE(a.beliefs.p == b.beliefs.p);
    REQUIRE(a.theta.h == b.theta.h);
}

TEST_CASE("duplicating a batch leaves the loss unchanged") {
    const TrainConfig cfg = tiny_config();
    const TrainedWeights id = TrainedWeights::identity(cfg.iters(), cfg.memory);
    std::vector<DatasetSample> batch = sample_batch(cfg, 0, 3);
    std::vector<DatasetSample> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    for (const LossKind kind : {LossKind::mse, LossKind::neg_bmi}) {
        const double one = batch_loss(id, batch, kind, cfg);
        const double two = batch_loss(id, doubled, kind, cfg);
        REQUIRE(one == Catch::Approx(two).margin(1e-12));
    }
}

TEST_CASE("zero training steps return the identity weights") {
    TrainConfig cfg = tiny_config();
    cfg.batches = 0;
    const TrainedWeights w = train_weights(cfg);
    const TrainedWeights id = TrainedWeights::identity(cfg.iters(), cfg.memory);
    REQUIRE(w.beta_bp == id.beta_bp);
    REQUIRE(w.beta_em == id.beta_em);
    REQUIRE(w.mask == id.mask);
}

TEST_CASE("training is deterministic in the seed") {
    const TrainConfig cfg = tiny_config();
    const TrainedWeights a = train_weights(cfg);
    const TrainedWeights b = train_weights(cfg);
    REQUIRE(a.beta_bp == b.beta_bp);
    REQUIRE(a.beta_em == b.beta_em);
    REQUIRE(a.mask == b.mask);
    // and moved off the starting point
    const TrainedWeights id = TrainedWeights::identity(cfg.iters(), cfg.memory);
    REQUIRE(a.beta_bp != id.beta_bp);
}

TEST_CASE("holdout validation rejects junk weights") {
    TrainConfig cfg = tiny_config();
    cfg.validate_against_identity = true;
    cfg.step_size = 2.0; // three giant noisy steps produce junk weights
    const TrainedWeights w = train_weights(cfg);
    const TrainedWeights id = TrainedWeights::identity(cfg.iters(), cfg.memory);
    REQUIRE(w.beta_bp == id.beta_bp);
    REQUIRE(w.beta_em == id.beta_em);
}

TEST_CASE("pruning masks exactly the smallest em weights") {
    TrainConfig cfg = tiny_config();
    cfg.k_em_target = 6; // prune 4*4 - 6 = 10 entries
    cfg.lambda_l1 = 0.0; // keep the trajectory identical to the unpruned run
    const TrainedWeights w = train_weights(cfg);
    const int pruned = cfg.pruned_count();
    int masked = 0;
    double largest_masked = 0.0, smallest_kept = 1e300;
    for (std::size_t i = 0; i < w.mask.size(); ++i) {
        if (!w.mask[i]) {
            ++masked;
            REQUIRE(w.beta_em[i] == 0.0);
        }
    }
    REQUIRE(masked == pruned);
    // masked entries were the smallest in magnitude: with lambda = 0 the
    // unpruned run walks the identical trajectory, exposing the pre-prune values
    TrainConfig unpruned = cfg;
    unpruned.k_em_target = -1;
    const TrainedWeights raw = train_weights(unpruned);
    std::vector<double> mags(raw.beta_em.size());
    for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(raw.beta_em[i]);
    for (std::size_t i = 0; i < w.mask.size(); ++i) {
        if (!w.mask[i])
            largest_masked = std::max(largest_masked, mags[i]);
        else
            smallest_kept = std::min(smallest_kept, mags[i]);
    }
    REQUIRE(largest_masked <= smallest_kept + 1e-12);
}

TEST_CASE("masked schedule entries cost no update operations") {
    const TrainConfig cfg = tiny_config();
    const DatasetSample s = sample_tuple(cfg, 0);
    TrainedWeights full = TrainedWeights::identity(cfg.iters(), cfg.memory);
    TrainedWeights masked = full;
    for (std::size_t i = 0; i < masked.mask.size(); ++i) masked.mask[i] = 0;

    ChannelParams init;
    init.h.assign(cfg.memory + 1, cplx{0.0, 0.0});
    init.h[1] = 1.0;
    init.sigma2 = 1.0;

    OpCounters ops_full, ops_masked, ops_zero;
    apply_weights(full)(s.block.y, init, *cfg.cst, &ops_full);
    apply_weights(masked)(s.block.y, init, *cfg.cst, &ops_masked);
    embp_run(s.block.y, init, *cfg.cst, EmSchedule::detect_only(cfg.iters(), cfg.memory), {},
             &ops_zero);
    REQUIRE(ops_masked.add < ops_full.add);
    REQUIRE(ops_masked.mult < ops_full.mult);
    REQUIRE(ops_masked.add == ops_zero.add);
    REQUIRE(ops_masked.mult == ops_zero.mult);
}

TEST_CASE("weights serialize losslessly") {
    TrainedWeights w = TrainedWeights::identity(3, 1);
    w.beta_bp = {1.0 / 3.0, -0.1234567890123456789, 1e-17};
    w.beta_em = {0.1, 1.39, 0.0, -2.5e-7, 0.63, 1.0 / 7.0, 0.0, 0.9999999999999999, 5e300};
    w.mask = {1, 1, 0, 1, 1, 1, 0, 1, 1};
    const TrainedWeights back = weights_from_string(weights_to_string(w));
    REQUIRE(back.iters == w.iters);
    REQUIRE(back.memory == w.memory);
    REQUIRE(back.beta_bp == w.beta_bp);
    REQUIRE(back.beta_em == w.beta_em);
    REQUIRE(back.mask == w.mask);

    const std::string path = temp_path("embp_weights_roundtrip.txt");
    save_weights(path, w);
    const TrainedWeights loaded = load_weights(path);
    REQUIRE(loaded.beta_em == w.beta_em);
    std::remove(path.c_str());

    REQUIRE_THROWS_AS(weights_from_string("version 2\n"), InvalidParameter);
    REQUIRE_THROWS_AS(weights_from_string("version 1\nT 2\nL 0\nbeta_bp 1.0\n"),
                      InvalidParameter);
}

TEST_CASE("apply_weights validates shapes") {
    TrainedWeights w = TrainedWeights::identity(3, 1);
    w.beta_bp.pop_back();
    REQUIRE_THROWS_AS(apply_weights(w), InvalidParameter);
}

TEST_CASE("fully masked schedule reduces to pure detection") {
    const TrainConfig cfg = tiny_config();
    const DatasetSample s = sample_tuple(cfg, 2);
    TrainedWeights masked = TrainedWeights::identity(cfg.iters(), cfg.memory);
    for (auto& m : masked.mask) m = 0;
    ChannelParams init;
    init.h.assign(cfg.memory + 1, cplx{0.0, 0.0});
    init.h[1] = 1.0;
    init.sigma2 = 0.5;
    const EmbpResult run = apply_weights(masked)(s.block.y, init, *cfg.cst);
    const Beliefs plain = bp_detect(s.block.y, init, *cfg.cst, cfg.iters());
    REQUIRE(run.beliefs.p == plain.p);
    REQUIRE(run.theta.h == init.h);
}

TEST_CASE("train config validation") {
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 0;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidParameter);
    cfg = tiny_config();
    cfg.snr_lo_db = 5.0;
    cfg.snr_hi_db = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidParameter);
    cfg = tiny_config();
    cfg.k_em_target = cfg.n_em_weights() + 1;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidParameter);
}
