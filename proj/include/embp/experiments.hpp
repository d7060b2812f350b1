#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/blind.hpp"
#include "embp/channel.hpp"
#include "embp/config.hpp"
#include "embp/em.hpp"
#include "embp/learn.hpp"
#include "embp/metrics.hpp"
#include "embp/parallel.hpp"
#include "embp/vae_init.hpp"

namespace embp {

// Shared experiment settings; every runner reads the subset it needs.
struct ExperimentConfig {
    int block_len = 100; // N
    int memory = 5;      // L
    std::string constellation = "BPSK";
    std::string pdp = "uniform";
    std::vector<double> snr_grid_db = {-4, -2, 0, 2, 4, 6, 8, 10, 12};
    int blocks = 1000;
    int em_iters = 0; // 0 selects 3*(L+2)
    int s_vae = 10;
    double lr_vae = 0.1;
    std::string weights_file; // optional: enables the trained-variant columns
    double pilot_frac_a = 0.1;
    double pilot_frac_b = 0.2;
    std::uint64_t seed = 1;
    std::string out_path = "out.csv";

    // init-sens: initialization noise variances gamma (empty -> default grid).
    std::vector<double> gamma_grid;
    // alpha-scan: scaling grid, scanned channel taps (re,im interleaved), snr.
    std::vector<double> alpha_grid;
    std::vector<double> scan_taps = {0.3, -0.3, 0.6, -0.1, 0.6, -0.3};
    double scan_snr_db = 10.0;

    int iters() const { return em_iters > 0 ? em_iters : 3 * (memory + 2); }

    void validate() const {
        if (blocks < 1) throw InvalidParameter("config: blocks must be >= 1");
        if (snr_grid_db.empty()) throw InvalidParameter("config: empty snr grid");
        if (block_len < 1 || memory < 0) throw InvalidParameter("config: bad block shape");
        if (s_vae < 1) throw InvalidParameter("config: s_vae must be >= 1");
        if (pilot_frac_a <= 0.0 || pilot_frac_a > 1.0 || pilot_frac_b <= 0.0 ||
            pilot_frac_b > 1.0)
            throw InvalidParameter("config: pilot fractions must be in (0, 1]");
        if (scan_taps.empty() || scan_taps.size() % 2 != 0)
            throw InvalidParameter("config: scan taps must be re,im pairs");
        Constellation::by_name(constellation);
        pdp_by_name(pdp);
    }

    KvConfig resolved() const {
        KvConfig kv;
        kv.set("N", std::to_string(block_len));
        kv.set("L", std::to_string(memory));
        kv.set("constellation", constellation);
        kv.set("pdp", pdp);
        kv.set("blocks", std::to_string(blocks));
        kv.set("T", std::to_string(iters()));
        kv.set("s_vae", std::to_string(s_vae));
        kv.set("lr_vae", csv_num(lr_vae));
        kv.set("pilot_frac_a", csv_num(pilot_frac_a));
        kv.set("pilot_frac_b", csv_num(pilot_frac_b));
        kv.set("seed", std::to_string(seed));
        kv.set("out", out_path);
        if (!weights_file.empty()) kv.set("weights", weights_file);
        auto list_str = [](const std::vector<double>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) s += ",";
                s += csv_num(v[i]);
            }
            return s;
        };
        kv.set("snr_grid_db", list_str(snr_grid_db));
        if (!gamma_grid.empty()) kv.set("gamma_grid", list_str(gamma_grid));
        if (!alpha_grid.empty()) kv.set("alpha_grid", list_str(alpha_grid));
        kv.set("scan_taps", list_str(scan_taps));
        kv.set("scan_snr_db", csv_num(scan_snr_db));
        return kv;
    }
};

// In-memory copy of an emitted CSV, for assertions on top of the same numbers.
struct ResultTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw InvalidParameter("result table: no column " + name);
    }
    double at(int row, const std::string& name) const { return rows[row][col(name)]; }
};

namespace detail {

inline void emit(const ExperimentConfig& cfg, const ResultTable& table,
                 const std::string& experiment) {
    KvConfig kv = cfg.resolved();
    kv.set("experiment", experiment);
    write_sidecar(cfg.out_path, kv);
    CsvWriter csv(cfg.out_path, table.header);
    for (const auto& row : table.rows) csv.write_row(row);
}

inline ChannelParams impulse_init(int memory) {
    ChannelParams p;
    p.h.assign(memory + 1, cplx{0.0, 0.0});
    p.h[(memory + 1) / 2] = cplx{1.0, 0.0};
    p.sigma2 = 1.0;
    return p;
}

inline double ber_from_beliefs(const Beliefs& b, const Constellation& cst,
                               std::span<const std::uint8_t> bits, int skip_symbols = 0) {
    const Llrs llrs = bmd_llrs(b, cst);
    const std::vector<std::uint8_t> hard = hard_bits(llrs);
    const int m = cst.bits_per_symbol();
    const std::size_t from = static_cast<std::size_t>(skip_symbols) * m;
    return ber(std::span<const std::uint8_t>(hard).subspan(from), bits.subspan(from));
}

// BER of a blind detector, after resolving the constellation phase ambiguity
// through the channel estimate.
inline double resolved_ber(const Beliefs& b, std::span<const cplx> h_est,
                           const ChannelParams& truth, const Constellation& cst,
                           std::span<const std::uint8_t> bits) {
    const AmbiguityRotation rot = best_rotation(h_est, truth.h, cst);
    return ber_from_beliefs(rotate_beliefs(b, rot), cst, bits);
}

inline void append_summary(std::vector<double>& row, const std::vector<double>& sample) {
    const SummaryStats s = summarize(sample);
    row.insert(row.end(), {s.mean, s.median, s.p25, s.p75});
}

} // namespace detail

// ---------------------------------------------------------------------------
// Squared estimation error versus snr for the blind estimators and the
// pilot-based baselines.
inline ResultTable run_mse_vs_snr(const ExperimentConfig& cfg) {
    cfg.validate();
    const Constellation& cst = Constellation::by_name(cfg.constellation);
    const Pdp pdp = pdp_by_name(cfg.pdp);
    const std::vector<double> lrs(cfg.s_vae, cfg.lr_vae);
    const int np_a = std::max(1, static_cast<int>(std::lround(cfg.block_len * cfg.pilot_frac_a)));
    const int np_b = std::max(1, static_cast<int>(std::lround(cfg.block_len * cfg.pilot_frac_b)));

    ResultTable table;
    table.header = {"snr_db"};
    for (const char* algo :
         {"vae", "embp_impulse", "embp_vae", "pilot_ml_a", "pilot_ml_b", "dd_map_a", "dd_map_b"})
        for (const char* stat : {"mean", "median", "p25", "p75"})
            table.header.push_back(std::string(algo) + "_" + stat);

    const Rng master(cfg.seed);
    for (std::size_t gi = 0; gi < cfg.snr_grid_db.size(); ++gi) {
        const double snr = cfg.snr_grid_db[gi];
        std::vector<std::vector<double>> se(7, std::vector<double>(cfg.blocks, 0.0));
        const Rng point = master.stream(gi);
        parallel_for(cfg.blocks, [&](int b) {
            Rng chan_rng = point.stream(b).stream(0);
            Rng data_rng = point.stream(b).stream(1);
            ChannelParams truth = sample_channel(cfg.memory, pdp, chan_rng);
            truth.sigma2 = sigma2_for_snr(cst, snr);
            const TransmissionBlock block = make_block(cfg.block_len, cst, truth, data_rng);

            const VaeResult vae = vae_le_run(block.y, cfg.memory, cst, cfg.s_vae, lrs);
            se[0][b] = ambiguity_resolved_se(vae.theta.h, truth.h, cst);
            BlindOptions opts;
            opts.s_vae = cfg.s_vae;
            opts.em_iters = cfg.iters();
            const ChainResult imp =
                embp_chain(block.y, detail::impulse_init(cfg.memory), cst, opts);
            se[1][b] = ambiguity_resolved_se(imp.run.theta.h, truth.h, cst);
            opts.vae_init = &vae.theta;
            const BlindResult fit = blind_embp(block.y, cfg.memory, cst, opts);
            se[2][b] = ambiguity_resolved_se(fit.run.theta.h, truth.h, cst);

            const PilotConfig pa = PilotConfig::prefix_of_block(block, np_a);
            const PilotConfig pb = PilotConfig::prefix_of_block(block, np_b);
            se[3][b] = squared_error(ml_pilot_estimate(block.y, pa, cfg.memory, cst), truth.h);
            se[4][b] = squared_error(ml_pilot_estimate(block.y, pb, cfg.memory, cst), truth.h);
            se[5][b] = squared_error(
                dd_map_estimate(block.y, pa, cfg.memory, truth.sigma2, cst).h_refined, truth.h);
            se[6][b] = squared_error(
                dd_map_estimate(block.y, pb, cfg.memory, truth.sigma2, cst).h_refined, truth.h);
        });
        std::vector<double> row = {snr};
        for (const auto& sample : se) detail::append_summary(row, sample);
        table.rows.push_back(std::move(row));
    }
    detail::emit(cfg, table, "mse-snr");
    return table;
}

// ---------------------------------------------------------------------------
// BER versus snr for the detectors (plus the trained variant when a weights
// file is configured).
inline ResultTable run_ber_vs_snr(const ExperimentConfig& cfg) {
    cfg.validate();
    const Constellation& cst = Constellation::by_name(cfg.constellation);
    const Pdp pdp = pdp_by_name(cfg.pdp);
    const std::vector<double> lrs(cfg.s_vae, cfg.lr_vae);
    const int np_a = std::max(1, static_cast<int>(std::lround(cfg.block_len * cfg.pilot_frac_a)));
    const int np_b = std::max(1, static_cast<int>(std::lround(cfg.block_len * cfg.pilot_frac_b)));
    std::optional<EmbpRunner> trained;
    if (!cfg.weights_file.empty()) trained = apply_weights(load_weights(cfg.weights_file));

    ResultTable table;
    table.header = {"snr_db",         "vae_ber",          "embp_ber",      "bp_coherent_ber",
                    "map_coherent_ber", "map_pilot_a_ber", "map_pilot_b_ber", "dd_map_a_ber",
                    "dd_map_b_ber"};
    if (trained) table.header.insert(table.header.begin() + 3, "embp_star_ber");

    const Rng master(cfg.seed);
    for (std::size_t gi = 0; gi < cfg.snr_grid_db.size(); ++gi) {
        const double snr = cfg.snr_grid_db[gi];
        const int n_algos = trained ? 9 : 8;
        std::vector<std::vector<double>> errs(n_algos, std::vector<double>(cfg.blocks, 0.0));
        const Rng point = master.stream(gi);
        parallel_for(cfg.blocks, [&](int b) {
            Rng chan_rng = point.stream(b).stream(0);
            Rng data_rng = point.stream(b).stream(1);
            ChannelParams truth = sample_channel(cfg.memory, pdp, chan_rng);
            truth.sigma2 = sigma2_for_snr(cst, snr);
            const TransmissionBlock block = make_block(cfg.block_len, cst, truth, data_rng);

            int col = 0;
            const VaeResult vae = vae_le_run(block.y, cfg.memory, cst, cfg.s_vae, lrs);
            const PosteriorApprox vq =
                vae_q(vae.state.phi, vae.state.sigma2_vae, block.y, cfg.block_len,
                      vae_alignment(cfg.memory, vae.state.eq_memory()), cst);
            errs[col++][b] = detail::resolved_ber(vq, vae.theta.h, truth, cst, block.bits);

            BlindOptions opts;
            opts.s_vae = cfg.s_vae;
            opts.em_iters = cfg.iters();
            opts.vae_init = &vae.theta;
            const BlindResult fit = blind_embp(block.y, cfg.memory, cst, opts);
            errs[col++][b] =
                detail::resolved_ber(fit.run.beliefs, fit.run.theta.h, truth, cst, block.bits);
            if (trained) {
                // trained final stage on the same stabilized blind estimate
                const EmbpResult star = (*trained)(block.y, fit.stabilized, cst);
                errs[col++][b] = detail::resolved_ber(star.beliefs, star.theta.h, truth, cst,
                                                      block.bits);
            }
            errs[col++][b] = detail::ber_from_beliefs(
                bp_detect(block.y, truth, cst, cfg.iters()), cst, block.bits);
            errs[col++][b] =
                detail::ber_from_beliefs(bcjr_map(block.y, truth, cst).beliefs, cst, block.bits);

            for (const int np : {np_a, np_b}) {
                const PilotConfig pc = PilotConfig::prefix_of_block(block, np);
                const std::vector<cplx> h_ml = ml_pilot_estimate(block.y, pc, cfg.memory, cst);
                const Beliefs pilot_map =
                    bcjr_map(block.y, ChannelParams{h_ml, truth.sigma2}, cst).beliefs;
                errs[col++][b] = detail::ber_from_beliefs(pilot_map, cst, block.bits, np);
            }
            for (const int np : {np_a, np_b}) {
                const PilotConfig pc = PilotConfig::prefix_of_block(block, np);
                const DdMapResult dd =
                    dd_map_estimate(block.y, pc, cfg.memory, truth.sigma2, cst);
                errs[col++][b] = detail::ber_from_beliefs(dd.beliefs, cst, block.bits, np);
            }
        });
        std::vector<double> row = {snr};
        for (const auto& sample : errs)
            row.push_back(std::accumulate(sample.begin(), sample.end(), 0.0) / cfg.blocks);
        table.rows.push_back(std::move(row));
    }
    detail::emit(cfg, table, "ber-snr");
    return table;
}

// ---------------------------------------------------------------------------
// Estimation error versus the quality of a genie-aided initialization
// h_init = h + sqrt(gamma) h_w. The genie-aided nature is recorded in the
// column names and the sidecar.
inline ResultTable run_init_sensitivity(const ExperimentConfig& cfg) {
    cfg.validate();
    const Constellation& cst = Constellation::by_name(cfg.constellation);
    const Pdp pdp = pdp_by_name(cfg.pdp);
    const EmSchedule serial = EmSchedule::serial(cfg.iters(), cfg.memory);
    const std::vector<double> lrs(cfg.s_vae, cfg.lr_vae);
    std::vector<double> gammas = cfg.gamma_grid;
    if (gammas.empty()) {
        for (const double target : {0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0})
            gammas.push_back(target / (cfg.memory + 1));
    }
    const double snr = cfg.snr_grid_db.size() == 1 ? cfg.snr_grid_db.front() : 10.0;

    ResultTable table;
    table.header = {"gamma", "init_mean_se"};
    for (const char* algo : {"embp_genie", "vae_genie"})
        for (const char* stat : {"mean", "median", "p25", "p75"})
            table.header.push_back(std::string(algo) + "_" + stat);

    const Rng master(cfg.seed);
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
        const double gamma = gammas[gi];
        std::vector<double> init_se(cfg.blocks), embp_se(cfg.blocks), vae_se(cfg.blocks);
        const Rng point = master.stream(gi);
        parallel_for(cfg.blocks, [&](int b) {
            Rng chan_rng = point.stream(b).stream(0);
            Rng data_rng = point.stream(b).stream(1);
            Rng init_rng = point.stream(b).stream(2);
            ChannelParams truth = sample_channel(cfg.memory, pdp, chan_rng);
            truth.sigma2 = sigma2_for_snr(cst, snr);
            const TransmissionBlock block = make_block(cfg.block_len, cst, truth, data_rng);

            ChannelParams init;
            init.h.resize(cfg.memory + 1);
            for (int l = 0; l <= cfg.memory; ++l)
                init.h[l] = truth.h[l] + std::sqrt(gamma) * init_rng.cnormal(1.0);
            init.sigma2 = 1.0;
            init_se[b] = squared_error(init.h, truth.h);

            embp_se[b] = ambiguity_resolved_se(embp_run(block.y, init, cst, serial).theta.h,
                                               truth.h, cst);
            vae_se[b] = ambiguity_resolved_se(
                vae_le_run(block.y, cfg.memory, cst, cfg.s_vae, lrs, init).theta.h, truth.h,
                cst);
        });
        std::vector<double> row = {gamma, summarize(init_se).mean};
        detail::append_summary(row, embp_se);
        detail::append_summary(row, vae_se);
        table.rows.push_back(std::move(row));
    }
    detail::emit(cfg, table, "init-sens");
    return table;
}

// ---------------------------------------------------------------------------
// One-dimensional channel-assumption scan h = alpha * h0 on a fixed channel:
// BER and ELBO of BP beliefs versus the exact posterior (whose ELBO is the
// log evidence).
inline ResultTable run_alpha_scan(const ExperimentConfig& cfg) {
    cfg.validate();
    const Constellation& cst = Constellation::by_name(cfg.constellation);
    std::vector<cplx> h0(cfg.scan_taps.size() / 2);
    for (std::size_t l = 0; l < h0.size(); ++l)
        h0[l] = {cfg.scan_taps[2 * l], cfg.scan_taps[2 * l + 1]};
    const int memory = static_cast<int>(h0.size()) - 1;
    const double sigma2 = sigma2_for_snr(cst, cfg.scan_snr_db);
    const int iters = cfg.em_iters > 0 ? cfg.em_iters : 3 * (memory + 2);
    std::vector<double> alphas = cfg.alpha_grid;
    if (alphas.empty())
        for (double a = 0.3; a <= 1.3 + 1e-9; a += 0.05) alphas.push_back(a);

    const ChannelParams truth{h0, sigma2};
    const Rng master(cfg.seed);
    std::vector<TransmissionBlock> blocks(cfg.blocks);
    parallel_for(cfg.blocks, [&](int b) {
        Rng data_rng = master.stream(b).stream(1);
        blocks[b] = make_block(cfg.block_len, cst, truth, data_rng);
    });

    ResultTable table;
    table.header = {"alpha", "ber_bp", "ber_map", "elbo_bp", "elbo_app"};
    for (const double alpha : alphas) {
        ChannelParams assumed = truth;
        for (cplx& t : assumed.h) t *= alpha;
        std::vector<double> ber_bp(cfg.blocks), ber_map(cfg.blocks), elbo_bp(cfg.blocks),
            elbo_app(cfg.blocks);
        parallel_for(cfg.blocks, [&](int b) {
            const TransmissionBlock& block = blocks[b];
            const Beliefs bp = bp_detect(block.y, assumed, cst, iters);
            ber_bp[b] = detail::ber_from_beliefs(bp, cst, block.bits);
            elbo_bp[b] = elbo(bp, assumed, block.y, cst);
            const ExactPosterior map = bcjr_map(block.y, assumed, cst);
            ber_map[b] = detail::ber_from_beliefs(map.beliefs, cst, block.bits);
            elbo_app[b] = map.log_evidence;
        });
        auto mean = [&](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) / cfg.blocks;
        };
        table.rows.push_back({alpha, mean(ber_bp), mean(ber_map), mean(elbo_bp), mean(elbo_app)});
    }
    detail::emit(cfg, table, "alpha-scan");
    return table;
}

// ---------------------------------------------------------------------------
// Mean squared estimation error after each initializer / EM iteration.
struct IterationTrace {
    std::map<std::string, std::vector<double>> mean_se; // algo -> per-iteration values
};

inline IterationTrace run_iteration_trace(const ExperimentConfig& cfg) {
    cfg.validate();
    const Constellation& cst = Constellation::by_name(cfg.constellation);
    const Pdp pdp = pdp_by_name(cfg.pdp);
    const int T = cfg.em_iters > 0 ? cfg.em_iters : 2 * (cfg.memory + 1);
    const EmSchedule serial = EmSchedule::serial(T, cfg.memory);
    const EmSchedule parallel_sched = EmSchedule::parallel(T, cfg.memory);
    const double snr = cfg.snr_grid_db.size() == 1 ? cfg.snr_grid_db.front() : 10.0;
    const std::vector<double> lrs10(cfg.s_vae, cfg.lr_vae);
    const std::vector<double> lrs3 = {0.2, 0.15, 0.1};
    std::optional<EmbpRunner> trained;
    if (!cfg.weights_file.empty()) trained = apply_weights(load_weights(cfg.weights_file));

    std::vector<std::string> algos = {"vae10", "vae3_tuned", "embp_serial", "embp_parallel"};
    if (trained) algos.push_back("embp_learned");
    std::map<std::string, std::vector<std::vector<double>>> se;
    se["vae10"].assign(cfg.s_vae + 1, std::vector<double>(cfg.blocks));
    se["vae3_tuned"].assign(lrs3.size() + 1, std::vector<double>(cfg.blocks));
    se["embp_serial"].assign(T + 1, std::vector<double>(cfg.blocks));
    se["embp_parallel"].assign(T + 1, std::vector<double>(cfg.blocks));
    if (trained) se["embp_learned"].assign(trained->weights.iters + 1,
                                           std::vector<double>(cfg.blocks));

    const Rng master(cfg.seed);
    parallel_for(cfg.blocks, [&](int b) {
        Rng chan_rng = master.stream(b).stream(0);
        Rng data_rng = master.stream(b).stream(1);
        ChannelParams truth = sample_channel(cfg.memory, pdp, chan_rng);
        truth.sigma2 = sigma2_for_snr(cst, snr);
        const TransmissionBlock block = make_block(cfg.block_len, cst, truth, data_rng);

        const VaeResult v10 = vae_le_run(block.y, cfg.memory, cst, cfg.s_vae, lrs10);
        for (std::size_t s = 0; s < v10.h_trace.size(); ++s)
            se["vae10"][s][b] = ambiguity_resolved_se(v10.h_trace[s], truth.h, cst);
        const VaeResult v3 =
            vae_le_run(block.y, cfg.memory, cst, static_cast<int>(lrs3.size()), lrs3);
        for (std::size_t s = 0; s < v3.h_trace.size(); ++s)
            se["vae3_tuned"][s][b] = ambiguity_resolved_se(v3.h_trace[s], truth.h, cst);

        const EmbpResult rs = embp_run(block.y, v10.theta, cst, serial);
        for (std::size_t t = 0; t < rs.trace.size(); ++t)
            se["embp_serial"][t][b] = ambiguity_resolved_se(rs.trace[t].h, truth.h, cst);
        const EmbpResult rp = embp_run(block.y, v10.theta, cst, parallel_sched);
        for (std::size_t t = 0; t < rp.trace.size(); ++t)
            se["embp_parallel"][t][b] = ambiguity_resolved_se(rp.trace[t].h, truth.h, cst);
        if (trained) {
            const EmbpResult rl = (*trained)(block.y, v3.theta, cst);
            for (std::size_t t = 0; t < rl.trace.size(); ++t)
                se["embp_learned"][t][b] = ambiguity_resolved_se(rl.trace[t].h, truth.h, cst);
        }
    });

    IterationTrace out;
    KvConfig kv = cfg.resolved();
    kv.set("experiment", "iter-trace");
    write_sidecar(cfg.out_path, kv);
    CsvWriter csv(cfg.out_path, {"algo", "iter", "mean_se"});
    for (const std::string& algo : algos) {
        std::vector<double>& trace = out.mean_se[algo];
        for (std::size_t it = 0; it < se[algo].size(); ++it) {
            const std::vector<double>& sample = se[algo][it];
            trace.push_back(std::accumulate(sample.begin(), sample.end(), 0.0) / cfg.blocks);
            csv.write_row_strings(
                {algo, std::to_string(it), csv_num(trace.back())});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Human-readable table of a learned EM schedule.
inline ResultTable run_schedule_report(const std::string& weights_path,
                                       const std::string& out_path) {
    const TrainedWeights w = load_weights(weights_path);
    ResultTable table;
    table.header = {"t"};
    for (int l = 0; l <= w.memory; ++l) table.header.push_back("h" + std::to_string(l));
    table.header.push_back("sigma2");
    for (int t = 0; t < w.iters; ++t) {
        std::vector<double> row = {static_cast<double>(t + 1)};
        for (int k = 0; k < w.n_params(); ++k)
            row.push_back(w.mask[t * w.n_params() + k] ? w.beta_em[t * w.n_params() + k] : 0.0);
        table.rows.push_back(std::move(row));
    }
    CsvWriter csv(out_path, table.header);
    for (const auto& row : table.rows) csv.write_row(row);
    return table;
}

} // namespace embp
