// Monte-Carlo simulation harness: blind EMBP estimation/detection experiments
// with coherent and pilot-based baselines. Emits CSV plus a resolved-config
// sidecar per run. Exit codes: 0 success, 2 configuration error, 3 numerical
// failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "embp/embp.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

// Every flag funnels through the same key=value store that config files use;
// flags given on the command line override file values.
struct KvOptions {
    embp::KvConfig kv;
    std::string config_path;

    void add_common(CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value configuration file");
        add(sub, "--seed", "seed", "master seed (derives per-block streams)");
        add(sub, "--blocks", "blocks", "Monte-Carlo blocks per grid point");
        add(sub, "--out", "out", "output CSV path");
    }

    void add(CLI::App* sub, const std::string& flag, const std::string& key,
             const std::string& help) {
        sub->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { overrides.set(key, v); }, help);
    }

    embp::KvConfig resolve() const {
        embp::KvConfig merged;
        if (!config_path.empty()) merged = embp::KvConfig::from_file(config_path);
        for (const auto& [k, v] : overrides.values) merged.set(k, v);
        return merged;
    }

    embp::KvConfig overrides;
};

embp::ExperimentConfig experiment_from_kv(const embp::KvConfig& kv) {
    embp::ExperimentConfig c;
    c.block_len = static_cast<int>(kv.get_int("N", c.block_len));
    c.memory = static_cast<int>(kv.get_int("L", c.memory));
    c.constellation = kv.get("constellation", c.constellation);
    c.pdp = kv.get("pdp", c.pdp);
    c.snr_grid_db = kv.get_list("snr_grid_db", c.snr_grid_db);
    c.blocks = static_cast<int>(kv.get_int("blocks", c.blocks));
    c.em_iters = static_cast<int>(kv.get_int("T", c.em_iters));
    c.s_vae = static_cast<int>(kv.get_int("s_vae", c.s_vae));
    c.lr_vae = kv.get_double("lr_vae", c.lr_vae);
    c.weights_file = kv.get("weights", c.weights_file);
    c.pilot_frac_a = kv.get_double("pilot_frac_a", c.pilot_frac_a);
    c.pilot_frac_b = kv.get_double("pilot_frac_b", c.pilot_frac_b);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.out_path = kv.get("out", c.out_path);
    c.gamma_grid = kv.get_list("gamma_grid", c.gamma_grid);
    c.alpha_grid = kv.get_list("alpha_grid", c.alpha_grid);
    c.scan_taps = kv.get_list("scan_taps", c.scan_taps);
    c.scan_snr_db = kv.get_double("scan_snr_db", c.scan_snr_db);
    return c;
}

embp::TrainConfig train_from_kv(const embp::KvConfig& kv) {
    embp::TrainConfig c;
    c.loss = embp::loss_by_name(kv.get("loss", "mse"));
    c.batches = static_cast<int>(kv.get_int("batches", c.batches));
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.snr_lo_db = kv.get_double("snr_lo_db", c.snr_lo_db);
    c.snr_hi_db = kv.get_double("snr_hi_db", c.snr_hi_db);
    c.block_len = static_cast<int>(kv.get_int("N", c.block_len));
    c.memory = static_cast<int>(kv.get_int("L", c.memory));
    c.em_iters = static_cast<int>(kv.get_int("T", c.em_iters));
    c.k_em_target = static_cast<int>(kv.get_int("k_em_target", c.k_em_target));
    c.step_size = kv.get_double("step_size", c.step_size);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.pdp = embp::pdp_by_name(kv.get("pdp", "uniform"));
    c.cst = &embp::Constellation::by_name(kv.get("constellation", "BPSK"));
    c.s_vae = static_cast<int>(kv.get_int("s_vae", c.s_vae));
    c.lr_vae = kv.get_double("lr_vae", c.lr_vae);
    c.lambda_l1 = kv.get_double("lambda_l1", c.lambda_l1);
    c.spsa_delta = kv.get_double("spsa_delta", c.spsa_delta);
    return c;
}

void dump_train_sidecar(const embp::TrainConfig& c, const std::string& out) {
    embp::KvConfig kv;
    kv.set("experiment", "train");
    kv.set("loss", c.loss == embp::LossKind::mse ? "mse" : "neg-bmi");
    kv.set("batches", std::to_string(c.batches));
    kv.set("batch_size", std::to_string(c.batch_size));
    kv.set("snr_lo_db", embp::csv_num(c.snr_lo_db));
    kv.set("snr_hi_db", embp::csv_num(c.snr_hi_db));
    kv.set("N", std::to_string(c.block_len));
    kv.set("L", std::to_string(c.memory));
    kv.set("T", std::to_string(c.iters()));
    kv.set("k_em_target",
           std::to_string(c.k_em_target < 0 ? c.n_em_weights() : c.k_em_target));
    kv.set("step_size", embp::csv_num(c.step_size));
    kv.set("seed", std::to_string(c.seed));
    kv.set("s_vae", std::to_string(c.s_vae));
    kv.set("lr_vae", embp::csv_num(c.lr_vae));
    kv.set("lambda_l1", embp::csv_num(c.lambda_l1));
    kv.set("spsa_delta", embp::csv_num(c.spsa_delta));
    kv.set("out", out);
    embp::write_sidecar(out, kv);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Blind EMBP channel estimation / symbol detection simulator"};
    app.require_subcommand(1);

    KvOptions mse, ber, init, alpha, iter, train;
    std::string report_weights, report_out = "schedule.csv";

    CLI::App* sub_mse = app.add_subcommand("mse-snr", "squared estimation error over snr");
    mse.add_common(sub_mse);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--L", "L"},
                                                          {"--constellation", "constellation"},
                                                          {"--pdp", "pdp"},
                                                          {"--snr", "snr_grid_db"},
                                                          {"--T", "T"},
                                                          {"--s-vae", "s_vae"},
                                                          {"--lr-vae", "lr_vae"},
                                                          {"--pilot-a", "pilot_frac_a"},
                                                          {"--pilot-b", "pilot_frac_b"}})
        mse.add(sub_mse, flag, key, "");

    CLI::App* sub_ber = app.add_subcommand("ber-snr", "bit error rate over snr");
    ber.add_common(sub_ber);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--L", "L"},
                                                          {"--constellation", "constellation"},
                                                          {"--pdp", "pdp"},
                                                          {"--snr", "snr_grid_db"},
                                                          {"--T", "T"},
                                                          {"--s-vae", "s_vae"},
                                                          {"--lr-vae", "lr_vae"},
                                                          {"--pilot-a", "pilot_frac_a"},
                                                          {"--pilot-b", "pilot_frac_b"},
                                                          {"--weights", "weights"}})
        ber.add(sub_ber, flag, key, "");

    CLI::App* sub_init =
        app.add_subcommand("init-sens", "estimation error versus genie-init noise");
    init.add_common(sub_init);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--L", "L"},
                                                          {"--constellation", "constellation"},
                                                          {"--pdp", "pdp"},
                                                          {"--snr", "snr_grid_db"},
                                                          {"--T", "T"},
                                                          {"--s-vae", "s_vae"},
                                                          {"--lr-vae", "lr_vae"},
                                                          {"--gamma", "gamma_grid"}})
        init.add(sub_init, flag, key, "");

    CLI::App* sub_alpha =
        app.add_subcommand("alpha-scan", "BER/ELBO scan over scaled channel assumptions");
    alpha.add_common(sub_alpha);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--constellation", "constellation"},
                                                          {"--alpha", "alpha_grid"},
                                                          {"--scan-taps", "scan_taps"},
                                                          {"--scan-snr", "scan_snr_db"},
                                                          {"--T", "T"}})
        alpha.add(sub_alpha, flag, key, "");

    CLI::App* sub_iter =
        app.add_subcommand("iter-trace", "estimation error after each iteration");
    iter.add_common(sub_iter);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--L", "L"},
                                                          {"--constellation", "constellation"},
                                                          {"--pdp", "pdp"},
                                                          {"--snr", "snr_grid_db"},
                                                          {"--T", "T"},
                                                          {"--s-vae", "s_vae"},
                                                          {"--lr-vae", "lr_vae"},
                                                          {"--weights", "weights"}})
        iter.add(sub_iter, flag, key, "");

    CLI::App* sub_train = app.add_subcommand("train", "optimize momentum weights offline");
    train.add_common(sub_train);
    for (const auto& [flag, key] :
         std::vector<std::pair<std::string, std::string>>{{"--N", "N"},
                                                          {"--L", "L"},
                                                          {"--constellation", "constellation"},
                                                          {"--pdp", "pdp"},
                                                          {"--loss", "loss"},
                                                          {"--batches", "batches"},
                                                          {"--batch-size", "batch_size"},
                                                          {"--snr-lo", "snr_lo_db"},
                                                          {"--snr-hi", "snr_hi_db"},
                                                          {"--T", "T"},
                                                          {"--k-em", "k_em_target"},
                                                          {"--step-size", "step_size"},
                                                          {"--s-vae", "s_vae"},
                                                          {"--lr-vae", "lr_vae"},
                                                          {"--lambda", "lambda_l1"},
                                                          {"--delta", "spsa_delta"}})
        train.add(sub_train, flag, key, "");

    CLI::App* sub_report = app.add_subcommand("schedule-report", "print a learned EM schedule");
    sub_report->add_option("--weights", report_weights, "weights file")->required();
    sub_report->add_option("--out", report_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (sub_mse->parsed()) {
            embp::run_mse_vs_snr(experiment_from_kv(mse.resolve()));
        } else if (sub_ber->parsed()) {
            embp::run_ber_vs_snr(experiment_from_kv(ber.resolve()));
        } else if (sub_init->parsed()) {
            embp::run_init_sensitivity(experiment_from_kv(init.resolve()));
        } else if (sub_alpha->parsed()) {
            embp::run_alpha_scan(experiment_from_kv(alpha.resolve()));
        } else if (sub_iter->parsed()) {
            embp::run_iteration_trace(experiment_from_kv(iter.resolve()));
        } else if (sub_train->parsed()) {
            const embp::KvConfig kv = train.resolve();
            const embp::TrainConfig cfg = train_from_kv(kv);
            cfg.validate();
            const std::string out = kv.get("out", "weights.txt");
            const embp::TrainedWeights w = embp::train_weights(cfg);
            embp::save_weights(out, w);
            dump_train_sidecar(cfg, out);
            std::cout << "wrote " << out << "\n";
        } else if (sub_report->parsed()) {
            embp::run_schedule_report(report_weights, report_out);
        }
    } catch (const embp::InvalidParameter& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
