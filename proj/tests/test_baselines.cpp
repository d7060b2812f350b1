#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/channel.hpp"
#include "embp/metrics.hpp"
#include "oracles.hpp"

using namespace embp;

namespace {

double total_variation(std::span<const double> a, std::span<const double> b) {
    double tv = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
    return 0.5 * tv;
}

TransmissionBlock random_block(int n_sym, int L, double sigma2, const Constellation& cst,
                               std::uint64_t seed) {
    Rng rng(seed);
    ChannelParams p = sample_channel(L, Pdp::uniform, rng);
    p.sigma2 = sigma2;
    return make_block(n_sym, cst, p, rng);
}

} // namespace

TEST_CASE("bcjr equals exhaustive enumeration") {
    for (const auto& [seed, L, cst] :
         std::vector<std::tuple<std::uint64_t, int, const Constellation*>>{
             {51, 2, &Constellation::bpsk()},
             {52, 1, &Constellation::bpsk()},
             {53, 1, &Constellation::qpsk()},
             {54, 2, &Constellation::qpsk()}}) {
        const int n_sym = cst->size() == 2 ? 8 : 6;
        const TransmissionBlock block = random_block(n_sym, L, 0.4, *cst, seed);
        const ExactPosterior fb = bcjr_map(block.y, block.truth, *cst);
        const ExactPosterior bf = brute_posterior(block.y, block.truth, *cst);
        for (int n = 0; n < n_sym; ++n)
            REQUIRE(total_variation(fb.beliefs.row(n), bf.beliefs.row(n)) < 1e-10);
        REQUIRE(std::abs(fb.log_evidence - bf.log_evidence) <
                1e-10 * std::abs(bf.log_evidence));
    }
}

TEST_CASE("bcjr on a memoryless channel is the symbol-wise posterior") {
    const Constellation& cst = Constellation::qpsk();
    const TransmissionBlock block = random_block(5, 0, 0.3, cst, 55);
    const ExactPosterior fb = bcjr_map(block.y, block.truth, cst);
    for (int n = 0; n < 5; ++n) {
        std::vector<double> logp(cst.size());
        for (int a = 0; a < cst.size(); ++a)
            logp[a] = -std::norm(block.y[n] - block.truth.h[0] * cst.points[a]) /
                      block.truth.sigma2;
        softmax(std::span<double>(logp));
        for (int a = 0; a < cst.size(); ++a)
            REQUIRE(fb.beliefs.at(n, a) == Catch::Approx(logp[a]).margin(1e-12));
    }
}

TEST_CASE("noiseless bcjr decisions recover the transmitted block") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(56);
    ChannelParams p = sample_channel(3, Pdp::uniform, rng);
    p.sigma2 = 0.0;
    TransmissionBlock block = make_block(10, cst, p, rng);
    ChannelParams assumed = p;
    assumed.sigma2 = 1e-3;
    const ExactPosterior fb = bcjr_map(block.y, assumed, cst);
    for (int n = 0; n < 10; ++n) {
        const auto row = fb.beliefs.row(n);
        REQUIRE(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) ==
                block.sym_idx[n]);
    }
}

TEST_CASE("state-space guards") {
    const Constellation& qpsk = Constellation::qpsk();
    Rng rng(57);
    ChannelParams p = sample_channel(9, Pdp::uniform, rng);
    p.sigma2 = 0.5;
    std::vector<cplx> y(40 + 9);
    for (cplx& v : y) v = rng.cnormal(1.0);
    REQUIRE_THROWS_AS(bcjr_map(y, p, qpsk), StateSpaceTooLarge);

    ChannelParams small = sample_channel(1, Pdp::uniform, rng);
    small.sigma2 = 0.5;
    std::vector<cplx> y2(21 + 1);
    for (cplx& v : y2) v = rng.cnormal(1.0);
    REQUIRE_THROWS_AS(brute_posterior(y2, small, Constellation::bpsk()), StateSpaceTooLarge);
}

TEST_CASE("brute posterior base cases") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(58);
    ChannelParams p;
    p.h = {rng.cnormal(1.0)};
    p.sigma2 = 0.5;
    const std::vector<cplx> y = {rng.cnormal(1.0)};
    const ExactPosterior one = brute_posterior(y, p, cst);
    std::vector<double> want(2);
    for (int a = 0; a < 2; ++a) want[a] = -std::norm(y[0] - p.h[0] * cst.points[a]) / p.sigma2;
    softmax(std::span<double>(want));
    REQUIRE(one.beliefs.at(0, 0) == Catch::Approx(want[0]).margin(1e-12));

    ChannelParams vague = p;
    vague.sigma2 = 1e9;
    const ExactPosterior flat = brute_posterior(y, vague, cst);
    REQUIRE(flat.beliefs.at(0, 0) == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("trellis pairwise moments match enumeration") {
    const Constellation& cst = Constellation::bpsk();
    const TransmissionBlock block = random_block(6, 2, 0.5, cst, 59);
    const SymbolMoments mo = bcjr_pair_moments(block.y, block.truth, cst);

    // Oracle: accumulate the same moments over all 2^6 sequences.
    std::vector<double> logp;
    std::vector<std::vector<int>> seqs;
    oracle::for_each_sequence(6, 2, [&](const std::vector<int>& idx) {
        std::vector<cplx> c(6);
        for (int n = 0; n < 6; ++n) c[n] = cst.points[idx[n]];
        seqs.push_back(idx);
        logp.push_back(
            oracle::sequence_log_likelihood(block.y, block.truth.h, block.truth.sigma2, c));
    });
    const double z = logsumexp(logp);
    std::vector<cplx> mean(6, cplx{0, 0});
    std::vector<std::vector<cplx>> pair(2, std::vector<cplx>(6, cplx{0, 0}));
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        const double w = std::exp(logp[s] - z);
        for (int n = 0; n < 6; ++n) {
            mean[n] += w * cst.points[seqs[s][n]];
            for (int d = 1; d <= std::min(2, n); ++d)
                pair[d - 1][n - d] +=
                    w * cst.points[seqs[s][n - d]] * std::conj(cst.points[seqs[s][n]]);
        }
    }
    for (int n = 0; n < 6; ++n) REQUIRE(std::abs(mo.mean[n] - mean[n]) < 1e-10);
    for (int d = 1; d <= 2; ++d)
        for (int n = d; n < 6; ++n)
            REQUIRE(std::abs(mo.pair[d - 1][n - d] - pair[d - 1][n - d]) < 1e-10);
}

TEST_CASE("pilot least squares recovers a noiseless channel exactly") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(60);
    const int L = 2, n_sym = 12;
    ChannelParams p = sample_channel(L, Pdp::uniform, rng);
    p.sigma2 = 0.0;
    const TransmissionBlock block = make_block(n_sym, cst, p, rng);
    const PilotConfig pilots = PilotConfig::prefix_of_block(block, 2 * L + 1);
    const std::vector<cplx> est = ml_pilot_estimate(block.y, pilots, L, cst);
    REQUIRE(squared_error(est, p.h) < 1e-10);
}

TEST_CASE("no pilots means no identifiability") {
    const Constellation& cst = Constellation::bpsk();
    const TransmissionBlock block = random_block(10, 2, 0.2, cst, 61);
    const PilotConfig empty;
    REQUIRE_THROWS_AS(ml_pilot_estimate(block.y, empty, 2, cst), IdentifiabilityError);
}

TEST_CASE("more pilots estimate better") {
    const Constellation& cst = Constellation::bpsk();
    const int L = 5, n_sym = 100, blocks = 800;
    const double sigma2 = sigma2_for_snr(cst, 10.0);
    double se10 = 0.0, se20 = 0.0;
    for (int b = 0; b < blocks; ++b) {
        Rng rng(Rng(62).stream(b).seed());
        ChannelParams p = sample_channel(L, Pdp::uniform, rng);
        p.sigma2 = sigma2;
        const TransmissionBlock block = make_block(n_sym, cst, p, rng);
        se10 += squared_error(
            ml_pilot_estimate(block.y, PilotConfig::prefix_of_block(block, 10), L, cst), p.h);
        se20 += squared_error(
            ml_pilot_estimate(block.y, PilotConfig::prefix_of_block(block, 20), L, cst), p.h);
    }
    REQUIRE(se20 < se10);
}

TEST_CASE("decision-directed refinement is exact in the noiseless limit") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(63);
    const int L = 2, n_sym = 16;
    ChannelParams p = sample_channel(L, Pdp::uniform, rng);
    p.sigma2 = 0.0;
    const TransmissionBlock block = make_block(n_sym, cst, p, rng);
    const PilotConfig pilots = PilotConfig::prefix_of_block(block, 2 * L + 1);
    const DdMapResult dd = dd_map_estimate(block.y, pilots, L, 1e-3, cst);
    REQUIRE(squared_error(dd.h_refined, p.h) < 1e-10);
}

TEST_CASE("all-pilot refinement equals full-block least squares") {
    const Constellation& cst = Constellation::bpsk();
    const TransmissionBlock block = random_block(12, 2, 0.1, cst, 64);
    const PilotConfig all = PilotConfig::prefix_of_block(block, 12);
    const DdMapResult dd = dd_map_estimate(block.y, all, 2, block.truth.sigma2, cst);
    const std::vector<cplx> ml = ml_pilot_estimate(block.y, all, 2, cst);
    for (int l = 0; l <= 2; ++l) REQUIRE(std::abs(dd.h_refined[l] - ml[l]) < 1e-12);
}

TEST_CASE("decision-directed refinement improves on pilot-only estimates") {
    const Constellation& cst = Constellation::bpsk();
    const int L = 3, n_sym = 60, blocks = 400;
    const double sigma2 = sigma2_for_snr(cst, 10.0);
    double se_pilot = 0.0, se_dd = 0.0;
    for (int b = 0; b < blocks; ++b) {
        Rng rng(Rng(65).stream(b).seed());
        ChannelParams p = sample_channel(L, Pdp::uniform, rng);
        p.sigma2 = sigma2;
        const TransmissionBlock block = make_block(n_sym, cst, p, rng);
        const PilotConfig pilots = PilotConfig::prefix_of_block(block, 9);
        se_pilot += squared_error(ml_pilot_estimate(block.y, pilots, L, cst), p.h);
        se_dd += squared_error(dd_map_estimate(block.y, pilots, L, sigma2, cst).h_refined, p.h);
    }
    REQUIRE(se_dd < se_pilot);
}
