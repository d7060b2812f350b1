#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "embp/baselines.hpp"
#include "embp/channel.hpp"
#include "embp/metrics.hpp"
#include "oracles.hpp"

using namespace embp;

namespace {

Beliefs beliefs_from(const std::vector<std::vector<double>>& rows) {
    Beliefs b;
    b.block_len = static_cast<int>(rows.size());
    b.n_points = static_cast<int>(rows.front().size());
    for (const auto& r : rows) b.p.insert(b.p.end(), r.begin(), r.end());
    return b;
}

} // namespace

TEST_CASE("squared error basics") {
    Rng rng(201);
    const std::vector<cplx> h = {{0.6, 0.0}, {0.0, -0.8}};
    REQUIRE(squared_error(h, h) == 0.0);
    const std::vector<cplx> zero(2, cplx{0.0, 0.0});
    REQUIRE(squared_error(zero, h) == Catch::Approx(1.0).margin(1e-15));

    std::vector<cplx> a(3), b(3);
    double want = 0.0;
    for (int i = 0; i < 3; ++i) {
        a[i] = rng.cnormal(1.0);
        b[i] = rng.cnormal(1.0);
        want += std::norm(a[i] - b[i]);
    }
    REQUIRE(squared_error(a, b) == Catch::Approx(want).margin(1e-14));
    REQUIRE_THROWS_AS(squared_error(a, h), InvalidParameter);
}

TEST_CASE("bit error rate counting") {
    const std::vector<std::uint8_t> truth = {0, 1, 1, 0, 1, 0};
    REQUIRE(ber(truth, truth) == 0.0);
    std::vector<std::uint8_t> flipped(truth);
    for (auto& b : flipped) b ^= 1;
    REQUIRE(ber(flipped, truth) == 1.0);
    std::vector<std::uint8_t> half(truth);
    for (int i = 0; i < 3; ++i) half[i] ^= 1;
    REQUIRE(ber(half, truth) == Catch::Approx(0.5));
}

TEST_CASE("bit-metric demapper") {
    const Constellation& qpsk = Constellation::qpsk();
    const Beliefs uniform = beliefs_from({{0.25, 0.25, 0.25, 0.25}});
    const Llrs zero = bmd_llrs(uniform, qpsk);
    REQUIRE(zero.at(0, 0) == 0.0);
    REQUIRE(zero.at(0, 1) == 0.0);

    // Point mass on the Gray point labeled 11: both LLRs clamp negative.
    const Beliefs point = beliefs_from({{0.0, 0.0, 1.0, 0.0}});
    const Llrs clamped = bmd_llrs(point, qpsk);
    REQUIRE(clamped.at(0, 0) == -kLlrClamp);
    REQUIRE(clamped.at(0, 1) == -kLlrClamp);

    // Hand-computed Gray case.
    const Beliefs mixed = beliefs_from({{0.4, 0.3, 0.2, 0.1}});
    const Llrs llr = bmd_llrs(mixed, qpsk);
    REQUIRE(llr.at(0, 0) == Catch::Approx(std::log(0.7 / 0.3)).margin(1e-12));
    REQUIRE(llr.at(0, 1) == Catch::Approx(0.0).margin(1e-12));

    // Point-mass beliefs recover the labels through LLR signs.
    for (int a = 0; a < 4; ++a) {
        std::vector<std::vector<double>> rows = {{0.0, 0.0, 0.0, 0.0}};
        rows[0][a] = 1.0;
        const Llrs l = bmd_llrs(beliefs_from(rows), qpsk);
        const std::vector<std::uint8_t> bits = hard_bits(l);
        REQUIRE(bits[0] == qpsk.bit_labels[a][0]);
        REQUIRE(bits[1] == qpsk.bit_labels[a][1]);
    }
}

TEST_CASE("bmi estimator limits") {
    Llrs zero;
    zero.block_len = 4;
    zero.bits_per_symbol = 1;
    zero.v.assign(4, 0.0);
    const std::vector<std::vector<std::uint8_t>> bits = {{0, 1, 0, 1}};
    REQUIRE(bmi_estimate(std::vector<Llrs>{zero}, bits, 2) ==
            Catch::Approx(0.0).margin(1e-12));

    Llrs perfect = zero;
    for (int i = 0; i < 4; ++i) perfect.v[i] = bits[0][i] == 0 ? kLlrClamp : -kLlrClamp;
    REQUIRE(bmi_estimate(std::vector<Llrs>{perfect}, bits, 2) ==
            Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("bmi on the awgn channel matches numerical integration") {
    const Constellation& cst = Constellation::bpsk();
    const double sigma2 = sigma2_for_snr(cst, 0.0); // 0 dB -> sigma2 = 1
    // Quadrature oracle: BMI = 1 - E_{y|b=0}[log2(1 + e^{-L(y)})] with
    // L(y) = 4 Re{y} / sigma2 and Re{y} ~ N(1, sigma2/2).
    const double sd = std::sqrt(sigma2 / 2.0);
    double bmi_ref = 0.0;
    const int steps = 40000;
    const double lo = 1.0 - 8.0 * sd, hi = 1.0 + 8.0 * sd;
    const double dy = (hi - lo) / steps;
    for (int i = 0; i < steps; ++i) {
        const double yr = lo + (i + 0.5) * dy;
        const double pdf = std::exp(-(yr - 1.0) * (yr - 1.0) / sigma2) /
                           std::sqrt(std::numbers::pi * sigma2);
        bmi_ref += pdf * (log1pexp(-4.0 * yr / sigma2) / std::log(2.0)) * dy;
    }
    bmi_ref = 1.0 - bmi_ref;

    ChannelParams p;
    p.h = {cplx{1.0, 0.0}};
    p.sigma2 = sigma2;
    const int blocks = 200, n_sym = 500;
    std::vector<Llrs> llrs;
    std::vector<std::vector<std::uint8_t>> bits;
    for (int b = 0; b < blocks; ++b) {
        Rng rng = Rng(202).stream(b);
        const TransmissionBlock block = make_block(n_sym, cst, p, rng);
        llrs.push_back(bmd_llrs(bcjr_map(block.y, p, cst).beliefs, cst));
        bits.push_back(block.bits);
    }
    REQUIRE(bmi_estimate(llrs, bits, 2) == Catch::Approx(bmi_ref).margin(0.01));
}

TEST_CASE("kl diagnostic is zero when the posterior factorizes") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(203);
    ChannelParams p = sample_channel(0, Pdp::uniform, rng);
    p.sigma2 = 0.5;
    const TransmissionBlock block = make_block(9, cst, p, rng);
    const Beliefs q = bcjr_map(block.y, p, cst).beliefs;
    const KlDiagnostic diag = kl_qp_diagnostic(q, p, block.y, cst);
    REQUIRE(std::abs(diag.kl) < 1e-9);
    REQUIRE(diag.log_evidence == Catch::Approx(diag.elbo).margin(1e-9));
}

TEST_CASE("kl diagnostic matches direct summation for a uniform posterior") {
    const Constellation& cst = Constellation::bpsk();
    Rng rng(204);
    ChannelParams p = sample_channel(2, Pdp::uniform, rng);
    p.sigma2 = 0.4;
    const TransmissionBlock block = make_block(8, cst, p, rng);
    Beliefs q;
    q.block_len = 8;
    q.n_points = 2;
    q.p.assign(16, 0.5);
    const KlDiagnostic diag = kl_qp_diagnostic(q, p, block.y, cst);

    // Direct KL(Q || P(.|y)) by enumeration.
    std::vector<double> logp;
    oracle::for_each_sequence(8, 2, [&](const std::vector<int>& idx) {
        std::vector<cplx> c(8);
        for (int n = 0; n < 8; ++n) c[n] = cst.points[idx[n]];
        logp.push_back(oracle::sequence_log_likelihood(block.y, p.h, p.sigma2, c));
    });
    const double z = logsumexp(logp);
    double kl = 0.0;
    const double log_q = -8.0 * std::log(2.0);
    for (const double lp : logp) kl += std::exp(log_q) * (log_q - (lp - z));
    REQUIRE(diag.kl == Catch::Approx(kl).margin(1e-9));
    REQUIRE(diag.kl >= -1e-9);
}

TEST_CASE("kl is nonnegative for arbitrary posteriors") {
    const Constellation& cst = Constellation::qpsk();
    for (const std::uint64_t seed : {205, 206, 207}) {
        Rng rng(seed);
        ChannelParams p = sample_channel(1, Pdp::exponential, rng);
        p.sigma2 = 0.3;
        const TransmissionBlock block = make_block(7, cst, p, rng);
        Beliefs q;
        q.block_len = 7;
        q.n_points = 4;
        q.p.resize(28);
        for (int n = 0; n < 7; ++n) {
            double sum = 0.0;
            for (int a = 0; a < 4; ++a) {
                q.p[n * 4 + a] = rng.uniform_pos();
                sum += q.p[n * 4 + a];
            }
            for (int a = 0; a < 4; ++a) q.p[n * 4 + a] /= sum;
        }
        REQUIRE(kl_qp_diagnostic(q, p, block.y, cst).kl >= -1e-9);
    }
}

TEST_CASE("summary statistics are exact order statistics") {
    const SummaryStats s = summarize({5.0, 1.0, 3.0, 2.0, 4.0});
    REQUIRE(s.mean == Catch::Approx(3.0));
    REQUIRE(s.median == Catch::Approx(3.0));
    REQUIRE(s.p25 == Catch::Approx(2.0));
    REQUIRE(s.p75 == Catch::Approx(4.0));
    REQUIRE_THROWS_AS(summarize({}), InvalidParameter);
}
