#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embp/constellation.hpp"
#include "embp/errors.hpp"
#include "embp/rng.hpp"

namespace embp {

// Power delay profile of the random tap generator.
enum class Pdp { uniform, exponential };

inline Pdp pdp_by_name(const std::string& name) {
    if (name == "uniform") return Pdp::uniform;
    if (name == "exponential" || name == "exp") return Pdp::exponential;
    throw InvalidParameter("unknown pdp: " + name);
}

// Parameter vector of one block-fading ISI channel: L+1 complex taps plus the
// noise variance.
struct ChannelParams {
    std::vector<cplx> h;
    double sigma2 = 1.0;

    int memory() const { return static_cast<int>(h.size()) - 1; } // L
};

// One transmitted block: symbol indices into the constellation, their bit
// pattern, the noisy observation of length N+L, and the ground truth used to
// generate it.
struct TransmissionBlock {
    std::vector<int> sym_idx;       // length N
    std::vector<std::uint8_t> bits; // length N*m
    std::vector<cplx> y;            // length N+L
    ChannelParams truth;

    int block_len() const { return static_cast<int>(sym_idx.size()); }
    std::vector<cplx> symbols(const Constellation& cst) const {
        std::vector<cplx> c(sym_idx.size());
        for (std::size_t n = 0; n < sym_idx.size(); ++n) c[n] = cst.points[sym_idx[n]];
        return c;
    }
};

// Matched-filter statistics x = H^H y and G = H^H H. The full convolution
// matrix H makes G exactly banded Hermitian Toeplitz, so only the first
// autocorrelation column r_d = G_{n+d,n} is stored.
struct MatchedStats {
    std::vector<cplx> x; // length N
    std::vector<cplx> r; // r[d] = sum_k conj(h_k) h_{k+d}, d = 0..L
    int block_len = 0;   // N

    int memory() const { return static_cast<int>(r.size()) - 1; }
    cplx g(int n, int m) const {
        const int d = n - m;
        const int L = memory();
        if (d > L || d < -L) return {0.0, 0.0};
        return d >= 0 ? r[d] : std::conj(r[-d]);
    }
};

// Random unit-norm channel: taps drawn CN(0, v_l) with v_l = 1 (uniform pdp)
// or v_l = exp(-l) (exponential pdp), then normalized to ||h|| = 1.
// sigma2 is left at 1; callers set it from the target snr.
inline ChannelParams sample_channel(int memory, Pdp pdp, Rng& rng) {
    if (memory < 0) throw InvalidParameter("sample_channel: memory must be >= 0");
    ChannelParams p;
    p.h.resize(memory + 1);
    double norm2 = 0.0;
    for (int l = 0; l <= memory; ++l) {
        const double var = pdp == Pdp::uniform ? 1.0 : std::exp(-static_cast<double>(l));
        p.h[l] = rng.cnormal(var);
        norm2 += std::norm(p.h[l]);
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (cplx& t : p.h) t *= inv;
    return p;
}

// snr = sum_{c in M} |c|^2 / (M sigma2), in dB.
inline double snr_db(const Constellation& cst, double sigma2) {
    if (sigma2 <= 0.0) throw InvalidParameter("snr_db: sigma2 must be > 0");
    return 10.0 * std::log10(cst.total_energy() / (cst.size() * sigma2));
}

inline double sigma2_for_snr(const Constellation& cst, double snr_db_value) {
    return cst.mean_energy() / std::pow(10.0, snr_db_value / 10.0);
}

// y = Hc + w with w_n ~ CN(0, sigma2); symbols outside 1..N are zero, so the
// observation has length N+L.
inline std::vector<cplx> transmit(std::span<const cplx> symbols, const ChannelParams& params,
                                  Rng& rng) {
    const int n_sym = static_cast<int>(symbols.size());
    const int L = params.memory();
    std::vector<cplx> y(n_sym + L, cplx{0.0, 0.0});
    for (int n = 0; n < n_sym + L; ++n) {
        cplx acc{0.0, 0.0};
        const int lo = std::max(0, n - n_sym + 1);
        const int hi = std::min(L, n);
        for (int l = lo; l <= hi; ++l) acc += params.h[l] * symbols[n - l];
        if (params.sigma2 > 0.0) acc += rng.cnormal(params.sigma2);
        y[n] = acc;
    }
    return y;
}

inline std::vector<int> random_symbols(int n_sym, const Constellation& cst, Rng& rng) {
    std::vector<int> idx(n_sym);
    for (int& i : idx) i = rng.uniform_int(cst.size());
    return idx;
}

inline std::vector<std::uint8_t> bits_of_symbols(std::span<const int> sym_idx,
                                                 const Constellation& cst) {
    const int m = cst.bits_per_symbol();
    std::vector<std::uint8_t> bits(sym_idx.size() * m);
    for (std::size_t n = 0; n < sym_idx.size(); ++n)
        for (int i = 0; i < m; ++i) bits[n * m + i] = cst.bit_labels[sym_idx[n]][i];
    return bits;
}

inline TransmissionBlock make_block(int n_sym, const Constellation& cst,
                                    const ChannelParams& params, Rng& rng) {
    TransmissionBlock b;
    b.sym_idx = random_symbols(n_sym, cst, rng);
    b.bits = bits_of_symbols(b.sym_idx, cst);
    b.truth = params;
    std::vector<cplx> c(n_sym);
    for (int n = 0; n < n_sym; ++n) c[n] = cst.points[b.sym_idx[n]];
    b.y = transmit(c, params, rng);
    return b;
}

// x_n = sum_k conj(h_k) y_{n+k}; r_d per the Toeplitz structure of H^H H.
inline MatchedStats matched_stats(std::span<const cplx> y, std::span<const cplx> h) {
    const int L = static_cast<int>(h.size()) - 1;
    const int n_sym = static_cast<int>(y.size()) - L;
    if (n_sym < 1) throw InvalidParameter("matched_stats: observation shorter than channel");
    MatchedStats s;
    s.block_len = n_sym;
    s.x.resize(n_sym);
    for (int n = 0; n < n_sym; ++n) {
        cplx acc{0.0, 0.0};
        for (int k = 0; k <= L; ++k) acc += std::conj(h[k]) * y[n + k];
        s.x[n] = acc;
    }
    s.r.resize(L + 1);
    for (int d = 0; d <= L; ++d) {
        cplx acc{0.0, 0.0};
        for (int k = 0; k + d <= L; ++k) acc += std::conj(h[k]) * h[k + d];
        s.r[d] = acc;
    }
    return s;
}

inline double norm2(std::span<const cplx> v) {
    double s = 0.0;
    for (const cplx& x : v) s += std::norm(x);
    return s;
}

} // namespace embp
