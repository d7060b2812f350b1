#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "embp/em.hpp"

namespace embp {

// Learned momentum weights. Masked (pruned) EM entries are exactly zero, are
// never computed at run time, and are recorded in `mask` (1 = active).
struct TrainedWeights {
    int iters = 0;  // T
    int memory = 0; // L
    std::vector<double> beta_bp;    // T
    std::vector<double> beta_em;    // T x (L+2)
    std::vector<std::uint8_t> mask; // T x (L+2)

    int n_params() const { return memory + 2; }

    // beta_bp all ones, serial one-hot EM rows, nothing pruned: the plain
    // serially-scheduled EMBP algorithm.
    static TrainedWeights identity(int iters, int memory) {
        TrainedWeights w;
        w.iters = iters;
        w.memory = memory;
        w.beta_bp.assign(iters, 1.0);
        const EmSchedule serial = EmSchedule::serial(iters, memory);
        w.beta_em = serial.beta;
        w.mask.assign(w.beta_em.size(), 1);
        return w;
    }

    EmSchedule schedule() const {
        EmSchedule s{iters, n_params(), beta_em};
        for (std::size_t i = 0; i < s.beta.size(); ++i)
            if (!mask[i]) s.beta[i] = 0.0;
        return s;
    }

    void check_shape() const {
        const std::size_t em = static_cast<std::size_t>(iters) * n_params();
        if (static_cast<int>(beta_bp.size()) != iters || beta_em.size() != em ||
            mask.size() != em)
            throw InvalidParameter("weights: shape mismatch");
    }
};

// Binds trained weights into a ready-to-call EMBP runner. Masked schedule
// entries are zero, so their closed-form updates are never computed.
struct EmbpRunner {
    TrainedWeights weights;

    EmbpResult operator()(std::span<const cplx> y, const ChannelParams& theta0,
                          const Constellation& cst, OpCounters* ops = nullptr) const {
        return embp_run(y, theta0, cst, weights.schedule(), weights.beta_bp, ops);
    }
};

inline EmbpRunner apply_weights(TrainedWeights weights) {
    weights.check_shape();
    return EmbpRunner{std::move(weights)};
}

// ---------------------------------------------------------------------------
// Serialization: versioned human-readable text, 17-significant-digit decimals
// (exact double round-trip).

inline std::string weights_to_string(const TrainedWeights& w) {
    w.check_shape();
    char buf[64];
    std::string s;
    s += "version 1\n";
    s += "T " + std::to_string(w.iters) + "\n";
    s += "L " + std::to_string(w.memory) + "\n";
    s += "beta_bp";
    for (double v : w.beta_bp) {
        std::snprintf(buf, sizeof buf, " %.17g", v);
        s += buf;
    }
    s += "\n";
    for (int t = 0; t < w.iters; ++t) {
        s += "beta_em";
        for (int k = 0; k < w.n_params(); ++k) {
            std::snprintf(buf, sizeof buf, " %.17g", w.beta_em[t * w.n_params() + k]);
            s += buf;
        }
        s += "\n";
    }
    for (int t = 0; t < w.iters; ++t) {
        s += "mask";
        for (int k = 0; k < w.n_params(); ++k)
            s += w.mask[t * w.n_params() + k] ? " 1" : " 0";
        s += "\n";
    }
    return s;
}

inline TrainedWeights weights_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string key;
    int version = 0;
    TrainedWeights w;
    auto expect = [&](const char* want) {
        if (!(in >> key) || key != want)
            throw InvalidParameter(std::string("weights file: expected '") + want + "'");
    };
    expect("version");
    in >> version;
    if (version != 1) throw InvalidParameter("weights file: unsupported version");
    expect("T");
    in >> w.iters;
    expect("L");
    in >> w.memory;
    if (w.iters < 1 || w.memory < 0) throw InvalidParameter("weights file: bad shape");
    w.beta_bp.resize(w.iters);
    expect("beta_bp");
    for (double& v : w.beta_bp) in >> v;
    w.beta_em.resize(static_cast<std::size_t>(w.iters) * w.n_params());
    for (int t = 0; t < w.iters; ++t) {
        expect("beta_em");
        for (int k = 0; k < w.n_params(); ++k) in >> w.beta_em[t * w.n_params() + k];
    }
    w.mask.resize(w.beta_em.size());
    for (int t = 0; t < w.iters; ++t) {
        expect("mask");
        for (int k = 0; k < w.n_params(); ++k) {
            int b = 0;
            in >> b;
            w.mask[t * w.n_params() + k] = b ? 1 : 0;
        }
    }
    if (!in) throw InvalidParameter("weights file: truncated");
    w.check_shape();
    return w;
}

inline void save_weights(const std::string& path, const TrainedWeights& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidParameter("cannot open weights file for writing: " + path);
    out << weights_to_string(w);
}

inline TrainedWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidParameter("cannot open weights file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return weights_from_string(buf.str());
}

} // namespace embp
