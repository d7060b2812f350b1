#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "embp/errors.hpp"

namespace embp {

using cplx = std::complex<double>;

// Symbol alphabet with per-point bit labels (Gray-labeled for QPSK).
struct Constellation {
    std::string name;
    std::vector<cplx> points;
    std::vector<std::vector<std::uint8_t>> bit_labels; // one label of length m per point

    int size() const { return static_cast<int>(points.size()); }
    int bits_per_symbol() const { return static_cast<int>(bit_labels.front().size()); }

    // Sum of |c|^2 over the alphabet (enters the snr definition).
    double total_energy() const {
        double e = 0.0;
        for (const cplx& c : points) e += std::norm(c);
        return e;
    }
    double mean_energy() const { return total_energy() / size(); }

    static const Constellation& bpsk() {
        static const Constellation c{"BPSK", {{1.0, 0.0}, {-1.0, 0.0}}, {{0}, {1}}};
        return c;
    }

    static const Constellation& qpsk() {
        constexpr double a = 0.70710678118654752440; // 1/sqrt(2)
        static const Constellation c{"QPSK",
                                     {{a, a}, {-a, a}, {-a, -a}, {a, -a}},
                                     {{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
        return c;
    }

    static const Constellation& by_name(const std::string& name) {
        if (name == "BPSK" || name == "bpsk") return bpsk();
        if (name == "QPSK" || name == "qpsk") return qpsk();
        throw InvalidParameter("unknown constellation: " + name);
    }
};

} // namespace embp
