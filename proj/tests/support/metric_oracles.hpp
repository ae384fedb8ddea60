#pragma once

// Brute-force versions of the dose metrics: no sorting, no shared helpers
// with the library, one pass per quantity.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "deepdose/volume.hpp"

namespace deepdose::testing {

inline double oracle_mse(const DoseVolume& a, const DoseVolume& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return s / static_cast<double>(a.values.size());
}

// Fraction of masked voxels whose dose (floored at zero) reaches each edge.
inline std::vector<double> oracle_dvh(const DoseVolume& v, const StructureMask& m, std::size_t bins, double max_dose) {
    std::vector<double> h;
    for (std::size_t b = 0; b < bins; ++b) {
        const double edge = static_cast<double>(b) * (max_dose / static_cast<double>(bins));
        std::size_t hit = 0, total = 0;
        for (std::size_t i = 0; i < v.values.size(); ++i) {
            if (!m.values[i]) continue;
            ++total;
            if (std::max(v.values[i], 0.0) >= edge) ++hit;
        }
        h.push_back(static_cast<double>(hit) / static_cast<double>(total));
    }
    return h;
}

inline double oracle_dvh_error(const std::vector<double>& a, const std::vector<double>& b, double width) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]) * width;
    return s;
}

// Largest candidate dose d with count(dose >= d) * 100 >= percent * n.
inline double oracle_d_number(const DoseVolume& v, const StructureMask& m, unsigned percent) {
    std::size_t n = 0;
    for (std::uint8_t x : m.values) n += x;
    double best = -1e300;
    for (std::size_t c = 0; c < v.values.size(); ++c) {
        if (!m.values[c]) continue;
        std::size_t covered = 0;
        for (std::size_t i = 0; i < v.values.size(); ++i) {
            if (m.values[i] && v.values[i] >= v.values[c]) ++covered;
        }
        if (covered * 100 >= percent * n) best = std::max(best, v.values[c]);
    }
    return best;
}

inline double oracle_dice(const DoseVolume& a, const DoseVolume& b, double threshold) {
    std::size_t na = 0, nb = 0, both = 0;
    for (double x : a.values) na += x >= threshold;
    for (double x : b.values) nb += x >= threshold;
    for (std::size_t i = 0; i < a.values.size(); ++i) both += a.values[i] >= threshold && b.values[i] >= threshold;
    if (na == 0 && nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

}  // namespace deepdose::testing
