#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "deepdose/volume.hpp"

namespace deepdose {

inline constexpr std::size_t kDvhBins = 100;
inline constexpr double kDvhMaxDose = 1.3;
inline constexpr std::array<unsigned, 6> kIsodoseLevels{10, 30, 50, 70, 80, 90};

// Mean of squared voxel differences over the whole grid, or over `region`
// when given.
double mse(const DoseVolume& a, const DoseVolume& b, const StructureMask* region = nullptr);

// Cumulative DVH sampled at the lower edge of each bin:
// fraction[i] = share of masked voxels with dose >= edges[i].
struct DVHCurve {
    std::string structure;
    double bin_width = 0;
    std::vector<double> edges;
    std::vector<double> fraction;
};

DVHCurve dvh(const DoseVolume& v, const StructureMask& mask, std::size_t bins = kDvhBins,
             double max_dose = kDvhMaxDose, const std::string& structure = "");

// Area between two curves: sum |h_a - h_b| * bin width.
double dvh_error(const DVHCurve& a, const DVHCurve& b);

// D#: largest dose d such that at least percent% of the masked voxels get
// >= d. Read off the ascending sort with no interpolation.
double d_number(const DoseVolume& v, const StructureMask& mask, unsigned percent);

// Dice of {a >= t} and {b >= t}, t = level_percent / 100 * reference_dose.
// Both empty scores 1, exactly one empty scores 0.
double isodose_dice(const DoseVolume& a, const DoseVolume& b, double level_percent, double reference_dose);

struct MetricsReport {
    double reference_d95 = 0;  // ground-truth PTV D95 in Gy, the normalizer
    double mse = 0;
    double mse_body = 0;
    double dvh_error_ptv = 0;
    double dvh_error_body = 0;
    double d95 = 0, d98 = 0, d99 = 0;
    double d95_error = 0, d98_error = 0, d99_error = 0;  // |D# - D#_gt|
    std::array<double, kIsodoseLevels.size()> dice{};
    double dice_mean = 0;
};

// Normalizes both maps by the ground-truth PTV D95, then computes every
// metric; isodose levels are relative to 1 (the normalized D95).
MetricsReport evaluate(const DoseVolume& denoised, const DoseVolume& ground_truth, const StructureMask& ptv,
                       const StructureMask& body);

// One row per evaluated map. Header:
// case,realization,method,reference_d95_gy,mse,mse_body,dvh_error_ptv,
// dvh_error_body,d95,d98,d99,d95_error,d98_error,d99_error,
// dice10,dice30,dice50,dice70,dice80,dice90,dice_mean
struct MetricsRow {
    std::string case_name;
    std::size_t realization = 0;
    std::string method;
    MetricsReport report;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

// mean(std) per method, columns MSE | DVH error | D95 | D98 | D99 | Dice.
std::string metrics_summary(const std::vector<MetricsRow>& rows);

}  // namespace deepdose
