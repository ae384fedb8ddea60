#include "deepdose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "deepdose/error.hpp"
#include "deepdose/keyvalue.hpp"

namespace deepdose {

namespace {

void check_mask(const DoseVolume& v, const StructureMask& m, const std::string& what) {
    check_same_extents(v.extents, m.extents, what);
    if (m.values.size() != v.values.size()) throw ContractError(what + ": mask size mismatch");
    if (m.count() == 0) throw ContractError(what + ": empty mask");
}

DoseVolume scaled(const DoseVolume& v, double factor) {
    DoseVolume out = v;
    for (double& x : out.values) x /= factor;
    return out;
}

struct Stat {
    double mean = 0;
    double std = 0;
};

Stat stat(const std::vector<double>& xs) {
    Stat s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(s.std / static_cast<double>(xs.size() - 1));
    }
    return s;
}

std::string mean_std(const Stat& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g(%.2g)", s.mean, s.std);
    return buf;
}

}  // namespace

double mse(const DoseVolume& a, const DoseVolume& b, const StructureMask* region) {
    check_same_extents(a.extents, b.extents, "mse");
    if (region) check_mask(a, *region, "mse");
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (region && !region->values[i]) continue;
        const double d = a.values[i] - b.values[i];
        s += d * d;
        ++n;
    }
    return s / static_cast<double>(n);
}

DVHCurve dvh(const DoseVolume& v, const StructureMask& mask, std::size_t bins, double max_dose,
             const std::string& structure) {
    check_mask(v, mask, "dvh");
    if (bins == 0 || !(max_dose > 0)) throw ContractError("dvh: needs bins >= 1 and max_dose > 0");
    DVHCurve c;
    c.structure = structure;
    c.bin_width = max_dose / static_cast<double>(bins);
    std::vector<double> doses;
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        if (mask.values[i]) doses.push_back(v.values[i]);
    }
    std::sort(doses.begin(), doses.end());
    const double n = static_cast<double>(doses.size());
    for (std::size_t i = 0; i < bins; ++i) {
        const double edge = static_cast<double>(i) * c.bin_width;
        const auto first = std::lower_bound(doses.begin(), doses.end(), edge);
        c.edges.push_back(edge);
        c.fraction.push_back(static_cast<double>(doses.end() - first) / n);
    }
    // Dose below zero (noise) still counts as receiving >= 0.
    c.fraction[0] = 1.0;
    return c;
}

double dvh_error(const DVHCurve& a, const DVHCurve& b) {
    if (a.edges != b.edges || a.bin_width != b.bin_width || a.fraction.size() != b.fraction.size()) {
        throw ContractError("dvh_error: curves use different binning");
    }
    double s = 0;
    for (std::size_t i = 0; i < a.fraction.size(); ++i) s += std::abs(a.fraction[i] - b.fraction[i]) * a.bin_width;
    return s;
}

double d_number(const DoseVolume& v, const StructureMask& mask, unsigned percent) {
    check_mask(v, mask, "d_number");
    if (percent == 0 || percent > 100) throw ContractError("d_number: percent must be in [1, 100]");
    std::vector<double> doses;
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        if (mask.values[i]) doses.push_back(v.values[i]);
    }
    std::sort(doses.begin(), doses.end());
    const std::size_t n = doses.size();
    const std::size_t k = (percent * n + 99) / 100;  // voxels that must be covered
    return doses[n - k];
}

double isodose_dice(const DoseVolume& a, const DoseVolume& b, double level_percent, double reference_dose) {
    check_same_extents(a.extents, b.extents, "isodose_dice");
    if (!(reference_dose > 0)) throw ContractError("isodose_dice: reference dose must be > 0");
    const double t = level_percent / 100.0 * reference_dose;
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const bool ia = a.values[i] >= t;
        const bool ib = b.values[i] >= t;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

MetricsReport evaluate(const DoseVolume& denoised, const DoseVolume& ground_truth, const StructureMask& ptv,
                       const StructureMask& body) {
    check_same_extents(denoised.extents, ground_truth.extents, "evaluate");
    check_mask(ground_truth, ptv, "evaluate (ptv)");
    check_mask(ground_truth, body, "evaluate (body)");
    MetricsReport r;
    r.reference_d95 = d_number(ground_truth, ptv, 95);
    if (!(r.reference_d95 > 0)) throw ContractError("evaluate: ground-truth D95 is not positive");
    const DoseVolume x = scaled(denoised, r.reference_d95);
    const DoseVolume g = scaled(ground_truth, r.reference_d95);

    r.mse = mse(x, g);
    r.mse_body = mse(x, g, &body);
    r.dvh_error_ptv = dvh_error(dvh(x, ptv, kDvhBins, kDvhMaxDose, "ptv"), dvh(g, ptv, kDvhBins, kDvhMaxDose, "ptv"));
    r.dvh_error_body =
        dvh_error(dvh(x, body, kDvhBins, kDvhMaxDose, "body"), dvh(g, body, kDvhBins, kDvhMaxDose, "body"));
    r.d95 = d_number(x, ptv, 95);
    r.d98 = d_number(x, ptv, 98);
    r.d99 = d_number(x, ptv, 99);
    r.d95_error = std::abs(r.d95 - d_number(g, ptv, 95));
    r.d98_error = std::abs(r.d98 - d_number(g, ptv, 98));
    r.d99_error = std::abs(r.d99 - d_number(g, ptv, 99));
    for (std::size_t i = 0; i < kIsodoseLevels.size(); ++i) {
        r.dice[i] = isodose_dice(x, g, kIsodoseLevels[i], 1.0);
        r.dice_mean += r.dice[i] / static_cast<double>(kIsodoseLevels.size());
    }
    return r;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out =
        "case,realization,method,reference_d95_gy,mse,mse_body,dvh_error_ptv,dvh_error_body,d95,d98,d99,"
        "d95_error,d98_error,d99_error";
    for (unsigned l : kIsodoseLevels) out += ",dice" + std::to_string(l);
    out += ",dice_mean\n";
    for (const MetricsRow& row : rows) {
        const MetricsReport& r = row.report;
        out += row.case_name + "," + std::to_string(row.realization) + "," + row.method;
        for (double v : {r.reference_d95, r.mse, r.mse_body, r.dvh_error_ptv, r.dvh_error_body, r.d95, r.d98, r.d99,
                         r.d95_error, r.d98_error, r.d99_error}) {
            out += "," + format_double(v);
        }
        for (double d : r.dice) out += "," + format_double(d);
        out += "," + format_double(r.dice_mean) + "\n";
    }
    return out;
}

std::string metrics_summary(const std::vector<MetricsRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const MetricsReport*>> by_method;
    for (const MetricsRow& row : rows) {
        if (!by_method.count(row.method)) order.push_back(row.method);
        by_method[row.method].push_back(&row.report);
    }
    char line[256];
    std::string out;
    std::snprintf(line, sizeof line, "%-12s %6s %16s %16s %16s %16s %16s %16s\n", "method", "n", "MSE", "DVH error",
                  "D95", "D98", "D99", "Dice");
    out += line;
    for (const std::string& m : order) {
        const auto& reps = by_method[m];
        auto column = [&](auto field) {
            std::vector<double> xs;
            for (const MetricsReport* r : reps) xs.push_back(field(*r));
            return mean_std(stat(xs));
        };
        std::snprintf(line, sizeof line, "%-12s %6zu %16s %16s %16s %16s %16s %16s\n", m.c_str(), reps.size(),
                      column([](const MetricsReport& r) { return r.mse; }).c_str(),
                      column([](const MetricsReport& r) { return r.dvh_error_ptv; }).c_str(),
                      column([](const MetricsReport& r) { return r.d95; }).c_str(),
                      column([](const MetricsReport& r) { return r.d98; }).c_str(),
                      column([](const MetricsReport& r) { return r.d99; }).c_str(),
                      column([](const MetricsReport& r) { return r.dice_mean; }).c_str());
        out += line;
    }
    return out;
}

}  // namespace deepdose
