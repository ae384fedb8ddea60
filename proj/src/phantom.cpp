#include "deepdose/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "deepdose/error.hpp"
#include "deepdose/keyvalue.hpp"
#include "deepdose/parallel.hpp"

namespace deepdose {

namespace {

namespace fs = std::filesystem;

Vec3 position_mm(const Vec3& voxel, const VoxelSize& vs) {
    return {voxel[0] * vs[0], voxel[1] * vs[1], voxel[2] * vs[2]};
}

Vec3 grid_center(const Triple& e) {
    return {(static_cast<double>(e[0]) - 1) / 2, (static_cast<double>(e[1]) - 1) / 2,
            (static_cast<double>(e[2]) - 1) / 2};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Loops over voxel centres in mm.
template <typename Fn>
void for_each_voxel(const Triple& e, const VoxelSize& vs, Fn&& fn) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < e[0]; ++i) {
        for (std::size_t j = 0; j < e[1]; ++j) {
            for (std::size_t k = 0; k < e[2]; ++k) {
                fn(idx++, Vec3{i * double{vs[0]}, j * double{vs[1]}, k * double{vs[2]}});
            }
        }
    }
}

// Coplanar beams in the axial plane aimed at the target centre.
void add_coplanar_beams(PhantomSpec& spec, double first_angle, const std::vector<double>& weights,
                        double buildup_mm = 0.0) {
    const Vec3 target = position_mm(spec.ptv.center_voxel, spec.voxel_size);
    const double standoff = std::max(spec.extents[0] * double{spec.voxel_size[0]},
                                     spec.extents[1] * double{spec.voxel_size[1]});
    const double step = 2 * std::numbers::pi / static_cast<double>(weights.size());
    spec.beams.clear();
    for (std::size_t b = 0; b < weights.size(); ++b) {
        const double a = first_angle + step * static_cast<double>(b);
        Beam beam;
        beam.direction = {std::cos(a), std::sin(a), 0.0};
        for (int d = 0; d < 3; ++d) beam.entry[d] = target[d] - standoff * beam.direction[d];
        beam.sigma_mm = 0.7 * spec.ptv.radius_mm;
        beam.mu_per_mm = 0.004;
        beam.weight = weights[b];
        beam.buildup_mm = buildup_mm;
        spec.beams.push_back(beam);
    }
}

PhantomSpec base_layout(const Triple& extents, std::uint64_t seed) {
    if (extents[0] == 0 || extents[1] == 0 || extents[2] == 0) throw InvalidConfig("phantom extents must be nonzero");
    PhantomSpec spec;
    spec.extents = extents;
    spec.seed = seed;
    const VoxelSize& vs = spec.voxel_size;
    spec.body.center_voxel = grid_center(extents);
    spec.body.semi_axes_mm = {0.46 * extents[0] * vs[0], 0.40 * extents[1] * vs[1], 1.0 * extents[2] * vs[2]};
    spec.ptv.center_voxel = grid_center(extents);
    spec.ptv.radius_mm = 0.18 * std::min(extents[0] * double{vs[0]}, extents[1] * double{vs[1]});
    return spec;
}

void validate(const PhantomSpec& spec) {
    if (spec.extents[0] == 0 || spec.extents[1] == 0 || spec.extents[2] == 0) {
        throw InvalidConfig("phantom extents must be nonzero");
    }
    for (float s : spec.voxel_size) {
        if (!(s > 0)) throw InvalidConfig("voxel size must be positive");
    }
    if (!(spec.prescription_dose > 0)) throw InvalidConfig("prescription dose must be positive");
    if (!(spec.ptv.radius_mm > 0)) throw InvalidConfig("PTV radius must be positive");
    for (double a : spec.body.semi_axes_mm) {
        if (!(a > 0)) throw InvalidConfig("body semi-axes must be positive");
    }
    for (const Beam& b : spec.beams) {
        if (!(b.sigma_mm > 0) || !(b.mu_per_mm >= 0) || !(b.weight >= 0) || dot(b.direction, b.direction) == 0) {
            throw InvalidConfig("beam needs sigma > 0, mu >= 0, weight >= 0 and a nonzero direction");
        }
    }
}

// Distance from p (inside the body) back along -u to the body surface.
double path_inside_body(const PhantomSpec& spec, const Vec3& p, const Vec3& u) {
    const Vec3 c = position_mm(spec.body.center_voxel, spec.voxel_size);
    const Vec3& a = spec.body.semi_axes_mm;
    // |(p - s u - c) / a|^2 = 1  ->  A s^2 - 2 B s + C = 0
    double A = 0, B = 0, C = -1;
    for (int d = 0; d < 3; ++d) {
        const double q = (p[d] - c[d]) / a[d];
        const double v = u[d] / a[d];
        A += v * v;
        B += q * v;
        C += q * q;
    }
    const double disc = std::max(0.0, B * B - A * C);
    return std::max(0.0, (B + std::sqrt(disc)) / A);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::string case_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", index);
    return buf;
}

std::string noisy_name(std::size_t r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "noisy_%02zu.dvol", r);
    return buf;
}

}  // namespace

PhantomSpec default_phantom(const Triple& extents, std::uint64_t seed) {
    PhantomSpec spec = base_layout(extents, seed);
    add_coplanar_beams(spec, std::numbers::pi / 2, {1.0, 1.0, 1.0});
    return spec;
}

PhantomSpec randomized_phantom(const Triple& extents, std::uint64_t seed, std::size_t beam_count,
                               double buildup_mm) {
    if (beam_count == 0) throw InvalidConfig("randomized phantom needs at least one beam");
    PhantomSpec spec = base_layout(extents, seed);
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    spec.ptv.center_voxel[0] += 0.08 * extents[0] * u(rng);
    spec.ptv.center_voxel[1] += 0.08 * extents[1] * u(rng);
    spec.ptv.center_voxel[2] += 0.05 * extents[2] * u(rng);
    spec.ptv.radius_mm *= 1.0 + 0.15 * u(rng);
    const double first = 2 * std::numbers::pi / static_cast<double>(beam_count) * (0.5 + 0.5 * u(rng));
    std::vector<double> weights(beam_count);
    for (double& w : weights) w = 1.0 + 0.3 * u(rng);
    add_coplanar_beams(spec, first, weights, buildup_mm);
    return spec;
}

StructureMask ptv_mask(const PhantomSpec& spec) {
    StructureMask m{spec.extents, spec.voxel_size, std::vector<std::uint8_t>(spec.extents[0] * spec.extents[1] * spec.extents[2])};
    const Vec3 c = position_mm(spec.ptv.center_voxel, spec.voxel_size);
    const double r2 = spec.ptv.radius_mm * spec.ptv.radius_mm;
    for_each_voxel(spec.extents, spec.voxel_size, [&](std::size_t idx, const Vec3& p) {
        const Vec3 d{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
        m.values[idx] = dot(d, d) <= r2 ? 1 : 0;
    });
    return m;
}

StructureMask body_mask(const PhantomSpec& spec) {
    StructureMask m{spec.extents, spec.voxel_size, std::vector<std::uint8_t>(spec.extents[0] * spec.extents[1] * spec.extents[2])};
    const Vec3 c = position_mm(spec.body.center_voxel, spec.voxel_size);
    const Vec3& a = spec.body.semi_axes_mm;
    for_each_voxel(spec.extents, spec.voxel_size, [&](std::size_t idx, const Vec3& p) {
        double s = 0;
        for (int d = 0; d < 3; ++d) s += (p[d] - c[d]) * (p[d] - c[d]) / (a[d] * a[d]);
        m.values[idx] = s <= 1.0 ? 1 : 0;
    });
    return m;
}

DoseVolume generate_clean(const PhantomSpec& spec) {
    validate(spec);
    const StructureMask ptv = ptv_mask(spec);
    const StructureMask body = body_mask(spec);
    std::size_t ptv_count = 0;
    for (std::size_t i = 0; i < ptv.values.size(); ++i) {
        if (!ptv.values[i]) continue;
        ++ptv_count;
        if (!body.values[i]) throw InvalidConfig("PTV extends outside the body");
    }
    if (ptv_count == 0) throw InvalidConfig("PTV covers no voxel");

    std::vector<Beam> beams = spec.beams;
    for (Beam& b : beams) {
        const double n = std::sqrt(dot(b.direction, b.direction));
        for (double& d : b.direction) d /= n;
    }

    DoseVolume v = DoseVolume::zeros(spec.extents);
    v.voxel_size = spec.voxel_size;
    v.seed = spec.seed;
    for_each_voxel(spec.extents, spec.voxel_size, [&](std::size_t idx, const Vec3& p) {
        if (!body.values[idx]) return;
        double dose = 0;
        for (const Beam& b : beams) {
            const Vec3 rel{p[0] - b.entry[0], p[1] - b.entry[1], p[2] - b.entry[2]};
            const double depth = dot(rel, b.direction);
            if (depth < 0) continue;
            const double r2 = std::max(0.0, dot(rel, rel) - depth * depth);
            double d = b.weight * std::exp(-b.mu_per_mm * depth) * std::exp(-r2 / (2 * b.sigma_mm * b.sigma_mm));
            if (b.buildup_mm > 0) d *= 1.0 - std::exp(-path_inside_body(spec, p, b.direction) / b.buildup_mm);
            dose += d;
        }
        v.values[idx] = dose;
    });

    double ptv_sum = 0;
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        if (ptv.values[i]) ptv_sum += v.values[i];
    }
    const double ptv_mean = ptv_sum / static_cast<double>(ptv_count);
    if (ptv_mean > 0) {
        const double s = spec.prescription_dose / ptv_mean;
        for (double& x : v.values) x *= s;
    }
    return v;
}

DoseVolume add_quantum_noise(const DoseVolume& clean, std::uint64_t histories, std::uint64_t seed,
                             const NoiseModel& model) {
    if (histories == 0) throw ContractError("add_quantum_noise: histories must be >= 1");
    if (!clean.clean()) throw ContractError("add_quantum_noise: input already carries noise");
    if (!(model.alpha >= 0) || !(model.reference_dose > 0)) throw InvalidConfig("noise model needs alpha >= 0, reference > 0");
    DoseVolume y = clean;
    y.histories = histories;
    y.seed = seed;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double k = model.alpha * std::sqrt(model.reference_dose / static_cast<double>(histories));
    for (double& x : y.values) {
        if (x <= 0) continue;
        x += k * std::sqrt(x) * normal(rng);
    }
    return y;
}

NoisePair PhantomCase::pair(std::size_t a, std::size_t b) const {
    if (a >= noisy.size() || b >= noisy.size() || a == b) {
        throw ContractError(name + ": pair needs two distinct realizations out of " + std::to_string(noisy.size()));
    }
    return {noisy[a], noisy[b], name};
}

std::uint64_t case_seed(std::uint64_t dataset_seed, std::size_t index) { return dataset_seed ^ index; }

std::uint64_t realization_seed(std::uint64_t case_seed, std::size_t realization) {
    return splitmix64(splitmix64(case_seed) + realization);
}

PhantomCase make_case(const DatasetSpec& spec, std::size_t index) {
    PhantomCase c;
    c.name = case_name(index);
    const std::uint64_t s = case_seed(spec.seed, index);
    c.spec = randomized_phantom(spec.extents, s, spec.beams, spec.buildup_mm);
    c.clean = generate_clean(c.spec);
    c.ptv = ptv_mask(c.spec);
    c.body = body_mask(c.spec);
    for (std::size_t r = 0; r < spec.realizations; ++r) c.noisy.push_back(noisy_realization(spec, c, r));
    return c;
}

DoseVolume noisy_realization(const DatasetSpec& spec, const PhantomCase& c, std::size_t r) {
    NoiseModel noise = spec.noise;
    noise.reference_dose = c.spec.prescription_dose;
    return add_quantum_noise(c.clean, spec.histories, realization_seed(c.spec.seed, r), noise);
}

std::vector<PhantomCase> make_dataset(const DatasetSpec& spec) {
    if (spec.cases == 0) throw InvalidConfig("dataset needs at least one case");
    std::vector<PhantomCase> cases(spec.cases);
    parallel_for(spec.cases, [&](std::size_t i) { cases[i] = make_case(spec, i); });
    return cases;
}

void write_case(const PhantomCase& c, const std::string& case_dir) {
    const fs::path dir(case_dir);
    save_volume(c.clean, (dir / "clean.dvol").string());
    KeyValues manifest{{"name", c.name},
                       {"extents", format_extents(c.clean.extents)},
                       {"seed", std::to_string(c.spec.seed)},
                       {"prescription_dose", std::to_string(c.spec.prescription_dose)},
                       {"clean", "clean.dvol"}};
    for (std::size_t r = 0; r < c.noisy.size(); ++r) {
        save_volume(c.noisy[r], (dir / noisy_name(r)).string());
        manifest.emplace_back("noisy", noisy_name(r));
    }
    save_mask(c.ptv, (dir / "ptv.dmsk").string());
    save_mask(c.body, (dir / "body.dmsk").string());
    manifest.emplace_back("ptv", "ptv.dmsk");
    manifest.emplace_back("body", "body.dmsk");
    detail::write_file_atomic((dir / "manifest.txt").string(), format_key_values(manifest));
}

std::vector<std::string> write_dataset(const DatasetSpec& spec, const std::string& dir) {
    if (spec.cases == 0) throw InvalidConfig("dataset needs at least one case");
    std::vector<std::string> names(spec.cases);
    parallel_for(spec.cases, [&](std::size_t i) {
        const PhantomCase c = make_case(spec, i);
        write_case(c, (fs::path(dir) / c.name).string());
        names[i] = c.name;
    });
    KeyValues index{{"extents", format_extents(spec.extents)},
                    {"cases", std::to_string(spec.cases)},
                    {"realizations", std::to_string(spec.realizations)},
                    {"histories", std::to_string(spec.histories)},
                    {"seed", std::to_string(spec.seed)},
                    {"beams", std::to_string(spec.beams)},
                    {"buildup_mm", format_double(spec.buildup_mm)},
                    {"noise_alpha", format_double(spec.noise.alpha)}};
    for (const std::string& n : names) index.emplace_back("case", n);
    detail::write_file_atomic((fs::path(dir) / "dataset.txt").string(), format_key_values(index));
    return names;
}

PhantomCase load_case(const std::string& case_dir) {
    const fs::path dir(case_dir);
    const std::string what = (dir / "manifest.txt").string();
    const KeyValues kv = parse_key_values(detail::read_file(what), what);
    PhantomCase c;
    c.name = require_value(kv, "name", what);
    c.clean = load_volume((dir / require_value(kv, "clean", what)).string());
    for (const std::string& n : all_values(kv, "noisy")) {
        c.noisy.push_back(load_volume((dir / n).string()));
        check_same_extents(c.noisy.back().extents, c.clean.extents, what);
    }
    c.ptv = load_mask((dir / require_value(kv, "ptv", what)).string());
    c.body = load_mask((dir / require_value(kv, "body", what)).string());
    check_same_extents(c.ptv.extents, c.clean.extents, what);
    check_same_extents(c.body.extents, c.clean.extents, what);
    c.spec.extents = c.clean.extents;
    c.spec.voxel_size = c.clean.voxel_size;
    c.spec.seed = c.clean.seed;
    if (const std::string* p = find_value(kv, "prescription_dose")) c.spec.prescription_dose = std::stod(*p);
    return c;
}

DatasetSpec load_dataset_spec(const std::string& dir) {
    const std::string what = (fs::path(dir) / "dataset.txt").string();
    const KeyValues kv = parse_key_values(detail::read_file(what), what);
    DatasetSpec spec;
    try {
        spec.extents = parse_extents(require_value(kv, "extents", what));
        spec.cases = parse_uint("cases", require_value(kv, "cases", what));
        spec.realizations = parse_uint("realizations", require_value(kv, "realizations", what));
        spec.histories = parse_uint("histories", require_value(kv, "histories", what));
        spec.seed = parse_uint("seed", require_value(kv, "seed", what));
        if (const std::string* b = find_value(kv, "beams")) spec.beams = parse_uint("beams", *b);
        if (const std::string* b = find_value(kv, "buildup_mm")) spec.buildup_mm = parse_double("buildup_mm", *b);
        spec.noise.alpha = parse_double("noise_alpha", require_value(kv, "noise_alpha", what));
    } catch (const InvalidConfig& e) {
        throw FormatError(what + ": " + e.what());
    }
    return spec;
}

std::vector<PhantomCase> load_dataset(const std::string& dir) {
    const std::string what = (fs::path(dir) / "dataset.txt").string();
    const KeyValues kv = parse_key_values(detail::read_file(what), what);
    std::vector<PhantomCase> cases;
    for (const std::string& n : all_values(kv, "case")) cases.push_back(load_case((fs::path(dir) / n).string()));
    if (cases.empty()) throw FormatError(what + ": lists no cases");
    return cases;
}

}  // namespace deepdose
