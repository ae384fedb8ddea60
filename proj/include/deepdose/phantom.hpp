#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepdose/volume.hpp"

namespace deepdose {

using Vec3 = std::array<double, 3>;

// Pencil-ish beam: exponential fall-off with depth along `direction`,
// Gaussian profile across it. Positions are in mm, voxel (i, j, k) sits at
// (i * vh, j * vw, k * vd).
struct Beam {
    Vec3 entry{0, 0, 0};
    Vec3 direction{1, 0, 0};
    double sigma_mm = 10.0;
    double mu_per_mm = 0.004;
    double weight = 1.0;
    // Skin-sparing build-up: the dose is multiplied by 1 - exp(-s / buildup_mm)
    // where s is the path length inside the body. 0 disables it.
    double buildup_mm = 0.0;
};

struct Sphere {
    Vec3 center_voxel{0, 0, 0};
    double radius_mm = 10.0;
};

struct Ellipsoid {
    Vec3 center_voxel{0, 0, 0};
    Vec3 semi_axes_mm{50, 50, 50};
};

struct PhantomSpec {
    Triple extents{32, 32, 16};
    VoxelSize voxel_size = kDefaultVoxelSize;
    std::vector<Beam> beams;
    Sphere ptv;
    Ellipsoid body;
    double prescription_dose = 80.0;
    std::uint64_t seed = 0;
};

// Body-centred ellipse, central spherical target and three coplanar beams
// 120 degrees apart aimed at the target.
PhantomSpec default_phantom(const Triple& extents, std::uint64_t seed = 0);
// Same layout with `beam_count` equally spaced beams; the first angle, beam
// weights and target position are jittered by an RNG seeded with `seed`.
PhantomSpec randomized_phantom(const Triple& extents, std::uint64_t seed, std::size_t beam_count = 3,
                               double buildup_mm = 0.0);

StructureMask ptv_mask(const PhantomSpec& spec);
StructureMask body_mask(const PhantomSpec& spec);

// Beam sum masked to the body and scaled so the PTV mean equals the
// prescription (left unscaled when that mean is zero). Throws InvalidConfig
// for a PTV that is empty or pokes outside the body.
DoseVolume generate_clean(const PhantomSpec& spec);

// Scale of the quantum-noise surrogate: per-voxel std is
// alpha * sqrt(max(x, 0) * reference_dose / histories).
struct NoiseModel {
    double alpha = 120.0;
    double reference_dose = 80.0;
};

// y = x + eps with independent zero-mean Gaussian eps. Voxels with zero
// dose (everything outside the body) stay exactly zero.
DoseVolume add_quantum_noise(const DoseVolume& clean, std::uint64_t histories, std::uint64_t seed,
                             const NoiseModel& model = {});

struct NoisePair {
    DoseVolume input;
    DoseVolume target;
    std::string clean_id;
};

struct DatasetSpec {
    Triple extents{32, 32, 16};
    std::size_t cases = 8;
    std::size_t realizations = 2;  // noisy maps per case
    std::uint64_t histories = 1000000;
    std::uint64_t seed = 1;
    std::size_t beams = 3;
    double buildup_mm = 12.0;  // skin sparing on every training beam
    NoiseModel noise;
};

struct PhantomCase {
    std::string name;
    PhantomSpec spec;
    DoseVolume clean;
    std::vector<DoseVolume> noisy;
    StructureMask ptv;
    StructureMask body;

    NoisePair pair(std::size_t a, std::size_t b) const;
};

// Case `index` uses phantom seed (seed ^ index); realization r draws its
// noise from a seed mixed from that and r.
std::uint64_t case_seed(std::uint64_t dataset_seed, std::size_t index);
std::uint64_t realization_seed(std::uint64_t case_seed, std::size_t realization);

PhantomCase make_case(const DatasetSpec& spec, std::size_t index);
// Realization r of case c under the dataset's noise model. Indices at or past
// spec.realizations give fresh maps never written to disk (evaluation).
DoseVolume noisy_realization(const DatasetSpec& spec, const PhantomCase& c, std::size_t r);
std::vector<PhantomCase> make_dataset(const DatasetSpec& spec);

// On-disk layout under `dir`:
//   dataset.txt                 key=value summary plus one case=<name> line per case
//   case_000/clean.dvol, noisy_00.dvol, ..., ptv.dmsk, body.dmsk, manifest.txt
// Returns the case directory names.
std::vector<std::string> write_dataset(const DatasetSpec& spec, const std::string& dir);
void write_case(const PhantomCase& c, const std::string& case_dir);

PhantomCase load_case(const std::string& case_dir);
// Parses dir/dataset.txt back into the DatasetSpec that wrote it.
DatasetSpec load_dataset_spec(const std::string& dir);
std::vector<PhantomCase> load_dataset(const std::string& dir);

}  // namespace deepdose
