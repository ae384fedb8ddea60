#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "deepdose/ops.hpp"
#include "deepdose/tensor.hpp"

namespace deepdose {

using VoxelSize = std::array<float, 3>;

inline constexpr VoxelSize kDefaultVoxelSize{2.34f, 2.34f, 3.00f};

// Dose grid in Gy, row-major (H, W, D) with D fastest. histories == 0
// marks a clean (noise-free) map.
struct DoseVolume {
    Triple extents{0, 0, 0};
    VoxelSize voxel_size = kDefaultVoxelSize;
    std::uint64_t histories = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;

    static DoseVolume zeros(const Triple& extents);
    std::size_t size() const { return extents[0] * extents[1] * extents[2]; }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * extents[1] + j) * extents[2] + k;
    }
    bool clean() const { return histories == 0; }

    // [1, 1, H, W, D] tensor of values / scale.
    Tensor to_tensor(double scale = 1.0) const;
};

// Builds a volume from a [1, 1, H, W, D] tensor, multiplying by scale.
DoseVolume volume_from_tensor(const Tensor& t, double scale, const VoxelSize& voxel_size);

struct StructureMask {
    Triple extents{0, 0, 0};
    VoxelSize voxel_size = kDefaultVoxelSize;
    std::vector<std::uint8_t> values;

    std::size_t count() const;
};

// DVOL / DMSK layout, little-endian:
//   magic | u32 version=1 | u32 H | u32 W | u32 D | 3 x f32 voxel size (mm) |
//   u64 histories (0 = clean) | u64 seed | H*W*D x f32 values.
// Masks share the header (histories = seed = 0) and store 0/1 as f32.
inline constexpr std::uint32_t kVolumeVersion = 1;

std::string serialize_volume(const DoseVolume& v);
DoseVolume parse_volume(std::string_view bytes);
void save_volume(const DoseVolume& v, const std::string& path);
DoseVolume load_volume(const std::string& path);

std::string serialize_mask(const StructureMask& m);
StructureMask parse_mask(std::string_view bytes);
void save_mask(const StructureMask& m, const std::string& path);
StructureMask load_mask(const std::string& path);

// Throws ContractError unless every extent matches.
void check_same_extents(const Triple& a, const Triple& b, const std::string& what);

// "32x32x16" -> {32, 32, 16}; InvalidConfig on anything else.
Triple parse_extents(const std::string& text);
std::string format_extents(const Triple& e);

}  // namespace deepdose
