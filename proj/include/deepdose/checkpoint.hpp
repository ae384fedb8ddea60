#pragma once

#include <string>

#include "deepdose/model.hpp"

namespace deepdose {

// DDPK layout, all little-endian:
//   "DDPK" | u32 version=1 | u64 seed | u32 model tag | u32 base_features |
//   u32 num_down | per parameterized layer: u32 layer id, u64 count,
//   count x f64 (conv: weights then bias; norm: scale then shift).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const NetworkGraph& net);
NetworkGraph parse_checkpoint(std::string_view bytes);

void save_checkpoint(const NetworkGraph& net, const std::string& path);
NetworkGraph load_checkpoint(const std::string& path);

// Exact file size for a network with this layer structure.
std::size_t checkpoint_size(const NetworkGraph& net);

}  // namespace deepdose
