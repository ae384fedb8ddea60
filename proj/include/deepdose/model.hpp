#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepdose/ops.hpp"
#include "deepdose/tensor.hpp"

namespace deepdose {

enum class ModelKind : std::uint32_t { Proposed = 0, UnetBaseline = 1 };

std::string model_name(ModelKind kind);
// Accepts "proposed", "unet" and "unet-baseline".
ModelKind parse_model_kind(const std::string& name);

enum class LayerKind { VoxelUnshuffle, Conv, InstanceNorm, Relu, Upsample, Concat, VoxelShuffle };
enum class ConvFlavor { Regular, Axial, Slice };
enum class Stage { Input, Backbone, Pyramid, Head };

// One node of the layer list. Every layer consumes the previous layer's
// output; a Concat layer additionally appends the output of layer `skip`
// along the channel axis.
struct Layer {
    LayerKind kind = LayerKind::Relu;
    Stage stage = Stage::Input;
    std::string label;
    ConvFlavor flavor = ConvFlavor::Regular;
    ConvSpec conv;             // kind == Conv
    std::size_t channels = 0;  // kind == InstanceNorm
    Tensor scale;              // kind == InstanceNorm, [channels]
    Tensor shift;
    int skip = -1;  // kind == Concat

    bool has_parameters() const { return kind == LayerKind::Conv || kind == LayerKind::InstanceNorm; }
    std::size_t parameter_count() const;
};

// Scaling knob for desk-sized runs. The full-size geometry is
// {64 features, 5 down (proposed) / 6 down (baseline), 256x256x64}.
struct ScaledConfig {
    std::size_t base_features = 64;
    std::size_t num_down = 5;
    Triple input_extents{256, 256, 64};
};

struct NetworkGraph {
    ModelKind kind = ModelKind::Proposed;
    std::size_t base_features = 0;
    std::size_t num_down = 0;
    std::uint64_t seed = 0;
    std::vector<Layer> layers;

    std::string name() const { return model_name(kind); }
    // Every spatial input extent must be a multiple of this.
    std::size_t input_divisor() const;
    bool materialized() const;
    // Trainable tensors in layer order (conv weight, bias; norm scale, shift).
    std::vector<Tensor> parameters() const;
};

// Feature count of resolution level m: base * 2^m, saturating at 8 * base.
std::size_t level_features(std::size_t base_features, std::size_t level);

// Validates extents against the divisibility contract; InvalidConfig otherwise.
void check_input_extents(const NetworkGraph& net, const Triple& extents);

// Layer structure only; call initialize() before forward().
NetworkGraph build_proposed(const ScaledConfig& cfg);
NetworkGraph build_unet_baseline(const ScaledConfig& cfg);
NetworkGraph build_network(ModelKind kind, std::size_t base_features, std::size_t num_down);

// Glorot-uniform conv weights, zero biases, unit norm scale, zero shift.
// The final prediction conv gets zero weights.
void initialize(NetworkGraph& net, std::uint64_t seed);

// x: [1, 1, H, W, D] -> [1, 1, H, W, D].
Tensor forward(const NetworkGraph& net, const Tensor& x);

// Output shape of every layer for a [1, 1, H, W, D] input, without
// touching weights.
std::vector<Shape> infer_shapes(const NetworkGraph& net, const Triple& extents);

// Receptive field, in input voxels per dimension, of one element of the
// deepest backbone feature.
Triple bottleneck_receptive_field(const NetworkGraph& net);

std::size_t count_layers(const NetworkGraph& net, LayerKind kind, Stage stage);

}  // namespace deepdose
