#pragma once

#include <array>
#include <cstddef>

#include "deepdose/tensor.hpp"

namespace deepdose {

// Per spatial dimension triple in (H, W, D) order.
using Triple = std::array<std::size_t, 3>;

// One convolution layer. Weights are stored output-major:
// [c_out, c_in, k_h, k_w, k_d]; bias is [c_out].
struct ConvSpec {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    Triple kernel{1, 1, 1};
    Triple stride{1, 1, 1};
    Tensor weights;
    Tensor bias;

    Shape weight_shape() const { return {c_out, c_in, kernel[0], kernel[1], kernel[2]}; }
    std::size_t weight_count() const { return c_out * c_in * kernel[0] * kernel[1] * kernel[2]; }
    // "Same" padding, (k - 1) / 2 per dimension.
    Triple padding() const { return {(kernel[0] - 1) / 2, (kernel[1] - 1) / 2, (kernel[2] - 1) / 2}; }
    Triple output_extents(const Triple& in) const;
    // Throws InvalidShape for even kernels > 1 or zero extents/strides.
    void validate() const;
};

ConvSpec make_conv(std::size_t c_in, std::size_t c_out, Triple kernel, Triple stride);
// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.
void init_conv(ConvSpec& spec, Rng& rng);

ConvSpec axial_conv(std::size_t c_in, std::size_t c_out, bool downsample);
ConvSpec slice_conv(std::size_t c_in, std::size_t c_out, bool downsample);
ConvSpec regular_conv(std::size_t c_in, std::size_t c_out, bool downsample);

// [B, C, H, W, D] -> [B, 8C, H/2, W/2, D/2]. Sub-volume x[i::2, j::2, k::2]
// of input channel c lands in output channel 8c + 4k + 2j + i.
Tensor voxel_unshuffle(const Tensor& x);
// Exact inverse of voxel_unshuffle.
Tensor voxel_shuffle(const Tensor& x);

// Cross-correlation with "same" zero padding and the ConvSpec strides.
Tensor conv3d(const Tensor& x, const ConvSpec& spec);
// 3x3x1 kernel over the axial plane.
Tensor conv_axial(const Tensor& x, const ConvSpec& spec);
// 1x1x3 kernel along the slice direction.
Tensor conv_slice(const Tensor& x, const ConvSpec& spec);

inline constexpr double kInstanceNormEps = 1e-5;

// Per (batch, channel): scale * (x - mean) / sqrt(var + eps) + shift, with
// the biased variance over the spatial extent. scale/shift are [C].
Tensor instance_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = kInstanceNormEps);

// Trilinear x2 upsampling of the three spatial dims, align_corners = false.
Tensor upsample_trilinear(const Tensor& x);

}  // namespace deepdose
