#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepdose/model.hpp"

namespace deepdose {

// 2 * C_in * k_h * k_w * k_d * C_out * H_out * W_out * D_out. Bias adds
// are not counted.
std::uint64_t conv_flops(const ConvSpec& conv, const Triple& out_extents);
// Weights plus bias.
std::uint64_t conv_params(const ConvSpec& conv);

std::string layer_kind_name(LayerKind kind);

struct FlopsRow {
    std::size_t layer = 0;
    std::string label;
    LayerKind kind = LayerKind::Conv;
    Shape input;
    Shape output;
    std::uint64_t flops = 0;  // convolutions only; everything else is free
    std::uint64_t params = 0;
    std::uint64_t cumulative_flops = 0;
};

struct FlopsReport {
    std::string model;
    std::size_t base_features = 0;
    std::size_t num_down = 0;
    Triple extents{0, 0, 0};
    std::vector<FlopsRow> rows;
    std::uint64_t total_flops = 0;
    std::uint64_t total_params = 0;

    double gflops() const { return static_cast<double>(total_flops) / 1e9; }
};

// One row per layer. ContractError when the extents break the net's
// divisibility contract.
FlopsReport count_flops(const NetworkGraph& net, const Triple& extents);
std::uint64_t count_params(const NetworkGraph& net);

// CSV: layer,label,kind,input_shape,output_shape,flops,params,cumulative_flops
// followed by a total row.
std::string flops_csv(const FlopsReport& report);
// Aligned plain-text table with a config line and totals in G / M.
std::string flops_table(const FlopsReport& report);

// Regular module: conv3d 3x3x3 + IN + ReLU. Decoupled module: axial 3x3x1
// + IN + ReLU then slice 1x1x3 + IN + ReLU. With `downsample` both halve
// every extent (stride 2 in the regular conv, split across axial/slice in
// the decoupled one).
struct ModuleFlops {
    std::uint64_t regular = 0;
    std::uint64_t decoupled = 0;
};
ModuleFlops module_flops(std::size_t channels, const Triple& extents, bool downsample);

struct BenchConfig {
    Triple extents{32, 32, 16};
    std::size_t channels = 64;
    std::size_t repeats = 100;
    std::size_t warmup = 2;
    bool downsample = true;
    std::uint64_t seed = 1;
};

struct BenchRow {
    std::string module;  // "regular" or "decoupled"
    double median_ms = 0;
    double iqr_ms = 0;
    std::size_t repeats = 0;
    std::size_t workers = 1;
    std::vector<double> samples_ms;
};

// Forward-only timings of the two modules on the same random input; the
// two are run alternately so slow drift hits both. repeats < 10 is an
// InvalidConfig.
std::vector<BenchRow> bench_modules(const BenchConfig& cfg);

// module,median_ms,iqr_ms,repeats,workers
std::string bench_csv(const std::vector<BenchRow>& rows);

// Linear-interpolation quantile of unsorted samples, q in [0, 1].
double quantile(std::vector<double> samples, double q);

}  // namespace deepdose
