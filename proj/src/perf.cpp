#include "deepdose/perf.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "deepdose/error.hpp"
#include "deepdose/keyvalue.hpp"
#include "deepdose/parallel.hpp"
#include "deepdose/volume.hpp"

namespace deepdose {

std::uint64_t conv_flops(const ConvSpec& conv, const Triple& out_extents) {
    return 2ULL * conv.c_in * conv.kernel[0] * conv.kernel[1] * conv.kernel[2] * conv.c_out * out_extents[0] *
           out_extents[1] * out_extents[2];
}

std::uint64_t conv_params(const ConvSpec& conv) { return conv.weight_count() + conv.c_out; }

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::VoxelUnshuffle: return "voxel_unshuffle";
        case LayerKind::Conv: return "conv";
        case LayerKind::InstanceNorm: return "instance_norm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Upsample: return "upsample";
        case LayerKind::Concat: return "concat";
        case LayerKind::VoxelShuffle: return "voxel_shuffle";
    }
    return "?";
}

FlopsReport count_flops(const NetworkGraph& net, const Triple& extents) {
    std::vector<Shape> shapes;
    try {
        shapes = infer_shapes(net, extents);
    } catch (const InvalidConfig& e) {
        throw ContractError(std::string("count_flops: ") + e.what());
    }
    FlopsReport r;
    r.model = net.name();
    r.base_features = net.base_features;
    r.num_down = net.num_down;
    r.extents = extents;
    Shape in{1, 1, extents[0], extents[1], extents[2]};
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        FlopsRow row;
        row.layer = i;
        row.label = l.label;
        row.kind = l.kind;
        row.input = in;
        row.output = shapes[i];
        if (l.kind == LayerKind::Conv) row.flops = conv_flops(l.conv, {shapes[i][2], shapes[i][3], shapes[i][4]});
        row.params = l.parameter_count();
        r.total_flops += row.flops;
        r.total_params += row.params;
        row.cumulative_flops = r.total_flops;
        r.rows.push_back(std::move(row));
        in = shapes[i];
    }
    return r;
}

std::uint64_t count_params(const NetworkGraph& net) {
    std::uint64_t n = 0;
    for (const Layer& l : net.layers) n += l.parameter_count();
    return n;
}

namespace {

std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string flops_csv(const FlopsReport& report) {
    std::ostringstream out;
    out << "layer,label,kind,input_shape,output_shape,flops,params,cumulative_flops\n";
    for (const FlopsRow& r : report.rows) {
        out << r.layer << ',' << r.label << ',' << layer_kind_name(r.kind) << ',' << shape_text(r.input) << ','
            << shape_text(r.output) << ',' << r.flops << ',' << r.params << ',' << r.cumulative_flops << '\n';
    }
    out << "total,,,,," << report.total_flops << ',' << report.total_params << ',' << report.total_flops << '\n';
    return out.str();
}

std::string flops_table(const FlopsReport& report) {
    std::vector<std::array<std::string, 6>> cells;
    cells.push_back({"layer", "label", "output", "GFLOPs", "params", "cum GFLOPs"});
    for (const FlopsRow& r : report.rows) {
        cells.push_back({std::to_string(r.layer), r.label, shape_text(r.output),
                         fixed(static_cast<double>(r.flops) / 1e9, 3), std::to_string(r.params),
                         fixed(static_cast<double>(r.cumulative_flops) / 1e9, 3)});
    }
    std::array<std::size_t, 6> width{};
    for (const auto& row : cells)
        for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], row[c].size());

    std::ostringstream out;
    out << "model " << report.model << ", base " << report.base_features << ", down " << report.num_down
        << ", input " << format_extents(report.extents) << '\n';
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < 6; ++c) {
            const bool left = c == 1 || c == 2;
            const std::string pad(width[c] - row[c].size(), ' ');
            out << (c ? "  " : "") << (left ? row[c] + pad : pad + row[c]);
        }
        out << '\n';
    }
    out << "total " << fixed(report.gflops(), 2) << " GFLOPs, "
        << fixed(static_cast<double>(report.total_params) / 1e6, 3) << " M params\n";
    return out.str();
}

namespace {

struct Modules {
    ConvSpec regular, axial, slice;
};

Modules make_modules(std::size_t channels, bool downsample) {
    return {regular_conv(channels, channels, downsample), axial_conv(channels, channels, downsample),
            slice_conv(channels, channels, downsample)};
}

}  // namespace

ModuleFlops module_flops(std::size_t channels, const Triple& extents, bool downsample) {
    const Modules m = make_modules(channels, downsample);
    const Triple mid = m.axial.output_extents(extents);
    return {conv_flops(m.regular, m.regular.output_extents(extents)),
            conv_flops(m.axial, mid) + conv_flops(m.slice, m.slice.output_extents(mid))};
}

double quantile(std::vector<double> samples, double q) {
    if (samples.empty()) throw ContractError("quantile of an empty sample");
    std::sort(samples.begin(), samples.end());
    const double pos = q * static_cast<double>(samples.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

std::vector<BenchRow> bench_modules(const BenchConfig& cfg) {
    if (cfg.repeats < 10) throw InvalidConfig("bench needs at least 10 repeats");
    if (cfg.channels == 0) throw InvalidConfig("bench needs at least one channel");
    for (std::size_t e : cfg.extents)
        if (e == 0 || (cfg.downsample && e % 2)) throw InvalidConfig("bench extents must be nonzero and even");

    Rng rng(cfg.seed);
    Modules m = make_modules(cfg.channels, cfg.downsample);
    init_conv(m.regular, rng);
    init_conv(m.axial, rng);
    init_conv(m.slice, rng);
    const Tensor ones = Tensor::full({cfg.channels}, 1.0);
    const Tensor zeros = Tensor::zeros({cfg.channels});
    const Tensor x = Tensor::randn({1, cfg.channels, cfg.extents[0], cfg.extents[1], cfg.extents[2]}, 0.0, 1.0, rng);

    NoGradGuard guard;
    auto regular = [&] { return relu(instance_norm(conv3d(x, m.regular), ones, zeros)); };
    auto decoupled = [&] {
        const Tensor h = relu(instance_norm(conv_axial(x, m.axial), ones, zeros));
        return relu(instance_norm(conv_slice(h, m.slice), ones, zeros));
    };
    auto time_ms = [](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor out = fn();
        const auto t1 = std::chrono::steady_clock::now();
        (void)out;
        return std::chrono::duration<double, std::milli>(t1 - t0).count();
    };

    for (std::size_t i = 0; i < cfg.warmup; ++i) {
        time_ms(regular);
        time_ms(decoupled);
    }
    BenchRow reg{"regular", 0, 0, cfg.repeats, worker_count(), {}};
    BenchRow dec{"decoupled", 0, 0, cfg.repeats, worker_count(), {}};
    for (std::size_t i = 0; i < cfg.repeats; ++i) {
        reg.samples_ms.push_back(time_ms(regular));
        dec.samples_ms.push_back(time_ms(decoupled));
    }
    for (BenchRow* r : {&reg, &dec}) {
        r->median_ms = quantile(r->samples_ms, 0.5);
        r->iqr_ms = quantile(r->samples_ms, 0.75) - quantile(r->samples_ms, 0.25);
    }
    return {reg, dec};
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string out = "module,median_ms,iqr_ms,repeats,workers\n";
    for (const BenchRow& r : rows) {
        out += r.module + "," + fixed(r.median_ms, 4) + "," + fixed(r.iqr_ms, 4) + "," + std::to_string(r.repeats) +
               "," + std::to_string(r.workers) + "\n";
    }
    return out;
}

}  // namespace deepdose
