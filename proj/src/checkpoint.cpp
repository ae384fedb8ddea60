#include "deepdose/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "deepdose/error.hpp"

namespace deepdose {

namespace detail {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path + "'");
    return std::move(buf).str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(target.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + target.parent_path().string() + "': " + ec.message());
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace detail

namespace {

constexpr std::string_view kMagic = "DDPK";

}  // namespace

std::string serialize_checkpoint(const NetworkGraph& net) {
    if (!net.materialized()) throw ContractError("save_checkpoint: network weights are not initialized");
    detail::ByteWriter w;
    w.raw(kMagic);
    w.u32(kCheckpointVersion);
    w.u64(net.seed);
    w.u32(static_cast<std::uint32_t>(net.kind));
    w.u32(static_cast<std::uint32_t>(net.base_features));
    w.u32(static_cast<std::uint32_t>(net.num_down));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        if (!l.has_parameters()) continue;
        w.u32(static_cast<std::uint32_t>(i));
        w.u64(l.parameter_count());
        const Tensor& first = l.kind == LayerKind::Conv ? l.conv.weights : l.scale;
        const Tensor& second = l.kind == LayerKind::Conv ? l.conv.bias : l.shift;
        for (double v : first.data()) w.f64(v);
        for (double v : second.data()) w.f64(v);
    }
    return w.take();
}

NetworkGraph parse_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    if (r.raw(4) != kMagic) throw FormatError("checkpoint: bad magic (expected DDPK)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t seed = r.u64();
    const std::uint32_t tag = r.u32();
    if (tag > 1) throw FormatError("checkpoint: unknown model tag " + std::to_string(tag));
    const std::uint32_t base = r.u32();
    const std::uint32_t num_down = r.u32();

    NetworkGraph net;
    try {
        net = build_network(static_cast<ModelKind>(tag), base, num_down);
    } catch (const InvalidConfig& e) {
        throw FormatError(std::string("checkpoint: invalid config block: ") + e.what());
    }
    net.seed = seed;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Layer& l = net.layers[i];
        if (!l.has_parameters()) continue;
        const std::uint32_t id = r.u32();
        const std::uint64_t count = r.u64();
        if (id != i || count != l.parameter_count()) {
            throw FormatError("checkpoint: layer record " + std::to_string(id) + " does not match layer " +
                              std::to_string(i) + " (" + l.label + ")");
        }
        const Shape first_shape = l.kind == LayerKind::Conv ? l.conv.weight_shape() : Shape{l.channels};
        const Shape second_shape = l.kind == LayerKind::Conv ? Shape{l.conv.c_out} : Shape{l.channels};
        std::vector<double> a(numel(first_shape)), b(numel(second_shape));
        for (double& v : a) v = r.f64();
        for (double& v : b) v = r.f64();
        Tensor ta = Tensor::from_values(first_shape, std::move(a)).set_requires_grad();
        Tensor tb = Tensor::from_values(second_shape, std::move(b)).set_requires_grad();
        if (l.kind == LayerKind::Conv) {
            l.conv.weights = ta;
            l.conv.bias = tb;
        } else {
            l.scale = ta;
            l.shift = tb;
        }
    }
    r.expect_end();
    return net;
}

void save_checkpoint(const NetworkGraph& net, const std::string& path) {
    detail::write_file_atomic(path, serialize_checkpoint(net));
}

NetworkGraph load_checkpoint(const std::string& path) { return parse_checkpoint(detail::read_file(path)); }

std::size_t checkpoint_size(const NetworkGraph& net) {
    std::size_t size = 4 + 4 + 8 + 3 * 4;
    for (const Layer& l : net.layers) {
        if (l.has_parameters()) size += 4 + 8 + 8 * l.parameter_count();
    }
    return size;
}

}  // namespace deepdose
