#include "deepdose/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "deepdose/error.hpp"

namespace deepdose {

namespace {

constexpr std::string_view kVolumeMagic = "DVOL";
constexpr std::string_view kMaskMagic = "DMSK";

struct Header {
    Triple extents{};
    VoxelSize voxel_size{};
    std::uint64_t histories = 0;
    std::uint64_t seed = 0;
};

void write_header(detail::ByteWriter& w, std::string_view magic, const Header& h) {
    w.raw(magic);
    w.u32(kVolumeVersion);
    for (std::size_t e : h.extents) {
        if (e == 0 || e > 0xFFFFFFFFu) throw InvalidShape("volume extents out of range: " + format_extents(h.extents));
        w.u32(static_cast<std::uint32_t>(e));
    }
    for (float s : h.voxel_size) w.f32(s);
    w.u64(h.histories);
    w.u64(h.seed);
}

Header read_header(detail::ByteReader& r, std::string_view magic, const std::string& what) {
    if (r.raw(4) != magic) throw FormatError(what + ": bad magic (expected " + std::string(magic) + ")");
    const std::uint32_t version = r.u32();
    if (version != kVolumeVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    Header h;
    for (std::size_t& e : h.extents) e = r.u32();
    for (float& s : h.voxel_size) s = r.f32();
    h.histories = r.u64();
    h.seed = r.u64();
    if (h.extents[0] == 0 || h.extents[1] == 0 || h.extents[2] == 0) throw FormatError(what + ": zero extent");
    // Guard the allocation before trusting the header.
    const std::size_t n = h.extents[0] * h.extents[1] * h.extents[2];
    if (r.remaining() / 4 < n) throw FormatError(what + ": truncated file");
    return h;
}

}  // namespace

DoseVolume DoseVolume::zeros(const Triple& extents) {
    DoseVolume v;
    v.extents = extents;
    v.values.assign(v.size(), 0.0);
    return v;
}

Tensor DoseVolume::to_tensor(double scale) const {
    if (values.size() != size()) throw ContractError("volume holds " + std::to_string(values.size()) + " values");
    std::vector<double> v(values.size());
    std::transform(values.begin(), values.end(), v.begin(), [scale](double x) { return x / scale; });
    return Tensor::from_values({1, 1, extents[0], extents[1], extents[2]}, std::move(v));
}

DoseVolume volume_from_tensor(const Tensor& t, double scale, const VoxelSize& voxel_size) {
    if (t.rank() != 5 || t.dim(0) != 1 || t.dim(1) != 1) {
        throw ContractError("expected a [1,1,H,W,D] tensor, got " + to_string(t.shape()));
    }
    DoseVolume v = DoseVolume::zeros({t.dim(2), t.dim(3), t.dim(4)});
    v.voxel_size = voxel_size;
    std::transform(t.data().begin(), t.data().end(), v.values.begin(), [scale](double x) { return x * scale; });
    return v;
}

std::size_t StructureMask::count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

std::string serialize_volume(const DoseVolume& v) {
    if (v.values.size() != v.size()) throw ContractError("volume holds " + std::to_string(v.values.size()) + " values");
    detail::ByteWriter w;
    write_header(w, kVolumeMagic, {v.extents, v.voxel_size, v.histories, v.seed});
    for (double x : v.values) {
        if (!std::isfinite(x)) throw NumericError("volume contains a non-finite value");
        w.f32(static_cast<float>(x));
    }
    return w.take();
}

DoseVolume parse_volume(std::string_view bytes) {
    detail::ByteReader r(bytes, "DVOL");
    const Header h = read_header(r, kVolumeMagic, "DVOL");
    DoseVolume v = DoseVolume::zeros(h.extents);
    v.voxel_size = h.voxel_size;
    v.histories = h.histories;
    v.seed = h.seed;
    for (double& x : v.values) {
        x = r.f32();
        if (!std::isfinite(x)) throw FormatError("DVOL: non-finite voxel value");
    }
    r.expect_end();
    return v;
}

void save_volume(const DoseVolume& v, const std::string& path) { detail::write_file_atomic(path, serialize_volume(v)); }

DoseVolume load_volume(const std::string& path) { return parse_volume(detail::read_file(path)); }

std::string serialize_mask(const StructureMask& m) {
    const std::size_t n = m.extents[0] * m.extents[1] * m.extents[2];
    if (m.values.size() != n) throw ContractError("mask holds " + std::to_string(m.values.size()) + " values");
    detail::ByteWriter w;
    write_header(w, kMaskMagic, {m.extents, m.voxel_size, 0, 0});
    for (std::uint8_t x : m.values) w.f32(x ? 1.0f : 0.0f);
    return w.take();
}

StructureMask parse_mask(std::string_view bytes) {
    detail::ByteReader r(bytes, "DMSK");
    const Header h = read_header(r, kMaskMagic, "DMSK");
    StructureMask m;
    m.extents = h.extents;
    m.voxel_size = h.voxel_size;
    m.values.resize(h.extents[0] * h.extents[1] * h.extents[2]);
    for (std::uint8_t& x : m.values) {
        const float f = r.f32();
        if (f != 0.0f && f != 1.0f) throw FormatError("DMSK: mask value outside {0, 1}");
        x = f == 1.0f ? 1 : 0;
    }
    r.expect_end();
    return m;
}

void save_mask(const StructureMask& m, const std::string& path) { detail::write_file_atomic(path, serialize_mask(m)); }

StructureMask load_mask(const std::string& path) { return parse_mask(detail::read_file(path)); }

void check_same_extents(const Triple& a, const Triple& b, const std::string& what) {
    if (a != b) throw ContractError(what + ": extent mismatch " + format_extents(a) + " vs " + format_extents(b));
}

Triple parse_extents(const std::string& text) {
    Triple e{};
    std::istringstream in(text);
    char x1 = 0, x2 = 0;
    long long a = 0, b = 0, c = 0;
    if (!(in >> a >> x1 >> b >> x2 >> c) || x1 != 'x' || x2 != 'x' || a <= 0 || b <= 0 || c <= 0 ||
        in.peek() != std::char_traits<char>::eof()) {
        throw InvalidConfig("bad extents '" + text + "' (expected HxWxD, e.g. 32x32x16)");
    }
    e = {static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(c)};
    return e;
}

std::string format_extents(const Triple& e) {
    return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

}  // namespace deepdose
