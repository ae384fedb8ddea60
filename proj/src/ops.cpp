#include "deepdose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deepdose/error.hpp"
#include "deepdose/parallel.hpp"

namespace deepdose {

namespace {

using Index = std::ptrdiff_t;

void require_5d(const Tensor& x, const char* op) {
    if (x.rank() != 5) throw InvalidShape(std::string(op) + ": expected [B,C,H,W,D], got " + to_string(x.shape()));
}

// Output positions o in [lo, hi) whose input coordinate o*stride + k - pad
// falls inside [0, extent).
struct ValidRange {
    Index lo;
    Index hi;
};

ValidRange valid_outputs(Index extent, Index out_extent, Index stride, Index k, Index pad) {
    // o*stride + k - pad >= 0  ->  o >= ceil((pad - k) / stride)
    Index lo = 0;
    if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
    // o*stride + k - pad <= extent - 1
    Index hi_num = extent - 1 + pad - k;
    Index hi = hi_num < 0 ? 0 : hi_num / stride + 1;
    return {std::max<Index>(lo, 0), std::min(hi, out_extent)};
}

struct ConvGeometry {
    Index batch, c_in, c_out;
    Index h, w, d;
    Index oh, ow, od;
    Index kh, kw, kd;
    Index sh, sw, sd;
    Index ph, pw, pd;
};

ConvGeometry conv_geometry(const Tensor& x, const ConvSpec& spec) {
    const Shape& s = x.shape();
    const Triple out = spec.output_extents({s[2], s[3], s[4]});
    const Triple pad = spec.padding();
    return {static_cast<Index>(s[0]),
            static_cast<Index>(spec.c_in),
            static_cast<Index>(spec.c_out),
            static_cast<Index>(s[2]),
            static_cast<Index>(s[3]),
            static_cast<Index>(s[4]),
            static_cast<Index>(out[0]),
            static_cast<Index>(out[1]),
            static_cast<Index>(out[2]),
            static_cast<Index>(spec.kernel[0]),
            static_cast<Index>(spec.kernel[1]),
            static_cast<Index>(spec.kernel[2]),
            static_cast<Index>(spec.stride[0]),
            static_cast<Index>(spec.stride[1]),
            static_cast<Index>(spec.stride[2]),
            static_cast<Index>(pad[0]),
            static_cast<Index>(pad[1]),
            static_cast<Index>(pad[2])};
}

// Visits every (input row, output row, kd) triple that contributes for a
// fixed (b, c_out, c_in, kh, kw). The callback receives row offsets and the
// valid output depth range.
template <typename Fn>
void for_each_row_pair(const ConvGeometry& g, Index kh, Index kw, Fn&& fn) {
    const ValidRange rh = valid_outputs(g.h, g.oh, g.sh, kh, g.ph);
    const ValidRange rw = valid_outputs(g.w, g.ow, g.sw, kw, g.pw);
    for (Index oh = rh.lo; oh < rh.hi; ++oh) {
        const Index ih = oh * g.sh + kh - g.ph;
        for (Index ow = rw.lo; ow < rw.hi; ++ow) {
            const Index iw = ow * g.sw + kw - g.pw;
            fn((ih * g.w + iw) * g.d, (oh * g.ow + ow) * g.od);
        }
    }
}

Tensor conv_impl(const Tensor& x, const ConvSpec& spec, const char* op) {
    require_5d(x, op);
    spec.validate();
    if (x.dim(1) != spec.c_in) {
        throw ContractError(std::string(op) + ": input has " + std::to_string(x.dim(1)) + " channels, spec expects " +
                            std::to_string(spec.c_in));
    }
    if (!spec.weights.defined() || spec.weights.shape() != spec.weight_shape()) {
        throw ContractError(std::string(op) + ": weights missing or shaped " + to_string(spec.weights.shape()));
    }
    if (!spec.bias.defined() || spec.bias.shape() != Shape{spec.c_out}) {
        throw ContractError(std::string(op) + ": bias must be [c_out]");
    }
    const ConvGeometry g = conv_geometry(x, spec);
    const Index in_vol = g.h * g.w * g.d;
    const Index out_vol = g.oh * g.ow * g.od;
    const Index ksize = g.kh * g.kw * g.kd;

    std::vector<double> out(static_cast<std::size_t>(g.batch * g.c_out * out_vol));
    const double* xin = x.data().data();
    const double* wt = spec.weights.data().data();
    const double* bias = spec.bias.data().data();

    std::vector<ValidRange> depth_ranges(static_cast<std::size_t>(g.kd));
    for (Index kd = 0; kd < g.kd; ++kd) depth_ranges[kd] = valid_outputs(g.d, g.od, g.sd, kd, g.pd);

    for (Index b = 0; b < g.batch; ++b) {
        parallel_for(static_cast<std::size_t>(g.c_out), [&](std::size_t co_u) {
            const Index co = static_cast<Index>(co_u);
            double* dst = out.data() + (b * g.c_out + co) * out_vol;
            std::fill(dst, dst + out_vol, bias[co]);
            for (Index ci = 0; ci < g.c_in; ++ci) {
                const double* src = xin + (b * g.c_in + ci) * in_vol;
                const double* wk = wt + (co * g.c_in + ci) * ksize;
                for (Index kh = 0; kh < g.kh; ++kh) {
                    for (Index kw = 0; kw < g.kw; ++kw) {
                        const double* wrow = wk + (kh * g.kw + kw) * g.kd;
                        for_each_row_pair(g, kh, kw, [&](Index in_row, Index out_row) {
                            const double* irow = src + in_row;
                            double* orow = dst + out_row;
                            for (Index kd = 0; kd < g.kd; ++kd) {
                                const double wv = wrow[kd];
                                const ValidRange r = depth_ranges[kd];
                                const Index shift = kd - g.pd;
                                if (g.sd == 1) {
                                    for (Index od = r.lo; od < r.hi; ++od) orow[od] += wv * irow[od + shift];
                                } else {
                                    for (Index od = r.lo; od < r.hi; ++od) orow[od] += wv * irow[od * g.sd + shift];
                                }
                            }
                        });
                    }
                }
            }
        });
    }

    Shape out_shape{x.dim(0), spec.c_out, static_cast<std::size_t>(g.oh), static_cast<std::size_t>(g.ow),
                    static_cast<std::size_t>(g.od)};
    Tensor weights = spec.weights;
    Tensor bias_t = spec.bias;
    return Tensor::make_result(
        out_shape, std::move(out), op, {x, weights, bias_t},
        [x, weights, bias_t, g, depth_ranges, in_vol, out_vol, ksize](std::span<const double> grad) mutable {
            const double* gy = grad.data();
            if (bias_t.requires_grad()) {
                auto gb = bias_t.grad_buffer();
                for (Index b = 0; b < g.batch; ++b) {
                    for (Index co = 0; co < g.c_out; ++co) {
                        const double* row = gy + (b * g.c_out + co) * out_vol;
                        double acc = 0.0;
                        for (Index i = 0; i < out_vol; ++i) acc += row[i];
                        gb[co] += acc;
                    }
                }
            }
            if (weights.requires_grad()) {
                auto gw_span = weights.grad_buffer();
                double* gw = gw_span.data();
                const double* xin = x.data().data();
                parallel_for(static_cast<std::size_t>(g.c_out), [&](std::size_t co_u) {
                    const Index co = static_cast<Index>(co_u);
                    for (Index b = 0; b < g.batch; ++b) {
                        const double* gout = gy + (b * g.c_out + co) * out_vol;
                        for (Index ci = 0; ci < g.c_in; ++ci) {
                            const double* src = xin + (b * g.c_in + ci) * in_vol;
                            double* gk = gw + (co * g.c_in + ci) * ksize;
                            for (Index kh = 0; kh < g.kh; ++kh) {
                                for (Index kw = 0; kw < g.kw; ++kw) {
                                    double* grow = gk + (kh * g.kw + kw) * g.kd;
                                    for (Index kd = 0; kd < g.kd; ++kd) {
                                        const ValidRange r = depth_ranges[kd];
                                        const Index shift = kd - g.pd;
                                        double acc = 0.0;
                                        for_each_row_pair(g, kh, kw, [&](Index in_row, Index out_row) {
                                            const double* irow = src + in_row;
                                            const double* orow = gout + out_row;
                                            for (Index od = r.lo; od < r.hi; ++od) {
                                                acc += orow[od] * irow[od * g.sd + shift];
                                            }
                                        });
                                        grow[kd] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (x.requires_grad()) {
                auto gx_span = x.grad_buffer();
                double* gx = gx_span.data();
                const double* wt = weights.data().data();
                parallel_for(static_cast<std::size_t>(g.c_in), [&](std::size_t ci_u) {
                    const Index ci = static_cast<Index>(ci_u);
                    for (Index b = 0; b < g.batch; ++b) {
                        double* dst = gx + (b * g.c_in + ci) * in_vol;
                        for (Index co = 0; co < g.c_out; ++co) {
                            const double* gout = gy + (b * g.c_out + co) * out_vol;
                            const double* wk = wt + (co * g.c_in + ci) * ksize;
                            for (Index kh = 0; kh < g.kh; ++kh) {
                                for (Index kw = 0; kw < g.kw; ++kw) {
                                    const double* wrow = wk + (kh * g.kw + kw) * g.kd;
                                    for_each_row_pair(g, kh, kw, [&](Index in_row, Index out_row) {
                                        double* irow = dst + in_row;
                                        const double* orow = gout + out_row;
                                        for (Index kd = 0; kd < g.kd; ++kd) {
                                            const double wv = wrow[kd];
                                            const ValidRange r = depth_ranges[kd];
                                            const Index shift = kd - g.pd;
                                            for (Index od = r.lo; od < r.hi; ++od) {
                                                irow[od * g.sd + shift] += wv * orow[od];
                                            }
                                        }
                                    });
                                }
                            }
                        }
                    }
                });
            }
        });
}

// Flat source index, in the [B, C, H, W, D] input, of every element of the
// unshuffled [B, 8C, H/2, W/2, D/2] output.
std::vector<std::size_t> unshuffle_sources(const Shape& in) {
    const std::size_t batch = in[0], channels = in[1], h = in[2], w = in[3], d = in[4];
    const std::size_t oh = h / 2, ow = w / 2, od = d / 2;
    std::vector<std::size_t> src(numel(in));
    std::size_t n = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t sub = 0; sub < 8; ++sub) {
                const std::size_t i = sub & 1U;
                const std::size_t j = (sub >> 1U) & 1U;
                const std::size_t k = (sub >> 2U) & 1U;
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                        for (std::size_t z = 0; z < od; ++z) {
                            src[n++] = (((b * channels + c) * h + (2 * y + i)) * w + (2 * x + j)) * d + (2 * z + k);
                        }
                    }
                }
            }
        }
    }
    return src;
}

// 1-D linear interpolation taps for x2 upsampling with half-pixel centers.
struct Taps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w0, w1;
};

Taps upsample_taps(std::size_t n) {
    Taps t;
    const std::size_t m = 2 * n;
    t.i0.resize(m);
    t.i1.resize(m);
    t.w0.resize(m);
    t.w1.resize(m);
    for (std::size_t o = 0; o < m; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        if (src < 0.0) src = 0.0;
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t i0 = std::min(lo, n - 1);
        const double frac = src - static_cast<double>(i0);
        t.i0[o] = i0;
        t.i1[o] = std::min(i0 + 1, n - 1);
        t.w1[o] = frac;
        t.w0[o] = 1.0 - frac;
    }
    return t;
}

}  // namespace

Triple ConvSpec::output_extents(const Triple& in) const {
    const Triple pad = padding();
    Triple out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (in[i] + 2 * pad[i] < kernel[i]) {
            throw InvalidShape("conv: extent " + std::to_string(in[i]) + " smaller than kernel");
        }
        out[i] = (in[i] + 2 * pad[i] - kernel[i]) / stride[i] + 1;
    }
    return out;
}

void ConvSpec::validate() const {
    if (c_in == 0 || c_out == 0) throw InvalidShape("conv: channel counts must be >= 1");
    for (std::size_t i = 0; i < 3; ++i) {
        if (kernel[i] == 0 || stride[i] == 0) throw InvalidShape("conv: kernel and stride must be >= 1");
        if (kernel[i] > 1 && kernel[i] % 2 == 0) throw InvalidShape("conv: kernel extents must be odd");
    }
}

ConvSpec make_conv(std::size_t c_in, std::size_t c_out, Triple kernel, Triple stride) {
    ConvSpec spec;
    spec.c_in = c_in;
    spec.c_out = c_out;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.validate();
    return spec;
}

void init_conv(ConvSpec& spec, Rng& rng) {
    const double receptive = static_cast<double>(spec.kernel[0] * spec.kernel[1] * spec.kernel[2]);
    const double fan_in = static_cast<double>(spec.c_in) * receptive;
    const double fan_out = static_cast<double>(spec.c_out) * receptive;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    spec.weights = Tensor::uniform(spec.weight_shape(), -limit, limit, rng);
    spec.weights.set_requires_grad(true);
    spec.bias = Tensor::zeros({spec.c_out});
    spec.bias.set_requires_grad(true);
}

ConvSpec axial_conv(std::size_t c_in, std::size_t c_out, bool downsample) {
    return make_conv(c_in, c_out, {3, 3, 1}, downsample ? Triple{2, 2, 1} : Triple{1, 1, 1});
}

ConvSpec slice_conv(std::size_t c_in, std::size_t c_out, bool downsample) {
    return make_conv(c_in, c_out, {1, 1, 3}, downsample ? Triple{1, 1, 2} : Triple{1, 1, 1});
}

ConvSpec regular_conv(std::size_t c_in, std::size_t c_out, bool downsample) {
    return make_conv(c_in, c_out, {3, 3, 3}, downsample ? Triple{2, 2, 2} : Triple{1, 1, 1});
}

Tensor conv3d(const Tensor& x, const ConvSpec& spec) { return conv_impl(x, spec, "conv3d"); }

Tensor conv_axial(const Tensor& x, const ConvSpec& spec) {
    if (spec.kernel[2] != 1) throw ContractError("conv_axial: kernel must have depth extent 1");
    return conv_impl(x, spec, "conv_axial");
}

Tensor conv_slice(const Tensor& x, const ConvSpec& spec) {
    if (spec.kernel[0] != 1 || spec.kernel[1] != 1) throw ContractError("conv_slice: kernel must be 1x1 in-plane");
    return conv_impl(x, spec, "conv_slice");
}

Tensor voxel_unshuffle(const Tensor& x) {
    require_5d(x, "voxel_unshuffle");
    const Shape& s = x.shape();
    if (s[2] % 2 || s[3] % 2 || s[4] % 2) {
        throw InvalidShape("voxel_unshuffle: spatial extents must be even, got " + to_string(s));
    }
    auto src = unshuffle_sources(s);
    std::vector<double> out(src.size());
    auto in = x.data();
    for (std::size_t n = 0; n < src.size(); ++n) out[n] = in[src[n]];
    Shape out_shape{s[0], s[1] * 8, s[2] / 2, s[3] / 2, s[4] / 2};
    return Tensor::make_result(out_shape, std::move(out), "voxel_unshuffle", {x},
                               [x, src = std::move(src)](std::span<const double> g) mutable {
                                   auto dst = x.grad_buffer();
                                   for (std::size_t n = 0; n < src.size(); ++n) dst[src[n]] += g[n];
                               });
}

Tensor voxel_shuffle(const Tensor& x) {
    require_5d(x, "voxel_shuffle");
    const Shape& s = x.shape();
    if (s[1] % 8) throw InvalidShape("voxel_shuffle: channel count must be divisible by 8, got " + to_string(s));
    Shape out_shape{s[0], s[1] / 8, s[2] * 2, s[3] * 2, s[4] * 2};
    // The unshuffle of the output shape maps output positions onto ours.
    auto dst_of = unshuffle_sources(out_shape);
    std::vector<double> out(dst_of.size());
    auto in = x.data();
    for (std::size_t n = 0; n < dst_of.size(); ++n) out[dst_of[n]] = in[n];
    return Tensor::make_result(out_shape, std::move(out), "voxel_shuffle", {x},
                               [x, dst_of = std::move(dst_of)](std::span<const double> g) mutable {
                                   auto dst = x.grad_buffer();
                                   for (std::size_t n = 0; n < dst_of.size(); ++n) dst[n] += g[dst_of[n]];
                               });
}

Tensor instance_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
    require_5d(x, "instance_norm");
    const Shape& s = x.shape();
    const std::size_t batch = s[0], channels = s[1];
    const std::size_t vol = s[2] * s[3] * s[4];
    if (scale.shape() != Shape{channels} || shift.shape() != Shape{channels}) {
        throw ContractError("instance_norm: scale/shift must be [" + std::to_string(channels) + "]");
    }
    if (eps <= 0.0 && vol == 1) throw NumericError("instance_norm: spatial size 1 with eps = 0 divides by zero");

    auto in = x.data();
    auto gamma = scale.data();
    auto beta = shift.data();
    std::vector<double> out(in.size());
    std::vector<double> xhat(in.size());
    std::vector<double> inv_std(batch * channels);
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const std::size_t c = bc % channels;
        const double* v = in.data() + bc * vol;
        double m = 0.0;
        for (std::size_t i = 0; i < vol; ++i) m += v[i];
        m /= static_cast<double>(vol);
        double var = 0.0;
        for (std::size_t i = 0; i < vol; ++i) var += (v[i] - m) * (v[i] - m);
        var /= static_cast<double>(vol);
        if (var + eps <= 0.0) throw NumericError("instance_norm: zero variance with eps = 0");
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[bc] = is;
        for (std::size_t i = 0; i < vol; ++i) {
            const double h = (v[i] - m) * is;
            xhat[bc * vol + i] = h;
            out[bc * vol + i] = gamma[c] * h + beta[c];
        }
    }
    return Tensor::make_result(
        s, std::move(out), "instance_norm", {x, scale, shift},
        [x, scale, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels,
         vol](std::span<const double> g) mutable {
            auto gamma = scale.data();
            const double n = static_cast<double>(vol);
            for (std::size_t bc = 0; bc < batch * channels; ++bc) {
                const std::size_t c = bc % channels;
                const double* gy = g.data() + bc * vol;
                const double* h = xhat.data() + bc * vol;
                double sum_g = 0.0;
                double sum_gh = 0.0;
                for (std::size_t i = 0; i < vol; ++i) {
                    sum_g += gy[i];
                    sum_gh += gy[i] * h[i];
                }
                if (scale.requires_grad()) scale.grad_buffer()[c] += sum_gh;
                if (shift.requires_grad()) shift.grad_buffer()[c] += sum_g;
                if (x.requires_grad()) {
                    double* dx = x.grad_buffer().data() + bc * vol;
                    const double k = gamma[c] * inv_std[bc] / n;
                    for (std::size_t i = 0; i < vol; ++i) dx[i] += k * (n * gy[i] - sum_g - h[i] * sum_gh);
                }
            }
        });
}

Tensor upsample_trilinear(const Tensor& x) {
    require_5d(x, "upsample_trilinear");
    const Shape& s = x.shape();
    const std::size_t planes = s[0] * s[1];
    const std::size_t h = s[2], w = s[3], d = s[4];
    const Taps th = upsample_taps(h), tw = upsample_taps(w), td = upsample_taps(d);
    const std::size_t oh = 2 * h, ow = 2 * w, od = 2 * d;
    const std::size_t in_vol = h * w * d, out_vol = oh * ow * od;

    // Visits the 8 weighted neighbours of every output voxel.
    auto visit = [=](auto&& fn) {
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    for (std::size_t z = 0; z < od; ++z) {
                        const std::size_t o = p * out_vol + (y * ow + xx) * od + z;
                        const std::size_t hs[2] = {th.i0[y], th.i1[y]};
                        const double hw[2] = {th.w0[y], th.w1[y]};
                        const std::size_t ws[2] = {tw.i0[xx], tw.i1[xx]};
                        const double ww[2] = {tw.w0[xx], tw.w1[xx]};
                        const std::size_t ds[2] = {td.i0[z], td.i1[z]};
                        const double dw[2] = {td.w0[z], td.w1[z]};
                        for (int a = 0; a < 2; ++a) {
                            for (int b = 0; b < 2; ++b) {
                                for (int c = 0; c < 2; ++c) {
                                    fn(o, p * in_vol + (hs[a] * w + ws[b]) * d + ds[c], hw[a] * ww[b] * dw[c]);
                                }
                            }
                        }
                    }
                }
            }
        }
    };

    std::vector<double> out(planes * out_vol, 0.0);
    auto in = x.data();
    visit([&](std::size_t o, std::size_t i, double weight) { out[o] += weight * in[i]; });
    Shape out_shape{s[0], s[1], oh, ow, od};
    return Tensor::make_result(out_shape, std::move(out), "upsample_trilinear", {x},
                               [x, visit](std::span<const double> g) mutable {
                                   auto dst = x.grad_buffer();
                                   visit([&](std::size_t o, std::size_t i, double weight) { dst[i] += weight * g[o]; });
                               });
}

}  // namespace deepdose
