#include "deepdose/model.hpp"

#include <algorithm>

#include "deepdose/error.hpp"

namespace deepdose {

namespace {

Layer make_layer(LayerKind kind, Stage stage, std::string label) {
    Layer l;
    l.kind = kind;
    l.stage = stage;
    l.label = std::move(label);
    return l;
}

class GraphBuilder {
public:
    explicit GraphBuilder(NetworkGraph& net) : net_(net) {}

    int add(Layer layer) {
        net_.layers.push_back(std::move(layer));
        return static_cast<int>(net_.layers.size()) - 1;
    }

    void simple(LayerKind kind, Stage stage, std::string label) { add(make_layer(kind, stage, std::move(label))); }

    void conv(Stage stage, std::string label, ConvFlavor flavor, ConvSpec spec) {
        Layer l = make_layer(LayerKind::Conv, stage, std::move(label));
        l.flavor = flavor;
        l.conv = std::move(spec);
        add(std::move(l));
    }

    void norm(Stage stage, std::string label, std::size_t channels) {
        Layer l = make_layer(LayerKind::InstanceNorm, stage, std::move(label));
        l.channels = channels;
        add(std::move(l));
    }

    // conv -> instance norm -> relu; returns the relu's index.
    int conv_block(Stage stage, const std::string& label, ConvFlavor flavor, ConvSpec spec) {
        const std::size_t c = spec.c_out;
        conv(stage, label + ".conv", flavor, std::move(spec));
        norm(stage, label + ".norm", c);
        return add(make_layer(LayerKind::Relu, stage, label + ".relu"));
    }

    void concat(Stage stage, std::string label, int skip) {
        Layer l = make_layer(LayerKind::Concat, stage, std::move(label));
        l.skip = skip;
        add(std::move(l));
    }

private:
    NetworkGraph& net_;
};

void check_counts(std::size_t base_features, std::size_t num_down) {
    if (base_features == 0) throw InvalidConfig("base_features must be >= 1");
    if (num_down == 0 || num_down > 12) throw InvalidConfig("num_down must be in [1, 12]");
}

// Voxel unshuffle, then num_down decoupled downsampling modules, a pyramid
// of upsample + axial/slice conv + concat per level, and an 8-channel head
// folded back to one channel by voxel shuffle.
void build_proposed_layers(NetworkGraph& net) {
    GraphBuilder b(net);
    const std::size_t base = net.base_features;
    b.simple(LayerKind::VoxelUnshuffle, Stage::Input, "input.unshuffle");

    std::vector<int> level_out;
    std::vector<std::size_t> level_ch;
    std::size_t c = 8;
    for (std::size_t m = 0; m < net.num_down; ++m) {
        const std::size_t f = level_features(base, m);
        const std::string tag = "backbone." + std::to_string(m);
        b.conv_block(Stage::Backbone, tag + ".axial", ConvFlavor::Axial, axial_conv(c, f, true));
        level_out.push_back(b.conv_block(Stage::Backbone, tag + ".slice", ConvFlavor::Slice, slice_conv(f, f, true)));
        level_ch.push_back(f);
        c = f;
    }

    for (std::size_t m = net.num_down - 1; m-- > 0;) {
        const std::size_t f = level_ch[m];
        const std::string tag = "pyramid." + std::to_string(m);
        b.simple(LayerKind::Upsample, Stage::Pyramid, tag + ".upsample");
        b.conv_block(Stage::Pyramid, tag + ".axial", ConvFlavor::Axial, axial_conv(c, f, false));
        b.conv_block(Stage::Pyramid, tag + ".slice", ConvFlavor::Slice, slice_conv(f, f, false));
        b.concat(Stage::Pyramid, tag + ".concat", level_out[m]);
        c = 2 * f;
    }

    b.simple(LayerKind::Upsample, Stage::Head, "head.upsample");
    b.concat(Stage::Head, "head.concat", 0);
    b.conv_block(Stage::Head, "head.axial", ConvFlavor::Axial, axial_conv(c + 8, 8, false));
    b.conv(Stage::Head, "head.slice.conv", ConvFlavor::Slice, slice_conv(8, 8, false));
    b.simple(LayerKind::VoxelShuffle, Stage::Head, "head.shuffle");
}

// Stride-2 3x3x3 encoder, decoder of upsample + 3x3x3 conv + concat, and a
// final full-resolution 3x3x3 conv to one channel.
void build_unet_layers(NetworkGraph& net) {
    GraphBuilder b(net);
    const std::size_t base = net.base_features;
    std::vector<int> level_out;
    std::vector<std::size_t> level_ch;
    std::size_t c = 1;
    for (std::size_t m = 0; m < net.num_down; ++m) {
        const std::size_t f = level_features(base, m);
        level_out.push_back(b.conv_block(Stage::Backbone, "encoder." + std::to_string(m), ConvFlavor::Regular,
                                         regular_conv(c, f, true)));
        level_ch.push_back(f);
        c = f;
    }
    for (std::size_t m = net.num_down - 1; m-- > 0;) {
        const std::size_t f = level_ch[m];
        const std::string tag = "decoder." + std::to_string(m);
        b.simple(LayerKind::Upsample, Stage::Pyramid, tag + ".upsample");
        b.conv_block(Stage::Pyramid, tag, ConvFlavor::Regular, regular_conv(c, f, false));
        b.concat(Stage::Pyramid, tag + ".concat", level_out[m]);
        c = 2 * f;
    }
    b.simple(LayerKind::Upsample, Stage::Head, "head.upsample");
    b.conv(Stage::Head, "head.conv", ConvFlavor::Regular, regular_conv(c, 1, false));
}

Tensor apply_conv(const Layer& layer, const Tensor& x) {
    switch (layer.flavor) {
        case ConvFlavor::Axial:
            return conv_axial(x, layer.conv);
        case ConvFlavor::Slice:
            return conv_slice(x, layer.conv);
        case ConvFlavor::Regular:
            break;
    }
    return conv3d(x, layer.conv);
}

}  // namespace

std::string model_name(ModelKind kind) { return kind == ModelKind::Proposed ? "proposed" : "unet-baseline"; }

ModelKind parse_model_kind(const std::string& name) {
    if (name == "proposed") return ModelKind::Proposed;
    if (name == "unet" || name == "unet-baseline") return ModelKind::UnetBaseline;
    throw InvalidConfig("unknown model '" + name + "' (expected proposed or unet)");
}

std::size_t Layer::parameter_count() const {
    if (kind == LayerKind::Conv) return conv.weight_count() + conv.c_out;
    if (kind == LayerKind::InstanceNorm) return 2 * channels;
    return 0;
}

std::size_t NetworkGraph::input_divisor() const {
    const std::size_t levels = kind == ModelKind::Proposed ? num_down + 1 : num_down;
    return std::size_t{1} << levels;
}

bool NetworkGraph::materialized() const {
    return std::all_of(layers.begin(), layers.end(), [](const Layer& l) {
        if (l.kind == LayerKind::Conv) return l.conv.weights.defined() && l.conv.bias.defined();
        if (l.kind == LayerKind::InstanceNorm) return l.scale.defined() && l.shift.defined();
        return true;
    });
}

std::vector<Tensor> NetworkGraph::parameters() const {
    std::vector<Tensor> params;
    for (const Layer& l : layers) {
        if (l.kind == LayerKind::Conv) {
            params.push_back(l.conv.weights);
            params.push_back(l.conv.bias);
        } else if (l.kind == LayerKind::InstanceNorm) {
            params.push_back(l.scale);
            params.push_back(l.shift);
        }
    }
    return params;
}

std::size_t level_features(std::size_t base_features, std::size_t level) {
    return base_features << std::min<std::size_t>(level, 3);
}

void check_input_extents(const NetworkGraph& net, const Triple& extents) {
    const std::size_t div = net.input_divisor();
    for (std::size_t e : extents) {
        if (e == 0 || e % div != 0) {
            throw InvalidConfig(net.name() + " with " + std::to_string(net.num_down) +
                                " downsampling modules needs extents divisible by " + std::to_string(div) + ", got " +
                                std::to_string(extents[0]) + "x" + std::to_string(extents[1]) + "x" +
                                std::to_string(extents[2]));
        }
    }
}

NetworkGraph build_network(ModelKind kind, std::size_t base_features, std::size_t num_down) {
    check_counts(base_features, num_down);
    NetworkGraph net;
    net.kind = kind;
    net.base_features = base_features;
    net.num_down = num_down;
    if (kind == ModelKind::Proposed) {
        build_proposed_layers(net);
    } else {
        build_unet_layers(net);
    }
    return net;
}

NetworkGraph build_proposed(const ScaledConfig& cfg) {
    NetworkGraph net = build_network(ModelKind::Proposed, cfg.base_features, cfg.num_down);
    check_input_extents(net, cfg.input_extents);
    return net;
}

NetworkGraph build_unet_baseline(const ScaledConfig& cfg) {
    NetworkGraph net = build_network(ModelKind::UnetBaseline, cfg.base_features, cfg.num_down);
    check_input_extents(net, cfg.input_extents);
    return net;
}

void initialize(NetworkGraph& net, std::uint64_t seed) {
    Rng rng(seed);
    net.seed = seed;
    Layer* last_conv = nullptr;
    for (Layer& l : net.layers) {
        if (l.kind == LayerKind::Conv) {
            init_conv(l.conv, rng);
            last_conv = &l;
        } else if (l.kind == LayerKind::InstanceNorm) {
            l.scale = Tensor::full({l.channels}, 1.0).set_requires_grad();
            l.shift = Tensor::zeros({l.channels}).set_requires_grad();
        }
    }
    // The prediction conv starts at zero: a fresh net outputs an all-zero
    // dose instead of an O(1) random field, which Adam at 1e-4 otherwise
    // spends most of a short run unlearning.
    if (last_conv) {
        last_conv->conv.weights = Tensor::zeros(last_conv->conv.weight_shape()).set_requires_grad();
    }
}

Tensor forward(const NetworkGraph& net, const Tensor& x) {
    if (x.rank() != 5 || x.dim(0) != 1 || x.dim(1) != 1) {
        throw ContractError("forward: expected input [1,1,H,W,D], got " + to_string(x.shape()));
    }
    check_input_extents(net, {x.dim(2), x.dim(3), x.dim(4)});
    if (!net.materialized()) throw ContractError("forward: network weights are not initialized");

    std::vector<Tensor> outputs;
    outputs.reserve(net.layers.size());
    Tensor h = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        try {
            switch (l.kind) {
                case LayerKind::VoxelUnshuffle:
                    h = voxel_unshuffle(h);
                    break;
                case LayerKind::VoxelShuffle:
                    h = voxel_shuffle(h);
                    break;
                case LayerKind::Conv:
                    h = apply_conv(l, h);
                    break;
                case LayerKind::InstanceNorm:
                    h = instance_norm(h, l.scale, l.shift);
                    break;
                case LayerKind::Relu:
                    h = relu(h);
                    break;
                case LayerKind::Upsample:
                    h = upsample_trilinear(h);
                    break;
                case LayerKind::Concat:
                    h = concat({h, outputs.at(static_cast<std::size_t>(l.skip))}, 1);
                    break;
            }
        } catch (const NumericError& e) {
            throw NumericError("layer " + std::to_string(i) + " (" + l.label + "): " + e.what());
        }
        outputs.push_back(h);
    }
    return h;
}

std::vector<Shape> infer_shapes(const NetworkGraph& net, const Triple& extents) {
    check_input_extents(net, extents);
    std::vector<Shape> shapes;
    shapes.reserve(net.layers.size());
    Shape s{1, 1, extents[0], extents[1], extents[2]};
    for (const Layer& l : net.layers) {
        switch (l.kind) {
            case LayerKind::VoxelUnshuffle:
                s = {s[0], s[1] * 8, s[2] / 2, s[3] / 2, s[4] / 2};
                break;
            case LayerKind::VoxelShuffle:
                s = {s[0], s[1] / 8, s[2] * 2, s[3] * 2, s[4] * 2};
                break;
            case LayerKind::Conv: {
                if (s[1] != l.conv.c_in) throw InternalError("infer_shapes: channel mismatch at " + l.label);
                const Triple o = l.conv.output_extents({s[2], s[3], s[4]});
                s = {s[0], l.conv.c_out, o[0], o[1], o[2]};
                break;
            }
            case LayerKind::Upsample:
                s = {s[0], s[1], s[2] * 2, s[3] * 2, s[4] * 2};
                break;
            case LayerKind::Concat: {
                const Shape& other = shapes.at(static_cast<std::size_t>(l.skip));
                if (other[2] != s[2] || other[3] != s[3] || other[4] != s[4]) {
                    throw InternalError("infer_shapes: concat resolution mismatch at " + l.label);
                }
                s[1] += other[1];
                break;
            }
            case LayerKind::InstanceNorm:
            case LayerKind::Relu:
                break;
        }
        shapes.push_back(s);
    }
    return shapes;
}

Triple bottleneck_receptive_field(const NetworkGraph& net) {
    Triple field{1, 1, 1};
    Triple jump{1, 1, 1};
    std::size_t last_backbone = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].stage == Stage::Backbone) last_backbone = i;
    }
    for (std::size_t i = 0; i <= last_backbone; ++i) {
        const Layer& l = net.layers[i];
        for (std::size_t d = 0; d < 3; ++d) {
            if (l.kind == LayerKind::VoxelUnshuffle) {
                field[d] += jump[d];
                jump[d] *= 2;
            } else if (l.kind == LayerKind::Conv) {
                field[d] += (l.conv.kernel[d] - 1) * jump[d];
                jump[d] *= l.conv.stride[d];
            }
        }
    }
    return field;
}

std::size_t count_layers(const NetworkGraph& net, LayerKind kind, Stage stage) {
    return static_cast<std::size_t>(std::count_if(net.layers.begin(), net.layers.end(), [&](const Layer& l) {
        return l.kind == kind && l.stage == stage;
    }));
}

}  // namespace deepdose
