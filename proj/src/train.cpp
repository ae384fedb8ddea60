#include "deepdose/train.hpp"

#include <cmath>
#include <random>

#include "binary_io.hpp"
#include "deepdose/error.hpp"
#include "deepdose/keyvalue.hpp"

namespace deepdose {

void TrainConfig::validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw InvalidConfig("lr must be > 0");
    if (!(beta1 > 0 && beta1 < 1)) throw InvalidConfig("beta1 must be in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) throw InvalidConfig("beta2 must be in (0, 1)");
    if (!(adam_eps > 0)) throw InvalidConfig("adam_eps must be > 0");
    if (!(normalization_dose > 0)) throw InvalidConfig("normalization_dose must be > 0");
    if (crop[0] == 0 || crop[1] == 0 || crop[2] == 0) throw InvalidConfig("crop extents must be nonzero");
    if (log_every == 0) throw InvalidConfig("log_every must be >= 1");
}

Triple TrainConfig::pad_for(const Triple& extents) const {
    Triple p{pad, pad, pad};
    if (pad_scaled) {
        for (int d = 0; d < 3; ++d) p[d] = std::min(pad, extents[d] / 4);
    }
    return p;
}

TrainConfig full_scale_train_config() {
    TrainConfig cfg;
    cfg.crop = {256, 256, 64};
    cfg.iterations = 200000;
    return cfg;
}

TrainConfig parse_train_config(const std::string& text, TrainConfig cfg) {
    for (const auto& [k, v] : parse_key_values(text, "train config")) {
        if (k == "lr") cfg.lr = parse_double(k, v);
        else if (k == "beta1") cfg.beta1 = parse_double(k, v);
        else if (k == "beta2") cfg.beta2 = parse_double(k, v);
        else if (k == "adam_eps") cfg.adam_eps = parse_double(k, v);
        else if (k == "iterations") cfg.iterations = parse_uint(k, v);
        else if (k == "crop") cfg.crop = parse_extents(v);
        else if (k == "pad") cfg.pad = parse_uint(k, v);
        else if (k == "pad_scaled") cfg.pad_scaled = parse_bool(k, v);
        else if (k == "normalization_dose") cfg.normalization_dose = parse_double(k, v);
        else if (k == "swap_input_target") cfg.swap_input_target = parse_bool(k, v);
        else if (k == "seed") cfg.seed = parse_uint(k, v);
        else if (k == "log_every") cfg.log_every = parse_uint(k, v);
        else throw InvalidConfig("train config: unknown key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
    return format_key_values({{"lr", format_double(cfg.lr)},
                              {"beta1", format_double(cfg.beta1)},
                              {"beta2", format_double(cfg.beta2)},
                              {"adam_eps", format_double(cfg.adam_eps)},
                              {"iterations", std::to_string(cfg.iterations)},
                              {"crop", format_extents(cfg.crop)},
                              {"pad", std::to_string(cfg.pad)},
                              {"pad_scaled", cfg.pad_scaled ? "true" : "false"},
                              {"normalization_dose", format_double(cfg.normalization_dose)},
                              {"swap_input_target", cfg.swap_input_target ? "true" : "false"},
                              {"seed", std::to_string(cfg.seed)},
                              {"log_every", std::to_string(cfg.log_every)}});
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
    return parse_train_config(detail::read_file(path), base);
}

Tensor n2n_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ContractError("n2n_loss: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    }
    return mean(square(sub(pred, target)));
}

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
    AdamState s;
    for (const Tensor& p : params) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(const std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads, AdamState& state,
               const TrainConfig& cfg) {
    if (grads.size() != params.size()) throw ContractError("adam_step: one gradient per parameter expected");
    if (state.m.empty() && state.t == 0) state = AdamState::zeros_like(params);
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adam_step: optimizer state does not match the parameter list");
    }
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        const std::size_t n = p.numel();
        if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
            throw ContractError("adam_step: shape mismatch on parameter " + std::to_string(i));
        }
        auto w = p.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < n; ++j) {
            const double g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1 - cfg.beta2) * g * g;
            w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
        }
    }
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg) {
    std::vector<std::vector<double>> zeros;
    std::vector<std::span<const double>> grads;
    zeros.reserve(params.size());
    for (const Tensor& p : params) {
        if (p.has_grad()) {
            grads.push_back(p.grad());
        } else {
            zeros.emplace_back(p.numel(), 0.0);
            grads.emplace_back(zeros.back());
        }
    }
    adam_step(params, grads, state, cfg);
}

namespace {

// Window of the zero-padded, normalized volume starting at `offset`.
Tensor padded_window(const DoseVolume& v, const Triple& pad, const Triple& offset, const Triple& crop, double scale) {
    std::vector<double> out(crop[0] * crop[1] * crop[2], 0.0);
    std::size_t idx = 0;
    for (std::size_t a = 0; a < crop[0]; ++a) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(offset[0] + a) - static_cast<std::ptrdiff_t>(pad[0]);
        for (std::size_t b = 0; b < crop[1]; ++b) {
            const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(offset[1] + b) - static_cast<std::ptrdiff_t>(pad[1]);
            for (std::size_t c = 0; c < crop[2]; ++c, ++idx) {
                const std::ptrdiff_t k =
                    static_cast<std::ptrdiff_t>(offset[2] + c) - static_cast<std::ptrdiff_t>(pad[2]);
                if (i < 0 || j < 0 || k < 0 || i >= static_cast<std::ptrdiff_t>(v.extents[0]) ||
                    j >= static_cast<std::ptrdiff_t>(v.extents[1]) || k >= static_cast<std::ptrdiff_t>(v.extents[2])) {
                    continue;
                }
                out[idx] = v.values[v.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                            static_cast<std::size_t>(k))] /
                           scale;
            }
        }
    }
    return Tensor::from_values({1, 1, crop[0], crop[1], crop[2]}, std::move(out));
}

}  // namespace

Sample preprocess(const NoisePair& pair, const TrainConfig& cfg, Rng& rng) {
    check_same_extents(pair.input.extents, pair.target.extents, "preprocess");
    const Triple& e = pair.input.extents;
    const Triple pad = cfg.pad_for(e);
    Sample s;
    for (int d = 0; d < 3; ++d) {
        const std::size_t padded = e[d] + 2 * pad[d];
        if (cfg.crop[d] > padded) {
            throw InvalidConfig("crop " + format_extents(cfg.crop) + " exceeds padded volume on axis " +
                                std::to_string(d) + " (" + std::to_string(padded) + ")");
        }
        s.offset[d] = std::uniform_int_distribution<std::size_t>(0, padded - cfg.crop[d])(rng);
    }
    if (cfg.swap_input_target) s.swapped = std::bernoulli_distribution(0.5)(rng);
    const DoseVolume& in = s.swapped ? pair.target : pair.input;
    const DoseVolume& tg = s.swapped ? pair.input : pair.target;
    s.input = padded_window(in, pad, s.offset, cfg.crop, cfg.normalization_dose);
    s.target = padded_window(tg, pad, s.offset, cfg.crop, cfg.normalization_dose);
    return s;
}

TrainResult train(NetworkGraph& net, const std::vector<PhantomCase>& cases, const TrainConfig& cfg) {
    cfg.validate();
    if (cases.empty()) throw ContractError("train: empty dataset");
    for (const PhantomCase& c : cases) {
        if (c.noisy.size() < 2) throw ContractError("train: " + c.name + " needs at least two noisy realizations");
    }
    check_input_extents(net, cfg.crop);
    if (!net.materialized()) throw ContractError("train: network weights are not initialized");

    Rng rng(cfg.seed);
    const std::vector<Tensor> params = net.parameters();
    AdamState state = AdamState::zeros_like(params);
    TrainResult result;
    double window = 0;
    std::size_t in_window = 0;
    for (std::size_t step = 1; step <= cfg.iterations; ++step) {
        const PhantomCase& c = cases[std::uniform_int_distribution<std::size_t>(0, cases.size() - 1)(rng)];
        const std::size_t a = std::uniform_int_distribution<std::size_t>(0, c.noisy.size() - 1)(rng);
        std::size_t b = std::uniform_int_distribution<std::size_t>(0, c.noisy.size() - 2)(rng);
        if (b >= a) ++b;
        const Sample s = preprocess(c.pair(a, b), cfg, rng);

        for (const Tensor& p : params) p.zero_grad();
        double value = 0;
        try {
            const Tensor loss = n2n_loss(forward(net, s.input), s.target);
            value = loss.item();
            if (!std::isfinite(value)) throw NumericError("non-finite loss");
            backward(loss);
        } catch (const NumericError& e) {
            throw NumericError("training step " + std::to_string(step) + ": " + e.what());
        }
        adam_step(params, state, cfg);

        result.last_loss = value;
        window += value;
        ++in_window;
        if (step % cfg.log_every == 0) {
            result.log.push_back({step, window / static_cast<double>(in_window)});
            window = 0;
            in_window = 0;
        }
    }
    return result;
}

std::string loss_csv(const std::vector<LossRecord>& log) {
    std::string out = "step,loss\n";
    for (const LossRecord& r : log) out += std::to_string(r.step) + "," + format_double(r.loss) + "\n";
    return out;
}

DoseVolume denoise(const NetworkGraph& net, const DoseVolume& noisy, double normalization_dose) {
    if (!(normalization_dose > 0)) throw InvalidConfig("normalization dose must be > 0");
    NoGradGuard guard;
    const Tensor out = forward(net, noisy.to_tensor(normalization_dose));
    DoseVolume v = volume_from_tensor(out, normalization_dose, noisy.voxel_size);
    v.histories = noisy.histories;
    v.seed = noisy.seed;
    return v;
}

ProbeReport n2n_equivalence_probe(std::size_t n_samples, std::uint64_t seed, double noise_bias) {
    if (n_samples < 2) throw ContractError("probe needs at least two samples");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    double sy = 0, syy = 0, sc = 0, syc = 0, sn = 0, syn = 0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double x = 1.0 + normal(rng);
        const double y = x + normal(rng);
        const double t = x + normal(rng) + noise_bias;
        sy += y;
        syy += y * y;
        sc += x;
        syc += y * x;
        sn += t;
        syn += y * t;
    }
    const double n = static_cast<double>(n_samples);
    const double var_y = syy / n - (sy / n) * (sy / n);
    ProbeReport r;
    r.samples = n_samples;
    r.noise_bias = noise_bias;
    r.a_clean = (syc / n - (sy / n) * (sc / n)) / var_y;
    r.b_clean = sc / n - r.a_clean * sy / n;
    r.a_noisy = (syn / n - (sy / n) * (sn / n)) / var_y;
    r.b_noisy = sn / n - r.a_noisy * sy / n;
    return r;
}

}  // namespace deepdose
