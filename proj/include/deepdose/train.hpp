#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepdose/model.hpp"
#include "deepdose/phantom.hpp"

namespace deepdose {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t iterations = 2000;
    Triple crop{32, 32, 16};
    // Zero padding per side before cropping. With pad_scaled the amount on
    // each axis is min(pad, extent / 4) so small volumes keep most content.
    std::size_t pad = 16;
    bool pad_scaled = true;
    double normalization_dose = 80.0;
    bool swap_input_target = true;
    std::uint64_t seed = 1;
    std::size_t log_every = 50;

    // InvalidConfig on out-of-range values.
    void validate() const;
    Triple pad_for(const Triple& extents) const;
};

// Full-scale recipe: 256x256x64 crops, 2e5 iterations, otherwise the defaults.
TrainConfig full_scale_train_config();

// Plain-text key=value form. Every field is written; unknown keys are
// rejected on parse and missing keys keep their defaults.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
std::string format_train_config(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});

// Mean squared error over all elements.
Tensor n2n_loss(const Tensor& pred, const Tensor& target);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    static AdamState zeros_like(const std::vector<Tensor>& params);
};

// One bias-corrected Adam update of every parameter in place.
void adam_step(const std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads, AdamState& state,
               const TrainConfig& cfg);
// Same, reading each parameter's accumulated gradient (zero if absent).
void adam_step(const std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg);

struct Sample {
    Tensor input;   // [1, 1, crop]
    Tensor target;
    Triple offset{0, 0, 0};  // crop corner in padded coordinates
    bool swapped = false;
};

// Normalizes both maps, pads them, cuts one random window shared by both
// and, when enabled, swaps roles with probability 1/2.
Sample preprocess(const NoisePair& pair, const TrainConfig& cfg, Rng& rng);

struct LossRecord {
    std::size_t step = 0;
    double loss = 0;
};

struct TrainResult {
    std::vector<LossRecord> log;
    double last_loss = 0;
};

// Each step draws a case uniformly, two distinct noisy realizations of it,
// a fresh crop, then runs forward, loss, backward and Adam. Every
// `log_every` steps the window's mean loss is logged. Clean maps are
// never read.
TrainResult train(NetworkGraph& net, const std::vector<PhantomCase>& cases, const TrainConfig& cfg);

// "step,loss" CSV.
std::string loss_csv(const std::vector<LossRecord>& log);

// Runs the network on a whole noisy map (dose / normalization in, back to Gy out).
DoseVolume denoise(const NetworkGraph& net, const DoseVolume& noisy, double normalization_dose = 80.0);

// Closed-form least-squares fit of t ~ a * y + b where y = x + e1 and the
// target is either the clean x or a second noisy copy x + e2 (+ bias).
// x ~ N(1, 1), e1, e2 ~ N(0, 1).
struct ProbeReport {
    std::size_t samples = 0;
    double noise_bias = 0;
    double a_clean = 0, b_clean = 0;
    double a_noisy = 0, b_noisy = 0;
    double gap_a() const { return a_noisy - a_clean; }
    double gap_b() const { return b_noisy - b_clean; }
};

ProbeReport n2n_equivalence_probe(std::size_t n_samples, std::uint64_t seed, double noise_bias = 0.0);

}  // namespace deepdose
