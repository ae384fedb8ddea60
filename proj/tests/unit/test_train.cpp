#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "deepdose/checkpoint.hpp"
#include "deepdose/error.hpp"
#include "deepdose/train.hpp"
#include "gradcheck.hpp"

using namespace deepdose;

namespace {

DoseVolume ramp_volume(const Triple& e, double offset) {
    DoseVolume v = DoseVolume::zeros(e);
    for (std::size_t i = 0; i < v.size(); ++i) v.values[i] = offset + static_cast<double>(i);
    return v;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<std::vector<double>> snapshot(const NetworkGraph& net) {
    std::vector<std::vector<double>> out;
    for (const Tensor& p : net.parameters()) out.push_back(values(p));
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

DatasetSpec small_dataset() {
    DatasetSpec spec;
    spec.extents = {16, 16, 8};
    spec.cases = 2;
    spec.realizations = 2;
    spec.seed = 5;
    return spec;
}

TrainConfig small_config(std::size_t iterations) {
    TrainConfig cfg;
    cfg.crop = {16, 16, 8};
    cfg.iterations = iterations;
    cfg.lr = 1e-3;
    cfg.log_every = 5;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("n2n_loss examples") {
    Rng rng(1);
    Tensor a = Tensor::randn({1, 1, 4, 4, 2}, 0.0, 1.0, rng);
    CHECK(n2n_loss(a, a).item() == 0.0);

    std::vector<double> shifted(a.data().begin(), a.data().end());
    for (double& v : shifted) v -= 0.75;
    CHECK(n2n_loss(a, Tensor::from_values(a.shape(), shifted)).item() == doctest::Approx(0.5625).epsilon(1e-12));

    Tensor b = Tensor::randn(a.shape(), 0.3, 2.0, rng);
    double sum = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    CHECK(std::abs(n2n_loss(a, b).item() - sum / static_cast<double>(a.numel())) < 1e-12);

    CHECK_THROWS_AS(n2n_loss(a, Tensor::zeros({1, 1, 4, 4, 4})), ContractError);
}

TEST_CASE("n2n_loss gradient matches finite differences") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto r = testing::gradcheck([](const std::vector<Tensor>& in) { return n2n_loss(in[0], in[1]); },
                                          {Tensor::randn({1, 1, 3, 2, 2}, 0.0, 1.0, rng),
                                           Tensor::randn({1, 1, 3, 2, 2}, 0.0, 1.0, rng)});
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("adam first step moves each parameter by about lr") {
    TrainConfig cfg;
    Tensor p = Tensor::from_values({4}, {1.0, -2.0, 0.5, 3.0});
    const std::vector<double> g{0.3, -5.0, 1e-3, 40.0};
    AdamState state = AdamState::zeros_like({p});
    adam_step({p}, {std::span<const double>(g)}, state, cfg);
    const std::vector<double> before{1.0, -2.0, 0.5, 3.0};
    for (std::size_t i = 0; i < 4; ++i) {
        const double step = std::abs(p.data()[i] - before[i]);
        CHECK(step >= 0.99 * cfg.lr);
        CHECK(step <= cfg.lr);
        CHECK((p.data()[i] - before[i]) * g[i] < 0);
    }
    CHECK(state.t == 1);
    for (double v : state.v[0]) CHECK(v >= 0);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    TrainConfig cfg;
    Tensor p = Tensor::from_values({3}, {1.0, 2.0, 3.0});
    const std::vector<double> g(3, 0.0);
    AdamState state = AdamState::zeros_like({p});
    for (int i = 0; i < 20; ++i) adam_step({p}, {std::span<const double>(g)}, state, cfg);
    CHECK(values(p) == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("adam on a quadratic bowl decreases |p| monotonically") {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    Tensor p = Tensor::from_values({1}, {1.0}).set_requires_grad();
    AdamState state = AdamState::zeros_like({p});
    double prev = 1.0;
    for (int i = 0; i < 100; ++i) {
        p.zero_grad();
        backward(sum(square(p)));
        adam_step({p}, state, cfg);
        const double now = std::abs(p.data()[0]);
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("adam rejects mismatched shapes") {
    TrainConfig cfg;
    Tensor p = Tensor::zeros({3});
    const std::vector<double> g(2, 1.0);
    AdamState state = AdamState::zeros_like({p});
    CHECK_THROWS_AS(adam_step({p}, {std::span<const double>(g)}, state, cfg), ContractError);
    CHECK_THROWS_AS(adam_step({p}, std::vector<std::span<const double>>{}, state, cfg), ContractError);
}

TEST_CASE("preprocess with no padding and a full crop is plain normalization") {
    const Triple e{4, 6, 2};
    NoisePair pair{ramp_volume(e, 0.0), ramp_volume(e, 100.0), "c"};
    TrainConfig cfg;
    cfg.pad = 0;
    cfg.crop = e;
    cfg.swap_input_target = false;
    Rng rng(1);
    const Sample s = preprocess(pair, cfg, rng);
    CHECK(s.offset == Triple{0, 0, 0});
    CHECK_FALSE(s.swapped);
    for (std::size_t i = 0; i < pair.input.size(); ++i) {
        CHECK(s.input.data()[i] == pair.input.values[i] / 80.0);
        CHECK(s.target.data()[i] == pair.target.values[i] / 80.0);
    }
}

TEST_CASE("preprocess cuts the same window from input and target") {
    const Triple e{16, 16, 8};
    NoisePair pair{ramp_volume(e, 1.0), ramp_volume(e, 1.0), "c"};
    TrainConfig cfg;
    cfg.crop = {8, 8, 4};
    cfg.pad_scaled = false;
    cfg.pad = 4;
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Sample s = preprocess(pair, cfg, rng);
        CHECK(values(s.input) == values(s.target));
        // Ramp value encodes the source voxel, so the window position is checkable.
        std::size_t idx = 0;
        for (std::size_t a = 0; a < 8; ++a)
            for (std::size_t b = 0; b < 8; ++b)
                for (std::size_t c = 0; c < 4; ++c, ++idx) {
                    const long i = static_cast<long>(s.offset[0] + a) - 4;
                    const long j = static_cast<long>(s.offset[1] + b) - 4;
                    const long k = static_cast<long>(s.offset[2] + c) - 4;
                    const bool inside = i >= 0 && j >= 0 && k >= 0 && i < 16 && j < 16 && k < 8;
                    const double expect = inside ? (1.0 + static_cast<double>((i * 16 + j) * 8 + k)) / 80.0 : 0.0;
                    CHECK(s.input.data()[idx] == expect);
                }
    }
}

TEST_CASE("preprocess swaps roles half of the time") {
    const Triple e{4, 4, 4};
    NoisePair pair{ramp_volume(e, 0.0), ramp_volume(e, 1000.0), "c"};
    TrainConfig cfg;
    cfg.pad = 0;
    cfg.crop = e;
    Rng rng(11);
    std::size_t swaps = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        const Sample s = preprocess(pair, cfg, rng);
        if (s.swapped) {
            ++swaps;
            CHECK(s.input.data()[0] == 1000.0 / 80.0);
        }
    }
    CHECK(std::abs(static_cast<double>(swaps) / n - 0.5) <= 0.02);
}

TEST_CASE("preprocess rejects crops larger than the padded volume") {
    const Triple e{8, 8, 4};
    NoisePair pair{ramp_volume(e, 0.0), ramp_volume(e, 0.0), "c"};
    TrainConfig cfg;
    cfg.crop = {8, 8, 8};
    cfg.pad_scaled = true;  // pad on z is min(16, 1) = 1 -> padded 6
    Rng rng(1);
    CHECK_THROWS_AS(preprocess(pair, cfg, rng), InvalidConfig);
    NoisePair mismatched{ramp_volume(e, 0.0), ramp_volume({8, 8, 2}, 0.0), "c"};
    CHECK_THROWS_AS(preprocess(mismatched, cfg, rng), ContractError);
}

TEST_CASE("zero iterations leave the network untouched") {
    const auto cases = make_dataset(small_dataset());
    NetworkGraph net = build_network(ModelKind::Proposed, 4, 2);
    initialize(net, 1);
    const auto before = snapshot(net);
    const TrainResult r = train(net, cases, small_config(0));
    CHECK(r.log.empty());
    CHECK(snapshot(net) == before);
    CHECK(loss_csv(r.log) == "step,loss\n");
}

TEST_CASE("short training run lowers the loss and is reproducible") {
    const auto cases = make_dataset(small_dataset());
    const TrainConfig cfg = small_config(60);
    NetworkGraph a = build_network(ModelKind::Proposed, 4, 2);
    NetworkGraph b = build_network(ModelKind::Proposed, 4, 2);
    initialize(a, 9);
    initialize(b, 9);
    const TrainResult ra = train(a, cases, cfg);
    const TrainResult rb = train(b, cases, cfg);
    REQUIRE(ra.log.size() == 12);
    CHECK(ra.log.front().step == 5);
    CHECK(ra.log.back().step == 60);
    for (const LossRecord& rec : ra.log) CHECK(std::isfinite(rec.loss));
    CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
    CHECK(loss_csv(ra.log) == loss_csv(rb.log));

    std::vector<double> head, tail;
    for (std::size_t i = 0; i < 2; ++i) head.push_back(ra.log[i].loss);
    for (std::size_t i = ra.log.size() - 2; i < ra.log.size(); ++i) tail.push_back(ra.log[i].loss);
    CHECK(median(tail) < median(head));

    const DoseVolume out = denoise(a, cases[0].noisy[0]);
    CHECK(out.extents == cases[0].noisy[0].extents);
    for (double v : out.values) CHECK(std::isfinite(v));
}

TEST_CASE("training rejects bad setups") {
    auto cases = make_dataset(small_dataset());
    NetworkGraph net = build_network(ModelKind::Proposed, 4, 2);
    CHECK_THROWS_AS(train(net, cases, small_config(1)), ContractError);  // not initialized
    initialize(net, 1);
    CHECK_THROWS_AS(train(net, {}, small_config(1)), ContractError);
    TrainConfig odd = small_config(1);
    odd.crop = {12, 16, 8};
    CHECK_THROWS_AS(train(net, cases, odd), InvalidConfig);
    cases[0].noisy.resize(1);
    CHECK_THROWS_AS(train(net, cases, small_config(1)), ContractError);
}

TEST_CASE("non-finite loss aborts with the step index") {
    const auto cases = make_dataset(small_dataset());
    NetworkGraph net = build_network(ModelKind::Proposed, 4, 2);
    initialize(net, 1);
    for (Layer& l : net.layers)
        if (l.kind == LayerKind::Conv) {
            for (double& v : l.conv.bias.mutable_data()) v = 1e300;
        }
    try {
        train(net, cases, small_config(3));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("training step 1") != std::string::npos);
    }
}

TEST_CASE("train config text round trip") {
    TrainConfig cfg;
    cfg.lr = 3e-4;
    cfg.crop = {64, 64, 16};
    cfg.swap_input_target = false;
    cfg.seed = 99;
    const std::string text = format_train_config(cfg);
    const TrainConfig back = parse_train_config(text);
    CHECK(format_train_config(back) == text);
    CHECK(back.lr == 3e-4);
    CHECK(back.crop == Triple{64, 64, 16});
    CHECK_FALSE(back.swap_input_target);

    CHECK(parse_train_config("iterations=7\n").iterations == 7);
    CHECK_THROWS_AS(parse_train_config("learning_rate=1\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_train_config("beta1=1\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_train_config("lr=0\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_train_config("lr=abc\n"), InvalidConfig);

    const TrainConfig full = full_scale_train_config();
    CHECK(full.crop == Triple{256, 256, 64});
    CHECK(full.iterations == 200000);
}

TEST_CASE("noise-to-noise and noise-to-clean minimizers agree") {
    const ProbeReport r = n2n_equivalence_probe(1000000, 4);
    CHECK(std::abs(r.gap_a()) < 5e-3);
    CHECK(std::abs(r.gap_b()) < 5e-3);
    // Population values: a = var(x) / var(y) = 1/2, b = 1/2.
    CHECK(r.a_clean == doctest::Approx(0.5).epsilon(0.01));
    CHECK(r.b_clean == doctest::Approx(0.5).epsilon(0.01));

    const ProbeReport biased = n2n_equivalence_probe(1000000, 4, 0.5);
    CHECK(std::abs(biased.gap_b() - 0.5) < 5e-3);
    CHECK(std::abs(biased.gap_a()) < 5e-3);
    CHECK_THROWS_AS(n2n_equivalence_probe(1, 1), ContractError);
}
