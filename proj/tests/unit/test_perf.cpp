#include "doctest.h"

#include <cmath>

#include "deepdose/error.hpp"
#include "deepdose/perf.hpp"

using namespace deepdose;

TEST_CASE("conv FLOPs and params by the multiply-accumulate formula") {
    const ConvSpec big = make_conv(1, 64, {3, 3, 3}, {1, 1, 1});
    CHECK(conv_flops(big, {128, 128, 32}) == 1811939328ULL);
    CHECK(conv_params(big) == 1792);

    const ConvSpec tiny = make_conv(1, 1, {1, 1, 1}, {1, 1, 1});
    CHECK(conv_flops(tiny, {1, 1, 1}) == 2);
    CHECK(conv_params(tiny) == 2);
}

TEST_CASE("decoupled module costs 4/9 of the regular one at stride 1") {
    for (std::size_t c : {1, 8, 64}) {
        const ModuleFlops f = module_flops(c, {32, 32, 16}, false);
        CHECK(9 * f.decoupled == 4 * f.regular);
        CHECK(f.regular == 2ULL * 27 * c * c * 32 * 32 * 16);
    }
    // Downsampling pair: axial runs at the half in-plane grid, slice at the
    // final one, so the ratio is 7/9.
    const ModuleFlops d = module_flops(64, {32, 32, 16}, true);
    CHECK(9 * d.decoupled == 7 * d.regular);
}

TEST_CASE("report totals are the sum of the rows") {
    const NetworkGraph net = build_network(ModelKind::Proposed, 8, 3);
    const FlopsReport r = count_flops(net, {32, 32, 16});
    CHECK(r.rows.size() == net.layers.size());
    std::uint64_t flops = 0, params = 0;
    for (const FlopsRow& row : r.rows) {
        if (row.kind != LayerKind::Conv) CHECK(row.flops == 0);
        flops += row.flops;
        params += row.params;
        CHECK(row.cumulative_flops == flops);
    }
    CHECK(r.total_flops == flops);
    CHECK(r.total_params == params);
    CHECK(r.total_params == count_params(net));
    CHECK(r.rows.back().output == Shape{1, 1, 32, 32, 16});
}

TEST_CASE("FLOPs scale linearly with volume") {
    for (ModelKind kind : {ModelKind::Proposed, ModelKind::UnetBaseline}) {
        const NetworkGraph net = build_network(kind, 8, 3);
        const std::uint64_t small = count_flops(net, {32, 32, 16}).total_flops;
        CHECK(count_flops(net, {64, 32, 16}).total_flops == 2 * small);
        CHECK(count_flops(net, {64, 64, 32}).total_flops == 8 * small);
    }
}

TEST_CASE("full-size complexity figures") {
    const FlopsReport proposed = count_flops(build_network(ModelKind::Proposed, 64, 5), {256, 256, 64});
    const FlopsReport unet = count_flops(build_network(ModelKind::UnetBaseline, 64, 6), {256, 256, 64});
    CHECK(proposed.gflops() >= 46.75);
    CHECK(proposed.gflops() <= 63.25);
    CHECK(unet.gflops() >= 787.0);
    CHECK(unet.gflops() <= 1065.0);
    CHECK(unet.gflops() / proposed.gflops() >= 12.0);
    CHECK(proposed.total_params >= 10800000);
    CHECK(proposed.total_params <= 13200000);
    CHECK(unet.total_params >= 44100000);
    CHECK(unet.total_params <= 53900000);
    const double ratio = static_cast<double>(unet.total_params) / static_cast<double>(proposed.total_params);
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
}

TEST_CASE("invalid extents are a contract error") {
    const NetworkGraph net = build_network(ModelKind::Proposed, 8, 3);
    CHECK_THROWS_AS(count_flops(net, {33, 32, 16}), ContractError);
    CHECK_THROWS_AS(count_flops(net, {32, 32, 0}), ContractError);
}

TEST_CASE("CSV and table output") {
    const FlopsReport r = count_flops(build_network(ModelKind::Proposed, 4, 2), {16, 16, 8});
    const std::string csv = flops_csv(r);
    CHECK(csv.rfind("layer,label,kind,input_shape,output_shape,flops,params,cumulative_flops\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == r.rows.size() + 2);
    CHECK(csv.find("total,,,,," + std::to_string(r.total_flops)) != std::string::npos);

    const std::string table = flops_table(r);
    CHECK(table.find("model proposed") != std::string::npos);
    CHECK(table.find("head.shuffle") != std::string::npos);
    CHECK(table.find("GFLOPs") != std::string::npos);
}

TEST_CASE("quantiles interpolate linearly") {
    CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
    CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
    CHECK(quantile({7}, 0.75) == 7.0);
    CHECK_THROWS_AS(quantile({}, 0.5), ContractError);
}

TEST_CASE("benchmark table shape") {
    BenchConfig cfg;
    cfg.extents = {8, 8, 4};
    cfg.channels = 4;
    cfg.repeats = 10;
    cfg.warmup = 1;
    const auto rows = bench_modules(cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].module == "regular");
    CHECK(rows[1].module == "decoupled");
    for (const BenchRow& r : rows) {
        CHECK(r.samples_ms.size() == 10);
        CHECK(r.repeats == 10);
        CHECK(r.median_ms > 0);
        CHECK(r.iqr_ms >= 0);
        CHECK(r.workers >= 1);
    }
    const std::string csv = bench_csv(rows);
    CHECK(csv.rfind("module,median_ms,iqr_ms,repeats,workers\nregular,", 0) == 0);

    cfg.repeats = 9;
    CHECK_THROWS_AS(bench_modules(cfg), InvalidConfig);
    cfg.repeats = 10;
    cfg.extents = {7, 8, 4};
    CHECK_THROWS_AS(bench_modules(cfg), InvalidConfig);
}
