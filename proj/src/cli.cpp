#include "deepdose/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "binary_io.hpp"
#include "deepdose/checkpoint.hpp"
#include "deepdose/error.hpp"
#include "deepdose/metrics.hpp"
#include "deepdose/parallel.hpp"
#include "deepdose/perf.hpp"
#include "deepdose/phantom.hpp"
#include "deepdose/train.hpp"
#include "json.hpp"

namespace deepdose::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string pgm_image(std::size_t rows, std::size_t cols, const std::vector<double>& pixels, double lo, double hi) {
    if (pixels.size() != rows * cols) throw ContractError("pgm_image: pixel count does not match rows * cols");
    if (!(hi > lo)) throw ContractError("pgm_image: empty window");
    std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
    out.reserve(out.size() + pixels.size());
    for (double v : pixels) {
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    return out;
}

std::vector<std::string> write_slices(const DoseVolume& v, double lo, double hi, const std::string& prefix) {
    const auto [h, w, d] = v.extents;
    std::vector<double> axial, coronal, sagittal;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) axial.push_back(v.values[v.index(i, j, d / 2)]);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t k = 0; k < d; ++k) coronal.push_back(v.values[v.index(i, w / 2, k)]);
    for (std::size_t j = 0; j < w; ++j)
        for (std::size_t k = 0; k < d; ++k) sagittal.push_back(v.values[v.index(h / 2, j, k)]);
    const std::vector<std::string> paths{prefix + "_axial.pgm", prefix + "_coronal.pgm", prefix + "_sagittal.pgm"};
    detail::write_file_atomic(paths[0], pgm_image(h, w, axial, lo, hi));
    detail::write_file_atomic(paths[1], pgm_image(h, d, coronal, lo, hi));
    detail::write_file_atomic(paths[2], pgm_image(w, d, sagittal, lo, hi));
    return paths;
}

std::string divisibility_warning(const Triple& extents) {
    auto fits = [&](ModelKind kind, std::size_t down) {
        try {
            check_input_extents(build_network(kind, 1, down), extents);
            return true;
        } catch (const InvalidConfig&) {
            return false;
        }
    };
    if (fits(ModelKind::Proposed, 3)) return "";
    std::string valid;
    for (ModelKind kind : {ModelKind::Proposed, ModelKind::UnetBaseline}) {
        for (std::size_t down = 1; down <= 6; ++down) {
            if (fits(kind, down)) valid += " " + model_name(kind) + "/" + std::to_string(down);
        }
    }
    return "warning: extents " + format_extents(extents) +
           " do not fit the default proposed/3 model (every extent must be a multiple of 16); valid model/down "
           "configs:" +
           (valid.empty() ? std::string(" none") : valid);
}

namespace {

constexpr const char* kFormats = R"(File formats:
  DVOL  dose volume: "DVOL", u32 version=1, u32 H, W, D, f32 voxel size (mm) x3,
        u64 histories, u64 seed, then H*W*D little-endian f32 doses in Gy,
        index (i*W + j)*D + k.
  DMSK  structure mask: same header with magic "DMSK", values 0 or 1.
  DDPK  checkpoint: "DDPK", u32 version, u64 init seed, u32 model tag
        (0 proposed, 1 unet), u32 base features, u32 down count, then per
        parameterized layer: u32 layer id, u64 count, f64 values.
  Text configs and manifests are key=value lines; run manifests are JSON.
  CSV outputs carry a header row. Slice images are 8-bit binary PGM.)";

// One subcommand invocation's record for the run manifest.
struct Run {
    std::string subcommand;
    std::string out_dir;
    ordered_json config = ordered_json::object();
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    std::string out(const std::string& name) {
        const std::string path = (fs::path(out_dir) / name).string();
        outputs.push_back(path);
        return path;
    }
};

void write_text(Run& run, const std::string& name, const std::string& text) {
    detail::write_file_atomic(run.out(name), text);
}

void write_manifest(const Run& run, const std::vector<std::string>& argv, double seconds) {
    ordered_json m;
    m["tool"] = "deepdose";
    m["version"] = kToolVersion;
    m["subcommand"] = run.subcommand;
    m["argv"] = argv;
    m["config"] = run.config;
    m["seed"] = run.seed;
    m["inputs"] = run.inputs;
    m["outputs"] = run.outputs;
    m["wall_time_s"] = seconds;
    detail::write_file_atomic((fs::path(run.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

struct PhantomArgs {
    std::size_t cases = 8;
    std::size_t pairs = 2;
    std::uint64_t histories = 1000000;
    std::string extents = "32x32x16";
    std::uint64_t seed = 1;
    std::size_t beams = 3;
    double buildup = 12.0;
    double alpha = 120.0;
    bool slices = false;
};

void cmd_phantom(const PhantomArgs& a, Run& run) {
    DatasetSpec spec;
    spec.extents = parse_extents(a.extents);
    spec.cases = a.cases;
    spec.realizations = a.pairs;
    spec.histories = a.histories;
    spec.seed = a.seed;
    spec.beams = a.beams;
    spec.buildup_mm = a.buildup;
    spec.noise.alpha = a.alpha;
    if (spec.histories == 0) throw InvalidConfig("--histories must be > 0");
    if (spec.realizations < 2) throw InvalidConfig("--pairs must be >= 2 (training needs two noisy maps per case)");

    const std::string warning = divisibility_warning(spec.extents);
    if (!warning.empty()) std::cerr << warning << "\n";

    run.seed = spec.seed;
    run.config = {{"cases", spec.cases},           {"pairs", spec.realizations},
                  {"histories", spec.histories},   {"extents", format_extents(spec.extents)},
                  {"seed", spec.seed},             {"beams", spec.beams},
                  {"buildup_mm", spec.buildup_mm}, {"noise_alpha", spec.noise.alpha},
                  {"slices", a.slices}};
    const std::vector<std::string> names = write_dataset(spec, run.out_dir);
    for (const std::string& n : names) run.outputs.push_back((fs::path(run.out_dir) / n).string());
    run.outputs.push_back((fs::path(run.out_dir) / "dataset.txt").string());
    if (a.slices) {
        const PhantomCase c = load_case((fs::path(run.out_dir) / names.front()).string());
        const std::string dir = (fs::path(run.out_dir) / "slices").string();
        for (const auto& p : write_slices(c.clean, 0, 80, dir + "/" + c.name + "_clean")) run.outputs.push_back(p);
        for (const auto& p : write_slices(c.noisy.front(), 0, 80, dir + "/" + c.name + "_noisy00"))
            run.outputs.push_back(p);
    }
    std::cout << "wrote " << names.size() << " cases x " << spec.realizations << " noisy maps to " << run.out_dir
              << "\n";
}

struct TrainArgs {
    std::string data;
    std::string config_file;
    std::string resume;
    std::string model = "proposed";
    std::size_t features = 8;
    std::size_t down = 3;
    std::size_t holdout = 0;
    std::uint64_t init_seed = 1;
    // Overrides of the config file; only applied when given.
    std::size_t iterations = 0;
    double lr = 0;
    std::string crop;
    std::uint64_t seed = 0;
    std::size_t pad = 0;
    std::size_t log_every = 0;
    bool no_swap = false;
};

void cmd_train(const TrainArgs& a, const CLI::App& sub, Run& run) {
    TrainConfig cfg;
    if (!a.config_file.empty()) {
        cfg = load_train_config(a.config_file);
        run.inputs.push_back(a.config_file);
    }
    if (sub.count("--iterations")) cfg.iterations = a.iterations;
    if (sub.count("--lr")) cfg.lr = a.lr;
    if (sub.count("--crop")) cfg.crop = parse_extents(a.crop);
    if (sub.count("--seed")) cfg.seed = a.seed;
    if (sub.count("--pad")) cfg.pad = a.pad;
    if (sub.count("--log-every")) cfg.log_every = a.log_every;
    if (a.no_swap) cfg.swap_input_target = false;
    cfg.validate();

    std::vector<PhantomCase> cases = load_dataset(a.data);
    run.inputs.push_back(a.data);
    if (a.holdout >= cases.size()) throw InvalidConfig("--holdout leaves no training cases");
    cases.resize(cases.size() - a.holdout);

    NetworkGraph net;
    if (!a.resume.empty()) {
        net = load_checkpoint(a.resume);
        run.inputs.push_back(a.resume);
    } else {
        net = build_network(parse_model_kind(a.model), a.features, a.down);
        initialize(net, a.init_seed);
    }
    run.seed = cfg.seed;
    run.config = {{"model", net.name()},
                  {"features", net.base_features},
                  {"down", net.num_down},
                  {"init_seed", net.seed},
                  {"resume", a.resume},
                  {"holdout", a.holdout},
                  {"training_cases", cases.size()},
                  {"train_config", format_train_config(cfg)}};

    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train(net, cases, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(net, run.out("model.ddpk"));
    write_text(run, "loss.csv", loss_csv(result.log));
    write_text(run, "train_config.txt", format_train_config(cfg));
    std::cout << "trained " << net.name() << " for " << cfg.iterations << " steps on " << cases.size()
              << " cases in " << seconds << " s, last loss " << result.last_loss << "\n";
}

struct DenoiseArgs {
    std::string checkpoint;
    std::string input;
    double normalization = 80.0;
    bool slices = false;
};

void cmd_denoise(const DenoiseArgs& a, Run& run) {
    const NetworkGraph net = load_checkpoint(a.checkpoint);
    const DoseVolume noisy = load_volume(a.input);
    run.inputs = {a.checkpoint, a.input};
    run.seed = noisy.seed;
    run.config = {{"normalization_dose", a.normalization}, {"model", net.name()}, {"slices", a.slices}};
    const DoseVolume out = denoise(net, noisy, a.normalization);
    save_volume(out, run.out("denoised.dvol"));
    if (a.slices) {
        const std::string dir = (fs::path(run.out_dir) / "slices").string();
        for (const auto& p : write_slices(noisy, 0, 80, dir + "/input")) run.outputs.push_back(p);
        for (const auto& p : write_slices(out, 0, 80, dir + "/denoised")) run.outputs.push_back(p);
    }
    std::cout << "denoised " << a.input << " -> " << run.outputs.front() << "\n";
}

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    std::vector<std::string> case_names;
    std::size_t holdout = 0;
    std::size_t realizations = 0;
    bool slices = false;
};

DoseVolume difference(const DoseVolume& a, const DoseVolume& b) {
    DoseVolume d = a;
    for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = a.values[i] - b.values[i];
    return d;
}

void cmd_eval(const EvalArgs& a, Run& run) {
    std::vector<PhantomCase> cases = load_dataset(a.data);
    run.inputs.push_back(a.data);
    if (!a.case_names.empty()) {
        std::vector<PhantomCase> picked;
        for (const std::string& n : a.case_names) {
            auto it = std::find_if(cases.begin(), cases.end(), [&](const PhantomCase& c) { return c.name == n; });
            if (it == cases.end()) throw InvalidConfig("--cases: no case named '" + n + "'");
            picked.push_back(*it);
        }
        cases = std::move(picked);
    } else if (a.holdout > 0) {
        if (a.holdout > cases.size()) throw InvalidConfig("--holdout exceeds the number of cases");
        cases.erase(cases.begin(), cases.end() - static_cast<std::ptrdiff_t>(a.holdout));
    }

    NetworkGraph net;
    const bool have_net = !a.checkpoint.empty();
    if (have_net) {
        net = load_checkpoint(a.checkpoint);
        run.inputs.push_back(a.checkpoint);
    }
    const DatasetSpec spec = load_dataset_spec(a.data);
    run.seed = spec.seed;
    ordered_json names = ordered_json::array();
    for (const PhantomCase& c : cases) names.push_back(c.name);
    run.config = {{"cases", names},
                  {"realizations", a.realizations},
                  {"model", have_net ? net.name() : ""},
                  {"slices", a.slices}};

    std::vector<MetricsRow> rows;
    for (const PhantomCase& c : cases) {
        const std::size_t count = a.realizations ? a.realizations : c.noisy.size();
        for (std::size_t r = 0; r < count; ++r) {
            // Fresh realizations are indexed past the stored ones so they
            // never coincide with training maps.
            const DoseVolume noisy = a.realizations ? noisy_realization(spec, c, spec.realizations + r) : c.noisy[r];
            rows.push_back({c.name, r, "noisy", evaluate(noisy, c.clean, c.ptv, c.body)});
            if (!have_net) continue;
            const DoseVolume den = denoise(net, noisy);
            rows.push_back({c.name, r, net.name(), evaluate(den, c.clean, c.ptv, c.body)});
            if (a.slices && r == 0) {
                const std::string p = (fs::path(run.out_dir) / "slices" / c.name).string();
                for (const auto& s : write_slices(c.clean, 0, 80, p + "_clean")) run.outputs.push_back(s);
                for (const auto& s : write_slices(noisy, 0, 80, p + "_noisy")) run.outputs.push_back(s);
                for (const auto& s : write_slices(den, 0, 80, p + "_denoised")) run.outputs.push_back(s);
                for (const auto& s : write_slices(difference(noisy, c.clean), -8, 8, p + "_noisy_diff"))
                    run.outputs.push_back(s);
                for (const auto& s : write_slices(difference(den, c.clean), -8, 8, p + "_denoised_diff"))
                    run.outputs.push_back(s);
            }
        }
    }
    write_text(run, "metrics.csv", metrics_csv(rows));
    const std::string summary = metrics_summary(rows);
    write_text(run, "summary.txt", summary);
    std::cout << summary;
}

struct AnalyzeArgs {
    std::string model = "proposed";
    std::string extents = "256x256x64";
    std::size_t features = 64;
    std::size_t down = 0;  // 0: 5 for proposed, 6 for unet
};

void cmd_analyze(const AnalyzeArgs& a, Run& run) {
    const ModelKind kind = parse_model_kind(a.model);
    const std::size_t down = a.down ? a.down : (kind == ModelKind::Proposed ? 5 : 6);
    const Triple extents = parse_extents(a.extents);
    const NetworkGraph net = build_network(kind, a.features, down);
    FlopsReport report;
    try {
        report = count_flops(net, extents);
    } catch (const ContractError& e) {
        throw InvalidConfig(e.what());
    }
    run.config = {{"model", net.name()}, {"features", a.features}, {"down", down}, {"extents", format_extents(extents)}};
    write_text(run, "flops.csv", flops_csv(report));
    const std::string table = flops_table(report);
    write_text(run, "flops.txt", table);
    std::cout << table;
}

struct BenchArgs {
    std::string extents = "32x32x16";
    std::size_t channels = 64;
    std::size_t repeats = 100;
    std::size_t warmup = 2;
    bool stride1 = false;
    std::uint64_t seed = 1;
};

void cmd_bench(const BenchArgs& a, Run& run) {
    BenchConfig cfg;
    cfg.extents = parse_extents(a.extents);
    cfg.channels = a.channels;
    cfg.repeats = a.repeats;
    cfg.warmup = a.warmup;
    cfg.downsample = !a.stride1;
    cfg.seed = a.seed;
    run.seed = cfg.seed;
    run.config = {{"extents", format_extents(cfg.extents)}, {"channels", cfg.channels}, {"repeats", cfg.repeats},
                  {"warmup", cfg.warmup},                    {"downsample", cfg.downsample}, {"workers", worker_count()}};
    const std::string csv = bench_csv(bench_modules(cfg));
    write_text(run, "bench.csv", csv);
    const ModuleFlops f = module_flops(cfg.channels, cfg.extents, cfg.downsample);
    std::cout << csv << "analytic FLOPs decoupled/regular = " << f.decoupled << "/" << f.regular << " = "
              << static_cast<double>(f.decoupled) / static_cast<double>(f.regular) << "\n";
}

std::vector<std::string> replay_args(const std::string& manifest_path, const std::string& out_override) {
    ordered_json m;
    try {
        m = ordered_json::parse(detail::read_file(manifest_path));
    } catch (const ordered_json::exception& e) {
        throw FormatError(manifest_path + ": " + e.what());
    }
    if (!m.contains("argv") || !m["argv"].is_array()) throw FormatError(manifest_path + ": no argv array");
    std::vector<std::string> args = m["argv"].get<std::vector<std::string>>();
    if (!out_override.empty()) {
        bool replaced = false;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--out" && i + 1 < args.size()) {
                args[i + 1] = out_override;
                replaced = true;
            } else if (args[i].rfind("--out=", 0) == 0) {
                args[i] = "--out=" + out_override;
                replaced = true;
            }
        }
        if (!replaced) throw FormatError(manifest_path + ": argv has no --out to override");
    }
    return args;
}

int dispatch(const std::vector<std::string>& args);

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const InvalidConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Monte Carlo dose denoiser: phantoms, noise-to-noise training, evaluation, complexity analysis",
                 "deepdose"};
    app.set_version_flag("--version", kToolVersion);
    app.footer(kFormats);
    std::size_t workers = 1;
    std::string replay, replay_out;
    app.add_option("--workers", workers, "Kernel worker threads (1 is the reference configuration)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--replay", replay, "Rerun the command recorded in a manifest.json");
    app.add_option("--replay-out", replay_out, "With --replay: write to this --out directory instead")
        ->needs("--replay");
    app.require_subcommand(0, 1);

    std::string out_dir;
    auto add_out = [&](CLI::App* sub) {
        sub->add_option("--out", out_dir, "Output directory (created if missing)")->required();
        sub->footer(kFormats);
    };

    PhantomArgs pa;
    CLI::App* phantom = app.add_subcommand("phantom", "Generate a synthetic dose dataset with paired noisy maps");
    phantom->add_option("--cases", pa.cases, "Number of phantom cases")->capture_default_str()->check(CLI::PositiveNumber);
    phantom->add_option("--pairs", pa.pairs, "Noisy realizations per case")->capture_default_str();
    phantom->add_option("--histories", pa.histories, "Simulated histories per noisy map")->capture_default_str();
    phantom->add_option("--extents", pa.extents, "Grid as HxWxD")->capture_default_str();
    phantom->add_option("--seed", pa.seed, "Dataset seed")->capture_default_str();
    phantom->add_option("--beams", pa.beams, "Coplanar beams per case")->capture_default_str()->check(CLI::PositiveNumber);
    phantom->add_option("--buildup", pa.buildup, "Skin build-up depth in mm (0 disables)")->capture_default_str();
    phantom->add_option("--alpha", pa.alpha, "Noise amplitude at the reference dose and 1 history")->capture_default_str();
    phantom->add_flag("--slices", pa.slices, "Also write PGM slices of the first case");
    add_out(phantom);

    TrainArgs ta;
    CLI::App* train_cmd = app.add_subcommand("train", "Noise-to-noise training on a phantom dataset");
    train_cmd->add_option("--data", ta.data, "Dataset directory written by `phantom`")->required();
    train_cmd->add_option("--config", ta.config_file, "key=value train config; flags below override it");
    train_cmd->add_option("--resume", ta.resume, "Start from this checkpoint instead of a fresh net");
    train_cmd->add_option("--model", ta.model, "proposed | unet")->capture_default_str();
    train_cmd->add_option("--features", ta.features, "Base feature count")->capture_default_str();
    train_cmd->add_option("--down", ta.down, "Downsampling modules")->capture_default_str();
    train_cmd->add_option("--init-seed", ta.init_seed, "Weight init seed")->capture_default_str();
    train_cmd->add_option("--holdout", ta.holdout, "Leave the last N cases out of training")->capture_default_str();
    train_cmd->add_option("--iterations", ta.iterations, "Training steps (default 2000)");
    train_cmd->add_option("--lr", ta.lr, "Adam learning rate (default 1e-4)");
    train_cmd->add_option("--crop", ta.crop, "Crop extents HxWxD (default 32x32x16)");
    train_cmd->add_option("--seed", ta.seed, "Sampling seed (default 1)");
    train_cmd->add_option("--pad", ta.pad, "Zero padding per side before cropping (default 16)");
    train_cmd->add_option("--log-every", ta.log_every, "Loss log cadence in steps (default 50)");
    train_cmd->add_flag("--no-swap", ta.no_swap, "Disable random input/target swapping");
    add_out(train_cmd);

    DenoiseArgs da;
    CLI::App* denoise_cmd = app.add_subcommand("denoise", "Run a checkpoint on one DVOL file");
    denoise_cmd->add_option("--checkpoint", da.checkpoint, "DDPK checkpoint")->required();
    denoise_cmd->add_option("--input", da.input, "Noisy DVOL")->required();
    denoise_cmd->add_option("--normalization", da.normalization, "Dose scale in Gy")->capture_default_str();
    denoise_cmd->add_flag("--slices", da.slices, "Also write PGM slices, window [0, 80] Gy");
    add_out(denoise_cmd);

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Dose metrics of noisy and denoised maps against clean ones");
    eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "DDPK checkpoint; without it only noisy maps are scored");
    eval_cmd->add_option("--cases", ea.case_names, "Case names to score (default all)")->delimiter(',');
    eval_cmd->add_option("--holdout", ea.holdout, "Score only the last N cases")->excludes("--cases");
    eval_cmd->add_option("--realizations", ea.realizations,
                         "Fresh noisy realizations per case (0 uses the stored maps)")
        ->capture_default_str();
    eval_cmd->add_flag("--slices", ea.slices, "PGM slices of realization 0, doses [0, 80] Gy, differences [-8, 8] Gy");
    add_out(eval_cmd);

    AnalyzeArgs aa;
    CLI::App* analyze = app.add_subcommand("analyze", "FLOPs and parameter counts per layer");
    analyze->add_option("--model", aa.model, "proposed | unet")->capture_default_str();
    analyze->add_option("--extents", aa.extents, "Input extents HxWxD")->capture_default_str();
    analyze->add_option("--features", aa.features, "Base feature count")->capture_default_str();
    analyze->add_option("--down", aa.down, "Downsampling modules (default 5 proposed, 6 unet)");
    add_out(analyze);

    BenchArgs ba;
    CLI::App* bench = app.add_subcommand("bench", "Wall time of a regular 3D module vs a decoupled one");
    bench->add_option("--extents", ba.extents, "Input extents HxWxD")->capture_default_str();
    bench->add_option("--channels", ba.channels, "Input and output channels")->capture_default_str();
    bench->add_option("--repeats", ba.repeats, "Timed repeats (>= 10)")->capture_default_str();
    bench->add_option("--warmup", ba.warmup, "Untimed warm-up runs")->capture_default_str();
    bench->add_flag("--stride1", ba.stride1, "Same-resolution modules instead of downsampling ones");
    bench->add_option("--seed", ba.seed, "Weight and input seed")->capture_default_str();
    add_out(bench);

    std::vector<const char*> argv{"deepdose"};
    for (const std::string& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (!replay.empty()) {
        if (!app.get_subcommands().empty()) {
            std::cerr << "error: --replay takes no subcommand\n";
            return kUsage;
        }
        return guarded([&] { return dispatch(replay_args(replay, replay_out)); });
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return kUsage;
    }

    set_worker_count(workers);
    CLI::App* sub = app.get_subcommands().front();
    return guarded([&] {
        Run run{sub->get_name(), out_dir};
        const auto t0 = std::chrono::steady_clock::now();
        fs::create_directories(out_dir);
        if (sub == phantom) cmd_phantom(pa, run);
        else if (sub == train_cmd) cmd_train(ta, *sub, run);
        else if (sub == denoise_cmd) cmd_denoise(da, run);
        else if (sub == eval_cmd) cmd_eval(ea, run);
        else if (sub == analyze) cmd_analyze(aa, run);
        else cmd_bench(ba, run);
        run.config["workers"] = workers;
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::vector<std::string> recorded{"--workers", std::to_string(workers)};
        for (const std::string& s : args) recorded.push_back(s);
        // --workers may already be in args; CLI11 keeps the last value, so
        // the prefix never changes the replayed run.
        write_manifest(run, recorded, seconds);
        return static_cast<int>(kOk);
    });
}

}  // namespace

int run(const std::vector<std::string>& args) { return guarded([&] { return dispatch(args); }); }

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace deepdose::cli
