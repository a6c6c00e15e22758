#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "evt/blockcheck.hpp"
#include "evt/checkpoint.hpp"
#include "evt/config.hpp"
#include "evt/events.hpp"
#include "evt/gradcheck.hpp"
#include "evt/rng.hpp"
#include "evt/training.hpp"

namespace fs = std::filesystem;

// Exit codes: 0 success, 1 verification failure, 2 usage/config,
// 3 divergence, 4 checkpoint incompatibility.
namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerification = 1;
constexpr int kExitUsage = 2;

struct SynthArgs {
    std::string out;
    int classes = 4;
    int train_per_class = 200;
    int test_per_class = 100;
    int events = 512;
    uint64_t seed = 0;
};

int cmd_make_synth(const SynthArgs& a) {
    fs::create_directories(a.out);
    const int per_class = a.train_per_class + a.test_per_class;
    auto data = evt::synth_dataset(a.classes, per_class, a.events, a.seed);
    std::vector<evt::ManifestEntry> train, test;
    size_t i = 0;
    for (int cls = 0; cls < a.classes; ++cls) {
        const fs::path cls_dir = fs::path(a.out) / std::to_string(cls);
        fs::create_directories(cls_dir);
        for (int j = 0; j < per_class; ++j, ++i) {
            const bool is_train = j < a.train_per_class;
            const std::string name = (is_train ? "train_" : "test_") + std::to_string(j) + ".bin";
            const std::string path = (cls_dir / name).string();
            evt::save_nmnist_file(data[i].stream, path);
            (is_train ? train : test).push_back({path, cls});
        }
    }
    evt::write_manifest(train, (fs::path(a.out) / "train.tsv").string());
    evt::write_manifest(test, (fs::path(a.out) / "test.tsv").string());
    std::printf("wrote %zu train + %zu test samples under %s\n", train.size(), test.size(),
                a.out.c_str());
    return kExitOk;
}

int cmd_inspect(const std::string& path, int dump) {
    auto s = evt::load_nmnist_file(path);
    size_t pos = 0, neg = 0;
    int min_x = s.width, max_x = -1, min_y = s.height, max_y = -1;
    for (const auto& e : s.events) {
        (e.p == 1 ? pos : neg)++;
        min_x = std::min(min_x, e.x);
        max_x = std::max(max_x, e.x);
        min_y = std::min(min_y, e.y);
        max_y = std::max(max_y, e.y);
    }
    const int64_t duration = s.empty() ? 0 : s.events.back().t - s.events.front().t;
    std::printf("count=%zu\n", s.size());
    std::printf("duration_us=%" PRId64 "\n", duration);
    std::printf("polarity_pos=%zu polarity_neg=%zu\n", pos, neg);
    std::printf("x_extent=[%d,%d] y_extent=[%d,%d]\n", min_x, max_x, min_y, max_y);
    for (int i = 0; i < dump && i < static_cast<int>(s.size()); ++i) {
        const auto& e = s.events[i];
        std::printf("event %d: x=%d y=%d t=%" PRId64 " p=%+d\n", i, e.x, e.y, e.t, e.p);
    }
    return kExitOk;
}

// Toy-scale full model: every stage letter exercised, single-affine MLPs so
// the only nonsmooth pieces are max pools with generic (untied) inputs.
evt::GradCheckCase run_model_gradcheck(uint64_t seed) {
    evt::ModelConfig cfg;
    cfg.channels = 4;
    cfg.expansion = {2, 2, 4};
    cfg.attn.neighbors = 4;
    cfg.attn.rate = 8;
    cfg.attn.sc_channels = {4, 4, 4, 4};
    cfg.num_classes = 3;
    cfg.head_hidden = {};
    cfg.sensor_height = 12;
    cfg.sensor_width = 12;
    cfg.mlp_layers = 1;

    evt::ParamBank<double> bank(evt::derive_seed(seed, "model-init"));
    evt::ModelIds ids = evt::register_model(bank, cfg);
    evt::Rng rng(evt::derive_seed(seed, "model-events"));
    evt::Tensor<double> events = evt::bcdetail::random_block_events(rng, 64, 12, 12);
    std::vector<double> pv(cfg.num_classes);
    for (auto& v : pv) v = rng.uniform(-1.0, 1.0);
    auto probe = std::make_shared<const std::vector<double>>(std::move(pv));

    auto build = [&](evt::Tape<double>& tape, const std::vector<evt::Var<double>>& vars) {
        bank.adopt(vars);
        return evt::dot_const(evt::model_logits(tape, bank, ids, cfg, events), probe);
    };
    evt::GradCheckReport rep =
        evt::check_gradients(bank.values(), build, 1e-5, 3, evt::derive_seed(seed, "model-fd"));
    return {"model/backbone", rep.max_rel_err, 1, rep.coords_checked};
}

int cmd_gradcheck(uint64_t seed, int instances, const std::string& fault_op) {
    if (!fault_op.empty()) evt::fault::set(fault_op);
    bool ok = true;
    std::string first_failure;

    auto report = [&](const std::string& name, double err, double threshold, size_t coords) {
        const bool pass = err <= threshold;
        std::printf("%s %-28s rel_err=%.3e threshold=%.0e coords=%zu\n", pass ? "ok  " : "FAIL",
                    name.c_str(), err, threshold, coords);
        if (!pass && first_failure.empty()) first_failure = name;
        ok = ok && pass;
    };

    for (const auto& c : evt::run_primitive_gradchecks(seed, static_cast<size_t>(instances)))
        report("primitive/" + c.name, c.max_rel_err, 1e-5, c.coords);
    for (const auto& c : evt::run_block_gradchecks(seed, static_cast<size_t>(instances)))
        report(c.name, c.max_rel_err, 1e-4, c.coords);
    {
        const auto c = run_model_gradcheck(seed);
        report(c.name, c.max_rel_err, 1e-4, c.coords);
    }

    evt::fault::clear();
    if (!ok) {
        std::printf("gradcheck FAILED at %s\n", first_failure.c_str());
        return kExitVerification;
    }
    std::printf("gradcheck passed\n");
    return kExitOk;
}

// Flag overrides beat config-file values; only flags the user passed apply.
struct ConfigOverrides {
    std::deque<std::string> storage;  // stable addresses for CLI11 bindings
    std::vector<std::pair<CLI::Option*, std::string>> opts;

    CLI::Option* add(CLI::App* sc, const std::string& flag, const std::string& key,
                     const std::string& help) {
        storage.emplace_back();
        auto* opt = sc->add_option(flag, storage.back(), help);
        opts.emplace_back(opt, key);
        return opt;
    }

    void apply(evt::Config& c) const {
        size_t i = 0;
        for (const auto& [opt, key] : opts) {
            if (opt->count() > 0) c.set(key, storage[i]);
            ++i;
        }
    }
};

struct LoadedData {
    std::vector<evt::LabeledSample> train, test;
};

// A dataset directory either carries train.tsv/test.tsv manifests (make-synth
// layout) or <class>/<sample>.bin trees that get a seeded stratified split.
LoadedData resolve_dataset(const std::string& dataset_dir, const std::string& train_manifest,
                           const std::string& test_manifest, uint64_t split_seed) {
    LoadedData out;
    std::string train_path = train_manifest, test_path = test_manifest;
    if (train_path.empty() && !dataset_dir.empty()) {
        const fs::path root(dataset_dir);
        if (fs::exists(root / "train.tsv")) {
            train_path = (root / "train.tsv").string();
            if (test_path.empty() && fs::exists(root / "test.tsv"))
                test_path = (root / "test.tsv").string();
        } else {
            auto [tr, te] =
                evt::train_test_split(evt::scan_dataset_root(dataset_dir), 0.8, split_seed);
            out.train = evt::load_samples(tr);
            out.test = evt::load_samples(te);
            return out;
        }
    }
    if (train_path.empty()) throw evt::ConfigError("no dataset given (--dataset or manifests)");
    out.train = evt::load_samples(evt::read_manifest(train_path));
    if (!test_path.empty()) out.test = evt::load_samples(evt::read_manifest(test_path));
    return out;
}

size_t infer_classes(const LoadedData& data) {
    int top = -1;
    for (const auto& s : data.train) top = std::max(top, s.label);
    for (const auto& s : data.test) top = std::max(top, s.label);
    if (top < 1) throw evt::ConfigError("dataset needs at least 2 classes");
    return static_cast<size_t>(top) + 1;
}

int cmd_train(evt::Config& c, const std::string& dataset, const std::string& out_dir,
              uint64_t master_seed) {
    const bool classes_given = c.has("model.classes");
    if (!c.has("model.fps_seed"))
        c.set("model.fps_seed", std::to_string(evt::derive_seed(master_seed, "fps")));
    if (!c.has("train.seed")) c.set("train.seed", std::to_string(master_seed));

    evt::ModelConfig mcfg = evt::ModelConfig::from_config(c);
    evt::TrainConfig tcfg = evt::TrainConfig::from_config(c);
    c.reject_unconsumed();

    LoadedData data =
        resolve_dataset(dataset, tcfg.train_data, tcfg.test_data,
                        evt::derive_seed(master_seed, "split"));
    if (data.train.empty()) throw evt::ConfigError("training set is empty");
    if (!classes_given) {
        mcfg.num_classes = infer_classes(data);
        mcfg.validate();
    }

    evt::ParamBank<float> bank(evt::derive_seed(master_seed, "init"));
    evt::ModelIds ids = evt::register_model(bank, mcfg);
    std::vector<evt::Tensor<float>> velocity;

    std::printf("%s\n", evt::kMetricsHeader);
    evt::TrainResult res =
        evt::train_model(bank, ids, mcfg, tcfg, data.train, data.test, velocity, out_dir, true);

    const evt::MetricsRow last = res.metrics.empty() ? evt::MetricsRow{} : res.metrics.back();
    std::printf("done: steps=%zu train_acc=%.4f", res.steps, last.train_acc);
    if (last.test_acc >= 0.0) std::printf(" test_acc=%.4f", last.test_acc);
    if (!out_dir.empty())
        std::printf(" checkpoint=%s", (fs::path(out_dir) / "model.evtf").string().c_str());
    std::printf("\n");
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset,
             const std::string& manifest, const std::string& on) {
    evt::Checkpoint ck = evt::load_checkpoint(ckpt_path);
    evt::ModelConfig mcfg = evt::config_from_checkpoint(ck);
    evt::ParamBank<float> bank(0);
    evt::ModelIds ids = evt::register_model(bank, mcfg);
    evt::load_bank(bank, ck);

    std::vector<evt::LabeledSample> samples;
    if (!manifest.empty()) {
        samples = evt::load_samples(evt::read_manifest(manifest));
    } else if (!dataset.empty()) {
        const fs::path root(dataset);
        const fs::path named = root / (on + ".tsv");
        if (fs::exists(named))
            samples = evt::load_samples(evt::read_manifest(named.string()));
        else
            samples = evt::load_samples(evt::scan_dataset_root(dataset));
    } else {
        throw evt::ConfigError("no dataset given (--dataset or --manifest)");
    }
    if (samples.empty()) throw evt::ConfigError("evaluation set is empty");

    const double acc = evt::evaluate(bank, ids, mcfg, samples);
    std::printf("top1=%.4f\n", acc);
    return kExitOk;
}

int cmd_bench(evt::Config& c, size_t events, int runs, uint64_t seed) {
    evt::ModelConfig mcfg = evt::ModelConfig::from_config(c);
    c.reject_unconsumed();

    evt::ModelCost cost = evt::count_params_flops(mcfg, events);
    std::printf("params=%zu flops=%zu\n", cost.params(), cost.flops());
    for (const auto& m : cost.modules)
        std::printf("module %-12s params=%10zu flops=%14zu\n", m.name.c_str(), m.params, m.flops);
    std::printf("assumptions: %s\n", cost.assumptions.c_str());
    std::printf("reference: params=15.87M flops=0.51G "
                "(reported for the original event transformer at N=1024)\n");

    if (runs > 0) {
        evt::ParamBank<float> bank(evt::derive_seed(seed, "bench-init"));
        evt::ModelIds ids = evt::register_model(bank, mcfg);
        auto data = evt::synth_dataset(1, 1, static_cast<int>(events), seed);
        evt::Tensor<float> ev = evt::cast_tensor<float>(evt::normalize_events(data[0].stream));
        std::vector<double> ms(static_cast<size_t>(runs));
        for (auto& sample : ms) {
            const auto t0 = std::chrono::steady_clock::now();
            evt::Tape<float> tape;
            bank.stage(tape, false);
            evt::model_logits(tape, bank, ids, mcfg, ev);
            sample = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
        }
        std::sort(ms.begin(), ms.end());
        std::printf("forward_median_ms=%.3f runs=%d events=%zu\n", ms[ms.size() / 2], runs,
                    events);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event transformer toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* sc_synth = app.add_subcommand("make-synth", "generate a synthetic event dataset");
    sc_synth->add_option("--out", synth.out, "output directory")->required();
    sc_synth->add_option("--classes", synth.classes, "number of classes");
    sc_synth->add_option("--train", synth.train_per_class, "train samples per class");
    sc_synth->add_option("--test", synth.test_per_class, "test samples per class");
    sc_synth->add_option("--events", synth.events, "events per sample");
    sc_synth->add_option("--seed", synth.seed, "rng seed");

    std::string inspect_path;
    int inspect_dump = 0;
    auto* sc_inspect = app.add_subcommand("inspect", "summarize an event file");
    sc_inspect->add_option("file", inspect_path, "event .bin file")->required();
    sc_inspect->add_option("--dump", inspect_dump, "print the first n events");

    uint64_t gc_seed = 0x5eed;
    int gc_instances = 10;
    std::string gc_fault;
    auto* sc_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    sc_gradcheck->add_option("--seed", gc_seed, "rng seed");
    sc_gradcheck->add_option("--instances", gc_instances, "random instances per check");
    sc_gradcheck->add_option("--fault-inject", gc_fault,
                             "corrupt the named backward rule (harness self-test)");

    std::string train_config, train_dataset, train_out;
    uint64_t train_seed = 0;
    ConfigOverrides train_ov;
    auto* sc_train = app.add_subcommand("train", "train a model");
    sc_train->add_option("--config", train_config, "key=value config file");
    sc_train->add_option("--dataset", train_dataset, "dataset directory");
    sc_train->add_option("--out", train_out, "run directory for checkpoints and metrics");
    sc_train->add_option("--seed", train_seed, "master seed (sub-seeds are derived)");
    train_ov.add(sc_train, "--train-manifest", "data.train", "train manifest tsv");
    train_ov.add(sc_train, "--test-manifest", "data.test", "test manifest tsv");
    train_ov.add(sc_train, "--structure", "model.stages",
                 "stage structure, e.g. LS,LSG,LSG,L");
    train_ov.add(sc_train, "--fusion", "model.fusion", "serial | parallel | concat");
    train_ov.add(sc_train, "--M", "model.neighbors", "temporal neighbors per event");
    train_ov.add(sc_train, "--window", "model.window", "frame attention window");
    train_ov.add(sc_train, "--rate", "model.rate", "global sampling rate");
    train_ov.add(sc_train, "--channels", "model.channels", "stage-1 channel width");
    train_ov.add(sc_train, "--classes", "model.classes", "number of classes");
    train_ov.add(sc_train, "--sc-channels", "model.sc_channels",
                 "frame attention channels per stage");
    train_ov.add(sc_train, "--epochs", "train.epochs", "training epochs");
    train_ov.add(sc_train, "--batch", "train.batch", "batch size");
    train_ov.add(sc_train, "--event-samples", "train.event_samples",
                 "events drawn per training sample");
    train_ov.add(sc_train, "--eval-every", "train.eval_every",
                 "test evaluation period in epochs (0 = never)");
    train_ov.add(sc_train, "--milestones", "train.milestones",
                 "lr schedule, e.g. 0:0.01,150:0.001");
    train_ov.add(sc_train, "--stop-acc", "train.stop_acc",
                 "stop once train accuracy reaches this");

    std::string eval_ckpt, eval_dataset, eval_manifest, eval_on = "test";
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    sc_eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    sc_eval->add_option("--dataset", eval_dataset, "dataset directory");
    sc_eval->add_option("--manifest", eval_manifest, "explicit manifest tsv");
    sc_eval->add_option("--on", eval_on, "which manifest inside --dataset (train or test)");

    std::string bench_config;
    size_t bench_events = 1024;
    int bench_runs = 100;
    uint64_t bench_seed = 0;
    ConfigOverrides bench_ov;
    auto* sc_bench = app.add_subcommand("bench", "parameter, flop, and latency report");
    sc_bench->add_option("--config", bench_config, "key=value config file");
    sc_bench->add_option("--events", bench_events, "input stream length");
    sc_bench->add_option("--runs", bench_runs, "forward passes timed (0 skips timing)");
    sc_bench->add_option("--seed", bench_seed, "rng seed for the timed input");
    bench_ov.add(sc_bench, "--structure", "model.stages", "stage structure");
    bench_ov.add(sc_bench, "--fusion", "model.fusion", "serial | parallel | concat");
    bench_ov.add(sc_bench, "--M", "model.neighbors", "temporal neighbors per event");
    bench_ov.add(sc_bench, "--ablate-window", "model.window", "frame attention window");
    bench_ov.add(sc_bench, "--rate", "model.rate", "global sampling rate");
    bench_ov.add(sc_bench, "--channels", "model.channels", "stage-1 channel width");
    bench_ov.add(sc_bench, "--sc-channels", "model.sc_channels",
                 "frame attention widths per stage");
    bench_ov.add(sc_bench, "--classes", "model.classes", "number of classes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sc_synth->parsed()) return cmd_make_synth(synth);
        if (sc_inspect->parsed()) return cmd_inspect(inspect_path, inspect_dump);
        if (sc_gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_instances, gc_fault);
        if (sc_train->parsed()) {
            evt::Config c = train_config.empty() ? evt::Config()
                                                 : evt::Config::from_file(train_config);
            train_ov.apply(c);
            return cmd_train(c, train_dataset, train_out, train_seed);
        }
        if (sc_eval->parsed()) return cmd_eval(eval_ckpt, eval_dataset, eval_manifest, eval_on);
        if (sc_bench->parsed()) {
            evt::Config c = bench_config.empty() ? evt::Config()
                                                 : evt::Config::from_file(bench_config);
            bench_ov.apply(c);
            return cmd_bench(c, bench_events, bench_runs, bench_seed);
        }
    } catch (const evt::CheckpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const evt::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
