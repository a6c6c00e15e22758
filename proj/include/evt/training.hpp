#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "evt/backbone.hpp"
#include "evt/optim.hpp"

namespace evt {

struct TrainConfig {
    int epochs = 200;
    size_t batch_size = 64;
    std::map<int, double> milestones = {{0, 0.01}, {150, 0.001}, {180, 0.0001}};
    double momentum = 0.9;
    size_t train_event_samples = 1024;
    uint64_t seed = 0;
    int eval_every = 1;           // test accuracy every k epochs; 0 disables
    double stop_train_acc = 2.0;  // early stop once train accuracy reaches this; > 1 never fires
    std::string train_data, test_data;

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
        if (train_event_samples < 1) throw ConfigError("train: event samples must be >= 1");
        if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
        if (milestones.empty() || milestones.begin()->first != 0)
            throw ConfigError("train: milestones must start at epoch 0");
        for (const auto& [e, lr] : milestones) {
            if (e < 0) throw ConfigError("train: milestone epochs must be >= 0");
            if (lr < 0.0) throw ConfigError("train: learning rates must be >= 0");
        }
    }

    void to_config(Config& c) const {
        c.set("train.epochs", std::to_string(epochs));
        c.set("train.batch", std::to_string(batch_size));
        c.set("train.milestones", join_milestones(milestones));
        c.set("train.momentum", format_double(momentum));
        c.set("train.event_samples", std::to_string(train_event_samples));
        c.set("train.seed", std::to_string(seed));
        c.set("train.eval_every", std::to_string(eval_every));
        c.set("train.stop_acc", format_double(stop_train_acc));
        if (!train_data.empty()) c.set("data.train", train_data);
        if (!test_data.empty()) c.set("data.test", test_data);
    }

    static TrainConfig from_config(Config& c) {
        TrainConfig t;
        t.epochs = c.get_int("train.epochs", t.epochs);
        t.batch_size = static_cast<size_t>(c.get_int("train.batch", static_cast<int>(t.batch_size)));
        t.milestones = parse_milestones(c.get_str("train.milestones", join_milestones(t.milestones)));
        t.momentum = c.get_double("train.momentum", t.momentum);
        t.train_event_samples = static_cast<size_t>(
            c.get_int("train.event_samples", static_cast<int>(t.train_event_samples)));
        try {
            t.seed = std::stoull(c.get_str("train.seed", std::to_string(t.seed)));
        } catch (const std::exception&) {
            throw ConfigError("train.seed: expected an unsigned integer");
        }
        t.eval_every = c.get_int("train.eval_every", t.eval_every);
        t.stop_train_acc = c.get_double("train.stop_acc", t.stop_train_acc);
        t.train_data = c.get_str("data.train", t.train_data);
        t.test_data = c.get_str("data.test", t.test_data);
        t.validate();
        return t;
    }

    static std::string format_double(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v);
        return buf;
    }

    static std::string join_milestones(const std::map<int, double>& m) {
        std::string out;
        for (const auto& [e, lr] : m) {
            if (!out.empty()) out += ',';
            out += std::to_string(e) + ":" + format_double(lr);
        }
        return out;
    }

    static std::map<int, double> parse_milestones(const std::string& s) {
        std::map<int, double> m;
        for (const auto& tok : cfgdetail::split_list(s)) {
            const size_t colon = tok.find(':');
            if (colon == std::string::npos)
                throw ConfigError("train.milestones: expected epoch:rate pairs, got '" + s + "'");
            try {
                m[std::stoi(tok.substr(0, colon))] = std::stod(tok.substr(colon + 1));
            } catch (const std::exception&) {
                throw ConfigError("train.milestones: expected epoch:rate pairs, got '" + s + "'");
            }
        }
        return m;
    }
};

struct MetricsRow {
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = -1.0;  // negative when the test set was not evaluated this epoch
    double seconds = 0.0;

    std::string tsv() const {
        char buf[128];
        if (test_acc >= 0.0)
            std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.4f\t%.4f\t%.3f", epoch, loss, train_acc,
                          test_acc, seconds);
        else
            std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.4f\t-\t%.3f", epoch, loss, train_acc,
                          seconds);
        return buf;
    }
};

inline constexpr const char* kMetricsHeader = "epoch\tloss\ttrain_acc\ttest_acc\tseconds";

struct TrainResult {
    std::vector<MetricsRow> metrics;
    std::vector<double> step_loss;  // mean loss of each optimizer step's batch
    size_t steps = 0;
};

template <typename T>
size_t predict_class(const Tensor<T>& logits) {
    size_t best = 0;
    for (size_t i = 1; i < logits.v.size(); ++i)
        if (logits.v[i] > logits.v[best]) best = i;
    return best;
}

// Top-1 accuracy over full event streams. Ties go to the lowest class index;
// the model is staged read-only, so parameters cannot move.
template <typename T>
double evaluate(ParamBank<T>& bank, const ModelIds& ids, const ModelConfig& cfg,
                const std::vector<LabeledSample>& ds) {
    if (ds.empty()) throw ConfigError("evaluate: empty dataset");
    size_t correct = 0;
    for (const auto& s : ds) {
        Tape<T> tape;
        bank.stage(tape, false);
        Tensor<T> ev = cast_tensor<T>(normalize_events(s.stream));
        Tensor<T> logits = model_logits(tape, bank, ids, cfg, ev).val();
        if (predict_class(logits) == static_cast<size_t>(s.label)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// SGD with momentum over cross-entropy. Per epoch: seeded shuffle, a fresh
// event draw per (epoch, sample), gradient accumulation in visit order, one
// optimizer step per batch (the last partial batch is kept). Deterministic
// apart from the wall-time column.
template <typename T>
TrainResult train_model(ParamBank<T>& bank, const ModelIds& ids, const ModelConfig& mcfg,
                        const TrainConfig& cfg, const std::vector<LabeledSample>& train_set,
                        const std::vector<LabeledSample>& test_set,
                        std::vector<Tensor<T>>& velocity, const std::string& out_dir = {},
                        bool echo = false) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    for (const auto& s : train_set)
        if (s.label < 0 || static_cast<size_t>(s.label) >= mcfg.num_classes)
            throw ConfigError("train: label outside the configured class count");

    if (velocity.size() != bank.size()) {
        velocity.assign(bank.size(), Tensor<T>());
        for (size_t i = 0; i < bank.size(); ++i) velocity[i] = Tensor<T>(bank.value(i).shape);
    }

    std::ofstream metrics_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_file.open(std::filesystem::path(out_dir) / "metrics.tsv");
        metrics_file << kMetricsHeader << "\n";
    }

    auto save_state = [&](const std::string& name, int epoch, const char* status) {
        if (out_dir.empty()) return;
        std::map<std::string, std::string> meta{{"epoch", std::to_string(epoch)},
                                                {"status", status}};
        Config tc;
        cfg.to_config(tc);
        for (const auto& [k, v] : tc.items()) meta[k] = v;
        save_checkpoint(checkpoint_from_bank(bank, mcfg, std::move(meta), &velocity),
                        (std::filesystem::path(out_dir) / name).string());
    };

    const size_t n = train_set.size();
    std::vector<std::vector<T>> acc(bank.size());
    TrainResult result;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const T lr = static_cast<T>(lr_at_epoch(cfg.milestones, epoch));

        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch/" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t stop = std::min(n, start + cfg.batch_size);
            for (size_t i = 0; i < bank.size(); ++i) acc[i].assign(bank.value(i).v.size(), T{0});

            double batch_loss = 0.0;
            for (size_t b = start; b < stop; ++b) {
                const size_t idx = order[b];
                const uint64_t draw = derive_seed(
                    cfg.seed, "draw/e" + std::to_string(epoch) + "/i" + std::to_string(idx));
                EventStream sub =
                    sample_events(train_set[idx].stream, cfg.train_event_samples, draw);

                Tape<T> tape;
                bank.stage(tape, true);
                Var<T> logits =
                    model_logits(tape, bank, ids, mcfg, cast_tensor<T>(normalize_events(sub)));
                if (predict_class(logits.val()) == static_cast<size_t>(train_set[idx].label))
                    ++correct;
                auto label = std::make_shared<const std::vector<size_t>>(
                    1, static_cast<size_t>(train_set[idx].label));
                Var<T> loss = cross_entropy(logits, label);
                const double lval = static_cast<double>(loss.val().v[0]);
                if (!std::isfinite(lval)) {
                    save_state("diverged.evtf", epoch, "diverged");
                    throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                       ", step " + std::to_string(result.steps));
                }
                loss_sum += lval;
                batch_loss += lval;
                tape.backward(loss);
                for (size_t i = 0; i < bank.size(); ++i) {
                    const std::vector<T>& g = tape.grad(bank.var(i).id);
                    for (size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
                }
            }

            const T inv = T{1} / static_cast<T>(stop - start);
            for (size_t i = 0; i < bank.size(); ++i) {
                for (auto& g : acc[i]) g *= inv;
                sgd_step(bank.value(i).v, acc[i], velocity[i].v, lr, static_cast<T>(cfg.momentum));
            }
            result.step_loss.push_back(batch_loss / static_cast<double>(stop - start));
            ++result.steps;
        }

        MetricsRow row;
        row.epoch = epoch;
        row.loss = loss_sum / static_cast<double>(n);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        const bool last_epoch = epoch + 1 == cfg.epochs || row.train_acc >= cfg.stop_train_acc;
        if (!test_set.empty() && cfg.eval_every > 0 &&
            ((epoch + 1) % cfg.eval_every == 0 || last_epoch))
            row.test_acc = evaluate(bank, ids, mcfg, test_set);
        row.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        result.metrics.push_back(row);
        if (metrics_file.is_open()) metrics_file << row.tsv() << "\n";
        if (echo) std::printf("%s\n", row.tsv().c_str());
        if (row.train_acc >= cfg.stop_train_acc) break;
    }

    save_state("model.evtf", result.metrics.empty() ? 0 : result.metrics.back().epoch + 1, "done");
    return result;
}

// Manifest-driven dataset loading; entries land in manifest order.
inline std::vector<LabeledSample> load_samples(const std::vector<ManifestEntry>& entries) {
    std::vector<LabeledSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({load_nmnist_file(e.path), e.label});
    return out;
}

}  // namespace evt
