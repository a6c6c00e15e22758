#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evt/training.hpp"

using namespace evt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.expansion = {2, 2, 4};
    cfg.attn.neighbors = 4;
    cfg.attn.rate = 8;
    cfg.attn.sc_channels = {4, 4, 4, 4};
    cfg.num_classes = 2;
    cfg.head_hidden = {8};
    return cfg;
}

TrainConfig quick_train(int epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 4;
    t.milestones = {{0, 0.01}};
    t.train_event_samples = 64;
    t.seed = 0x7ea1;
    t.eval_every = 0;
    return t;
}

std::vector<LabeledSample> tiny_dataset(int per_class, uint64_t seed) {
    return synth_dataset(2, per_class, 96, seed);
}

bool banks_equal(const ParamBank<double>& a, const ParamBank<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a.value(i).v != b.value(i).v) return false;
    return true;
}

}  // namespace

TEST_CASE("learning rate schedule follows the milestones") {
    TrainConfig t;
    CHECK(lr_at_epoch(t.milestones, 0) == 0.01);
    CHECK(lr_at_epoch(t.milestones, 149) == 0.01);
    CHECK(lr_at_epoch(t.milestones, 150) == 0.001);
    CHECK(lr_at_epoch(t.milestones, 160) == 0.001);
    CHECK(lr_at_epoch(t.milestones, 180) == 0.0001);
    CHECK(lr_at_epoch(t.milestones, 185) == 0.0001);
}

TEST_CASE("train config round-trips through the text format") {
    TrainConfig t;
    t.epochs = 42;
    t.batch_size = 16;
    t.milestones = {{0, 0.05}, {20, 0.005}};
    t.momentum = 0.8;
    t.train_event_samples = 256;
    t.seed = 0xabcdef;
    t.eval_every = 5;
    t.train_data = "runs/train.tsv";
    t.test_data = "runs/test.tsv";
    Config c;
    t.to_config(c);
    TrainConfig back = TrainConfig::from_config(c);
    CHECK(back.epochs == t.epochs);
    CHECK(back.batch_size == t.batch_size);
    CHECK(back.milestones == t.milestones);
    CHECK(back.momentum == t.momentum);
    CHECK(back.train_event_samples == t.train_event_samples);
    CHECK(back.seed == t.seed);
    CHECK(back.eval_every == t.eval_every);
    CHECK(back.train_data == t.train_data);
    CHECK(back.test_data == t.test_data);

    auto reject = [](void (*mutate)(TrainConfig&)) {
        TrainConfig bad;
        mutate(bad);
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    };
    reject([](TrainConfig& x) { x.batch_size = 0; });
    reject([](TrainConfig& x) { x.milestones = {{5, 0.01}}; });
    reject([](TrainConfig& x) { x.milestones = {{0, -0.1}}; });
    reject([](TrainConfig& x) { x.momentum = 1.0; });
    reject([](TrainConfig& x) { x.train_event_samples = 0; });
    CHECK_THROWS_AS(TrainConfig::parse_milestones("abc"), ConfigError);
}

TEST_CASE("zero learning rate is a fixed point of training") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x11), before(0x11);
    ModelIds ids = register_model(bank, mcfg);
    register_model(before, mcfg);

    TrainConfig tcfg = quick_train(3);
    tcfg.milestones = {{0, 0.0}};
    auto data = tiny_dataset(3, 0x5u);
    std::vector<Tensor<double>> vel;
    TrainResult res = train_model(bank, ids, mcfg, tcfg, data, {}, vel);
    CHECK(res.metrics.size() == 3);
    CHECK(banks_equal(bank, before));
}

TEST_CASE("training is deterministic given the seed") {
    ModelConfig mcfg = tiny_model();
    TrainConfig tcfg = quick_train(3);
    auto data = tiny_dataset(3, 0x6u);

    auto run = [&](std::vector<MetricsRow>* rows) {
        ParamBank<double> bank(0x22);
        ModelIds ids = register_model(bank, mcfg);
        std::vector<Tensor<double>> vel;
        TrainResult r = train_model(bank, ids, mcfg, tcfg, data, {}, vel);
        *rows = r.metrics;
        std::vector<std::vector<double>> params;
        for (size_t i = 0; i < bank.size(); ++i) params.push_back(bank.value(i).v);
        return params;
    };
    std::vector<MetricsRow> m1, m2;
    auto p1 = run(&m1);
    auto p2 = run(&m2);
    CHECK(p1 == p2);
    REQUIRE(m1.size() == m2.size());
    for (size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i].loss == m2[i].loss);
        CHECK(m1[i].train_acc == m2[i].train_acc);
        CHECK(m1[i].test_acc == m2[i].test_acc);
    }
}

TEST_CASE("loss drops while memorizing a tiny set") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x33);
    ModelIds ids = register_model(bank, mcfg);
    TrainConfig tcfg = quick_train(40);
    tcfg.batch_size = 2;
    tcfg.milestones = {{0, 0.02}};
    tcfg.train_event_samples = 128;  // covers the whole stream: stable inputs
    auto data = tiny_dataset(2, 0x7u);
    std::vector<Tensor<double>> vel;
    TrainResult res = train_model(bank, ids, mcfg, tcfg, data, {}, vel);
    REQUIRE(res.metrics.size() == 40);
    CHECK(res.metrics.back().loss < res.metrics.front().loss);
    CHECK(res.metrics.back().loss < 0.1);
    CHECK(res.metrics.back().train_acc == 1.0);
    for (const auto& m : res.metrics) {
        CHECK(std::isfinite(m.loss));
        CHECK(m.train_acc >= 0.0);
        CHECK(m.train_acc <= 1.0);
    }
}

TEST_CASE("the last partial batch still takes an optimizer step") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x44);
    ModelIds ids = register_model(bank, mcfg);
    TrainConfig tcfg = quick_train(1);
    tcfg.batch_size = 4;
    auto data = tiny_dataset(3, 0x8u);  // 6 samples -> batches of 4 and 2
    std::vector<Tensor<double>> vel;
    TrainResult res = train_model(bank, ids, mcfg, tcfg, data, {}, vel);
    CHECK(res.steps == 2);
}

TEST_CASE("evaluation is idempotent, read-only, and breaks ties low") {
    ModelConfig mcfg = tiny_model();
    mcfg.num_classes = 4;
    ParamBank<double> bank(0x55);
    ModelIds ids = register_model(bank, mcfg);
    // Zero output layer: every logit vector is all zeros, so the tie rule
    // must pick class 0 everywhere.
    for (auto& v : bank.value(ids.head.w.back()).v) v = 0.0;
    for (auto& v : bank.value(ids.head.b.back()).v) v = 0.0;

    auto data = synth_dataset(4, 2, 96, 0x9u);  // balanced, 2 per class
    double acc = evaluate(bank, ids, mcfg, data);
    CHECK(acc == doctest::Approx(0.25));
    CHECK(evaluate(bank, ids, mcfg, data) == acc);

    Tape<double> tape;
    bank.stage(tape, false);
    Tensor<double> ev = cast_tensor<double>(normalize_events(data[0].stream));
    Tensor<double> before = model_logits(tape, bank, ids, mcfg, ev).val();
    evaluate(bank, ids, mcfg, data);
    Tape<double> tape2;
    bank.stage(tape2, false);
    Tensor<double> after = model_logits(tape2, bank, ids, mcfg, ev).val();
    CHECK(before.v == after.v);

    CHECK_THROWS_AS(evaluate(bank, ids, mcfg, std::vector<LabeledSample>{}), ConfigError);
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x66);
    ModelIds ids = register_model(bank, mcfg);
    // All logits +inf: the stable softmax inside the loss yields inf - inf.
    for (auto& v : bank.value(ids.head.b.back()).v) v = std::numeric_limits<double>::infinity();
    TrainConfig tcfg = quick_train(1);
    auto data = tiny_dataset(2, 0xau);
    std::vector<Tensor<double>> vel;

    const std::string out = "/tmp/evt_train_diverge";
    fs::remove_all(out);
    CHECK_THROWS_AS(train_model(bank, ids, mcfg, tcfg, data, {}, vel, out), NumericError);
    CHECK(fs::exists(fs::path(out) / "diverged.evtf"));
    Checkpoint ck = load_checkpoint((fs::path(out) / "diverged.evtf").string());
    CHECK(ck.meta.at("status") == "diverged");
    fs::remove_all(out);
}

TEST_CASE("metrics are mirrored to a per-run file and a final checkpoint lands") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x77);
    ModelIds ids = register_model(bank, mcfg);
    TrainConfig tcfg = quick_train(2);
    tcfg.eval_every = 1;
    auto train_set = tiny_dataset(3, 0xbu);
    auto test_set = tiny_dataset(2, 0xcu);
    std::vector<Tensor<double>> vel;

    const std::string out = "/tmp/evt_train_run";
    fs::remove_all(out);
    TrainResult res = train_model(bank, ids, mcfg, tcfg, train_set, test_set, vel, out);
    REQUIRE(res.metrics.size() == 2);
    for (const auto& m : res.metrics) {
        CHECK(m.test_acc >= 0.0);
        CHECK(m.test_acc <= 1.0);
    }

    std::ifstream in(fs::path(out) / "metrics.tsv");
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == kMetricsHeader);
    size_t rows = 0;
    while (std::getline(in, line)) {
        size_t tabs = 0;
        for (char ch : line) tabs += ch == '\t';
        CHECK(tabs == 4);
        ++rows;
    }
    CHECK(rows == 2);

    Checkpoint ck = load_checkpoint((fs::path(out) / "model.evtf").string());
    CHECK(ck.meta.at("epoch") == "2");
    CHECK(ck.meta.at("status") == "done");
    ModelConfig back = config_from_checkpoint(ck);
    CHECK(back.to_text() == mcfg.to_text());
    // Optimizer state rides along for resumption.
    CHECK(ck.tensors.count("opt.embed.l0.w") == 1);
    fs::remove_all(out);
}

TEST_CASE("early stop halts once training accuracy reaches the target") {
    ModelConfig mcfg = tiny_model();
    ParamBank<double> bank(0x88);
    ModelIds ids = register_model(bank, mcfg);
    TrainConfig tcfg = quick_train(50);
    tcfg.stop_train_acc = 0.0;  // any accuracy qualifies
    auto data = tiny_dataset(2, 0xdu);
    std::vector<Tensor<double>> vel;
    TrainResult res = train_model(bank, ids, mcfg, tcfg, data, {}, vel);
    CHECK(res.metrics.size() == 1);
}

TEST_CASE("metric rows format as five tab-separated columns") {
    MetricsRow row{3, 1.234567, 0.5, -1.0, 2.5};
    CHECK(row.tsv() == "3\t1.234567\t0.5000\t-\t2.500");
    row.test_acc = 0.75;
    CHECK(row.tsv() == "3\t1.234567\t0.5000\t0.7500\t2.500");
}
