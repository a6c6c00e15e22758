#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "evt/backbone.hpp"
#include "evt/events.hpp"
#include "evt/geometry.hpp"
#include "evt/training.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
evt::Tensor<T> tensor_from(const CArray<T>& a) {
    std::vector<size_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<size_t>(a.shape(i));
    evt::Tensor<T> t(std::move(shape));
    std::copy(a.data(), a.data() + a.size(), t.v.begin());
    return t;
}

template <typename T>
py::array_t<T> array_from(const evt::Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<T> a(shape);
    std::copy(t.v.begin(), t.v.end(), a.mutable_data());
    return a;
}

py::array_t<int64_t> indices_array(const std::vector<size_t>& idx, std::vector<py::ssize_t> shape) {
    py::array_t<int64_t> a(std::move(shape));
    auto* out = a.mutable_data();
    for (size_t i = 0; i < idx.size(); ++i) out[i] = static_cast<int64_t>(idx[i]);
    return a;
}

evt::EventStream stream_from_array(const CArray<int64_t>& a, int width, int height) {
    if (a.ndim() != 2 || a.shape(1) != 4)
        throw evt::ShapeError("events: expected an (N, 4) array of x, y, t, p rows");
    evt::EventStream s;
    s.width = width;
    s.height = height;
    s.events.resize(static_cast<size_t>(a.shape(0)));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        auto& e = s.events[static_cast<size_t>(i)];
        e.x = static_cast<int>(r(i, 0));
        e.y = static_cast<int>(r(i, 1));
        e.t = r(i, 2);
        e.p = static_cast<int>(r(i, 3));
    }
    evt::validate_stream(s);
    return s;
}

py::array_t<int64_t> stream_to_array(const evt::EventStream& s) {
    py::array_t<int64_t> a({static_cast<py::ssize_t>(s.size()), py::ssize_t{4}});
    auto w = a.mutable_unchecked<2>();
    for (size_t i = 0; i < s.size(); ++i) {
        const auto& e = s.events[i];
        w(static_cast<py::ssize_t>(i), 0) = e.x;
        w(static_cast<py::ssize_t>(i), 1) = e.y;
        w(static_cast<py::ssize_t>(i), 2) = e.t;
        w(static_cast<py::ssize_t>(i), 3) = e.p;
    }
    return a;
}

std::vector<evt::LabeledSample> samples_from(const py::sequence& seq) {
    std::vector<evt::LabeledSample> out;
    out.reserve(static_cast<size_t>(py::len(seq)));
    for (const auto& item : seq) {
        auto pair = item.cast<py::sequence>();
        if (py::len(pair) != 2) throw evt::ConfigError("dataset items must be (stream, label) pairs");
        out.push_back({pair[0].cast<evt::EventStream>(), pair[1].cast<int>()});
    }
    return out;
}

py::list samples_to(const std::vector<evt::LabeledSample>& ds) {
    py::list out;
    for (const auto& s : ds) out.append(py::make_tuple(s.stream, s.label));
    return out;
}

// Parameters, config, and optimizer state travel together; every forward pass
// stages the bank on a fresh tape so calls never observe each other.
struct Model {
    evt::ModelConfig cfg;
    evt::ParamBank<float> bank;
    evt::ModelIds ids;
    std::vector<evt::Tensor<float>> velocity;

    Model(const std::map<std::string, std::string>& config, uint64_t init_seed) : bank(init_seed) {
        evt::Config c;
        for (const auto& [k, v] : config) c.set(k, v);
        cfg = evt::ModelConfig::from_config(c);
        c.reject_unconsumed();
        ids = evt::register_model(bank, cfg);
    }

    explicit Model(evt::ModelConfig mc) : cfg(std::move(mc)), bank(0) {
        ids = evt::register_model(bank, cfg);
    }

    static Model load(const std::string& path) {
        const evt::Checkpoint ck = evt::load_checkpoint(path);
        Model m(evt::config_from_checkpoint(ck));
        evt::load_bank(m.bank, ck, &m.velocity);
        return m;
    }

    void save(const std::string& path) const {
        const bool has_vel = velocity.size() == bank.size();
        evt::save_checkpoint(
            evt::checkpoint_from_bank(bank, cfg, {}, has_vel ? &velocity : nullptr), path);
    }

    std::map<std::string, std::string> config_items() const {
        evt::Config c;
        cfg.to_config(c);
        return c.items();
    }

    evt::Tensor<float> normalized(const evt::EventStream& s) const {
        return evt::cast_tensor<float>(evt::normalize_events(s));
    }

    py::array_t<float> logits(const evt::EventStream& s) {
        evt::Tape<float> tape;
        bank.stage(tape, false);
        evt::Tensor<float> out = evt::model_logits(tape, bank, ids, cfg, normalized(s)).val();
        out.shape = {out.v.size()};
        return array_from(out);
    }

    py::array_t<float> features(const evt::EventStream& s) {
        evt::Tape<float> tape;
        bank.stage(tape, false);
        return array_from(evt::backbone_forward(tape, bank, ids, cfg,
                                                evt::pad_events(normalized(s), evt::kMinBackboneEvents))
                              .val());
    }

    size_t predict(const evt::EventStream& s) {
        evt::Tape<float> tape;
        bank.stage(tape, false);
        return evt::predict_class(evt::model_logits(tape, bank, ids, cfg, normalized(s)).val());
    }

    double evaluate(const py::sequence& seq) {
        const auto ds = samples_from(seq);
        py::gil_scoped_release release;
        return evt::evaluate(bank, ids, cfg, ds);
    }

    py::dict train(const py::sequence& train_seq, const py::sequence& test_seq, int epochs,
                   size_t batch, const std::map<int, double>& milestones, double momentum,
                   size_t event_samples, uint64_t seed, int eval_every, double stop_acc,
                   const std::string& out_dir, bool echo) {
        evt::TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch;
        tc.milestones = milestones;
        tc.momentum = momentum;
        tc.train_event_samples = event_samples;
        tc.seed = seed;
        tc.eval_every = eval_every;
        tc.stop_train_acc = stop_acc;
        const auto train_set = samples_from(train_seq);
        const auto test_set = samples_from(test_seq);

        evt::TrainResult res;
        {
            py::gil_scoped_release release;
            res = evt::train_model(bank, ids, cfg, tc, train_set, test_set, velocity, out_dir, echo);
        }

        py::list rows;
        for (const auto& r : res.metrics) {
            py::dict row("epoch"_a = r.epoch, "loss"_a = r.loss, "train_acc"_a = r.train_acc,
                         "seconds"_a = r.seconds);
            row["test_acc"] = r.test_acc >= 0.0 ? py::cast(r.test_acc) : py::none();
            rows.append(row);
        }
        return py::dict("steps"_a = res.steps, "epochs"_a = rows, "step_loss"_a = res.step_loss);
    }

    py::dict cost(size_t n_events) const {
        const evt::ModelCost c = evt::count_params_flops(cfg, n_events);
        py::list modules;
        for (const auto& m : c.modules)
            modules.append(py::dict("name"_a = m.name, "params"_a = m.params, "flops"_a = m.flops));
        return py::dict("params"_a = c.params(), "flops"_a = c.flops(), "modules"_a = modules,
                        "assumptions"_a = c.assumptions);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Event-stream transformer classifier: event codec, geometry kernels, and the model";

    py::register_exception<evt::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<evt::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<evt::FormatError>(m, "FormatError", PyExc_ValueError);

    py::class_<evt::EventStream>(m, "EventStream")
        .def(py::init(&stream_from_array), "events"_a, "width"_a = evt::kNmnistWidth,
             "height"_a = evt::kNmnistHeight,
             "Build a stream from (N, 4) rows of x, y, t, p; t nondecreasing, p in {-1, +1}.")
        .def_readonly("width", &evt::EventStream::width)
        .def_readonly("height", &evt::EventStream::height)
        .def("__len__", &evt::EventStream::size)
        .def("to_array", &stream_to_array, "Events as an (N, 4) int64 array of x, y, t, p rows.")
        .def("__repr__", [](const evt::EventStream& s) {
            return "EventStream(" + std::to_string(s.size()) + " events, " +
                   std::to_string(s.width) + "x" + std::to_string(s.height) + ")";
        });

    m.def(
        "load_events",
        [](const std::string& path, int width, int height) {
            return evt::load_nmnist_file(path, width, height);
        },
        "path"_a, "width"_a = evt::kNmnistWidth, "height"_a = evt::kNmnistHeight,
        "Read one 5-byte-record event file.");
    m.def(
        "save_events",
        [](const evt::EventStream& s, const std::string& path) { evt::save_nmnist_file(s, path); },
        "stream"_a, "path"_a, "Write one 5-byte-record event file.");
    m.def(
        "normalize",
        [](const evt::EventStream& s) { return array_from(evt::normalize_events(s)); }, "stream"_a,
        "Per-stream (N, 4) float rows: x, y scaled to [0, 1], t to [0, 1], polarity kept.");
    m.def(
        "sample",
        [](const evt::EventStream& s, size_t n, uint64_t seed) {
            return evt::sample_events(s, n, seed);
        },
        "stream"_a, "n"_a, "seed"_a = 0,
        "Uniform subsample without replacement, temporal order preserved.");
    m.def(
        "synth_dataset",
        [](int classes, int per_class, int events, uint64_t seed) {
            return samples_to(evt::synth_dataset(classes, per_class, events, seed));
        },
        "classes"_a, "per_class"_a, "events"_a, "seed"_a = 0,
        "Sweeping-bar synthetic set as (stream, label) pairs, class-major order.");
    m.def(
        "scan_dataset_root",
        [](const std::string& root) {
            py::list out;
            for (const auto& e : evt::scan_dataset_root(root))
                out.append(py::make_tuple(e.path, e.label));
            return out;
        },
        "root"_a, "List (path, label) pairs under root/<class>/<sample>.bin.");
    m.def(
        "load_dataset",
        [](const std::string& root) {
            return samples_to(evt::load_samples(evt::scan_dataset_root(root)));
        },
        "root"_a, "Load every sample under root/<class>/<sample>.bin as (stream, label) pairs.");

    m.def(
        "farthest_point_sampling",
        [](const CArray<double>& pts, size_t m_out, size_t start) {
            const auto t = tensor_from(pts);
            return indices_array(evt::farthest_point_sampling(t, m_out, start),
                                 {static_cast<py::ssize_t>(m_out)});
        },
        "points"_a, "m"_a, "start"_a = 0,
        "Greedy max-min selection over the first three columns; returns row indices.");
    m.def(
        "knn_temporal",
        [](const CArray<double>& times, size_t m) {
            if (times.ndim() != 1) throw evt::ShapeError("knn_temporal: expected a 1-D time array");
            std::vector<double> t(times.data(), times.data() + times.size());
            const auto nn = evt::knn_temporal(t, m);
            return indices_array(nn.idx, {static_cast<py::ssize_t>(nn.queries()),
                                          static_cast<py::ssize_t>(nn.m)});
        },
        "times"_a, "m"_a, "Per-event m nearest timestamps, self excluded; (N, m) row indices.");
    m.def(
        "group_nearest",
        [](const CArray<double>& pts, const CArray<int64_t>& centers, size_t k) {
            const auto t = tensor_from(pts);
            std::vector<size_t> c(centers.data(), centers.data() + centers.size());
            const auto set = evt::group_nearest(t, std::move(c), k);
            return indices_array(set.groups, {static_cast<py::ssize_t>(set.centers.size()),
                                              static_cast<py::ssize_t>(set.k)});
        },
        "points"_a, "centers"_a, "k"_a,
        "Per center: itself first, then the k-1 nearest rows; (centers, k) row indices.");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::map<std::string, std::string>&, uint64_t>(),
             "config"_a = std::map<std::string, std::string>{}, "init_seed"_a = 0,
             "Fresh model from 'model.*' config keys; unknown keys are rejected.")
        .def_static("load", &Model::load, "path"_a, "Restore a model from a checkpoint file.")
        .def("save", &Model::save, "path"_a, "Write parameters, config, and optimizer state.")
        .def_property_readonly("config", &Model::config_items)
        .def_property_readonly("num_params", [](const Model& m_) { return m_.bank.total_params(); })
        .def_property_readonly("num_classes", [](const Model& m_) { return m_.cfg.num_classes; })
        .def("logits", &Model::logits, "stream"_a, "Class scores for one stream as a 1-D array.")
        .def("features", &Model::features, "stream"_a,
             "Backbone output: one row per surviving event, raw attributes then features.")
        .def("predict", &Model::predict, "stream"_a, "Top-1 class index; ties go to the lowest.")
        .def("evaluate", &Model::evaluate, "dataset"_a,
             "Top-1 accuracy over (stream, label) pairs using full streams.")
        .def("train", &Model::train, "train_set"_a, "test_set"_a = py::list(), "epochs"_a = 1,
             "batch"_a = 64, "milestones"_a = std::map<int, double>{{0, 0.01}}, "momentum"_a = 0.9,
             "event_samples"_a = 1024, "seed"_a = 0, "eval_every"_a = 1, "stop_acc"_a = 2.0,
             "out_dir"_a = std::string(), "echo"_a = false,
             "SGD with momentum over cross-entropy; returns per-epoch metrics and step losses.")
        .def("cost", &Model::cost, "events"_a = 1024,
             "Analytic parameter and flop counts for one forward pass at the given stream length.")
        .def("__repr__", [](const Model& m_) {
            return "Model(" + std::to_string(m_.bank.total_params()) + " params, " +
                   std::to_string(m_.cfg.num_classes) + " classes)";
        });
}
