#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evt/attention.hpp"
#include "evt/checkpoint.hpp"
#include "evt/config.hpp"
#include "evt/events.hpp"
#include "evt/rng.hpp"

namespace evt {

inline constexpr size_t kMinBackboneEvents = 64;

enum class FusionMode { Serial, Parallel, Concat };

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "serial") return FusionMode::Serial;
    if (s == "parallel") return FusionMode::Parallel;
    if (s == "concat") return FusionMode::Concat;
    throw ConfigError("unknown fusion mode: " + s);
}

inline const char* fusion_name(FusionMode m) {
    switch (m) {
        case FusionMode::Parallel: return "parallel";
        case FusionMode::Concat: return "concat";
        default: return "serial";
    }
}

struct AttentionConfig {
    size_t neighbors = 16;  // temporal neighbors per event
    int window = 3;         // frame attention window
    int kernel = 3;         // frame conv kernel
    size_t rate = 32;       // global sampling rate r
    std::vector<size_t> sc_channels = {64, 128, 256, 256};  // per-stage frame Ch
};

namespace cfgdetail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<size_t> parse_sizes(const std::string& s, const std::string& key) {
    std::vector<size_t> out;
    if (s.empty()) return out;
    for (const auto& tok : split_list(s)) {
        try {
            out.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a comma-separated size list, got '" + s + "'");
        }
    }
    return out;
}

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

inline std::string join_sizes(const std::vector<size_t>& v) {
    std::vector<std::string> s;
    for (size_t x : v) s.push_back(std::to_string(x));
    return join(s);
}

}  // namespace cfgdetail

struct ModelConfig {
    size_t channels = 32;  // stage-1 C
    std::vector<std::string> stages = {"LS", "LSG", "LSG", "L"};
    std::vector<size_t> expansion = {4, 2, 2};
    size_t factor = 4;  // event downsampling per stage transition
    AttentionConfig attn;
    FusionMode fusion = FusionMode::Serial;
    size_t num_classes = 10;
    std::vector<size_t> head_hidden = {256};
    int sensor_height = kNmnistHeight;
    int sensor_width = kNmnistWidth;
    int mlp_layers = 2;
    uint64_t fps_seed = 0;

    size_t stage_channels(size_t s) const {
        size_t c = channels;
        for (size_t i = 0; i < s; ++i) c *= expansion.at(i);
        return c;
    }
    size_t out_channels() const { return stage_channels(stages.size() - 1); }

    void validate() const {
        if (channels < 1) throw ConfigError("model: channels must be >= 1");
        if (stages.size() != 4) throw ConfigError("model: exactly 4 stages required");
        if (expansion.size() != stages.size() - 1)
            throw ConfigError("model: expansion list must have one entry per stage transition");
        size_t prod = 1;
        for (size_t e : expansion) prod *= e;
        if (prod != 16) throw ConfigError("model: channel expansions must multiply to 16");
        for (const auto& st : stages) {
            if (st.empty()) throw ConfigError("model: empty stage structure");
            for (char b : st)
                if (b != 'L' && b != 'S' && b != 'G')
                    throw ConfigError(std::string("model: unknown block '") + b + "' in stage structure");
        }
        if (factor < 2) throw ConfigError("model: downsampling factor must be >= 2");
        if (attn.neighbors < 1) throw ConfigError("model: neighbors must be >= 1");
        if (attn.window < 1 || attn.window % 2 == 0) throw ConfigError("model: window must be odd");
        if (attn.kernel < 1 || attn.kernel % 2 == 0) throw ConfigError("model: kernel must be odd");
        if (attn.rate < 1) throw ConfigError("model: rate must be >= 1");
        if (attn.sc_channels.size() < stages.size())
            throw ConfigError("model: sc_channels needs one entry per stage");
        if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
        if (sensor_height < 1 || sensor_width < 1) throw ConfigError("model: sensor dims must be >= 1");
        if (mlp_layers < 1) throw ConfigError("model: mlp_layers must be >= 1");
    }

    void to_config(Config& c) const {
        c.set("model.channels", std::to_string(channels));
        c.set("model.stages", cfgdetail::join(stages));
        c.set("model.expansion", cfgdetail::join_sizes(expansion));
        c.set("model.factor", std::to_string(factor));
        c.set("model.neighbors", std::to_string(attn.neighbors));
        c.set("model.window", std::to_string(attn.window));
        c.set("model.kernel", std::to_string(attn.kernel));
        c.set("model.rate", std::to_string(attn.rate));
        c.set("model.sc_channels", cfgdetail::join_sizes(attn.sc_channels));
        c.set("model.fusion", fusion_name(fusion));
        c.set("model.classes", std::to_string(num_classes));
        c.set("model.head_hidden", cfgdetail::join_sizes(head_hidden));
        c.set("model.sensor_height", std::to_string(sensor_height));
        c.set("model.sensor_width", std::to_string(sensor_width));
        c.set("model.mlp_layers", std::to_string(mlp_layers));
        c.set("model.fps_seed", std::to_string(fps_seed));
    }

    std::string to_text() const {
        Config c;
        to_config(c);
        return c.canonical_text();
    }

    static ModelConfig from_config(Config& c) {
        ModelConfig m;
        m.channels = static_cast<size_t>(c.get_int("model.channels", static_cast<int>(m.channels)));
        m.stages = cfgdetail::split_list(c.get_str("model.stages", cfgdetail::join(m.stages)));
        m.expansion =
            cfgdetail::parse_sizes(c.get_str("model.expansion", cfgdetail::join_sizes(m.expansion)),
                                   "model.expansion");
        m.factor = static_cast<size_t>(c.get_int("model.factor", static_cast<int>(m.factor)));
        m.attn.neighbors =
            static_cast<size_t>(c.get_int("model.neighbors", static_cast<int>(m.attn.neighbors)));
        m.attn.window = c.get_int("model.window", m.attn.window);
        m.attn.kernel = c.get_int("model.kernel", m.attn.kernel);
        m.attn.rate = static_cast<size_t>(c.get_int("model.rate", static_cast<int>(m.attn.rate)));
        m.attn.sc_channels = cfgdetail::parse_sizes(
            c.get_str("model.sc_channels", cfgdetail::join_sizes(m.attn.sc_channels)),
            "model.sc_channels");
        m.fusion = fusion_from_string(c.get_str("model.fusion", fusion_name(m.fusion)));
        m.num_classes = static_cast<size_t>(c.get_int("model.classes", static_cast<int>(m.num_classes)));
        m.head_hidden = cfgdetail::parse_sizes(
            c.get_str("model.head_hidden", cfgdetail::join_sizes(m.head_hidden)), "model.head_hidden");
        m.sensor_height = c.get_int("model.sensor_height", m.sensor_height);
        m.sensor_width = c.get_int("model.sensor_width", m.sensor_width);
        m.mlp_layers = c.get_int("model.mlp_layers", m.mlp_layers);
        try {
            m.fps_seed = std::stoull(c.get_str("model.fps_seed", std::to_string(m.fps_seed)));
        } catch (const std::exception&) {
            throw ConfigError("model.fps_seed: expected an unsigned integer");
        }
        m.validate();
        return m;
    }
};

// ---------------------------------------------------------------------------
// Named parameter store. Values persist across tapes; stage() materializes
// leaf vars for one forward/backward pass. Initialization is a pure function
// of (init seed, parameter name), so registration order cannot shift it.

template <typename T>
class ParamBank {
public:
    explicit ParamBank(uint64_t init_seed = 0) : seed_(init_seed) {}

    size_t add(const std::string& name, std::vector<size_t> shape, size_t fan_in) {
        Tensor<T> t(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(derive_seed(seed_, "init/" + name));
        for (auto& e : t.v) e = static_cast<T>(rng.uniform(-bound, bound));
        return push(name, std::move(t));
    }

    size_t add_const(const std::string& name, std::vector<size_t> shape, T fill) {
        Tensor<T> t(std::move(shape));
        for (auto& e : t.v) e = fill;
        return push(name, std::move(t));
    }

    void stage(Tape<T>& tape, bool needs_grad) {
        staged_.clear();
        staged_.reserve(values_.size());
        for (const auto& v : values_) staged_.push_back(tape.leaf(v, needs_grad));
    }

    // Reuse externally created leaves (finite-difference harnesses).
    void adopt(std::vector<Var<T>> vars) {
        if (vars.size() != values_.size()) throw ShapeError("ParamBank::adopt: var count mismatch");
        staged_ = std::move(vars);
    }

    Var<T> var(size_t id) const {
        if (id >= staged_.size()) throw ShapeError("ParamBank: parameters not staged");
        return staged_[id];
    }

    size_t size() const { return values_.size(); }
    const std::string& name(size_t id) const { return names_.at(id); }
    Tensor<T>& value(size_t id) { return values_.at(id); }
    const Tensor<T>& value(size_t id) const { return values_.at(id); }
    std::vector<Tensor<T>>& values() { return values_; }
    const std::vector<Tensor<T>>& values() const { return values_; }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& v : values_) n += v.v.size();
        return n;
    }

private:
    size_t push(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, values_.size());
        names_.push_back(name);
        values_.push_back(std::move(t));
        return values_.size() - 1;
    }

    uint64_t seed_;
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::map<std::string, size_t> index_;
    std::vector<Var<T>> staged_;
};

struct MlpIds {
    std::vector<size_t> w, b;
    Act act = Act::Relu;
};

template <typename T>
MlpIds register_mlp(ParamBank<T>& bank, const std::string& prefix, const std::vector<size_t>& widths,
                    Act act) {
    MlpIds ids;
    ids.act = act;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::string layer = prefix + ".l" + std::to_string(l);
        ids.w.push_back(bank.add(layer + ".w", {widths[l], widths[l + 1]}, widths[l]));
        ids.b.push_back(bank.add(layer + ".b", {widths[l + 1]}, widths[l]));
    }
    return ids;
}

template <typename T>
Mlp<T> staged_mlp(const ParamBank<T>& bank, const MlpIds& ids) {
    Mlp<T> m;
    m.act = ids.act;
    for (size_t l = 0; l < ids.w.size(); ++l) {
        m.w.push_back(bank.var(ids.w[l]));
        m.b.push_back(bank.var(ids.b[l]));
    }
    return m;
}

struct LxIds {
    MlpIds q, k, v, pe, score, out;
};
struct ScIds {
    size_t ln_gain = 0, ln_bias = 0;
    size_t wq = 0, bq = 0, wk = 0, bk = 0, wv = 0, bv = 0;
    MlpIds pe, score, proj, phi;
};
struct GxIds {
    MlpIds pool, qc, vc, k, pe, score, out;
};
struct BlockIds {
    char kind = 'L';
    LxIds lx;
    ScIds sc;
    GxIds gx;
};
struct StageIds {
    bool has_samp = false;
    MlpIds samp;
    std::vector<BlockIds> blocks;
    std::vector<MlpIds> fuse;  // one per adjacent (L, S) pair, concat fusion only
};
struct ModelIds {
    MlpIds embed;
    std::vector<StageIds> stages;
    MlpIds head;
};

template <typename T>
LxIds register_lx(ParamBank<T>& b, const std::string& p, size_t c, size_t ch, int layers) {
    LxIds ids;
    ids.q = register_mlp(b, p + ".q", mlp_widths(c, ch, layers), Act::Relu);
    ids.k = register_mlp(b, p + ".k", mlp_widths(c, ch, layers), Act::Relu);
    ids.v = register_mlp(b, p + ".v", mlp_widths(c, ch, layers), Act::Relu);
    ids.pe = register_mlp(b, p + ".pe", mlp_widths(4, ch, layers), Act::Relu);
    ids.score = register_mlp(b, p + ".score", mlp_widths(ch, ch, layers), Act::Relu);
    ids.out = register_mlp(b, p + ".out", mlp_widths(ch, c, layers), Act::Relu);
    return ids;
}

template <typename T>
ScIds register_sc(ParamBank<T>& b, const std::string& p, size_t c, size_t ch, int kernel, int layers) {
    ScIds ids;
    const size_t din = 2 + c;
    const size_t taps = static_cast<size_t>(kernel) * kernel;
    ids.ln_gain = b.add_const(p + ".ln.gain", {din}, T{1});
    ids.ln_bias = b.add_const(p + ".ln.bias", {din}, T{0});
    ids.wq = b.add(p + ".convq.w", {taps * din, ch}, taps * din);
    ids.bq = b.add(p + ".convq.b", {ch}, taps * din);
    ids.wk = b.add(p + ".convk.w", {taps * din, ch}, taps * din);
    ids.bk = b.add(p + ".convk.b", {ch}, taps * din);
    ids.wv = b.add(p + ".convv.w", {taps * din, ch}, taps * din);
    ids.bv = b.add(p + ".convv.b", {ch}, taps * din);
    ids.pe = register_mlp(b, p + ".pe", mlp_widths(3, ch, layers), Act::Relu);
    ids.score = register_mlp(b, p + ".score", mlp_widths(ch, ch, layers), Act::Relu);
    ids.proj = register_mlp(b, p + ".proj", mlp_widths(ch, c, layers), Act::Relu);
    ids.phi = register_mlp(b, p + ".phi", mlp_widths(2 * c, c, layers), Act::Gelu);
    return ids;
}

template <typename T>
GxIds register_gx(ParamBank<T>& b, const std::string& p, size_t c, size_t ch, int layers) {
    GxIds ids;
    ids.pool = register_mlp(b, p + ".pool", mlp_widths(4 + c, c, layers), Act::Relu);
    ids.qc = register_mlp(b, p + ".qc", mlp_widths(c, ch, layers), Act::Relu);
    ids.vc = register_mlp(b, p + ".vc", mlp_widths(c, ch, layers), Act::Relu);
    ids.k = register_mlp(b, p + ".k", mlp_widths(c, ch, layers), Act::Relu);
    ids.pe = register_mlp(b, p + ".pe", mlp_widths(4, ch, layers), Act::Relu);
    ids.score = register_mlp(b, p + ".score", mlp_widths(ch, ch, layers), Act::Relu);
    ids.out = register_mlp(b, p + ".out", mlp_widths(ch, c, layers), Act::Relu);
    return ids;
}

template <typename T>
LxBlock<T> staged_lx(const ParamBank<T>& b, const LxIds& ids) {
    return {staged_mlp(b, ids.q),     staged_mlp(b, ids.k),   staged_mlp(b, ids.v),
            staged_mlp(b, ids.pe),    staged_mlp(b, ids.score), staged_mlp(b, ids.out)};
}

template <typename T>
ScBlock<T> staged_sc(const ParamBank<T>& b, const ScIds& ids) {
    ScBlock<T> blk;
    blk.ln_gain = b.var(ids.ln_gain);
    blk.ln_bias = b.var(ids.ln_bias);
    blk.wq = b.var(ids.wq);
    blk.bq = b.var(ids.bq);
    blk.wk = b.var(ids.wk);
    blk.bk = b.var(ids.bk);
    blk.wv = b.var(ids.wv);
    blk.bv = b.var(ids.bv);
    blk.pe = staged_mlp(b, ids.pe);
    blk.score = staged_mlp(b, ids.score);
    blk.proj = staged_mlp(b, ids.proj);
    blk.phi = staged_mlp(b, ids.phi);
    return blk;
}

template <typename T>
GxBlock<T> staged_gx(const ParamBank<T>& b, const GxIds& ids) {
    return {staged_mlp(b, ids.pool), staged_mlp(b, ids.qc),    staged_mlp(b, ids.vc),
            staged_mlp(b, ids.k),    staged_mlp(b, ids.pe),    staged_mlp(b, ids.score),
            staged_mlp(b, ids.out)};
}

// Adjacent (L, S) pairs fused by the parallel and concat modes; remaining
// blocks stay serial. Leftmost-first, non-overlapping.
inline std::vector<std::array<size_t, 2>> fusion_pairs(const std::string& structure) {
    std::vector<std::array<size_t, 2>> pairs;
    for (size_t i = 0; i + 1 < structure.size(); ++i)
        if (structure[i] == 'L' && structure[i + 1] == 'S') {
            pairs.push_back({i, i + 1});
            ++i;
        }
    return pairs;
}

template <typename T>
ModelIds register_model(ParamBank<T>& bank, const ModelConfig& cfg) {
    cfg.validate();
    ModelIds ids;
    ids.embed = register_mlp(bank, "embed", mlp_widths(4, cfg.channels, cfg.mlp_layers), Act::Relu);
    for (size_t k = 0; k < cfg.stages.size(); ++k) {
        StageIds sid;
        const size_t c = cfg.stage_channels(k);
        const std::string sp = "s" + std::to_string(k);
        if (k > 0) {
            const size_t cin = cfg.stage_channels(k - 1);
            sid.has_samp = true;
            sid.samp = register_mlp(bank, sp + ".samp", mlp_widths(4 + cin, c, cfg.mlp_layers), Act::Relu);
        }
        const std::string& st = cfg.stages[k];
        for (size_t j = 0; j < st.size(); ++j) {
            BlockIds b;
            b.kind = st[j];
            const std::string bp = sp + ".b" + std::to_string(j);
            if (st[j] == 'L')
                b.lx = register_lx(bank, bp + ".lx", c, c, cfg.mlp_layers);
            else if (st[j] == 'S')
                b.sc = register_sc(bank, bp + ".sc", c, cfg.attn.sc_channels.at(k), cfg.attn.kernel,
                                   cfg.mlp_layers);
            else
                b.gx = register_gx(bank, bp + ".gx", c, c, cfg.mlp_layers);
            sid.blocks.push_back(std::move(b));
        }
        if (cfg.fusion == FusionMode::Concat) {
            const auto pairs = fusion_pairs(st);
            for (size_t p = 0; p < pairs.size(); ++p)
                sid.fuse.push_back(register_mlp(bank, sp + ".fuse" + std::to_string(p),
                                                mlp_widths(2 * c, c, cfg.mlp_layers), Act::Relu));
        }
        ids.stages.push_back(std::move(sid));
    }
    std::vector<size_t> hw{cfg.out_channels() + 4};
    for (size_t h : cfg.head_hidden) hw.push_back(h);
    hw.push_back(cfg.num_classes);
    ids.head = register_mlp(bank, "head", hw, Act::Relu);
    return ids;
}

// ---------------------------------------------------------------------------
// Forward passes.

template <typename T>
struct EventFeatures {
    Tensor<T> events;  // (N, 4), treated as constants
    Var<T> f;
    std::vector<size_t> provenance;  // rows of the original stream
};

// Fewer than min_rows events: repeat rows round-robin (provenance cycles too).
template <typename T>
Tensor<T> pad_events(const Tensor<T>& events, size_t min_rows) {
    const size_t n = events.rows();
    if (n == 0) throw ShapeError("pad_events: empty event set");
    if (n >= min_rows) return events;
    Tensor<T> out({min_rows, events.cols()});
    for (size_t i = 0; i < min_rows; ++i)
        for (size_t j = 0; j < events.cols(); ++j) out.at(i, j) = events.at(i % n, j);
    return out;
}

template <typename T>
Var<T> etb_forward(Tape<T>& tape, const ParamBank<T>& bank, const StageIds& sid, const ModelConfig& cfg,
                   size_t stage, const Tensor<T>& events, Var<T> f) {
    const std::string& st = cfg.stages.at(stage);
    if (sid.blocks.size() != st.size()) throw ShapeError("etb_forward: stage parameter count mismatch");
    std::optional<NeighborIndex> nn;
    std::optional<ScContext<T>> ctx;

    auto run_block = [&](size_t j, Var<T> x) -> Var<T> {
        const BlockIds& b = sid.blocks[j];
        switch (st[j]) {
            case 'L': {
                if (!nn) {
                    std::vector<T> times(events.rows());
                    for (size_t i = 0; i < times.size(); ++i) times[i] = events.at(i, 2);
                    nn = knn_temporal(times, cfg.attn.neighbors);
                }
                return lxformer_forward(tape, staged_lx(bank, b.lx), events, x, *nn);
            }
            case 'S': {
                if (!ctx)
                    ctx = build_sc_context(events, cfg.sensor_height, cfg.sensor_width, cfg.attn.window,
                                           cfg.attn.kernel);
                return scformer_forward(tape, staged_sc(bank, b.sc), *ctx, x);
            }
            default: {
                const uint64_t s = derive_seed(
                    cfg.fps_seed, "gx/s" + std::to_string(stage) + "/b" + std::to_string(j));
                return gxformer_forward(tape, staged_gx(bank, b.gx), events, x, cfg.attn.rate,
                                        fps_start_from_seed(s, events.rows()));
            }
        }
    };

    std::vector<std::array<size_t, 2>> pairs;
    if (cfg.fusion != FusionMode::Serial) pairs = fusion_pairs(st);

    Var<T> h = f;
    size_t pi = 0;
    for (size_t j = 0; j < st.size(); ++j) {
        if (pi < pairs.size() && pairs[pi][0] == j) {
            Var<T> dl = sub(run_block(j, h), h);
            Var<T> ds = sub(run_block(j + 1, h), h);
            if (cfg.fusion == FusionMode::Parallel)
                h = add(h, add(dl, ds));
            else
                h = add(h, mlp_forward(staged_mlp(bank, sid.fuse.at(pi)), concat_cols(dl, ds)));
            ++j;
            ++pi;
        } else {
            h = run_block(j, h);
        }
    }
    return h;
}

template <typename T>
EventFeatures<T> event_sampling_layer(Tape<T>& tape, const ParamBank<T>& bank, const MlpIds& mlp,
                                      const ModelConfig& cfg, size_t stage, const EventFeatures<T>& in) {
    const size_t n = in.events.rows();
    if (n < cfg.factor) throw ShapeError("event_sampling_layer: fewer events than the sampling factor");
    const size_t m = (n + cfg.factor - 1) / cfg.factor;
    const uint64_t s = derive_seed(cfg.fps_seed, "samp/s" + std::to_string(stage));
    const SampledSet set =
        group_nearest(in.events, farthest_point_sampling(in.events, m, fps_start_from_seed(s, n)),
                      cfg.factor);

    Var<T> e_const = tape.constant(in.events);
    IndexVec gidx = make_indices(set.groups);
    Var<T> pooled_in = concat_cols(gather_rows(e_const, gidx), gather_rows(in.f, gidx));
    Var<T> pooled = segment_max(mlp_forward(staged_mlp(bank, mlp), pooled_in),
                                Segments::uniform(m, cfg.factor));

    EventFeatures<T> out;
    out.f = pooled;
    out.events = Tensor<T>({m, 4});
    out.provenance.resize(m);
    for (size_t j = 0; j < m; ++j) {
        for (size_t d = 0; d < 4; ++d) out.events.at(j, d) = in.events.at(set.centers[j], d);
        out.provenance[j] = in.provenance.at(set.centers[j]);
    }
    return out;
}

// Four stages over (E, F); the output concatenates each surviving event's raw
// attributes with its final features, (N/64, 16C+4) for N divisible by 64.
template <typename T>
Var<T> backbone_forward(Tape<T>& tape, const ParamBank<T>& bank, const ModelIds& ids,
                        const ModelConfig& cfg, const Tensor<T>& events,
                        std::vector<size_t>* provenance_out = nullptr) {
    const size_t n = events.rows();
    if (n < kMinBackboneEvents)
        throw ShapeError("backbone_forward: need at least " + std::to_string(kMinBackboneEvents) +
                         " events (pad shorter streams first)");
    if (events.cols() != 4) throw ShapeError("backbone_forward: events must have 4 columns");

    EventFeatures<T> ef;
    ef.events = events;
    ef.provenance.resize(n);
    for (size_t i = 0; i < n; ++i) ef.provenance[i] = i;
    ef.f = mlp_forward(staged_mlp(bank, ids.embed), tape.constant(events));

    for (size_t k = 0; k < cfg.stages.size(); ++k) {
        if (ids.stages.at(k).has_samp)
            ef = event_sampling_layer(tape, bank, ids.stages[k].samp, cfg, k, ef);
        ef.f = etb_forward(tape, bank, ids.stages[k], cfg, k, ef.events, ef.f);
    }
    if (provenance_out) *provenance_out = ef.provenance;
    return concat_cols(tape.constant(ef.events), ef.f);
}

template <typename T>
Var<T> classify_head(const ParamBank<T>& bank, const MlpIds& head, Var<T> features) {
    return mlp_forward(staged_mlp(bank, head), mean_rows(features));
}

// (1, num_classes) logits for one already normalized event tensor.
template <typename T>
Var<T> model_logits(Tape<T>& tape, const ParamBank<T>& bank, const ModelIds& ids,
                    const ModelConfig& cfg, const Tensor<T>& events) {
    return classify_head(bank, ids.head,
                         backbone_forward(tape, bank, ids, cfg, pad_events(events, kMinBackboneEvents)));
}

// ---------------------------------------------------------------------------
// Analytic parameter and flop accounting (multiply-accumulate = 2 flops,
// bias rows included as one MAC per output).

struct ModuleCost {
    std::string name;
    size_t params = 0;
    size_t flops = 0;
};

struct ModelCost {
    std::vector<ModuleCost> modules;
    std::string assumptions;

    size_t params() const {
        size_t s = 0;
        for (const auto& m : modules) s += m.params;
        return s;
    }
    size_t flops() const {
        size_t s = 0;
        for (const auto& m : modules) s += m.flops;
        return s;
    }
};

namespace costdetail {

inline size_t mlp_params(const std::vector<size_t>& w) {
    size_t p = 0;
    for (size_t l = 0; l + 1 < w.size(); ++l) p += w[l] * w[l + 1] + w[l + 1];
    return p;
}

inline size_t mlp_flops(const std::vector<size_t>& w, size_t rows) {
    size_t f = 0;
    for (size_t l = 0; l + 1 < w.size(); ++l) f += rows * 2 * (w[l] + 1) * w[l + 1];
    return f;
}

}  // namespace costdetail

inline ModelCost count_params_flops(const ModelConfig& cfg, size_t n_events) {
    cfg.validate();
    using costdetail::mlp_flops;
    using costdetail::mlp_params;
    ModelCost out;
    out.assumptions =
        "macs count 2 flops each, bias rows included; attention weighted sums count 2 per element; "
        "frame attention assumes min(events, height*width) active sites, full windows and kernels; "
        "softmax, normalization, and pooling maxima excluded";

    const int layers = cfg.mlp_layers;
    auto add = [&](std::string name, size_t p, size_t f) {
        out.modules.push_back({std::move(name), p, f});
    };

    size_t n = n_events;
    add("embed", mlp_params(mlp_widths(4, cfg.channels, layers)),
        mlp_flops(mlp_widths(4, cfg.channels, layers), n));

    for (size_t k = 0; k < cfg.stages.size(); ++k) {
        const size_t c = cfg.stage_channels(k);
        const std::string sp = "s" + std::to_string(k);
        if (k > 0) {
            const size_t cin = cfg.stage_channels(k - 1);
            const size_t m = (n + cfg.factor - 1) / cfg.factor;
            const auto w = mlp_widths(4 + cin, c, layers);
            add(sp + ".samp", mlp_params(w), mlp_flops(w, m * cfg.factor));
            n = m;
        }
        const std::string& st = cfg.stages[k];
        for (size_t j = 0; j < st.size(); ++j) {
            const std::string bp = sp + ".b" + std::to_string(j);
            if (st[j] == 'L') {
                const size_t ch = c, pairs = n * cfg.attn.neighbors;
                const auto wq = mlp_widths(c, ch, layers), wpe = mlp_widths(4, ch, layers),
                           ws = mlp_widths(ch, ch, layers), wo = mlp_widths(ch, c, layers);
                add(bp + ".lx",
                    3 * mlp_params(wq) + mlp_params(wpe) + mlp_params(ws) + mlp_params(wo),
                    3 * mlp_flops(wq, n) + mlp_flops(wpe, pairs) + mlp_flops(ws, pairs) +
                        2 * pairs * ch + mlp_flops(wo, n));
            } else if (st[j] == 'S') {
                const size_t ch = cfg.attn.sc_channels.at(k);
                const size_t din = 2 + c;
                const size_t taps = static_cast<size_t>(cfg.attn.kernel) * cfg.attn.kernel;
                const size_t sites =
                    std::min<size_t>(n, static_cast<size_t>(cfg.sensor_height) * cfg.sensor_width);
                const size_t wpairs =
                    sites * static_cast<size_t>(cfg.attn.window) * cfg.attn.window;
                const auto wpe = mlp_widths(3, ch, layers), ws = mlp_widths(ch, ch, layers),
                           wp = mlp_widths(ch, c, layers), wphi = mlp_widths(2 * c, c, layers);
                const size_t conv_p = 3 * (taps * din * ch + ch);
                const size_t conv_f = 3 * sites * 2 * (taps * din + 1) * ch;
                add(bp + ".sc",
                    2 * din + conv_p + mlp_params(wpe) + mlp_params(ws) + mlp_params(wp) +
                        mlp_params(wphi),
                    conv_f + mlp_flops(wpe, wpairs) + mlp_flops(ws, wpairs) + 2 * wpairs * ch +
                        mlp_flops(wp, sites) + mlp_flops(wphi, n));
            } else {
                const size_t ch = c;
                const size_t m = std::max<size_t>(1, n / cfg.attn.rate);
                const size_t pairs = n * m;
                const auto wpool = mlp_widths(4 + c, c, layers), wq = mlp_widths(c, ch, layers),
                           wpe = mlp_widths(4, ch, layers), ws = mlp_widths(ch, ch, layers),
                           wo = mlp_widths(ch, c, layers);
                add(bp + ".gx",
                    mlp_params(wpool) + 3 * mlp_params(wq) + mlp_params(wpe) + mlp_params(ws) +
                        mlp_params(wo),
                    mlp_flops(wpool, m * cfg.attn.rate) + 2 * mlp_flops(wq, m) + mlp_flops(wq, n) +
                        mlp_flops(wpe, pairs) + mlp_flops(ws, pairs) + 2 * pairs * ch +
                        mlp_flops(wo, n));
            }
        }
        if (cfg.fusion == FusionMode::Concat) {
            const auto pairs = fusion_pairs(st);
            for (size_t p = 0; p < pairs.size(); ++p) {
                const auto w = mlp_widths(2 * c, c, layers);
                add(sp + ".fuse" + std::to_string(p), mlp_params(w), mlp_flops(w, n));
            }
        }
    }

    std::vector<size_t> hw{cfg.out_channels() + 4};
    for (size_t h : cfg.head_hidden) hw.push_back(h);
    hw.push_back(cfg.num_classes);
    add("head", mlp_params(hw), mlp_flops(hw, 1));
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint bridge. Parameters are stored as 32-bit floats under their bank
// names; optimizer velocities use an "opt." prefix; the model config rides in
// the metadata block.

template <typename T>
Checkpoint checkpoint_from_bank(const ParamBank<T>& bank, const ModelConfig& cfg,
                                std::map<std::string, std::string> meta = {},
                                const std::vector<Tensor<T>>* velocities = nullptr) {
    Checkpoint ck;
    ck.meta = std::move(meta);
    Config c;
    cfg.to_config(c);
    for (const auto& [key, value] : c.items()) ck.meta[key] = value;
    for (size_t i = 0; i < bank.size(); ++i)
        ck.tensors[bank.name(i)] = cast_tensor<float>(bank.value(i));
    if (velocities) {
        if (velocities->size() != bank.size())
            throw ShapeError("checkpoint_from_bank: velocity count mismatch");
        for (size_t i = 0; i < bank.size(); ++i)
            ck.tensors["opt." + bank.name(i)] = cast_tensor<float>((*velocities)[i]);
    }
    return ck;
}

inline ModelConfig config_from_checkpoint(const Checkpoint& ck) {
    Config c;
    size_t model_keys = 0;
    for (const auto& [key, value] : ck.meta)
        if (key.rfind("model.", 0) == 0) {
            c.set(key, value);
            ++model_keys;
        }
    if (model_keys == 0) throw CheckpointError("checkpoint has no model config");
    try {
        return ModelConfig::from_config(c);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint model config invalid: ") + e.what());
    }
}

template <typename T>
void load_bank(ParamBank<T>& bank, const Checkpoint& ck, std::vector<Tensor<T>>* velocities = nullptr) {
    for (size_t i = 0; i < bank.size(); ++i) {
        const auto it = ck.tensors.find(bank.name(i));
        if (it == ck.tensors.end())
            throw CheckpointError("checkpoint is missing tensor '" + bank.name(i) + "'");
        if (it->second.shape != bank.value(i).shape)
            throw CheckpointError("checkpoint tensor '" + bank.name(i) + "' has shape " +
                                  it->second.shape_str() + ", expected " +
                                  bank.value(i).shape_str());
        bank.value(i) = cast_tensor<T>(it->second);
    }
    if (velocities) {
        velocities->assign(bank.size(), Tensor<T>());
        for (size_t i = 0; i < bank.size(); ++i) {
            const auto it = ck.tensors.find("opt." + bank.name(i));
            if (it != ck.tensors.end()) (*velocities)[i] = cast_tensor<T>(it->second);
        }
    }
}

}  // namespace evt
