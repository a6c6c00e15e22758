#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "evt/attention.hpp"
#include "evt/gradcheck.hpp"

namespace evt {
namespace bcdetail {

// Parameter tensors for an MLP over `widths`, appended in (w, b) layer order.
inline void emit_mlp(Rng& rng, const std::vector<size_t>& widths, std::vector<Tensor<double>>& out) {
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
        Tensor<double> w({widths[l], widths[l + 1]});
        for (auto& e : w.v) e = rng.uniform(-bound, bound);
        out.push_back(std::move(w));
        Tensor<double> b({widths[l + 1]});
        for (auto& e : b.v) e = rng.uniform(-bound, bound);
        out.push_back(std::move(b));
    }
}

// Consume leaf vars in the exact order emit_mlp produced them.
inline Mlp<double> take_mlp(const std::vector<Var<double>>& vars, size_t& pos, size_t layers, Act act) {
    Mlp<double> m;
    m.act = act;
    for (size_t l = 0; l < layers; ++l) {
        m.w.push_back(vars[pos++]);
        m.b.push_back(vars[pos++]);
    }
    return m;
}

inline void emit_tensor(Rng& rng, std::vector<size_t> shape, double lo, double hi,
                        std::vector<Tensor<double>>& out) {
    Tensor<double> t(std::move(shape));
    for (auto& e : t.v) e = rng.uniform(lo, hi);
    out.push_back(std::move(t));
}

// Normalized event rows on an h x w grid: x, y exactly representable as
// pixel/(extent-1), t sorted in [0, 1], p in {-1, +1}.
inline Tensor<double> random_block_events(Rng& rng, size_t n, int h, int w) {
    Tensor<double> e({n, 4});
    std::vector<double> t(n);
    for (auto& v : t) v = rng.uniform(0.0, 1.0);
    std::sort(t.begin(), t.end());
    for (size_t i = 0; i < n; ++i) {
        e.at(i, 0) = static_cast<double>(rng.next_below(static_cast<size_t>(w))) / (w - 1);
        e.at(i, 1) = static_cast<double>(rng.next_below(static_cast<size_t>(h))) / (h - 1);
        e.at(i, 2) = t[i];
        e.at(i, 3) = rng.next_below(2) == 0 ? -1.0 : 1.0;
    }
    return e;
}

struct LxWiring {
    size_t layers = 2;
    size_t c = 3, ch = 3;

    void emit(Rng& rng, std::vector<Tensor<double>>& out) const {
        for (int i = 0; i < 3; ++i) emit_mlp(rng, mlp_widths(c, ch, layers), out);
        emit_mlp(rng, mlp_widths(4, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, c, layers), out);
    }
    LxBlock<double> take(const std::vector<Var<double>>& vars, size_t& pos) const {
        LxBlock<double> b;
        b.q = take_mlp(vars, pos, layers, Act::Relu);
        b.k = take_mlp(vars, pos, layers, Act::Relu);
        b.v = take_mlp(vars, pos, layers, Act::Relu);
        b.pe = take_mlp(vars, pos, layers, Act::Relu);
        b.score = take_mlp(vars, pos, layers, Act::Relu);
        b.out = take_mlp(vars, pos, layers, Act::Relu);
        return b;
    }
};

struct ScWiring {
    size_t layers = 2;
    size_t c = 3, ch = 4;
    int kernel = 3;

    void emit(Rng& rng, std::vector<Tensor<double>>& out) const {
        emit_tensor(rng, {2 + c}, 0.5, 1.5, out);   // ln gain, kept away from 0
        emit_tensor(rng, {2 + c}, -0.2, 0.2, out);  // ln bias
        const size_t taps = static_cast<size_t>(kernel) * kernel;
        for (int i = 0; i < 3; ++i) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(taps * (2 + c)));
            emit_tensor(rng, {taps * (2 + c), ch}, -bound, bound, out);
            emit_tensor(rng, {ch}, -bound, bound, out);
        }
        emit_mlp(rng, mlp_widths(3, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, c, layers), out);
        emit_mlp(rng, mlp_widths(2 * c, c, layers), out);
    }
    ScBlock<double> take(const std::vector<Var<double>>& vars, size_t& pos) const {
        ScBlock<double> b;
        b.ln_gain = vars[pos++];
        b.ln_bias = vars[pos++];
        b.wq = vars[pos++];
        b.bq = vars[pos++];
        b.wk = vars[pos++];
        b.bk = vars[pos++];
        b.wv = vars[pos++];
        b.bv = vars[pos++];
        b.pe = take_mlp(vars, pos, layers, Act::Relu);
        b.score = take_mlp(vars, pos, layers, Act::Relu);
        b.proj = take_mlp(vars, pos, layers, Act::Relu);
        b.phi = take_mlp(vars, pos, layers, Act::Gelu);
        return b;
    }
};

struct GxWiring {
    size_t layers = 2;
    size_t c = 3, ch = 3;

    void emit(Rng& rng, std::vector<Tensor<double>>& out) const {
        emit_mlp(rng, mlp_widths(4 + c, c, layers), out);
        emit_mlp(rng, mlp_widths(c, ch, layers), out);
        emit_mlp(rng, mlp_widths(c, ch, layers), out);
        emit_mlp(rng, mlp_widths(c, ch, layers), out);
        emit_mlp(rng, mlp_widths(4, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, ch, layers), out);
        emit_mlp(rng, mlp_widths(ch, c, layers), out);
    }
    GxBlock<double> take(const std::vector<Var<double>>& vars, size_t& pos) const {
        GxBlock<double> b;
        b.pool = take_mlp(vars, pos, layers, Act::Relu);
        b.qc = take_mlp(vars, pos, layers, Act::Relu);
        b.vc = take_mlp(vars, pos, layers, Act::Relu);
        b.k = take_mlp(vars, pos, layers, Act::Relu);
        b.pe = take_mlp(vars, pos, layers, Act::Relu);
        b.score = take_mlp(vars, pos, layers, Act::Relu);
        b.out = take_mlp(vars, pos, layers, Act::Relu);
        return b;
    }
};

}  // namespace bcdetail

// Randomized finite-difference instances for each attention block and for the
// three composed in sequence. The feature matrix and every parameter tensor
// are differentiated; event attributes are inputs, not parameters.
inline std::vector<std::pair<std::string, std::function<gcdetail::Instance(Rng&)>>>
block_gradcheck_cases() {
    using bcdetail::GxWiring;
    using bcdetail::LxWiring;
    using bcdetail::ScWiring;
    using gcdetail::Instance;
    using gcdetail::smooth_tensor;
    using gcdetail::through_probe;

    std::vector<std::pair<std::string, std::function<Instance(Rng&)>>> cases;

    cases.emplace_back("block/local", [](Rng& rng) {
        LxWiring wir;
        const size_t n = 4 + rng.next_below(8);
        const size_t m = 1 + rng.next_below(std::min<size_t>(n - 1, 4));
        auto events = bcdetail::random_block_events(rng, n, 6, 6);
        std::vector<double> times(n);
        for (size_t i = 0; i < n; ++i) times[i] = events.at(i, 2);
        auto nn = knn_temporal(times, m);
        Instance in;
        in.inputs = {smooth_tensor(rng, {n, wir.c})};
        wir.emit(rng, in.inputs);
        in.build = through_probe(rng, n * wir.c, [wir, events, nn](Tape<double>& t, const std::vector<Var<double>>& v) {
            size_t pos = 1;
            return lxformer_forward(t, wir.take(v, pos), events, v[0], nn);
        });
        return in;
    });
    cases.emplace_back("block/frame", [](Rng& rng) {
        ScWiring wir;
        const size_t n = 6 + rng.next_below(10);
        auto events = bcdetail::random_block_events(rng, n, 5, 5);
        auto ctx = build_sc_context(events, 5, 5, 3, wir.kernel);
        Instance in;
        in.inputs = {smooth_tensor(rng, {n, wir.c})};
        wir.emit(rng, in.inputs);
        in.build = through_probe(rng, n * wir.c, [wir, ctx](Tape<double>& t, const std::vector<Var<double>>& v) {
            size_t pos = 1;
            return scformer_forward(t, wir.take(v, pos), ctx, v[0]);
        });
        return in;
    });
    cases.emplace_back("block/global", [](Rng& rng) {
        GxWiring wir;
        const size_t n = 6 + rng.next_below(8);
        const size_t rate = 2 + rng.next_below(2);
        const size_t start = rng.next_below(n);
        auto events = bcdetail::random_block_events(rng, n, 6, 6);
        Instance in;
        in.inputs = {smooth_tensor(rng, {n, wir.c})};
        wir.emit(rng, in.inputs);
        in.build = through_probe(rng, n * wir.c,
                                 [wir, events, rate, start](Tape<double>& t, const std::vector<Var<double>>& v) {
                                     size_t pos = 1;
                                     return gxformer_forward(t, wir.take(v, pos), events, v[0], rate, start);
                                 });
        return in;
    });
    cases.emplace_back("block/composed", [](Rng& rng) {
        LxWiring lw;
        ScWiring sw;
        GxWiring gw;
        const size_t n = 6 + rng.next_below(6);
        const size_t m = 1 + rng.next_below(3);
        const size_t rate = 2 + rng.next_below(2);
        auto events = bcdetail::random_block_events(rng, n, 5, 5);
        std::vector<double> times(n);
        for (size_t i = 0; i < n; ++i) times[i] = events.at(i, 2);
        auto nn = knn_temporal(times, m);
        auto ctx = build_sc_context(events, 5, 5, 3, sw.kernel);
        Instance in;
        in.inputs = {smooth_tensor(rng, {n, lw.c})};
        lw.emit(rng, in.inputs);
        sw.emit(rng, in.inputs);
        gw.emit(rng, in.inputs);
        in.build = through_probe(
            rng, n * lw.c, [lw, sw, gw, events, nn, ctx, rate](Tape<double>& t, const std::vector<Var<double>>& v) {
                size_t pos = 1;
                Var<double> h = lxformer_forward(t, lw.take(v, pos), events, v[0], nn);
                h = scformer_forward(t, sw.take(v, pos), ctx, h);
                return gxformer_forward(t, gw.take(v, pos), events, h, rate, 0);
            });
        return in;
    });
    return cases;
}

inline std::vector<GradCheckCase> run_block_gradchecks(uint64_t seed, size_t instances) {
    std::vector<GradCheckCase> out;
    for (auto& [name, gen] : block_gradcheck_cases()) {
        GradCheckCase c;
        c.name = name;
        for (size_t i = 0; i < instances; ++i) {
            Rng rng(derive_seed(seed, name + "#" + std::to_string(i)));
            auto inst = gen(rng);
            auto rep = check_gradients<double>(std::move(inst.inputs), inst.build, 1e-5, 16,
                                               derive_seed(seed, name + "-coords-" + std::to_string(i)));
            c.max_rel_err = std::max(c.max_rel_err, rep.max_rel_err);
            c.coords += rep.coords_checked;
            ++c.instances;
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace evt
