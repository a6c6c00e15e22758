#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "evt/geometry.hpp"
#include "evt/nn.hpp"
#include "evt/ops.hpp"
#include "evt/tape.hpp"
#include "evt/tensor.hpp"

namespace evt {

// Widths for the default MLP shape: din followed by (layers) outputs of dout.
inline std::vector<size_t> mlp_widths(size_t din, size_t dout, int layers) {
    std::vector<size_t> w{din};
    for (int l = 0; l < layers; ++l) w.push_back(dout);
    return w;
}

// Vector attention over pair-aligned rows. a, b, v, pe are all (P, Ch); seg
// partitions the P pairs by query. Scores s = score(a - b + pe) stay
// Ch-dimensional; softmax is per query per channel; output is
// sum over the segment of softmax(s) * (v + pe), one row per query.
template <typename T>
Var<T> vector_attention(Var<T> a, Var<T> b, Var<T> v, Var<T> pe, Segments seg, const Mlp<T>& score) {
    Var<T> s = mlp_forward(score, add(sub(a, b), pe));
    Var<T> w = segment_softmax(s, seg);
    return segment_sum(mul(w, add(v, pe)), seg);
}

// ---------------------------------------------------------------------------
// Local temporal attention: each event attends to its m temporally nearest
// neighbors (self excluded).

template <typename T>
struct LxBlock {
    Mlp<T> q, k, v;  // C -> Ch
    Mlp<T> pe;       // 4 -> Ch, fed attribute differences
    Mlp<T> score;    // Ch -> Ch
    Mlp<T> out;      // Ch -> C
};

template <typename T>
Var<T> lxformer_forward(Tape<T>& tape, const LxBlock<T>& blk, const Tensor<T>& events, Var<T> f,
                        const NeighborIndex& nn) {
    const size_t n = events.rows(), m = nn.m;
    if (f.val().rows() != n) throw ShapeError("lxformer: feature rows != event count");
    if (nn.queries() != n) throw ShapeError("lxformer: neighbor index queries != event count");
    Var<T> q = mlp_forward(blk.q, f);
    Var<T> k = mlp_forward(blk.k, f);
    Var<T> v = mlp_forward(blk.v, f);

    std::vector<size_t> qrows(n * m);
    Tensor<T> delta({n * m, 4});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            const size_t p = i * m + j, nb = nn.at(i, j);
            qrows[p] = i;
            for (size_t d = 0; d < 4; ++d) delta.v[p * 4 + d] = events.at(i, d) - events.at(nb, d);
        }
    IndexVec qi = make_indices(std::move(qrows));
    IndexVec ni = make_indices(nn.idx);

    Var<T> pe = mlp_forward(blk.pe, tape.constant(std::move(delta)));
    Var<T> s = vector_attention(gather_rows(q, qi), gather_rows(k, ni), gather_rows(v, ni), pe,
                                Segments::uniform(n, m), blk.score);
    return add(f, mlp_forward(blk.out, s));
}

// ---------------------------------------------------------------------------
// Sparse frame attention: events are binned onto the sensor grid, per-site
// features attend within a spatial window, and the result is broadcast back.

template <typename T>
struct ScContext {
    std::vector<Site> sites;  // active sites, row-major
    IndexVec site_of_event;   // event row -> site row
    IndexVec events_by_site;  // event rows grouped by site, site order
    Segments site_events;     // segments of events_by_site
    Tensor<T> counts;         // (S, 2) polarity counts per site
    std::vector<int> polarity;  // sign(count_pos - count_neg), 0 on tie

    IndexVec win_q, win_k;  // pair-aligned site rows for window attention
    Segments win_seg;
    Tensor<T> win_delta;  // (P, 3): (dy, dx, dpol)

    // Conv taps in (dy, dx) row-major order: (output rows, input rows).
    std::vector<std::pair<IndexVec, IndexVec>> taps;
    int kernel = 3;
};

template <typename T>
ScContext<T> build_sc_context(const Tensor<T>& events, int height, int width, int window, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("build_sc_context: kernel must be odd and >= 1");
    ScContext<T> ctx;
    ctx.kernel = kernel;
    const auto pixels = pixels_from_normalized(events, height, width);
    const SparseGrid grid = build_sparse_grid(pixels, height, width);

    const size_t s_count = grid.sites.size();
    ctx.sites.reserve(s_count);
    std::map<Site, size_t> row_of;
    for (const auto& [site, evs] : grid.sites) {
        row_of.emplace(site, ctx.sites.size());
        ctx.sites.push_back(site);
    }

    std::vector<size_t> soe(events.rows()), ebs;
    std::vector<size_t> sizes(s_count);
    ebs.reserve(events.rows());
    ctx.counts = Tensor<T>({s_count, 2});
    ctx.polarity.resize(s_count);
    for (size_t s = 0; s < s_count; ++s) {
        const auto& evs = grid.sites.at(ctx.sites[s]);
        sizes[s] = evs.size();
        size_t pos = 0;
        for (size_t e : evs) {
            soe[e] = s;
            ebs.push_back(e);
            if (events.at(e, 3) > T{0}) ++pos;
        }
        const size_t neg = evs.size() - pos;
        ctx.counts.at(s, 0) = static_cast<T>(pos);
        ctx.counts.at(s, 1) = static_cast<T>(neg);
        ctx.polarity[s] = pos > neg ? 1 : (pos < neg ? -1 : 0);
    }
    ctx.site_of_event = make_indices(std::move(soe));
    ctx.events_by_site = make_indices(std::move(ebs));
    ctx.site_events = Segments::from_sizes(sizes);

    std::vector<size_t> wq, wk, wsizes(s_count);
    std::vector<T> wdelta;
    for (size_t s = 0; s < s_count; ++s) {
        const auto nbs = window_neighbors(grid, ctx.sites[s], window);
        wsizes[s] = nbs.size();
        for (const Site& nb : nbs) {
            const size_t t = row_of.at(nb);
            wq.push_back(s);
            wk.push_back(t);
            wdelta.push_back(static_cast<T>(ctx.sites[s].first - nb.first));
            wdelta.push_back(static_cast<T>(ctx.sites[s].second - nb.second));
            wdelta.push_back(static_cast<T>(ctx.polarity[s] - ctx.polarity[t]));
        }
    }
    ctx.win_delta = Tensor<T>({wq.size(), 3}, std::move(wdelta));
    ctx.win_q = make_indices(std::move(wq));
    ctx.win_k = make_indices(std::move(wk));
    ctx.win_seg = Segments::from_sizes(wsizes);

    const int kr = (kernel - 1) / 2;
    ctx.taps.resize(static_cast<size_t>(kernel) * kernel);
    for (int dy = -kr; dy <= kr; ++dy)
        for (int dx = -kr; dx <= kr; ++dx) {
            std::vector<size_t> outs, ins;
            for (size_t s = 0; s < s_count; ++s) {
                const Site in{ctx.sites[s].first + dy, ctx.sites[s].second + dx};
                const auto it = row_of.find(in);
                if (it == row_of.end()) continue;
                outs.push_back(s);
                ins.push_back(it->second);
            }
            ctx.taps[static_cast<size_t>(dy + kr) * kernel + (dx + kr)] = {make_indices(std::move(outs)),
                                                                           make_indices(std::move(ins))};
        }
    return ctx;
}

// Raw frame per active site: (count_pos, count_neg, mean feature).
template <typename T>
Var<T> stack_frame(Tape<T>& tape, const ScContext<T>& ctx, Var<T> f) {
    Var<T> mean_f = segment_mean(gather_rows(f, ctx.events_by_site), ctx.site_events);
    return concat_cols(tape.constant(ctx.counts), mean_f);
}

// Submanifold convolution over active sites: output exists only at active
// sites and reads only active sites inside the kernel footprint.
// w has one (Din, Dout) slab per tap, stacked to (kernel^2 * Din, Dout).
template <typename T>
Var<T> sparse_conv(Tape<T>& tape, const ScContext<T>& ctx, Var<T> l, Var<T> w, Var<T> b) {
    const size_t s_count = ctx.sites.size(), din = l.val().cols(), dout = w.val().cols();
    if (w.val().rows() != din * ctx.taps.size())
        throw ShapeError("sparse_conv: kernel rows != taps * input channels");
    Var<T> acc = tape.constant(Tensor<T>({s_count, dout}));
    for (size_t t = 0; t < ctx.taps.size(); ++t) {
        const auto& [outs, ins] = ctx.taps[t];
        if (outs->empty()) continue;
        std::vector<size_t> widx(din);
        std::iota(widx.begin(), widx.end(), t * din);
        Var<T> contrib = matmul(gather_rows(l, ins), gather_rows(w, make_indices(std::move(widx))));
        acc = add(acc, scatter_add_rows(contrib, outs, s_count));
    }
    return add_rowvec(acc, b);
}

template <typename T>
struct ScBlock {
    Var<T> ln_gain, ln_bias;        // (2 + C)
    Var<T> wq, bq, wk, bk, wv, bv;  // conv weights (kernel^2 * (2+C), Ch) and biases (Ch)
    Mlp<T> pe;                      // 3 -> Ch, fed (dy, dx, dpol)
    Mlp<T> score;                   // Ch -> Ch
    Mlp<T> proj;                    // Ch -> C
    Mlp<T> phi;                     // 2C -> C, GELU fusion
};

template <typename T>
Var<T> scformer_forward(Tape<T>& tape, const ScBlock<T>& blk, const ScContext<T>& ctx, Var<T> f) {
    Var<T> l = layer_norm(stack_frame(tape, ctx, f), blk.ln_gain, blk.ln_bias);
    Var<T> q = sparse_conv(tape, ctx, l, blk.wq, blk.bq);
    Var<T> k = sparse_conv(tape, ctx, l, blk.wk, blk.bk);
    Var<T> v = sparse_conv(tape, ctx, l, blk.wv, blk.bv);
    Var<T> pe = mlp_forward(blk.pe, tape.constant(ctx.win_delta));
    Var<T> s = vector_attention(gather_rows(q, ctx.win_q), gather_rows(k, ctx.win_k),
                                gather_rows(v, ctx.win_k), pe, ctx.win_seg, blk.score);
    Var<T> per_event = gather_rows(mlp_forward(blk.proj, s), ctx.site_of_event);
    return add(f, mlp_forward(blk.phi, concat_cols(f, per_event)));
}

// ---------------------------------------------------------------------------
// Global attention: FPS picks m = max(1, N / rate) centers, groups of `rate`
// nearest events are max-pooled into center features, and every event attends
// over all centers.

template <typename T>
struct GxBlock {
    Mlp<T> pool;    // (4 + C) -> C, pooled with max over each group
    Mlp<T> qc, vc;  // C -> Ch on pooled centers
    Mlp<T> k;       // C -> Ch on events
    Mlp<T> pe;      // 4 -> Ch
    Mlp<T> score;   // Ch -> Ch
    Mlp<T> out;     // Ch -> C
};

template <typename T>
Var<T> gxformer_forward(Tape<T>& tape, const GxBlock<T>& blk, const Tensor<T>& events, Var<T> f,
                        size_t rate, size_t fps_start) {
    const size_t n = events.rows();
    if (f.val().rows() != n) throw ShapeError("gxformer: feature rows != event count");
    if (rate < 1) throw ConfigError("gxformer: rate must be >= 1");
    const size_t m = std::max<size_t>(1, n / rate);
    const SampledSet set = group_nearest(events, farthest_point_sampling(events, m, fps_start), rate);

    Var<T> e_const = tape.constant(events);
    IndexVec gidx = make_indices(set.groups);
    Var<T> pooled_in = concat_cols(gather_rows(e_const, gidx), gather_rows(f, gidx));
    Var<T> fhat = segment_max(mlp_forward(blk.pool, pooled_in), Segments::uniform(m, rate));
    Var<T> qhat = mlp_forward(blk.qc, fhat);
    Var<T> vhat = mlp_forward(blk.vc, fhat);
    Var<T> k = mlp_forward(blk.k, f);

    std::vector<size_t> erow(n * m), crow(n * m);
    Tensor<T> delta({n * m, 4});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            const size_t p = i * m + j, ctr = set.centers[j];
            erow[p] = i;
            crow[p] = j;
            for (size_t d = 0; d < 4; ++d) delta.v[p * 4 + d] = events.at(i, d) - events.at(ctr, d);
        }
    Var<T> pe = mlp_forward(blk.pe, tape.constant(std::move(delta)));
    IndexVec ei = make_indices(std::move(erow));
    IndexVec ci = make_indices(std::move(crow));
    // Scores are score(k_i - qhat_j + pe); values are the pooled vhat_j.
    Var<T> s = vector_attention(gather_rows(k, ei), gather_rows(qhat, ci), gather_rows(vhat, ci), pe,
                                Segments::uniform(n, m), blk.score);
    return add(f, mlp_forward(blk.out, s));
}

}  // namespace evt
