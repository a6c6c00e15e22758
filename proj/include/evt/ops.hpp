#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "evt/tape.hpp"

namespace evt {

using IndexVec = std::shared_ptr<const std::vector<size_t>>;

inline IndexVec make_indices(std::vector<size_t> idx) {
    return std::make_shared<const std::vector<size_t>>(std::move(idx));
}

// Partition of rows 0..total into contiguous segments; offsets has S+1 entries.
struct Segments {
    std::shared_ptr<const std::vector<size_t>> offsets;

    size_t count() const { return offsets->size() - 1; }
    size_t total() const { return offsets->back(); }
    size_t begin(size_t s) const { return (*offsets)[s]; }
    size_t end(size_t s) const { return (*offsets)[s + 1]; }
    size_t len(size_t s) const { return end(s) - begin(s); }

    static Segments uniform(size_t count, size_t len) {
        auto off = std::make_shared<std::vector<size_t>>(count + 1);
        for (size_t s = 0; s <= count; ++s) (*off)[s] = s * len;
        return {off};
    }

    static Segments from_sizes(const std::vector<size_t>& sizes) {
        auto off = std::make_shared<std::vector<size_t>>(sizes.size() + 1, 0);
        for (size_t s = 0; s < sizes.size(); ++s) (*off)[s + 1] = (*off)[s] + sizes[s];
        return {off};
    }
};

namespace detail {
template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!same_shape(a.val(), b.val()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
}
}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = a.val();
    const auto& bv = b.val().v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
    bool ng = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ai = a.id, bi = b.id;
    return a.tape->make(std::move(out), ng,
                        [ai, bi](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ai)) {
                                auto& ga = t.grad(ai);
                                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                            }
                        },
                        "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = a.val();
    const auto& bv = b.val().v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
    bool ng = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ai = a.id, bi = b.id;
    return a.tape->make(std::move(out), ng,
                        [ai, bi](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ai)) {
                                auto& ga = t.grad(ai);
                                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                            }
                        },
                        "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = a.val();
    const auto& bv = b.val().v;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
    bool ng = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ai = a.id, bi = b.id;
    return a.tape->make(std::move(out), ng,
                        [ai, bi](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ai)) {
                                auto& ga = t.grad(ai);
                                const auto& bvv = t.value(bi).v;
                                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                const auto& avv = t.value(ai).v;
                                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avv[i];
                            }
                        },
                        "mul");
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e *= c;
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                        },
                        "scale");
}

// Column-wise concatenation of two (R, Ca) and (R, Cb) matrices.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    const auto& av = a.val();
    const auto& bv = b.val();
    if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row count mismatch");
    const size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor<T> out({r, ca + cb});
    for (size_t i = 0; i < r; ++i) {
        std::copy_n(&av.v[i * ca], ca, &out.v[i * (ca + cb)]);
        std::copy_n(&bv.v[i * cb], cb, &out.v[i * (ca + cb) + ca]);
    }
    bool ng = a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
    int ai = a.id, bi = b.id;
    return a.tape->make(std::move(out), ng,
                        [ai, bi, r, ca, cb](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(ai)) {
                                auto& ga = t.grad(ai);
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                            }
                        },
                        "concat_cols");
}

// out[i, :] = x[idx[i], :]
template <typename T>
Var<T> gather_rows(Var<T> x, IndexVec idx) {
    const auto& xv = x.val();
    const size_t c = xv.cols(), n = xv.rows();
    Tensor<T> out({idx->size(), c});
    for (size_t i = 0; i < idx->size(); ++i) {
        const size_t src = (*idx)[i];
        if (src >= n) throw ShapeError("gather_rows: index out of range");
        std::copy_n(&xv.v[src * c], c, &out.v[i * c]);
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, idx, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("gather_rows");
                            for (size_t i = 0; i < idx->size(); ++i) {
                                const size_t src = (*idx)[i];
                                for (size_t j = 0; j < c; ++j) gx[src * c + j] += f * g[i * c + j];
                            }
                        },
                        "gather_rows");
}

// out starts at zero; out[idx[i], :] += x[i, :]. Duplicate targets accumulate.
template <typename T>
Var<T> scatter_add_rows(Var<T> x, IndexVec idx, size_t out_rows) {
    const auto& xv = x.val();
    const size_t c = xv.cols();
    if (xv.rows() != idx->size()) throw ShapeError("scatter_add_rows: rows != index count");
    Tensor<T> out({out_rows, c});
    for (size_t i = 0; i < idx->size(); ++i) {
        const size_t dst = (*idx)[i];
        if (dst >= out_rows) throw ShapeError("scatter_add_rows: index out of range");
        for (size_t j = 0; j < c; ++j) out.v[dst * c + j] += xv.v[i * c + j];
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, idx, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("scatter_add_rows");
                            for (size_t i = 0; i < idx->size(); ++i) {
                                const size_t dst = (*idx)[i];
                                for (size_t j = 0; j < c; ++j) gx[i * c + j] += f * g[dst * c + j];
                            }
                        },
                        "scatter_add_rows");
}

// out[i, :] = x[i, :] + b, b broadcast over rows.
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
    const auto& xv = x.val();
    const size_t r = xv.rows(), c = xv.cols();
    if (b.val().v.size() != c) throw ShapeError("add_rowvec: bias size != columns");
    Tensor<T> out = xv;
    const auto& bv = b.val().v;
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.v[i * c + j] += bv[j];
    bool ng = x.tape->needs_grad(x.id) || x.tape->needs_grad(b.id);
    int xi = x.id, bi = b.id;
    return x.tape->make(std::move(out), ng,
                        [xi, bi, r, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            if (t.needs_grad(xi)) {
                                auto& gx = t.grad(xi);
                                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                const T f = fault::factor<T>("add_rowvec");
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < c; ++j) gb[j] += f * g[i * c + j];
                            }
                        },
                        "add_rowvec");
}

template <typename T>
Var<T> segment_sum(Var<T> x, Segments seg) {
    const auto& xv = x.val();
    const size_t c = xv.cols();
    if (xv.rows() != seg.total()) throw ShapeError("segment_sum: rows != segment total");
    Tensor<T> out({seg.count(), c});
    for (size_t s = 0; s < seg.count(); ++s)
        for (size_t r = seg.begin(s); r < seg.end(s); ++r)
            for (size_t j = 0; j < c; ++j) out.v[s * c + j] += xv.v[r * c + j];
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, seg, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            for (size_t s = 0; s < seg.count(); ++s)
                                for (size_t r = seg.begin(s); r < seg.end(s); ++r)
                                    for (size_t j = 0; j < c; ++j) gx[r * c + j] += g[s * c + j];
                        },
                        "segment_sum");
}

template <typename T>
Var<T> segment_mean(Var<T> x, Segments seg) {
    const auto& xv = x.val();
    const size_t c = xv.cols();
    if (xv.rows() != seg.total()) throw ShapeError("segment_mean: rows != segment total");
    Tensor<T> out({seg.count(), c});
    for (size_t s = 0; s < seg.count(); ++s) {
        const size_t len = seg.len(s);
        if (len == 0) throw ShapeError("segment_mean: empty segment");
        const T inv = T{1} / static_cast<T>(len);
        for (size_t r = seg.begin(s); r < seg.end(s); ++r)
            for (size_t j = 0; j < c; ++j) out.v[s * c + j] += xv.v[r * c + j] * inv;
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, seg, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            for (size_t s = 0; s < seg.count(); ++s) {
                                const T inv = T{1} / static_cast<T>(seg.len(s));
                                for (size_t r = seg.begin(s); r < seg.end(s); ++r)
                                    for (size_t j = 0; j < c; ++j) gx[r * c + j] += g[s * c + j] * inv;
                            }
                        },
                        "segment_mean");
}

// Per-segment, per-channel max; gradient flows to the first row attaining it.
template <typename T>
Var<T> segment_max(Var<T> x, Segments seg) {
    const auto& xv = x.val();
    const size_t c = xv.cols();
    if (xv.rows() != seg.total()) throw ShapeError("segment_max: rows != segment total");
    Tensor<T> out({seg.count(), c});
    auto argmax = std::make_shared<std::vector<size_t>>(seg.count() * c);
    for (size_t s = 0; s < seg.count(); ++s) {
        if (seg.len(s) == 0) throw ShapeError("segment_max: empty segment");
        for (size_t j = 0; j < c; ++j) {
            size_t best = seg.begin(s);
            T bv = xv.v[best * c + j];
            for (size_t r = seg.begin(s) + 1; r < seg.end(s); ++r) {
                const T v = xv.v[r * c + j];
                if (v > bv) {
                    bv = v;
                    best = r;
                }
            }
            out.v[s * c + j] = bv;
            (*argmax)[s * c + j] = best;
        }
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, argmax, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            for (size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i] * c + i % c] += g[i];
                        },
                        "segment_max");
}

// Channel-wise softmax within each segment of rows (vector attention weights):
// for each segment s and channel j, out[r,j] over r in s is a softmax.
template <typename T>
Var<T> segment_softmax(Var<T> x, Segments seg) {
    const auto& xv = x.val();
    const size_t c = xv.cols();
    if (xv.rows() != seg.total()) throw ShapeError("segment_softmax: rows != segment total");
    Tensor<T> out({xv.rows(), c});
    for (size_t s = 0; s < seg.count(); ++s) {
        if (seg.len(s) == 0) throw ShapeError("segment_softmax: empty segment");
        for (size_t j = 0; j < c; ++j) {
            T mx = xv.v[seg.begin(s) * c + j];
            for (size_t r = seg.begin(s) + 1; r < seg.end(s); ++r) mx = std::max(mx, xv.v[r * c + j]);
            T denom = T{0};
            for (size_t r = seg.begin(s); r < seg.end(s); ++r) {
                const T e = std::exp(xv.v[r * c + j] - mx);
                out.v[r * c + j] = e;
                denom += e;
            }
            const T inv = T{1} / denom;
            for (size_t r = seg.begin(s); r < seg.end(s); ++r) out.v[r * c + j] *= inv;
        }
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, seg, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const auto& y = t.value(self).v;
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("segment_softmax");
                            for (size_t s = 0; s < seg.count(); ++s)
                                for (size_t j = 0; j < c; ++j) {
                                    T dot = T{0};
                                    for (size_t r = seg.begin(s); r < seg.end(s); ++r)
                                        dot += g[r * c + j] * y[r * c + j];
                                    for (size_t r = seg.begin(s); r < seg.end(s); ++r)
                                        gx[r * c + j] += f * y[r * c + j] * (g[r * c + j] - dot);
                                }
                        },
                        "segment_softmax");
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
    const auto& xv = x.val();
    const size_t r = xv.rows(), c = xv.cols();
    Tensor<T> out({1, c});
    const T inv = T{1} / static_cast<T>(r);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.v[j] += xv.v[i * c + j] * inv;
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, r, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(xi);
                            const T inv = T{1} / static_cast<T>(r);
                            for (size_t i = 0; i < r; ++i)
                                for (size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
                        },
                        "mean_rows");
}

template <typename T>
Var<T> sum_all(Var<T> x) {
    T s = T{0};
    for (T e : x.val().v) s += e;
    int xi = x.id;
    return x.tape->make(Tensor<T>::scalar(s), x.tape->needs_grad(x.id),
                        [xi](Tape<T>& t, int self) {
                            const T g = t.grad(self)[0];
                            auto& gx = t.grad(xi);
                            for (auto& e : gx) e += g;
                        },
                        "sum_all");
}

// Fixed linear functional <x, w>; w is plain data (not differentiated).
template <typename T>
Var<T> dot_const(Var<T> x, std::shared_ptr<const std::vector<T>> w) {
    const auto& xv = x.val().v;
    if (xv.size() != w->size()) throw ShapeError("dot_const: size mismatch");
    T s = T{0};
    for (size_t i = 0; i < xv.size(); ++i) s += xv[i] * (*w)[i];
    int xi = x.id;
    return x.tape->make(Tensor<T>::scalar(s), x.tape->needs_grad(x.id),
                        [xi, w](Tape<T>& t, int self) {
                            const T g = t.grad(self)[0];
                            auto& gx = t.grad(xi);
                            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*w)[i];
                        },
                        "dot_const");
}

}  // namespace evt
