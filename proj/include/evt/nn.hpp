#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "evt/ops.hpp"
#include "evt/tape.hpp"
#include "evt/tensor.hpp"

namespace evt {

inline constexpr double kLayerNormEps = 1e-5;

// out = x * w, x: (R, Din), w: (Din, Dout). Bias-free (convolution taps).
template <typename T>
Var<T> matmul(Var<T> x, Var<T> w) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    const size_t r = xv.rows(), din = xv.cols(), dout = wv.cols();
    if (wv.rows() != din) throw ShapeError("matmul: w rows != x cols");
    Tensor<T> out({r, dout});
    gemm_acc(xv.v.data(), wv.v.data(), out.v.data(), r, din, dout);
    bool ng = x.tape->needs_grad(x.id) || x.tape->needs_grad(w.id);
    int xi = x.id, wi = w.id;
    return x.tape->make(std::move(out), ng,
                        [xi, wi, r, din, dout](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const T f = fault::factor<T>("matmul");
                            if (t.needs_grad(xi)) {
                                std::vector<T> wt(din * dout);
                                transpose(t.value(wi).v.data(), wt.data(), din, dout);
                                std::vector<T> dx(r * din, T{0});
                                gemm_acc(g.data(), wt.data(), dx.data(), r, dout, din);
                                auto& gx = t.grad(xi);
                                for (size_t i = 0; i < dx.size(); ++i) gx[i] += f * dx[i];
                            }
                            if (t.needs_grad(wi)) {
                                std::vector<T> xt(r * din);
                                transpose(t.value(xi).v.data(), xt.data(), r, din);
                                gemm_acc(xt.data(), g.data(), t.grad(wi).data(), din, r, dout);
                            }
                        },
                        "matmul");
}

// out = x * w + b, x: (R, Din), w: (Din, Dout), b: (Dout)
template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    const auto& bv = b.val();
    const size_t r = xv.rows(), din = xv.cols(), dout = wv.cols();
    if (wv.rows() != din) throw ShapeError("affine: w rows != x cols");
    if (bv.v.size() != dout) throw ShapeError("affine: bias size != w cols");
    Tensor<T> out({r, dout});
    for (size_t i = 0; i < r; ++i) std::copy_n(bv.v.data(), dout, &out.v[i * dout]);
    gemm_acc(xv.v.data(), wv.v.data(), out.v.data(), r, din, dout);
    bool ng = x.tape->needs_grad(x.id) || x.tape->needs_grad(w.id) || x.tape->needs_grad(b.id);
    int xi = x.id, wi = w.id, bi = b.id;
    return x.tape->make(std::move(out), ng,
                        [xi, wi, bi, r, din, dout](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const T f = fault::factor<T>("affine");
                            if (t.needs_grad(xi)) {
                                // dx += g * w^T
                                std::vector<T> wt(din * dout);
                                transpose(t.value(wi).v.data(), wt.data(), din, dout);
                                std::vector<T> dx(r * din, T{0});
                                gemm_acc(g.data(), wt.data(), dx.data(), r, dout, din);
                                auto& gx = t.grad(xi);
                                for (size_t i = 0; i < dx.size(); ++i) gx[i] += f * dx[i];
                            }
                            if (t.needs_grad(wi)) {
                                // dw += x^T * g
                                std::vector<T> xt(r * din);
                                transpose(t.value(xi).v.data(), xt.data(), r, din);
                                gemm_acc(xt.data(), g.data(), t.grad(wi).data(), din, r, dout);
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
                            }
                        },
                        "affine");
}

template <typename T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = e > T{0} ? e : T{0};
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const auto& xv = t.value(xi).v;
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("relu");
                            for (size_t i = 0; i < g.size(); ++i)
                                if (xv[i] > T{0}) gx[i] += f * g[i];
                        },
                        "relu");
}

// Exact erf form, not the tanh approximation.
template <typename T>
Var<T> gelu(Var<T> x) {
    constexpr T inv_sqrt2 = T{0.7071067811865475244};
    Tensor<T> out = x.val();
    for (auto& e : out.v) e = T{0.5} * e * (T{1} + std::erf(e * inv_sqrt2));
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi](Tape<T>& t, int self) {
                            constexpr T inv_sqrt2pi = T{0.3989422804014326779};
                            const auto& g = t.grad(self);
                            const auto& xv = t.value(xi).v;
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("gelu");
                            for (size_t i = 0; i < g.size(); ++i) {
                                const T v = xv[i];
                                const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
                                const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
                                gx[i] += f * g[i] * (cdf + v * pdf);
                            }
                        },
                        "gelu");
}

enum class Act { None, Relu, Gelu };

template <typename T>
Var<T> activation(Var<T> x, Act a) {
    switch (a) {
        case Act::Relu: return relu(x);
        case Act::Gelu: return gelu(x);
        default: return x;
    }
}

// Per-row normalization over the channel axis, learned gain and bias of shape (C).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
    const auto& xv = x.val();
    const size_t r = xv.rows(), c = xv.cols();
    if (gain.val().v.size() != c || bias.val().v.size() != c)
        throw ShapeError("layer_norm: gain/bias size != channels");
    const T eps = static_cast<T>(kLayerNormEps);
    Tensor<T> out({r, c});
    auto inv_std = std::make_shared<std::vector<T>>(r);
    auto xhat = std::make_shared<std::vector<T>>(r * c);
    const auto& gv = gain.val().v;
    const auto& bv = bias.val().v;
    for (size_t i = 0; i < r; ++i) {
        T mu = T{0};
        for (size_t j = 0; j < c; ++j) mu += xv.v[i * c + j];
        mu /= static_cast<T>(c);
        T var = T{0};
        for (size_t j = 0; j < c; ++j) {
            const T d = xv.v[i * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T is = T{1} / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (size_t j = 0; j < c; ++j) {
            const T xh = (xv.v[i * c + j] - mu) * is;
            (*xhat)[i * c + j] = xh;
            out.v[i * c + j] = gv[j] * xh + bv[j];
        }
    }
    bool ng = x.tape->needs_grad(x.id) || x.tape->needs_grad(gain.id) || x.tape->needs_grad(bias.id);
    int xi = x.id, gi = gain.id, bi = bias.id;
    return x.tape->make(std::move(out), ng,
                        [xi, gi, bi, r, c, inv_std, xhat](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const auto& gv = t.value(gi).v;
                            const T f = fault::factor<T>("layer_norm");
                            if (t.needs_grad(gi)) {
                                auto& gg = t.grad(gi);
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * (*xhat)[i * c + j];
                            }
                            if (t.needs_grad(bi)) {
                                auto& gb = t.grad(bi);
                                for (size_t i = 0; i < r; ++i)
                                    for (size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                            }
                            if (t.needs_grad(xi)) {
                                auto& gx = t.grad(xi);
                                const T invc = T{1} / static_cast<T>(c);
                                for (size_t i = 0; i < r; ++i) {
                                    T sum_gy = T{0}, sum_gyx = T{0};
                                    for (size_t j = 0; j < c; ++j) {
                                        const T gy = g[i * c + j] * gv[j];
                                        sum_gy += gy;
                                        sum_gyx += gy * (*xhat)[i * c + j];
                                    }
                                    const T is = (*inv_std)[i];
                                    for (size_t j = 0; j < c; ++j) {
                                        const T gy = g[i * c + j] * gv[j];
                                        gx[i * c + j] += f * is * (gy - invc * sum_gy - (*xhat)[i * c + j] * invc * sum_gyx);
                                    }
                                }
                            }
                        },
                        "layer_norm");
}

// Row-wise softmax over the last axis.
template <typename T>
Var<T> softmax(Var<T> x) {
    const auto& xv = x.val();
    const size_t r = xv.rows(), c = xv.cols();
    Tensor<T> out({r, c});
    for (size_t i = 0; i < r; ++i) {
        T mx = xv.v[i * c];
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, xv.v[i * c + j]);
        T denom = T{0};
        for (size_t j = 0; j < c; ++j) {
            const T e = std::exp(xv.v[i * c + j] - mx);
            out.v[i * c + j] = e;
            denom += e;
        }
        const T inv = T{1} / denom;
        for (size_t j = 0; j < c; ++j) out.v[i * c + j] *= inv;
    }
    int xi = x.id;
    return x.tape->make(std::move(out), x.tape->needs_grad(x.id),
                        [xi, r, c](Tape<T>& t, int self) {
                            const auto& g = t.grad(self);
                            const auto& y = t.value(self).v;
                            auto& gx = t.grad(xi);
                            const T f = fault::factor<T>("softmax");
                            for (size_t i = 0; i < r; ++i) {
                                T dot = T{0};
                                for (size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                                for (size_t j = 0; j < c; ++j)
                                    gx[i * c + j] += f * y[i * c + j] * (g[i * c + j] - dot);
                            }
                        },
                        "softmax");
}

// Mean negative log-likelihood over the batch; labels are class indices.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::shared_ptr<const std::vector<size_t>> labels) {
    const auto& xv = logits.val();
    const size_t b = xv.rows(), k = xv.cols();
    if (labels->size() != b) throw ShapeError("cross_entropy: label count != batch rows");
    auto probs = std::make_shared<std::vector<T>>(b * k);
    T loss = T{0};
    for (size_t i = 0; i < b; ++i) {
        if ((*labels)[i] >= k) throw ShapeError("cross_entropy: label out of range");
        T mx = xv.v[i * k];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, xv.v[i * k + j]);
        T denom = T{0};
        for (size_t j = 0; j < k; ++j) {
            const T e = std::exp(xv.v[i * k + j] - mx);
            (*probs)[i * k + j] = e;
            denom += e;
        }
        const T inv = T{1} / denom;
        for (size_t j = 0; j < k; ++j) (*probs)[i * k + j] *= inv;
        loss -= std::log((*probs)[i * k + (*labels)[i]]);
    }
    loss /= static_cast<T>(b);
    int xi = logits.id;
    return logits.tape->make(Tensor<T>::scalar(loss), logits.tape->needs_grad(logits.id),
                             [xi, labels, probs, b, k](Tape<T>& t, int self) {
                                 const T g = t.grad(self)[0];
                                 auto& gx = t.grad(xi);
                                 const T f = fault::factor<T>("cross_entropy");
                                 const T invb = T{1} / static_cast<T>(b);
                                 for (size_t i = 0; i < b; ++i)
                                     for (size_t j = 0; j < k; ++j) {
                                         T d = (*probs)[i * k + j];
                                         if (j == (*labels)[i]) d -= T{1};
                                         gx[i * k + j] += f * g * invb * d;
                                     }
                             },
                             "cross_entropy");
}

// A stack of affine layers with a fixed activation between them (not after the last).
template <typename T>
struct Mlp {
    std::vector<Var<T>> w;
    std::vector<Var<T>> b;
    Act act = Act::Relu;
};

template <typename T>
Var<T> mlp_forward(const Mlp<T>& m, Var<T> x) {
    if (m.w.empty()) throw ConfigError("mlp_forward: no layers");
    Var<T> h = x;
    for (size_t l = 0; l < m.w.size(); ++l) {
        h = affine(h, m.w[l], m.b[l]);
        if (l + 1 < m.w.size()) h = activation(h, m.act);
    }
    return h;
}

}  // namespace evt
