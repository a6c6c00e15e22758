#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "evt/errors.hpp"

namespace evt {

// Dense row-major tensor. The numeric backbone is deliberately minimal:
// shape + flat storage; ops live on the autodiff tape.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> v;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), T{0});
    }

    Tensor(std::vector<size_t> s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != numel_of(shape)) throw ShapeError("tensor values do not match shape");
    }

    static Tensor scalar(T x) { return Tensor({1}, {x}); }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t e : s) n *= e;
        return n;
    }

    size_t numel() const { return v.size(); }
    size_t ndim() const { return shape.size(); }

    // 2D accessors; most model tensors are (rows, cols).
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const {
        if (shape.size() < 2) return shape.empty() ? 1 : 1;
        size_t c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    T& at(size_t r, size_t c) { return v[r * cols() + c]; }
    const T& at(size_t r, size_t c) const { return v[r * cols() + c]; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& x) {
    Tensor<To> out;
    out.shape = x.shape;
    out.v.resize(x.v.size());
    for (size_t i = 0; i < x.v.size(); ++i) out.v[i] = static_cast<To>(x.v[i]);
    return out;
}

// -------------------------------------------------------------------------
// Row-major matrix kernels. These carry nearly all the arithmetic of the
// model, so they are written to vectorize (ikj order, contiguous inner loop).

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* ar = a + i * k;
        T* cr = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T s = ar[p];
            const T* br = b + p * n;
            for (size_t j = 0; j < n; ++j) cr[j] += s * br[j];
        }
    }
}

// B[N,M] = A[M,N]^T
template <typename T>
void transpose(const T* a, T* b, size_t m, size_t n) {
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) b[j * m + i] = a[i * n + j];
}

}  // namespace evt
