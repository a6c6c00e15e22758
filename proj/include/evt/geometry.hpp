#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "evt/errors.hpp"
#include "evt/tensor.hpp"

namespace evt {

// Per-query fixed-width neighbor lists, flat row-major (n_queries x m).
struct NeighborIndex {
    size_t m = 0;
    std::vector<size_t> idx;

    size_t queries() const { return m == 0 ? 0 : idx.size() / m; }
    size_t at(size_t q, size_t j) const { return idx[q * m + j]; }
};

// FPS centers plus their fixed-size membership lists, flat (centers x k).
struct SampledSet {
    std::vector<size_t> centers;
    size_t k = 0;
    std::vector<size_t> groups;

    size_t group_at(size_t c, size_t j) const { return groups[c * k + j]; }
};

using Site = std::pair<int, int>;  // (y, x)

struct SparseGrid {
    int height = 0;
    int width = 0;
    std::map<Site, std::vector<size_t>> sites;  // row-major site order
};

inline size_t fps_start_from_seed(uint64_t seed, size_t n) {
    return static_cast<size_t>(seed % static_cast<uint64_t>(n));
}

namespace geo {
// Squared distance between rows of an (N, D) matrix restricted to dims [0, d).
template <typename T>
T row_dist2(const Tensor<T>& pts, size_t a, size_t b, size_t d) {
    T s = T{0};
    for (size_t j = 0; j < d; ++j) {
        const T diff = pts.at(a, j) - pts.at(b, j);
        s += diff * diff;
    }
    return s;
}
}  // namespace geo

// Greedy farthest point sampling over the first 3 columns (x, y, t); the
// polarity column is deliberately excluded. Ties go to the lowest index.
template <typename T>
std::vector<size_t> farthest_point_sampling(const Tensor<T>& points, size_t m_out, size_t start) {
    const size_t n = points.rows();
    if (n == 0 || points.cols() < 3) throw ShapeError("fps: need an (N>=1, >=3) point matrix");
    if (m_out < 1 || m_out > n) throw ShapeError("fps: m_out must be in [1, N]");
    if (start >= n) throw ShapeError("fps: start index out of range");

    std::vector<size_t> selected;
    selected.reserve(m_out);
    selected.push_back(start);
    std::vector<char> taken(n, 0);
    taken[start] = 1;
    std::vector<T> min_d2(n, std::numeric_limits<T>::max());
    while (selected.size() < m_out) {
        const size_t last = selected.back();
        size_t best = n;
        T best_d2 = T{-1};
        for (size_t i = 0; i < n; ++i) {
            const T d2 = geo::row_dist2(points, i, last, 3);
            if (d2 < min_d2[i]) min_d2[i] = d2;
            // strict >: the first (lowest-index) maximum wins ties; duplicates
            // of already-selected points stay eligible only via `taken`
            if (!taken[i] && min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        taken[best] = 1;
        selected.push_back(best);
    }
    return selected;
}

// For each event, the m events (self excluded) with smallest |t_j - t_i|;
// ties by lower index; short streams pad by repeating the nearest.
template <typename T>
NeighborIndex knn_temporal(const std::vector<T>& t, size_t m) {
    const size_t n = t.size();
    if (n == 0) throw ShapeError("knn_temporal: empty stream");
    if (m < 1) throw ShapeError("knn_temporal: m must be >= 1");
    NeighborIndex out;
    out.m = m;
    out.idx.resize(n * m);
    std::vector<std::pair<T, size_t>> cand;
    cand.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (n == 1) {
            for (size_t j = 0; j < m; ++j) out.idx[j] = i;
            continue;
        }
        cand.clear();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const T d = t[j] > t[i] ? t[j] - t[i] : t[i] - t[j];
            cand.emplace_back(d, j);
        }
        const size_t take = std::min(m, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<ptrdiff_t>(take), cand.end());
        // short streams pad with the nearest neighbor
        for (size_t j = 0; j < m; ++j)
            out.idx[i * m + j] = (j < take ? cand[j] : cand[0]).second;
    }
    return out;
}

// Per center: the center itself first, then the k-1 events nearest in
// normalized (x, y, t), ties by lower index; pads by repeating the center.
template <typename T>
SampledSet group_nearest(const Tensor<T>& points, std::vector<size_t> centers, size_t k) {
    const size_t n = points.rows();
    if (n == 0 || points.cols() < 3) throw ShapeError("group_nearest: need an (N>=1, >=3) matrix");
    if (k < 1) throw ShapeError("group_nearest: k must be >= 1");
    SampledSet out;
    out.k = k;
    out.groups.resize(centers.size() * k);
    std::vector<std::pair<T, size_t>> cand;
    cand.reserve(n);
    for (size_t c = 0; c < centers.size(); ++c) {
        const size_t ctr = centers[c];
        if (ctr >= n) throw ShapeError("group_nearest: center index out of range");
        cand.clear();
        for (size_t j = 0; j < n; ++j) {
            if (j == ctr) continue;
            cand.emplace_back(geo::row_dist2(points, j, ctr, 3), j);
        }
        const size_t rest = std::min(k - 1, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<ptrdiff_t>(rest), cand.end());
        out.groups[c * k] = ctr;
        for (size_t j = 1; j < k; ++j)
            out.groups[c * k + j] = j - 1 < rest ? cand[j - 1].second : ctr;
    }
    out.centers = std::move(centers);
    return out;
}

inline SparseGrid build_sparse_grid(const std::vector<Site>& pixels, int height, int width) {
    SparseGrid g;
    g.height = height;
    g.width = width;
    for (size_t i = 0; i < pixels.size(); ++i) {
        const auto [y, x] = pixels[i];
        if (y < 0 || y >= height || x < 0 || x >= width)
            throw ShapeError("build_sparse_grid: pixel outside grid");
        g.sites[pixels[i]].push_back(i);
    }
    return g;
}

// Round normalized (x, y) columns back onto an integer grid. Exact for rows
// that came from integer pixels via x/(W-1).
template <typename T>
std::vector<Site> pixels_from_normalized(const Tensor<T>& points, int height, int width) {
    if (points.cols() < 2) throw ShapeError("pixels_from_normalized: need >=2 columns");
    std::vector<Site> out(points.rows());
    for (size_t i = 0; i < points.rows(); ++i) {
        const int x = static_cast<int>(std::lround(static_cast<double>(points.at(i, 0)) * (width - 1)));
        const int y = static_cast<int>(std::lround(static_cast<double>(points.at(i, 1)) * (height - 1)));
        out[i] = {y, x};
    }
    return out;
}

// Active sites within Chebyshev radius (w-1)/2 of `site`, self included,
// in row-major order. No phantom sites: only occupied cells appear.
inline std::vector<Site> window_neighbors(const SparseGrid& grid, Site site, int w) {
    if (w < 1 || w % 2 == 0) throw ConfigError("window_neighbors: w must be odd and >= 1");
    const int r = (w - 1) / 2;
    std::vector<Site> out;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const Site s{site.first + dy, site.second + dx};
            if (grid.sites.count(s)) out.push_back(s);
        }
    return out;
}

}  // namespace evt
