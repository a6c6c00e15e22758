#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "evt/geometry.hpp"
#include "evt/rng.hpp"

using namespace evt;

namespace {

// Exhaustive greedy FPS: recomputes every candidate's distance to the whole
// selected set at every step. Deliberately shares no state with the
// production implementation.
std::vector<size_t> fps_oracle(const Tensor<double>& pts, size_t m_out, size_t start) {
    std::vector<size_t> sel{start};
    while (sel.size() < m_out) {
        size_t best = pts.rows();
        double best_d = -1.0;
        for (size_t i = 0; i < pts.rows(); ++i) {
            if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
            double d = std::numeric_limits<double>::max();
            for (size_t s : sel) d = std::min(d, geo::row_dist2(pts, i, s, 3));
            if (d > best_d) {
                best_d = d;
                best = i;
            }
        }
        sel.push_back(best);
    }
    return sel;
}

std::vector<size_t> knn_oracle(const std::vector<double>& t, size_t i, size_t m) {
    std::vector<std::pair<double, size_t>> cand;
    for (size_t j = 0; j < t.size(); ++j)
        if (j != i) cand.emplace_back(std::abs(t[j] - t[i]), j);
    if (cand.empty()) return std::vector<size_t>(m, i);
    std::sort(cand.begin(), cand.end());
    std::vector<size_t> out;
    for (size_t j = 0; j < m; ++j) out.push_back((j < cand.size() ? cand[j] : cand[0]).second);
    return out;
}

std::vector<size_t> group_oracle(const Tensor<double>& pts, size_t center, size_t k) {
    std::vector<std::pair<double, size_t>> cand;
    for (size_t j = 0; j < pts.rows(); ++j)
        if (j != center) cand.emplace_back(geo::row_dist2(pts, j, center, 3), j);
    std::sort(cand.begin(), cand.end());
    std::vector<size_t> out{center};
    for (size_t j = 1; j < k; ++j) out.push_back(j - 1 < cand.size() ? cand[j - 1].second : center);
    return out;
}

Tensor<double> random_points(Rng& rng, size_t n) {
    Tensor<double> pts({n, 4});
    for (size_t i = 0; i < n; ++i) {
        pts.at(i, 0) = rng.uniform(0, 1);
        pts.at(i, 1) = rng.uniform(0, 1);
        pts.at(i, 2) = rng.uniform(0, 1);
        pts.at(i, 3) = rng.next_double() < 0.5 ? 1.0 : -1.0;
    }
    return pts;
}

double min_pairwise_dist2(const Tensor<double>& pts, const std::vector<size_t>& sel) {
    double best = std::numeric_limits<double>::max();
    for (size_t a = 0; a < sel.size(); ++a)
        for (size_t b = a + 1; b < sel.size(); ++b)
            best = std::min(best, geo::row_dist2(pts, sel[a], sel[b], 3));
    return best;
}

}  // namespace

TEST_CASE("fps: frozen examples") {
    Tensor<double> one({1, 3}, {0.5, 0.5, 0.5});
    CHECK(farthest_point_sampling(one, 1, 0) == std::vector<size_t>{0});

    // points on a line at x = 0, 1, 2, 10
    Tensor<double> line({4, 3}, {0, 0, 0, 1, 0, 0, 2, 0, 0, 10, 0, 0});
    CHECK(farthest_point_sampling(line, 2, 0) == std::vector<size_t>{0, 3});

    CHECK_THROWS_AS(farthest_point_sampling(line, 5, 0), ShapeError);
    CHECK_THROWS_AS(farthest_point_sampling(line, 0, 0), ShapeError);
    CHECK_THROWS_AS(farthest_point_sampling(line, 2, 4), ShapeError);
}

TEST_CASE("fps: matches exhaustive greedy oracle on 100 random instances") {
    Rng rng(601);
    for (int inst = 0; inst < 100; ++inst) {
        const size_t n = 1 + rng.next_below(64);
        auto pts = random_points(rng, n);
        const size_t m = 1 + rng.next_below(n);
        const size_t start = fps_start_from_seed(rng.next_u64(), n);
        CHECK(farthest_point_sampling(pts, m, start) == fps_oracle(pts, m, start));
    }
}

TEST_CASE("fps: selected indices distinct even with duplicate points") {
    Tensor<double> pts({5, 3}, {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0.5, 0.5, 0.5});
    auto sel = farthest_point_sampling(pts, 5, 0);
    std::set<size_t> uniq(sel.begin(), sel.end());
    CHECK(uniq.size() == 5);
}

TEST_CASE("fps: permutation consistency") {
    Rng rng(602);
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 2 + rng.next_below(40);
        auto pts = random_points(rng, n);
        const size_t m = 1 + rng.next_below(n);
        const size_t start = rng.next_below(n);
        auto sel = farthest_point_sampling(pts, m, start);

        std::vector<size_t> perm(n);
        for (size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);  // perm[new] = old
        Tensor<double> shuffled({n, 4});
        std::vector<size_t> new_of_old(n);
        for (size_t i = 0; i < n; ++i) {
            new_of_old[perm[i]] = i;
            for (size_t j = 0; j < 4; ++j) shuffled.at(i, j) = pts.at(perm[i], j);
        }
        auto sel2 = farthest_point_sampling(shuffled, m, new_of_old[start]);
        // compare as point sets (ties may legitimately pick permuted twins)
        std::multiset<std::array<double, 3>> a, b;
        for (size_t s : sel) a.insert({pts.at(s, 0), pts.at(s, 1), pts.at(s, 2)});
        for (size_t s : sel2) b.insert({shuffled.at(s, 0), shuffled.at(s, 1), shuffled.at(s, 2)});
        CHECK(a == b);
    }
}

TEST_CASE("fps: min pairwise distance nonincreasing in m") {
    Rng rng(603);
    auto pts = random_points(rng, 32);
    double prev = std::numeric_limits<double>::max();
    for (size_t m = 2; m <= 32; ++m) {
        const double d = min_pairwise_dist2(pts, farthest_point_sampling(pts, m, 0));
        CHECK(d <= prev);
        prev = d;
    }
}

TEST_CASE("knn_temporal: frozen examples") {
    std::vector<double> t{1, 2, 3, 4};
    auto nn = knn_temporal(t, 2);
    CHECK(nn.at(0, 0) == 1);
    CHECK(nn.at(0, 1) == 2);
    // index 2: |dt|=1 to both 1 and 3; lower index first
    CHECK(nn.at(2, 0) == 1);
    CHECK(nn.at(2, 1) == 3);

    auto solo = knn_temporal(std::vector<double>{5.0}, 4);
    for (size_t j = 0; j < 4; ++j) CHECK(solo.at(0, j) == 0);

    // N-1 < M pads with the nearest neighbor
    auto pair = knn_temporal(std::vector<double>{0.0, 1.0}, 3);
    CHECK(pair.at(0, 0) == 1);
    CHECK(pair.at(0, 1) == 1);
    CHECK(pair.at(0, 2) == 1);

    CHECK_THROWS_AS(knn_temporal(std::vector<double>{}, 2), ShapeError);
    CHECK_THROWS_AS(knn_temporal(t, 0), ShapeError);
}

TEST_CASE("knn_temporal: matches exhaustive oracle on 100 random instances") {
    Rng rng(604);
    for (int inst = 0; inst < 100; ++inst) {
        const size_t n = 1 + rng.next_below(64);
        std::vector<double> t(n);
        // coarse grid forces plenty of exact ties
        for (auto& x : t) x = static_cast<double>(rng.next_below(16)) / 15.0;
        const size_t m = 1 + rng.next_below(20);
        auto nn = knn_temporal(t, m);
        for (size_t i = 0; i < n; ++i) {
            auto expect = knn_oracle(t, i, m);
            for (size_t j = 0; j < m; ++j) CHECK(nn.at(i, j) == expect[j]);
        }
    }
}

TEST_CASE("group_nearest: frozen examples") {
    Rng rng(605);
    auto pts = random_points(rng, 6);
    std::vector<size_t> all{0, 1, 2, 3, 4, 5};
    auto gs = group_nearest(pts, all, 1);
    for (size_t c = 0; c < 6; ++c) CHECK(gs.group_at(c, 0) == c);

    Tensor<double> four({4, 3}, {0, 0, 0, 0.1, 0, 0, 0.5, 0, 0, 0.2, 0, 0});
    auto g = group_nearest(four, {0}, 4);
    CHECK(g.group_at(0, 0) == 0);
    CHECK(g.group_at(0, 1) == 1);
    CHECK(g.group_at(0, 2) == 3);
    CHECK(g.group_at(0, 3) == 2);

    // k > N pads with the center
    auto padded = group_nearest(four, {2}, 6);
    CHECK(padded.group_at(0, 4) == 2);
    CHECK(padded.group_at(0, 5) == 2);
}

TEST_CASE("group_nearest: matches exhaustive oracle on 100 random instances") {
    Rng rng(606);
    for (int inst = 0; inst < 100; ++inst) {
        const size_t n = 1 + rng.next_below(64);
        auto pts = random_points(rng, n);
        const size_t k = 1 + rng.next_below(8);
        const size_t n_centers = 1 + rng.next_below(n);
        std::vector<size_t> centers;
        for (size_t c = 0; c < n_centers; ++c) centers.push_back(rng.next_below(n));
        auto gs = group_nearest(pts, centers, k);
        for (size_t c = 0; c < n_centers; ++c) {
            auto expect = group_oracle(pts, centers[c], k);
            for (size_t j = 0; j < k; ++j) CHECK(gs.group_at(c, j) == expect[j]);
        }
    }
}

TEST_CASE("build_sparse_grid: partition of events by pixel") {
    auto g = build_sparse_grid({{1, 1}, {1, 1}, {2, 0}}, 3, 3);
    REQUIRE(g.sites.size() == 2);
    CHECK(g.sites.at({1, 1}) == std::vector<size_t>{0, 1});
    CHECK(g.sites.at({2, 0}) == std::vector<size_t>{2});

    CHECK_THROWS_AS(build_sparse_grid({{3, 0}}, 3, 3), ShapeError);
    CHECK_THROWS_AS(build_sparse_grid({{0, -1}}, 3, 3), ShapeError);

    Rng rng(607);
    for (int inst = 0; inst < 20; ++inst) {
        const size_t n = 1 + rng.next_below(100);
        std::vector<Site> px(n);
        for (auto& s : px)
            s = {static_cast<int>(rng.next_below(34)), static_cast<int>(rng.next_below(34))};
        auto grid = build_sparse_grid(px, 34, 34);
        CHECK(grid.sites.size() <= std::min<size_t>(n, 34 * 34));
        std::set<size_t> seen;
        for (const auto& [site, events] : grid.sites)
            for (size_t e : events) {
                CHECK(px[e] == site);
                CHECK(seen.insert(e).second);
            }
        CHECK(seen.size() == n);
    }
}

TEST_CASE("pixels_from_normalized inverts integer-pixel normalization") {
    Rng rng(608);
    Tensor<double> pts({50, 4});
    std::vector<Site> expect(50);
    for (size_t i = 0; i < 50; ++i) {
        const int x = static_cast<int>(rng.next_below(34)), y = static_cast<int>(rng.next_below(34));
        pts.at(i, 0) = x / 33.0;
        pts.at(i, 1) = y / 33.0;
        expect[i] = {y, x};
    }
    CHECK(pixels_from_normalized(pts, 34, 34) == expect);
}

TEST_CASE("window_neighbors: radius and ordering") {
    std::vector<Site> px;
    for (int y = 5; y < 8; ++y)
        for (int x = 5; x < 8; ++x) px.push_back({y, x});
    px.push_back({0, 0});  // isolated site
    auto grid = build_sparse_grid(px, 16, 16);

    auto iso = window_neighbors(grid, {0, 0}, 3);
    CHECK(iso == std::vector<Site>{{0, 0}});

    auto center = window_neighbors(grid, {6, 6}, 3);
    CHECK(center.size() == 9);
    CHECK(std::is_sorted(center.begin(), center.end()));

    CHECK(window_neighbors(grid, {6, 6}, 1) == std::vector<Site>{{6, 6}});
    // corner of the patch sees only its quadrant
    CHECK(window_neighbors(grid, {5, 5}, 3).size() == 4);
    // radius 2 window from the patch corner
    CHECK(window_neighbors(grid, {5, 5}, 5).size() == 9);

    CHECK_THROWS_AS(window_neighbors(grid, {6, 6}, 2), ConfigError);
    CHECK_THROWS_AS(window_neighbors(grid, {6, 6}, 0), ConfigError);
}
