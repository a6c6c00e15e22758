#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evt/gradcheck.hpp"
#include "evt/nn.hpp"
#include "evt/ops.hpp"
#include "evt/optim.hpp"
#include "evt/rng.hpp"
#include "evt/tape.hpp"
#include "evt/tensor.hpp"

using namespace evt;

namespace {

template <typename T>
Tensor<T> mat(std::vector<size_t> shape, std::vector<T> vals) {
    return Tensor<T>(std::move(shape), std::move(vals));
}

}  // namespace

TEST_CASE("rng: deterministic, stream-separated, portable sampling") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng s1(42, "stream-a"), s2(42, "stream-b");
    CHECK(s1.next_u64() != s2.next_u64());

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double d = r.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
    }

    Rng q(9);
    auto idx = q.sample_indices(100, 12);
    REQUIRE(idx.size() == 12);
    for (size_t i = 0; i < idx.size(); ++i) {
        CHECK(idx[i] < 100);
        if (i) CHECK(idx[i] > idx[i - 1]);
    }
    // full sample is the identity permutation (sorted ascending)
    auto all = q.sample_indices(5, 5);
    CHECK(all == std::vector<size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("rng: shuffle is a permutation") {
    Rng r(3);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    r.shuffle(w);
    auto sorted = w;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
    CHECK(w != v);  // 50 elements, astronomically unlikely to be identity
}

TEST_CASE("gemm_acc matches naive triple loop") {
    Rng r(11);
    for (int inst = 0; inst < 20; ++inst) {
        const size_t m = 1 + r.next_below(6), k = 1 + r.next_below(6), n = 1 + r.next_below(6);
        std::vector<double> a(m * k), b(k * n), c(m * n, 0.0), ref(m * n, 0.0);
        for (auto& x : a) x = r.uniform(-2, 2);
        for (auto& x : b) x = r.uniform(-2, 2);
        gemm_acc(a.data(), b.data(), c.data(), m, k, n);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
                for (size_t p = 0; p < k; ++p) ref[i * n + j] += a[i * k + p] * b[p * n + j];
        for (size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("transpose twice is identity") {
    Rng r(13);
    const size_t m = 5, n = 7;
    std::vector<double> a(m * n), t(m * n), tt(m * n);
    for (auto& x : a) x = r.uniform(-1, 1);
    transpose(a.data(), t.data(), m, n);
    transpose(t.data(), tt.data(), n, m);
    CHECK(tt == a);
}

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(mat<double>({2, 3}, {1, 2, 3}), ShapeError);
    Tensor<double> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    auto f = cast_tensor<float>(t);
    CHECK(f.shape == t.shape);
}

TEST_CASE("softmax frozen values") {
    Tape<double> tape;
    auto x = tape.leaf(mat<double>({1, 2}, {0.0, std::log(3.0)}), false);
    auto y = softmax(x);
    CHECK(y.val().v[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.val().v[1] == doctest::Approx(0.75).epsilon(1e-12));

    auto z = softmax(tape.leaf(mat<double>({1, 2}, {0.0, 0.0}), false));
    CHECK(z.val().v[0] == doctest::Approx(0.5));

    // no overflow under max-shift
    auto big = softmax(tape.leaf(mat<double>({1, 2}, {1000.0, 1000.0}), false));
    CHECK(big.val().v[0] == doctest::Approx(0.5));
    CHECK(big.val().all_finite());
}

TEST_CASE("softmax rows sum to 1 and are positive") {
    Rng r(21);
    for (int inst = 0; inst < 25; ++inst) {
        const size_t rows = 1 + r.next_below(5), cols = 1 + r.next_below(8);
        Tensor<double> x({rows, cols});
        for (auto& e : x.v) e = r.uniform(-30, 30);
        Tape<double> tape;
        auto y = softmax(tape.leaf(x, false));
        for (size_t i = 0; i < rows; ++i) {
            double s = 0;
            for (size_t j = 0; j < cols; ++j) {
                CHECK(y.val().at(i, j) > 0.0);
                s += y.val().at(i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("softmax shift invariance per row") {
    Rng r(22);
    Tensor<double> x({3, 4}), xs({3, 4});
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = r.uniform(-2, 2);
    for (size_t i = 0; i < 3; ++i) {
        const double c = r.uniform(-100, 100);
        for (size_t j = 0; j < 4; ++j) xs.at(i, j) = x.at(i, j) + c;
    }
    Tape<double> tape;
    auto a = softmax(tape.leaf(x, false));
    auto b = softmax(tape.leaf(xs, false));
    for (size_t i = 0; i < a.val().v.size(); ++i)
        CHECK(a.val().v[i] == doctest::Approx(b.val().v[i]).epsilon(1e-10));
}

TEST_CASE("layer_norm frozen values") {
    Tape<double> tape;
    auto gain = tape.leaf(mat<double>({3}, {1, 1, 1}), false);
    auto bias = tape.leaf(mat<double>({3}, {0, 0, 0}), false);
    auto y = layer_norm(tape.leaf(mat<double>({1, 3}, {5, 5, 5}), false), gain, bias);
    for (double e : y.val().v) CHECK(e == doctest::Approx(0.0).epsilon(1e-12));

    auto g2 = tape.leaf(mat<double>({2}, {1, 1}), false);
    auto b2 = tape.leaf(mat<double>({2}, {0, 0}), false);
    auto y2 = layer_norm(tape.leaf(mat<double>({1, 2}, {1, -1}), false), g2, b2);
    CHECK(y2.val().v[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y2.val().v[1] == doctest::Approx(-1.0).epsilon(1e-4));
    // exact value carries the epsilon: 1/sqrt(1+1e-5)
    CHECK(y2.val().v[0] == doctest::Approx(0.99999500003749967).epsilon(1e-12));
}

TEST_CASE("layer_norm rows have zero mean before affine") {
    Rng r(23);
    for (int inst = 0; inst < 20; ++inst) {
        const size_t rows = 1 + r.next_below(4), cols = 2 + r.next_below(6);
        Tensor<double> x({rows, cols});
        for (auto& e : x.v) e = r.uniform(-5, 5);
        Tensor<double> ones({cols}), zeros({cols});
        for (auto& e : ones.v) e = 1.0;
        Tape<double> tape;
        auto y = layer_norm(tape.leaf(x, false), tape.leaf(ones, false), tape.leaf(zeros, false));
        for (size_t i = 0; i < rows; ++i) {
            double mean = 0;
            for (size_t j = 0; j < cols; ++j) mean += y.val().at(i, j);
            mean /= static_cast<double>(cols);
            CHECK(std::abs(mean) <= 1e-6);
        }
    }
}

TEST_CASE("cross_entropy frozen values") {
    Tape<double> tape;
    auto labels = std::make_shared<const std::vector<size_t>>(std::vector<size_t>{3});
    auto logits = tape.leaf(Tensor<double>({1, 10}), false);  // all zeros = uniform
    auto loss = cross_entropy(logits, labels);
    CHECK(loss.val().v[0] == doctest::Approx(std::log(10.0)).epsilon(1e-9));
    CHECK(loss.val().v[0] == doctest::Approx(2.302585).epsilon(1e-6));

    Tensor<double> confident({1, 10});
    confident.v[3] = 1e6;
    auto l2 = cross_entropy(tape.leaf(confident, false), labels);
    CHECK(l2.val().v[0] == doctest::Approx(0.0).epsilon(1e-9));

    auto bad = std::make_shared<const std::vector<size_t>>(std::vector<size_t>{10});
    CHECK_THROWS_AS(cross_entropy(tape.leaf(Tensor<double>({1, 10}), false), bad), ShapeError);
}

TEST_CASE("mlp identity and relu clamp") {
    Tape<double> tape;
    Mlp<double> id;
    id.w = {tape.leaf(mat<double>({2, 2}, {1, 0, 0, 1}), false)};
    id.b = {tape.leaf(mat<double>({2}, {0, 0}), false)};
    id.act = Act::None;
    auto y = mlp_forward(id, tape.leaf(mat<double>({1, 2}, {1, 2}), false));
    CHECK(y.val().v == std::vector<double>{1, 2});

    // single layer has no interior activation; apply relu explicitly
    auto z = relu(mlp_forward(id, tape.leaf(mat<double>({1, 2}, {-1, 2}), false)));
    CHECK(z.val().v == std::vector<double>{0, 2});
}

TEST_CASE("sgd_step frozen recurrence") {
    std::vector<double> p{1.0}, v;
    sgd_step<double>(p, {1.0}, v, 0.1, 0.0);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-12));

    p = {1.0};
    v.clear();
    sgd_step<double>(p, {1.0}, v, 0.1, 0.9);
    sgd_step<double>(p, {1.0}, v, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(0.71).epsilon(1e-12));

    // zero gradient, zero buffer: fixed point
    p = {0.5};
    v.clear();
    sgd_step<double>(p, {0.0}, v, 0.1, 0.9);
    CHECK(p[0] == 0.5);

    // lr = 0 is the identity
    p = {0.5};
    v.clear();
    sgd_step<double>(p, {3.0}, v, 0.0, 0.9);
    CHECK(p[0] == 0.5);

    std::vector<double> wrong{1.0, 2.0};
    CHECK_THROWS_AS(sgd_step<double>(p, wrong, v, 0.1, 0.9), ShapeError);
}

TEST_CASE("lr schedule milestones") {
    std::map<int, double> m{{0, 0.01}, {150, 0.001}, {180, 0.0001}};
    CHECK(lr_at_epoch(m, 0) == 0.01);
    CHECK(lr_at_epoch(m, 149) == 0.01);
    CHECK(lr_at_epoch(m, 150) == 0.001);
    CHECK(lr_at_epoch(m, 179) == 0.001);
    CHECK(lr_at_epoch(m, 180) == 0.0001);
    CHECK(lr_at_epoch(m, 500) == 0.0001);
    CHECK_THROWS_AS(lr_at_epoch({{10, 0.1}}, 5), ConfigError);
}

TEST_CASE("finite_diff_grad basics") {
    auto sq = [](const Tensor<double>& x) { return x.v[0] * x.v[0]; };
    auto g = finite_diff_grad(sq, Tensor<double>::scalar(3.0));
    CHECK(g.v[0] == doctest::Approx(6.0).epsilon(1e-6));

    auto total = [](const Tensor<double>& x) {
        double s = 0;
        for (double e : x.v) s += e;
        return s;
    };
    auto g2 = finite_diff_grad(total, mat<double>({2, 2}, {0.3, -1.0, 2.0, 5.0}));
    for (double e : g2.v) CHECK(e == doctest::Approx(1.0).epsilon(1e-9));

    auto blows_up = [](const Tensor<double>& x) { return std::log(x.v[0]); };
    CHECK_THROWS_AS(finite_diff_grad(blows_up, Tensor<double>::scalar(1e-20)), NumericError);
}

TEST_CASE("gradients: every primitive vs central differences, 10 instances each") {
    auto cases = run_primitive_gradchecks(0x5eedULL, 10);
    CHECK(cases.size() >= 15);
    for (const auto& c : cases) {
        INFO(c.name, " rel err ", c.max_rel_err, " over ", c.coords, " coords");
        CHECK(c.instances == 10);
        CHECK(c.max_rel_err <= 1e-5);
    }
}

TEST_CASE("gradcheck harness catches an injected backward fault") {
    fault::set("relu");
    bool caught = false;
    for (auto& [name, gen] : primitive_gradcheck_cases()) {
        if (name != "relu") continue;
        Rng rng(derive_seed(99, "fault"));
        auto inst = gen(rng);
        auto rep = check_gradients<double>(std::move(inst.inputs), inst.build);
        caught = rep.max_rel_err > 1e-5;
    }
    fault::clear();
    CHECK(caught);

    // and the suite is clean again once the fault is cleared
    auto cases = run_primitive_gradchecks(0x5eedULL, 1);
    for (const auto& c : cases) CHECK(c.max_rel_err <= 1e-5);
}

TEST_CASE("tape: structural ops and backward accumulation") {
    Tape<double> tape;
    auto a = tape.leaf(mat<double>({2, 2}, {1, 2, 3, 4}), true);
    auto b = tape.leaf(mat<double>({2, 2}, {5, 6, 7, 8}), true);
    auto y = sum_all(mul(add(a, b), sub(a, b)));  // sum(a^2 - b^2)
    CHECK(y.val().v[0] == doctest::Approx((1 + 4 + 9 + 16) - (25 + 36 + 49 + 64)));
    tape.backward(y);
    const auto& ga = tape.grad(a.id);
    const auto& gb = tape.grad(b.id);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(ga[i] == doctest::Approx(2.0 * a.val().v[i]));
        CHECK(gb[i] == doctest::Approx(-2.0 * b.val().v[i]));
    }
}

TEST_CASE("tape: constants receive no gradient") {
    Tape<double> tape;
    auto a = tape.leaf(mat<double>({1, 2}, {1, 2}), true);
    auto c = tape.constant(mat<double>({1, 2}, {10, 20}));
    auto y = sum_all(mul(a, c));
    tape.backward(y);
    CHECK(tape.has_grad(a.id));
    CHECK_FALSE(tape.has_grad(c.id));
}

TEST_CASE("segment ops: frozen small cases") {
    Tape<double> tape;
    auto x = tape.leaf(mat<double>({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40}), false);
    auto seg = Segments::from_sizes({3, 1});

    auto s = segment_sum(x, seg);
    CHECK(s.val().v == std::vector<double>{6, 60, 4, 40});

    auto m = segment_mean(x, seg);
    CHECK(m.val().v == std::vector<double>{2, 20, 4, 40});

    auto mx = segment_max(x, seg);
    CHECK(mx.val().v == std::vector<double>{3, 30, 4, 40});

    auto sm = segment_softmax(x, seg);
    for (size_t j = 0; j < 2; ++j) {
        double tot = sm.val().at(0, j) + sm.val().at(1, j) + sm.val().at(2, j);
        CHECK(tot == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(sm.val().at(3, j) == doctest::Approx(1.0).epsilon(1e-9));  // singleton segment
    }
}

TEST_CASE("segment_max ties route gradient to the first argmax row") {
    Tape<double> tape;
    auto x = tape.leaf(mat<double>({3, 1}, {7, 7, 1}), true);
    auto y = sum_all(segment_max(x, Segments::from_sizes({3})));
    tape.backward(y);
    CHECK(tape.grad(x.id) == std::vector<double>{1, 0, 0});
}

TEST_CASE("gather_rows scatter-add on repeated indices") {
    Tape<double> tape;
    auto x = tape.leaf(mat<double>({2, 1}, {3, 4}), true);
    auto y = sum_all(gather_rows(x, make_indices({0, 0, 1})));
    CHECK(y.val().v[0] == doctest::Approx(10.0));
    tape.backward(y);
    CHECK(tape.grad(x.id) == std::vector<double>{2, 1});
}

TEST_CASE("debug mode flags non-finite intermediates and names the op") {
    set_debug_checks(true);
    Tape<double> tape;
    auto x = tape.leaf(mat<double>({1, 1}, {1e308}), false);
    CHECK_THROWS_WITH_AS(scale(x, 1e308), doctest::Contains("scale"), NumericError);
    set_debug_checks(false);
    // same computation passes silently with checks off
    auto y = scale(x, 1e308);
    CHECK_FALSE(y.val().all_finite());
}

TEST_CASE("forward determinism: identical inputs give identical bits") {
    auto run = [](uint64_t seed) {
        Rng r(seed);
        Tensor<float> x({8, 6}), w({6, 4}), b({4});
        for (auto& e : x.v) e = static_cast<float>(r.uniform(-1, 1));
        for (auto& e : w.v) e = static_cast<float>(r.uniform(-1, 1));
        for (auto& e : b.v) e = static_cast<float>(r.uniform(-1, 1));
        Tape<float> tape;
        auto y = softmax(gelu(affine(tape.leaf(x, false), tape.leaf(w, false), tape.leaf(b, false))));
        return y.val().v;
    };
    CHECK(run(31) == run(31));
    CHECK(run(31) != run(32));
}
