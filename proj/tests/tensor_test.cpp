#include <doctest.h>

#include <vector>

#include "ct/rng.hpp"
#include "ct/tensor.hpp"

using ct::GradCheckReport;
using ct::Shape;
using ct::Tape;
using ct::Tensor;
namespace ops = ct::ops;

namespace {

Tensor<double> random_tensor(ct::Pcg32& rng, Shape shape) {
    ct::Vec<double> v(static_cast<std::size_t>(ct::shape_size(shape)));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction enforces invariants") {
    CHECK_THROWS_AS(Tensor<float>({2, 3}, ct::Vec<float>(5)), ct::ShapeError);
    CHECK_THROWS_AS(Tensor<float>({0, 3}, ct::Vec<float>(0)), ct::ShapeError);
    Tensor<float> t({2, 2}, {1.f, 2.f, 3.f, 4.f});
    CHECK(t.size() == 4);
    CHECK(t.at({1, 0}) == 3.f);
    CHECK(t.all_finite());
    Tensor<float> bad({2}, {1.f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_FALSE(bad.all_finite());
    CHECK_THROWS_AS(ops::check_finite(bad, "test"), ct::DomainError);
}

TEST_CASE("elementwise add and relu examples") {
    Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
    auto sum = ops::add<double>(nullptr, a, b);
    CHECK(sum.to_vector() == std::vector<double>{4, 6});

    Tensor<double> r({3}, {-1, 0, 2});
    auto y = ops::relu<double>(nullptr, r);
    CHECK(y.to_vector() == std::vector<double>{0, 0, 2});

    Tensor<double> c({3}, {1, 2, 3});
    CHECK_THROWS_AS(ops::add<double>(nullptr, a, c), ct::ShapeError);
    Tensor<double> neg({2}, {-1.0, 2.0});
    CHECK_THROWS_AS(ops::log<double>(nullptr, neg), ct::DomainError);
}

TEST_CASE("broadcast covers bias-add and per-bin affine") {
    // [2,3] + [3]
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> bias({3}, {10, 20, 30});
    auto y = ops::add<double>(nullptr, x, bias);
    CHECK(y.to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});

    // [2,2,2] * [2,1] stretches over the trailing axis
    Tensor<double> t({2, 2, 2}, {1, 1, 1, 1, 1, 1, 1, 1});
    Tensor<double> g({2, 1}, {2, 3});
    auto z = ops::mul<double>(nullptr, t, g);
    CHECK(z.to_vector() == std::vector<double>{2, 2, 3, 3, 2, 2, 3, 3});
}

TEST_CASE("mul gradient matches central finite differences") {
    ct::Pcg32 rng(11);
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {3, 4});
    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            return ops::sum_all(tp, ops::mul(tp, xs[0], xs[1]));
        },
        {a, b}, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("matmul examples and the triple-loop oracle") {
    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    Tensor<double> m({2, 2}, {1, 2, 3, 4});
    CHECK(ops::matmul<double>(nullptr, eye, m).to_vector() == std::vector<double>{1, 2, 3, 4});

    Tensor<double> row({1, 2}, {1, 2});
    Tensor<double> col({2, 1}, {3, 4});
    CHECK(ops::matmul<double>(nullptr, row, col).to_vector() == std::vector<double>{11});

    ct::Pcg32 rng(13);
    auto a = random_tensor(rng, {4, 5});
    auto b = random_tensor(rng, {5, 3});
    auto prod = ops::matmul<double>(nullptr, a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int p = 0; p < 5; ++p) s += a.at({i, p}) * b.at({p, j});
            CHECK(prod.at({i, j}) == s);  // identical accumulation order, exact
        }

    Tensor<double> bad({4, 4}, ct::Vec<double>(16, 0.0));
    CHECK_THROWS_AS(ops::matmul<double>(nullptr, a, bad), ct::ShapeError);

    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            return ops::sum_all(tp, ops::matmul(tp, xs[0], xs[1]));
        },
        {a, b}, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("reduce examples") {
    Tensor<double> m({2, 2}, {1, 3, 5, 7});
    auto mean1 = ops::mean<double>(nullptr, m, {1});
    CHECK(mean1.to_vector() == std::vector<double>{2, 6});

    auto zsum = ops::sum<double>(nullptr, Tensor<double>::zeros({3, 4}), {0, 1});
    CHECK(zsum.item() == 0.0);

    ct::Pcg32 rng(17);
    auto x = random_tensor(rng, {3, 5});
    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            return ops::sum_all(tp, ops::mean(tp, t, {1}));
        },
        x, 1e-5);
    CHECK(report.max_rel_err < 1e-8);

    // mean gradient is exactly 1/n broadcast
    Tape<double> tape;
    auto leaf = tape.leaf(x);
    auto loss = ops::sum_all(&tape, ops::mean(&tape, leaf, {1}));
    tape.backward(loss);
    auto g = tape.grad(leaf);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == doctest::Approx(0.2));

    CHECK_THROWS_AS(ops::mean<double>(nullptr, x, {2}), ct::ShapeError);

    // max reduce routes gradient to the arg max
    Tensor<double> mx({4}, {1, 9, 3, 9});
    Tape<double> tp2;
    auto lf = tp2.leaf(mx);
    auto mr = ops::reduce_max(&tp2, lf, {0});
    CHECK(mr.item() == 9.0);
    tp2.backward(mr);
    CHECK(tp2.grad(lf).to_vector() == std::vector<double>{0, 1, 0, 0});  // first max wins
}

TEST_CASE("concat and slice round-trip exactly") {
    ct::Pcg32 rng(19);
    auto a = random_tensor(rng, {1, 2, 4, 4});
    auto b = random_tensor(rng, {1, 2, 4, 4});
    auto cat = ops::concat<double>(nullptr, {a, b}, 1);
    CHECK(cat.shape() == Shape{1, 4, 4, 4});
    auto a2 = ops::slice<double>(nullptr, cat, 1, 0, 2);
    auto b2 = ops::slice<double>(nullptr, cat, 1, 2, 2);
    CHECK(a2.bit_equal(a));
    CHECK(b2.bit_equal(b));

    Tensor<double> wrong({1, 2, 3, 4}, ct::Vec<double>(24, 0.0));
    CHECK_THROWS_AS(ops::concat<double>(nullptr, {a, wrong}, 1), ct::ShapeError);
    CHECK_THROWS_AS(ops::slice<double>(nullptr, cat, 1, 3, 3), ct::ShapeError);

    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            auto cat = ops::concat(tp, {xs[0], xs[1]}, 1);
            auto w = ops::mul(tp, cat, cat);
            return ops::sum_all(tp, w);
        },
        {a, b}, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("reshape preserves count and gradients") {
    ct::Pcg32 rng(23);
    auto x = random_tensor(rng, {2, 6});
    auto r = ops::reshape<double>(nullptr, x, {3, 4});
    CHECK(r.shape() == Shape{3, 4});
    CHECK_THROWS_AS(ops::reshape<double>(nullptr, x, {5, 2}), ct::ShapeError);
    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            auto r = ops::reshape(tp, t, {3, 4});
            return ops::sum_all(tp, ops::mul(tp, r, r));
        },
        x, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("backward basics") {
    ct::Pcg32 rng(29);
    auto x = random_tensor(rng, {2, 3, 2});

    Tape<double> tape;
    auto leaf = tape.leaf(x);
    auto root = ops::sum_all(&tape, leaf);
    tape.backward(root);
    auto g1 = tape.grad(leaf);
    for (double g : g1.values()) CHECK(g == 1.0);

    Tensor<double> v({3}, {1, 2, 3});
    Tape<double> t2;
    auto lv = t2.leaf(v);
    auto r2 = ops::sum_all(&t2, ops::mul(&t2, lv, lv));
    t2.backward(r2);
    CHECK(t2.grad(lv).to_vector() == std::vector<double>{2, 4, 6});

    // non-scalar root
    Tape<double> t3;
    auto l3 = t3.leaf(v);
    auto y3 = ops::mul(&t3, l3, l3);
    CHECK_THROWS_AS(t3.backward(y3), ct::ShapeError);

    // detached root
    Tape<double> t4;
    auto detached = ops::sum_all<double>(nullptr, v);
    CHECK_THROWS_AS(t4.backward(detached), ct::TapeError);
}

TEST_CASE("softmax_axis is a simplex and differentiates") {
    ct::Pcg32 rng(31);
    auto x = random_tensor(rng, {2, 4, 3});
    auto p = ops::softmax_axis<double>(nullptr, x, 1, 2.5);
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) {
                double v = p.at({b, k, i});
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            auto sm = ops::softmax_axis(tp, t, 1, 2.5);
            auto w = ops::mul(tp, sm, sm);
            return ops::sum_all(tp, w);
        },
        x, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("unary op gradients") {
    ct::Pcg32 rng(37);
    auto x = random_tensor(rng, {4, 3});
    for (auto kind : {ops::EwKind::sigmoid, ops::EwKind::exp}) {
        auto report = ct::grad_check(
            [kind](Tape<double>* tp, const Tensor<double>& t) {
                return ops::sum_all(tp, ops::elementwise(tp, kind, t));
            },
            x, 1e-5);
        CHECK(report.max_rel_err < 1e-7);
    }
    // log and rsqrt on positive inputs
    ct::Vec<double> pos(12);
    for (auto& v : pos) v = 0.5 + rng.next_double() * 2.0;
    Tensor<double> xp({4, 3}, pos);
    auto rlog = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            return ops::sum_all(tp, ops::log(tp, t));
        },
        xp, 1e-6);
    CHECK(rlog.max_rel_err < 1e-7);
    auto rr = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            return ops::sum_all(tp, ops::rsqrt_eps(tp, t, 1e-5));
        },
        xp, 1e-6);
    CHECK(rr.max_rel_err < 1e-7);
}

TEST_CASE("grad_check of plain sum reports zero error") {
    // integer values and a dyadic step keep every sum exact, so the central
    // difference hits the analytic gradient bit for bit
    ct::Pcg32 rng(41);
    ct::Vec<double> vals(10);
    for (auto& v : vals) v = static_cast<double>(rng.next_below(17)) - 8.0;
    Tensor<double> x({5, 2}, std::move(vals));
    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) { return ops::sum_all(tp, t); }, x,
        0.0078125);
    CHECK(report.max_rel_err == 0.0);
    CHECK(report.elements_checked == 10);
}

TEST_CASE("determinism: identical runs give identical bits") {
    auto run = [] {
        ct::Pcg32 rng(99);
        auto x = random_tensor(rng, {4, 6});
        auto w = random_tensor(rng, {6, 3});
        Tape<double> tape;
        auto lx = tape.leaf(x);
        auto lw = tape.leaf(w);
        auto y = ops::relu(&tape, ops::matmul(&tape, lx, lw));
        auto loss = ops::sum_all(&tape, ops::mul(&tape, y, y));
        tape.backward(loss);
        return std::make_pair(loss.item(), tape.grad(lw).values());
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    CHECK(g1 == g2);
}

TEST_CASE("linearity of backward") {
    ct::Pcg32 rng(43);
    auto x = random_tensor(rng, {3, 3});
    const double a = 2.25, b = -0.75;

    auto grad_of = [&x](auto&& make_root) {
        Tape<double> tape;
        auto leaf = tape.leaf(x);
        auto root = make_root(tape, leaf);
        tape.backward(root);
        return tape.grad(leaf).values();
    };
    auto f = [](Tape<double>& tp, const Tensor<double>& t) {
        return ops::sum_all(&tp, ops::mul(&tp, t, t));
    };
    auto g = [](Tape<double>& tp, const Tensor<double>& t) {
        return ops::sum_all(&tp, ops::relu(&tp, t));
    };
    auto gf = grad_of(f);
    auto gg = grad_of(g);
    auto gcombo = grad_of([&](Tape<double>& tp, const Tensor<double>& t) {
        return ops::add(&tp, ops::scale(&tp, f(tp, t), a), ops::scale(&tp, g(tp, t), b));
    });
    for (std::size_t i = 0; i < gcombo.size(); ++i)
        CHECK(gcombo[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

}  // TEST_SUITE
