#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ct/nn.hpp"
#include "ct/rng.hpp"

using ct::Shape;
using ct::Tape;
using ct::Tensor;
namespace ops = ct::ops;
namespace nn = ct::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(ct::Pcg32& rng, Shape shape) {
    ct::Vec<T> v(static_cast<std::size_t>(ct::shape_size(shape)));
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return Tensor<T>(std::move(shape), std::move(v));
}

// Direct cross-correlation with the same term order as the im2col + gemm
// path: every kernel position contributes, out-of-range taps as 0.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& bias, int sh, int sw, int ph, int pw) {
    const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int HO = (H + 2 * ph - KH) / sh + 1;
    const int WO = (W + 2 * pw - KW) / sw + 1;
    ct::Vec<double> out;
    out.reserve(static_cast<std::size_t>(B) * OC * HO * WO);
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < OC; ++oc)
            for (int ho = 0; ho < HO; ++ho)
                for (int wo = 0; wo < WO; ++wo) {
                    double acc = 0.0;
                    for (int ic = 0; ic < IC; ++ic)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = ho * sh - ph + kh;
                                const int iw = wo * sw - pw + kw;
                                const double xv = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                                      ? x.at({b, ic, ih, iw})
                                                      : 0.0;
                                acc += xv * w.at({oc, ic, kh, kw});
                            }
                    out.push_back(acc + bias.at({oc}));
                }
    return Tensor<double>({B, OC, HO, WO}, std::move(out));
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d basic examples") {
    // 1x1 kernel with weight 2, bias 0 doubles the input
    Tensor<double> x = Tensor<double>::ones({1, 1, 2, 2});
    Tensor<double> w({1, 1, 1, 1}, {2.0});
    Tensor<double> b = Tensor<double>::zeros({1});
    auto y = nn::conv2d<double>(nullptr, x, w, b, 1, 1, 0, 0);
    for (double v : y.values()) CHECK(v == 2.0);

    // 3x3 center delta with same padding is the identity
    ct::Pcg32 rng(7);
    auto xin = random_tensor<double>(rng, {1, 1, 5, 6});
    ct::Vec<double> delta(9, 0.0);
    delta[4] = 1.0;
    Tensor<double> wd({1, 1, 3, 3}, delta);
    auto same = nn::conv2d<double>(nullptr, xin, wd, b, 1, 1, 1, 1);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) CHECK(same.at({0, 0, i, j}) == xin.at({0, 0, i, j}));

    // channel mismatch
    Tensor<double> w2({1, 3, 3, 3}, ct::Vec<double>(27, 0.0));
    CHECK_THROWS_AS(nn::conv2d<double>(nullptr, xin, w2, b, 1, 1, 1, 1), ct::ShapeError);
}

TEST_CASE("conv2d matches the quadruple-loop oracle exactly") {
    ct::Pcg32 rng(11);
    auto x = random_tensor<double>(rng, {1, 2, 5, 5});
    auto w = random_tensor<double>(rng, {3, 2, 3, 3});
    auto b = random_tensor<double>(rng, {3});
    for (auto [sh, sw, ph, pw] : {std::array<int, 4>{1, 1, 0, 0}, std::array<int, 4>{1, 1, 1, 1},
                                  std::array<int, 4>{2, 1, 1, 0}}) {
        auto fast = nn::conv2d<double>(nullptr, x, w, b, sh, sw, ph, pw);
        auto ref = conv_oracle(x, w, b, sh, sw, ph, pw);
        CHECK(fast.bit_equal(ref));
    }
    // batched input agrees with per-sample evaluation
    auto xb = random_tensor<double>(rng, {3, 2, 5, 5});
    auto full = nn::conv2d<double>(nullptr, xb, w, b, 1, 1, 1, 1);
    CHECK(full.bit_equal(conv_oracle(xb, w, b, 1, 1, 1, 1)));
}

TEST_CASE("conv2d gradients pass the finite-difference check") {
    ct::Pcg32 rng(13);
    auto x = random_tensor<double>(rng, {2, 2, 4, 5});
    auto w = random_tensor<double>(rng, {3, 2, 3, 3});
    auto b = random_tensor<double>(rng, {3});
    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            auto y = nn::conv2d(tp, xs[0], xs[1], xs[2], 1, 1, 1, 1);
            return ops::sum_all(tp, ops::mul(tp, y, y));
        },
        {x, w, b}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("maxpool, global average pool and dense") {
    Tensor<double> m({1, 1, 2, 2}, {1, 2, 3, 4});
    auto p = nn::maxpool2d<double>(nullptr, m, 2, 2);
    CHECK(p.shape() == Shape{1, 1, 1, 1});
    CHECK(p.item() == 4.0);
    CHECK_THROWS_AS(nn::maxpool2d<double>(nullptr, m, 0, 2), ct::ShapeError);

    auto g = nn::global_avg_pool<double>(nullptr, Tensor<double>::ones({2, 3, 4, 5}));
    CHECK(g.shape() == Shape{2, 3});
    for (double v : g.values()) CHECK(v == doctest::Approx(1.0));

    // identity dense is a passthrough
    nn::Dense<double> d;
    d.weight = Tensor<double>({2, 2}, {1, 0, 0, 1});
    d.bias = Tensor<double>::zeros({2});
    Tensor<double> v({1, 2}, {3.5, -1.25});
    CHECK(nn::dense_forward<double>(nullptr, d, v).to_vector() == std::vector<double>{3.5, -1.25});

    // maxpool truncates ragged edges and routes gradient to the argmax
    ct::Pcg32 rng(17);
    auto x = random_tensor<double>(rng, {1, 2, 5, 5});
    auto pooled = nn::maxpool2d<double>(nullptr, x, 2, 2);
    CHECK(pooled.shape() == Shape{1, 2, 2, 2});
    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            auto y = nn::maxpool2d(tp, t, 2, 2);
            return ops::sum_all(tp, ops::mul(tp, y, y));
        },
        x, 1e-6);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("fln standardizes across the frequency axis") {
    nn::FLN<double> fln;
    fln.gamma = Tensor<double>::ones({4});
    fln.beta = Tensor<double>::zeros({4});

    // constant over frequency -> all zeros
    auto c = Tensor<double>::full({2, 1, 4, 3}, 5.0);
    auto y = nn::fln_forward<double>(nullptr, fln, c);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

    // frequency column [1,3] standardizes to [-1,1] as epsilon -> 0
    nn::FLN<double> tiny;
    tiny.gamma = Tensor<double>::ones({2});
    tiny.beta = Tensor<double>::zeros({2});
    tiny.epsilon = 1e-12;
    Tensor<double> col({1, 1, 2, 1}, {1.0, 3.0});
    auto z = nn::fln_forward<double>(nullptr, tiny, col);
    CHECK(z.at({0, 0, 0, 0}) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(z.at({0, 0, 1, 0}) == doctest::Approx(1.0).epsilon(1e-6));

    // shift/scale invariance: a*x + b gives the same output (a > 0); exact up
    // to the epsilon guard, so run it with a vanishing epsilon
    ct::Pcg32 rng(19);
    nn::FLN<double> fln0 = fln;
    fln0.epsilon = 1e-14;
    auto x = random_tensor<double>(rng, {2, 2, 4, 3});
    auto base = nn::fln_forward<double>(nullptr, fln0, x);
    auto shifted = ops::affine<double>(nullptr, x, 3.0, -2.0);
    auto out2 = nn::fln_forward<double>(nullptr, fln0, shifted);
    for (std::int64_t i = 0; i < base.size(); ++i)
        CHECK(out2.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-9));

    // per (batch, ch, time) slot: mean ~ 0, variance ~ 1 before affine
    for (int b = 0; b < 2; ++b)
        for (int ch = 0; ch < 2; ++ch)
            for (int t = 0; t < 3; ++t) {
                double mean = 0.0, var = 0.0;
                for (int f = 0; f < 4; ++f) mean += base.at({b, ch, f, t});
                mean /= 4.0;
                for (int f = 0; f < 4; ++f) {
                    double d = base.at({b, ch, f, t}) - mean;
                    var += d * d;
                }
                var /= 4.0;
                CHECK(std::fabs(mean) <= 1e-5);
                CHECK(std::fabs(var - 1.0) <= 1e-3);
            }

    // F mismatch
    CHECK_THROWS_AS(nn::fln_forward<double>(nullptr, fln, Tensor<double>::ones({1, 1, 5, 2})),
                    ct::ShapeError);

    // gradient through the whole normalization
    nn::FLN<double> g4;
    g4.gamma = random_tensor<double>(rng, {4});
    g4.beta = random_tensor<double>(rng, {4});
    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::FLN<double> layer;
            layer.gamma = xs[1];
            layer.beta = xs[2];
            auto y = nn::fln_forward(tp, layer, xs[0]);
            return ops::sum_all(tp, ops::mul(tp, y, y));
        },
        {x, g4.gamma, g4.beta}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("fdy reduces to plain conv for K=1 and equal bases") {
    ct::Pcg32 rng(23);
    auto x = random_tensor<double>(rng, {2, 3, 6, 5});

    nn::FDYConv<double> fdy1;
    nn::Conv2D<double> base;
    base.weight = random_tensor<double>(rng, {4, 3, 3, 3});
    base.bias = random_tensor<double>(rng, {4});
    base.pad_h = base.pad_w = 1;
    fdy1.basis = {base};
    fdy1.attn_weight = random_tensor<double>(rng, {1, 3, 1, 1});
    fdy1.attn_bias = random_tensor<double>(rng, {1});
    auto y1 = nn::fdy_forward<double>(nullptr, fdy1, x);
    auto plain = nn::conv2d_forward<double>(nullptr, base, x);
    CHECK(y1.bit_equal(plain));

    // K=3 with identical kernels: convex combination is the plain conv
    nn::FDYConv<double> fdy3;
    fdy3.basis = {base, base, base};
    fdy3.attn_weight = random_tensor<double>(rng, {3, 3, 1, 1});
    fdy3.attn_bias = random_tensor<double>(rng, {3});
    auto y3 = nn::fdy_forward<double>(nullptr, fdy3, x);
    for (std::int64_t i = 0; i < y3.size(); ++i)
        CHECK(y3.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-6));

    // attention rows are simplex points at every frequency bin
    auto pi = nn::fdy_attention<double>(fdy3, x);
    for (int b = 0; b < 2; ++b)
        for (int f = 0; f < 6; ++f) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) {
                CHECK(pi.at({b, k, f}) >= 0.0);
                s += pi.at({b, k, f});
            }
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
}

TEST_CASE("fdy gradients pass the finite-difference check") {
    ct::Pcg32 rng(29);
    auto x = random_tensor<double>(rng, {1, 2, 5, 4});
    auto w0 = random_tensor<double>(rng, {3, 2, 3, 3});
    auto w1 = random_tensor<double>(rng, {3, 2, 3, 3});
    auto aw = random_tensor<double>(rng, {2, 2, 1, 1});
    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::FDYConv<double> fdy;
            fdy.temperature = 4.0;
            nn::Conv2D<double> c0, c1;
            c0.weight = xs[1];
            c0.bias = Tensor<double>::zeros({3});
            c0.pad_h = c0.pad_w = 1;
            c1 = c0;
            c1.weight = xs[2];
            fdy.basis = {c0, c1};
            fdy.attn_weight = xs[3];
            fdy.attn_bias = Tensor<double>::zeros({2});
            auto y = nn::fdy_forward(tp, fdy, xs[0]);
            return ops::sum_all(tp, ops::mul(tp, y, y));
        },
        {x, w0, w1, aw}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("softmax cross-entropy examples") {
    // uniform logits over 9 classes -> ln 9
    Tensor<double> u = Tensor<double>::zeros({2, 9});
    auto loss = nn::softmax_cross_entropy<double>(nullptr, u, {3, 7});
    CHECK(loss.item() == std::log(9.0));  // exact for batch sizes 1,2,4,...

    // dominant true-class logit drives the loss to ~0
    Tensor<double> sharp({1, 4}, {25.0, 1.0, 2.0, 3.0});
    auto l2 = nn::softmax_cross_entropy<double>(nullptr, sharp, {0});
    CHECK(l2.item() >= 0.0);
    CHECK(l2.item() <= 1e-3);

    // loss is never negative
    ct::Pcg32 rng(31);
    auto logits = random_tensor<double>(rng, {4, 6});
    auto l3 = nn::softmax_cross_entropy<double>(nullptr, logits, {0, 1, 2, 3});
    CHECK(l3.item() >= 0.0);

    CHECK_THROWS_AS(nn::softmax_cross_entropy<double>(nullptr, logits, {0, 1, 2, 6}),
                    ct::LabelError);
    CHECK_THROWS_AS(nn::softmax_cross_entropy<double>(nullptr, logits, {0}), ct::ShapeError);

    auto report = ct::grad_check(
        [](Tape<double>* tp, const Tensor<double>& t) {
            return nn::softmax_cross_entropy(tp, t, {5, 0, 3, 2});
        },
        logits, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("adam follows the bias-corrected update") {
    // first step: update magnitude = lr * |g| / (|g| + eps)
    nn::AdamState<double> st;
    Tensor<double> p = Tensor<double>::zeros({1});
    std::vector<nn::ParamRef<double>> params{{"p", &p}};
    const double g = 0.37;
    nn::adam_step<double>(st, params, {Tensor<double>({1}, {g})});
    const double expected = st.lr * g / (g + st.eps);
    CHECK(p.item() == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(st.t == 1);

    // zero gradient leaves parameters and moments untouched
    nn::AdamState<double> st0;
    Tensor<double> q({2}, {1.5, -2.5});
    std::vector<nn::ParamRef<double>> qp{{"q", &q}};
    nn::adam_step<double>(st0, qp, {Tensor<double>::zeros({2})});
    CHECK(q.to_vector() == std::vector<double>{1.5, -2.5});
    for (double v : st0.m["q"]) CHECK(v == 0.0);
    for (double v : st0.v["q"]) CHECK(v == 0.0);

    // lr = 0 is the identity
    nn::AdamState<double> stz;
    stz.lr = 0.0;
    Tensor<double> r({2}, {3.0, 4.0});
    std::vector<nn::ParamRef<double>> rp{{"r", &r}};
    nn::adam_step<double>(stz, rp, {Tensor<double>({2}, {0.5, -0.5})});
    CHECK(r.to_vector() == std::vector<double>{3.0, 4.0});

    // two steps with constant gradient match a scalar reference to 1e-12
    nn::AdamState<double> st2;
    Tensor<double> w({1}, {0.2});
    std::vector<nn::ParamRef<double>> wp{{"w", &w}};
    const double cg = -0.8;
    nn::adam_step<double>(st2, wp, {Tensor<double>({1}, {cg})});
    nn::adam_step<double>(st2, wp, {Tensor<double>({1}, {cg})});

    double m = 0.0, v = 0.0, x = 0.2;
    for (int t = 1; t <= 2; ++t) {
        m = 0.9 * m + 0.1 * cg;
        v = 0.999 * v + 0.001 * cg * cg;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        x -= 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    CHECK(w.item() == doctest::Approx(x).epsilon(1e-12));

    // shape mismatch
    CHECK_THROWS_AS(nn::adam_step<double>(st2, wp, {Tensor<double>::zeros({2})}), ct::ShapeError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    ct::Pcg32 rng(37);
    Tensor<float> a = random_tensor<float>(rng, {3, 4, 2, 2});
    Tensor<float> b = random_tensor<float>(rng, {7});
    std::vector<nn::ParamRef<float>> params{{"layer.weight", &a}, {"layer.bias", &b}};

    auto path = std::filesystem::temp_directory_path() / "ct_ckpt_test.ctlw";
    nn::save_checkpoint(path, params);
    auto loaded = nn::load_checkpoint<float>(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].first == "layer.weight");
    CHECK(loaded[0].second.bit_equal(a));
    CHECK(loaded[1].second.bit_equal(b));

    Tensor<float> a2 = Tensor<float>::zeros({3, 4, 2, 2});
    Tensor<float> b2 = Tensor<float>::zeros({7});
    std::vector<nn::ParamRef<float>> params2{{"layer.weight", &a2}, {"layer.bias", &b2}};
    nn::apply_checkpoint(params2, loaded);
    CHECK(a2.bit_equal(a));
    CHECK(b2.bit_equal(b));
    std::filesystem::remove(path);
}

}  // TEST_SUITE
