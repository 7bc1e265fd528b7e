#include <doctest.h>

#include <filesystem>
#include <vector>

#include "ct/models.hpp"
#include "ct/rng.hpp"

using ct::Shape;
using ct::Tape;
using ct::Tensor;
namespace ops = ct::ops;
namespace nn = ct::nn;
namespace models = ct::models;
using models::ArchKind;

namespace {

models::BackboneSpec small_backbone(int in_ch = 1, int freq = 8, bool fdy = false) {
    models::BackboneSpec s;
    s.in_channels = in_ch;
    s.freq_bins = freq;
    s.fdy_basis = 2;
    s.fdy_temperature = 4.0;
    s.blocks = {
        {3, 3, 1, true, false, false},
        {4, 3, 1, false, fdy, false},
    };
    return s;
}

std::vector<models::TaskSpec> two_tasks() {
    return {{"alpha", 3, models::TaskRole::main}, {"beta", 2, models::TaskRole::auxiliary}};
}

template <typename T>
Tensor<T> random_input(ct::Pcg32& rng, int batch, int ch, int freq, int frames) {
    ct::Vec<T> v(static_cast<std::size_t>(batch) * ch * freq * frames);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return Tensor<T>(Shape{batch, ch, freq, frames}, std::move(v));
}

template <typename T>
bool params_bit_equal(models::MultiTaskModel<T>& a, models::MultiTaskModel<T>& b) {
    auto ra = a.param_refs(), rb = b.param_refs();
    if (ra.size() != rb.size()) return false;
    for (std::size_t i = 0; i < ra.size(); ++i)
        if (ra[i].name != rb[i].name || !ra[i].value->bit_equal(*rb[i].value)) return false;
    return true;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("build_model is deterministic and validates configuration") {
    auto bb = small_backbone();
    auto tasks = two_tasks();
    auto m1 = models::build_model<float>(ArchKind::rndr, bb, tasks, 5);
    auto m2 = models::build_model<float>(ArchKind::rndr, bb, tasks, 5);
    CHECK(params_bit_equal(m1, m2));
    auto m3 = models::build_model<float>(ArchKind::rndr, bb, tasks, 6);
    CHECK_FALSE(params_bit_equal(m1, m3));

    CHECK_THROWS_AS(models::build_model<float>(ArchKind::stl, bb, tasks, 0), ct::ConfigError);
    auto with_site = bb;
    with_site.blocks[1].ctl_site = true;
    CHECK_THROWS_AS(models::build_model<float>(ArchKind::tcdcn, with_site, tasks, 0),
                    ct::ConfigError);
    auto bad_fdy = bb;
    bad_fdy.blocks.push_back({4, 3, 1, false, false, false});
    bad_fdy.blocks[0].fdy = true;  // not one of the last two
    CHECK_THROWS_AS(models::build_model<float>(ArchKind::stl, bad_fdy,
                                               {{"a", 2, models::TaskRole::main}}, 0),
                    ct::ConfigError);
    CHECK_THROWS_AS(models::build_model<float>(ArchKind::tcdcn, bb,
                                               {{"a", 1, models::TaskRole::main}}, 0),
                    ct::ConfigError);
}

TEST_CASE("parameter counts: residual adds nothing, ctls add overhead") {
    auto bb = small_backbone();
    auto tasks = two_tasks();
    auto nddr = models::build_model<float>(ArchKind::nddr, bb, tasks, 1);
    auto rndr = models::build_model<float>(ArchKind::rndr, bb, tasks, 1);
    CHECK(nddr.parameter_count() == rndr.parameter_count());

    std::int64_t stl_total = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        models::BuildOptions opt;
        opt.stream_seed_override = {models::stream_seed(1, static_cast<int>(i))};
        models::TaskSpec solo = tasks[i];
        solo.role = models::TaskRole::main;
        auto stl = models::build_model<float>(ArchKind::stl, bb, {solo}, 1, opt);
        stl_total += stl.parameter_count();
    }
    for (ArchKind k : {ArchKind::cs, ArchKind::cc, ArchKind::nddr, ArchKind::rndr}) {
        auto m = models::build_model<float>(k, bb, tasks, 1);
        CHECK(m.parameter_count() > stl_total);
    }
}

TEST_CASE("ctl_apply identities") {
    ct::Pcg32 rng(3);
    const int N = 2, C = 3;
    std::vector<Tensor<float>> feats;
    for (int i = 0; i < N; ++i) {
        // relu-style non-negative features, as seen at real ctl sites
        auto t = random_input<float>(rng, 2, C, 4, 3);
        feats.push_back(ops::relu<float>(nullptr, t));
    }

    models::CrossTalkLayer<float> cs;
    cs.kind = ArchKind::cs;
    cs.ntasks = N;
    cs.channels = C;
    cs.cs_alpha = Tensor<float>({2, 2}, {1, 0, 0, 1});
    auto out = models::ctl_apply<float>(nullptr, cs, feats);
    CHECK(out[0].bit_equal(feats[0]));
    CHECK(out[1].bit_equal(feats[1]));

    cs.cs_alpha = Tensor<float>({2, 2}, {0, 1, 1, 0});
    auto swapped = models::ctl_apply<float>(nullptr, cs, feats);
    CHECK(swapped[0].bit_equal(feats[1]));
    CHECK(swapped[1].bit_equal(feats[0]));

    models::CrossTalkLayer<float> cc;
    cc.kind = ArchKind::cc;
    cc.ntasks = N;
    cc.channels = C;
    for (int i = 0; i < N * N; ++i) {
        nn::Conv2D<float> conv;
        conv.weight = Tensor<float>::zeros({C, C, 1, 1});
        conv.bias = Tensor<float>::zeros({C});
        cc.cc.push_back(conv);
    }
    auto cc_out = models::ctl_apply<float>(nullptr, cc, feats);
    CHECK(cc_out[0].bit_equal(feats[0]));
    CHECK(cc_out[1].bit_equal(feats[1]));

    models::CrossTalkLayer<float> rndr;
    rndr.kind = ArchKind::rndr;
    rndr.ntasks = N;
    rndr.channels = C;
    for (int i = 0; i < N; ++i) {
        nn::Conv2D<float> conv;
        conv.weight = Tensor<float>::zeros({C, N * C, 1, 1});
        conv.bias = Tensor<float>::zeros({C});
        rndr.reduce.push_back(conv);
    }
    auto rndr_out = models::ctl_apply<float>(nullptr, rndr, feats);
    CHECK(rndr_out[0].bit_equal(feats[0]));
    CHECK(rndr_out[1].bit_equal(feats[1]));

    // nddr with hard selector weights (own channels 1, others 0)
    models::CrossTalkLayer<float> nddr = rndr;
    nddr.kind = ArchKind::nddr;
    for (int i = 0; i < N; ++i) {
        ct::Vec<float> w(static_cast<std::size_t>(C) * N * C, 0.f);
        for (int o = 0; o < C; ++o) w[static_cast<std::size_t>(o) * (N * C) + i * C + o] = 1.f;
        nddr.reduce[static_cast<std::size_t>(i)].weight = Tensor<float>({C, N * C, 1, 1}, std::move(w));
    }
    auto nddr_out = models::ctl_apply<float>(nullptr, nddr, feats);
    CHECK(nddr_out[0].bit_equal(feats[0]));
    CHECK(nddr_out[1].bit_equal(feats[1]));

    // shape mismatch across streams
    auto bad = feats;
    bad[1] = random_input<float>(rng, 2, C, 5, 3);
    CHECK_THROWS_AS(models::ctl_apply<float>(nullptr, rndr, bad), ct::ShapeError);
}

TEST_CASE("cc hand-evaluated exchange") {
    // single-element streams: x1 = 2, x2 = 3, conv weight 0.5
    std::vector<Tensor<double>> feats{Tensor<double>({1, 1, 1, 1}, {2.0}),
                                      Tensor<double>({1, 1, 1, 1}, {3.0})};
    models::CrossTalkLayer<double> cc;
    cc.kind = ArchKind::cc;
    cc.ntasks = 2;
    cc.channels = 1;
    for (int i = 0; i < 4; ++i) {
        nn::Conv2D<double> conv;
        conv.weight = Tensor<double>({1, 1, 1, 1}, {0.5});
        conv.bias = Tensor<double>::zeros({1});
        cc.cc.push_back(conv);
    }
    auto out = models::ctl_apply<double>(nullptr, cc, feats);
    CHECK(out[0].item() == doctest::Approx(2.0 + 0.5 * 3.0));
    CHECK(out[1].item() == doctest::Approx(3.0 + 0.5 * 2.0));
}

TEST_CASE("mtan attention mask") {
    ct::Pcg32 rng(7);
    auto shared = random_input<double>(rng, 2, 3, 4, 5);

    nn::Conv2D<double> zero_block;
    zero_block.weight = Tensor<double>::zeros({3, 3, 1, 1});
    zero_block.bias = Tensor<double>::zeros({3});
    auto out = models::attention_apply<double>(nullptr, zero_block, shared);
    for (std::int64_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(0.5 * shared.data()[i]));

    nn::Conv2D<double> rnd_block;
    rnd_block.weight = random_input<double>(rng, 3, 3, 1, 1);
    rnd_block.bias = Tensor<double>({3}, {0.1, -0.2, 0.3});
    auto mask = ops::sigmoid<double>(nullptr,
                                     nn::conv2d_forward<double>(nullptr, rnd_block, shared));
    for (std::int64_t i = 0; i < mask.size(); ++i) {
        CHECK(mask.data()[i] > 0.0);
        CHECK(mask.data()[i] < 1.0);
    }

    auto report = ct::grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::Conv2D<double> blk;
            blk.weight = xs[1];
            blk.bias = xs[2];
            auto y = models::attention_apply(tp, blk, xs[0]);
            return ops::sum_all(tp, ops::mul(tp, y, y));
        },
        {shared, rnd_block.weight, rnd_block.bias}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("rndr at init equals decoupled stl forwards exactly") {
    auto bb = small_backbone(1, 8, true);  // fdy on the last block
    auto tasks = two_tasks();
    const std::uint64_t seed = 11;
    auto rndr = models::build_model<float>(ArchKind::rndr, bb, tasks, seed);

    ct::Pcg32 rng(13);
    auto x = random_input<float>(rng, 2, 1, 8, 6);
    auto joint = rndr.forward(nullptr, x);
    REQUIRE(joint.size() == tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t)
        CHECK(joint[t].shape() == Shape{2, tasks[t].num_classes});

    for (std::size_t i = 0; i < tasks.size(); ++i) {
        models::BuildOptions opt;
        opt.stream_seed_override = {models::stream_seed(seed, static_cast<int>(i))};
        models::TaskSpec solo_task = tasks[i];
        solo_task.role = models::TaskRole::main;  // an stl instance evaluates its one task
        auto stl = models::build_model<float>(ArchKind::stl, bb, {solo_task}, seed, opt);
        auto solo = stl.forward(nullptr, x);
        CHECK(joint[i].bit_equal(solo[0]));
    }
}

TEST_CASE("forward shape contract and channel mismatch") {
    auto bb = small_backbone(2, 8);
    auto tasks = two_tasks();
    for (ArchKind k : {ArchKind::tcdcn, ArchKind::mtan, ArchKind::cs, ArchKind::cc, ArchKind::nddr,
                       ArchKind::rndr}) {
        auto m = models::build_model<float>(k, bb, tasks, 3);
        ct::Pcg32 rng(17);
        auto x = random_input<float>(rng, 2, 2, 8, 6);
        auto logits = m.forward(nullptr, x);
        REQUIRE(logits.size() == 2);
        CHECK(logits[0].shape() == Shape{2, 3});
        CHECK(logits[1].shape() == Shape{2, 2});
        auto bad = random_input<float>(rng, 2, 1, 8, 6);
        CHECK_THROWS_AS(m.forward(nullptr, bad), ct::ShapeError);
    }
}

TEST_CASE("no cross-sample mixing: batch of 2 equals two batches of 1") {
    auto bb = small_backbone(1, 8, true);
    auto tasks = two_tasks();
    for (ArchKind k : {ArchKind::mtan, ArchKind::rndr}) {
        auto m = models::build_model<float>(k, bb, tasks, 19);
        ct::Pcg32 rng(23);
        auto x = random_input<float>(rng, 2, 1, 8, 6);
        auto both = m.forward(nullptr, x);
        auto x0 = ops::slice<float>(nullptr, x, 0, 0, 1);
        auto x1 = ops::slice<float>(nullptr, x, 0, 1, 1);
        auto r0 = m.forward(nullptr, x0);
        auto r1 = m.forward(nullptr, x1);
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            for (int c = 0; c < tasks[t].num_classes; ++c) {
                CHECK(both[t].at({0, c}) == doctest::Approx(r0[t].at({0, c})).epsilon(1e-6));
                CHECK(both[t].at({1, c}) == doctest::Approx(r1[t].at({0, c})).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("task permutation symmetry of the ctl variants") {
    auto bb = small_backbone();
    auto tasks = two_tasks();
    ct::Pcg32 rng(29);
    auto x = random_input<double>(rng, 1, 1, 8, 5);

    for (ArchKind k : {ArchKind::cs, ArchKind::cc, ArchKind::nddr, ArchKind::rndr}) {
        auto m = models::build_model<double>(k, bb, tasks, 31);
        // give every ctl non-trivial parameters so the symmetry is not vacuous
        for (auto& ctl : m.ctls) {
            if (k == ArchKind::cs) {
                ctl.cs_alpha = Tensor<double>({2, 2}, {0.9, 0.3, -0.2, 1.1});
            } else if (k == ArchKind::cc) {
                for (auto& conv : ctl.cc) conv.weight = random_input<double>(rng, ctl.channels, ctl.channels, 1, 1);
            } else {
                for (auto& conv : ctl.reduce)
                    conv.weight = random_input<double>(rng, ctl.channels, 2 * ctl.channels, 1, 1);
            }
        }
        auto base = m.forward(nullptr, x);

        // swap the two tasks together with all per-task parameters
        auto p = m;
        std::swap(p.streams[0], p.streams[1]);
        std::swap(p.heads[0], p.heads[1]);
        std::swap(p.tasks[0], p.tasks[1]);
        for (auto& ctl : p.ctls) {
            const int N = ctl.ntasks, C = ctl.channels;
            if (k == ArchKind::cs) {
                auto& a = ctl.cs_alpha;
                ctl.cs_alpha = Tensor<double>({2, 2}, {a.at({1, 1}), a.at({1, 0}), a.at({0, 1}),
                                                       a.at({0, 0})});
            } else if (k == ArchKind::cc) {
                auto cc = ctl.cc;
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < N; ++j)
                        ctl.cc[static_cast<std::size_t>(i * N + j)] =
                            cc[static_cast<std::size_t>((1 - i) * N + (1 - j))];
            } else {
                std::swap(ctl.reduce[0], ctl.reduce[1]);
                for (auto& conv : ctl.reduce) {
                    // permute the concatenated input channel blocks
                    auto w = conv.weight.values();
                    ct::Vec<double> perm(w.size());
                    for (int o = 0; o < C; ++o)
                        for (int j = 0; j < N; ++j)
                            for (int c = 0; c < C; ++c)
                                perm[static_cast<std::size_t>(o) * N * C + j * C + c] =
                                    w[static_cast<std::size_t>(o) * N * C + (1 - j) * C + c];
                    conv.weight = Tensor<double>({C, N * C, 1, 1}, std::move(perm));
                }
            }
        }
        auto permuted = p.forward(nullptr, x);
        for (std::size_t t = 0; t < 2; ++t)
            for (int c = 0; c < base[t].dim(1); ++c)
                CHECK(permuted[1 - t].at({0, c}) ==
                      doctest::Approx(base[t].at({0, c})).epsilon(1e-9));
    }
}

TEST_CASE("full-architecture gradient checks (spot)") {
    auto bb = small_backbone(1, 8, true);
    auto tasks = two_tasks();
    for (ArchKind k : {ArchKind::mtan, ArchKind::rndr}) {
        auto report = models::grad_check_model(k, bb, tasks, 41, 1, 5);
        INFO(models::to_string(k), " worst: ", report.worst_location);
        CHECK(report.max_rel_err < 1e-5);
    }
}

TEST_CASE("descriptor round-trips") {
    auto bb = small_backbone(2, 16, true);
    bb.blocks[1].ctl_site = true;
    models::ModelDescriptor d{ArchKind::rndr, bb, two_tasks()};
    auto path = std::filesystem::temp_directory_path() / "ct_desc_test.txt";
    models::save_descriptor(path, d);
    auto loaded = models::load_descriptor(path);
    CHECK(loaded.kind == ArchKind::rndr);
    CHECK(loaded.backbone.in_channels == 2);
    CHECK(loaded.backbone.freq_bins == 16);
    CHECK(loaded.backbone.blocks.size() == 2);
    CHECK(loaded.backbone.blocks[1].fdy);
    CHECK(loaded.backbone.blocks[1].ctl_site);
    CHECK(loaded.tasks.size() == 2);
    CHECK(loaded.tasks[0].name == "alpha");
    CHECK(loaded.tasks[0].num_classes == 3);
    CHECK(loaded.tasks[1].role == models::TaskRole::auxiliary);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
