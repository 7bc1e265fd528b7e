#pragma once

#include <string>
#include <vector>

#include "ct/models.hpp"

// The full gradient-check battery: every layer kind and every architecture,
// run at 64-bit on small random shapes. Shared by the gradcheck CLI
// subcommand and the acceptance suite.

namespace ct {

struct GradCheckEntry {
    std::string name;
    GradCheckReport report;
};

inline std::vector<GradCheckEntry> run_gradcheck_suite(double step = 1e-5) {
    std::vector<GradCheckEntry> out;
    Pcg32 rng(20250810);
    auto rnd = [&rng](Shape shape) {
        Vec<double> v(static_cast<std::size_t>(shape_size(shape)));
        for (auto& x : v) x = rng.normal();
        return Tensor<double>(std::move(shape), std::move(v));
    };
    auto sq_sum = [](Tape<double>* tp, const Tensor<double>& y) {
        return ops::sum_all(tp, ops::mul(tp, y, y));
    };

    // --- layers ---
    out.push_back({"conv2d", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            return sq_sum(tp, nn::conv2d(tp, xs[0], xs[1], xs[2], 1, 1, 1, 1));
        },
        {rnd({2, 2, 6, 5}), rnd({3, 2, 3, 3}), rnd({3})}, step)});

    out.push_back({"maxpool2d", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            return sq_sum(tp, nn::maxpool2d(tp, xs[0], 2, 2));
        },
        {rnd({2, 3, 6, 6})}, step)});

    out.push_back({"dense_gap", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::Dense<double> d{xs[1], xs[2]};
            return sq_sum(tp, nn::dense_forward(tp, d, nn::global_avg_pool(tp, xs[0])));
        },
        {rnd({2, 3, 4, 5}), rnd({3, 4}), rnd({4})}, step)});

    out.push_back({"fln", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::FLN<double> fln{xs[1], xs[2], 1e-5};
            return sq_sum(tp, nn::fln_forward(tp, fln, xs[0]));
        },
        {rnd({2, 2, 6, 4}), rnd({6}), rnd({6})}, step)});

    out.push_back({"fdy_conv", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::FDYConv<double> fdy;
            fdy.temperature = 31.0;
            nn::Conv2D<double> c0{xs[1], xs[2], 1, 1, 1, 1};
            nn::Conv2D<double> c1{xs[3], xs[4], 1, 1, 1, 1};
            fdy.basis = {c0, c1};
            fdy.attn_weight = xs[5];
            fdy.attn_bias = xs[6];
            return sq_sum(tp, nn::fdy_forward(tp, fdy, xs[0]));
        },
        {rnd({1, 2, 6, 4}), rnd({3, 2, 3, 3}), rnd({3}), rnd({3, 2, 3, 3}), rnd({3}),
         rnd({2, 2, 1, 1}), rnd({2})}, step)});

    out.push_back({"softmax_cross_entropy", grad_check_multi(
        [](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            return nn::softmax_cross_entropy(tp, xs[0], {2, 0, 4});
        },
        {rnd({3, 6})}, step)});

    out.push_back({"attention_mask", grad_check_multi(
        [&sq_sum](Tape<double>* tp, const std::vector<Tensor<double>>& xs) {
            nn::Conv2D<double> blk{xs[1], xs[2], 1, 1, 0, 0};
            return sq_sum(tp, models::attention_apply(tp, blk, xs[0]));
        },
        {rnd({2, 3, 4, 4}), rnd({3, 3, 1, 1}), rnd({3})}, step)});

    // --- full architectures (fln everywhere, fdy on the last two blocks) ---
    models::BackboneSpec bb;
    bb.in_channels = 1;
    bb.freq_bins = 12;
    bb.fdy_basis = 2;
    bb.fdy_temperature = 31.0;
    bb.blocks = {
        {3, 3, 1, true, false, false},
        {4, 3, 1, false, true, false},
    };
    std::vector<models::TaskSpec> tasks{{"main", 3, models::TaskRole::main},
                                        {"aux", 2, models::TaskRole::auxiliary}};
    for (auto kind : {models::ArchKind::stl, models::ArchKind::tcdcn, models::ArchKind::mtan,
                      models::ArchKind::cs, models::ArchKind::cc, models::ArchKind::nddr,
                      models::ArchKind::rndr}) {
        const auto use =
            kind == models::ArchKind::stl
                ? std::vector<models::TaskSpec>{{"main", 3, models::TaskRole::main}}
                : tasks;
        out.push_back({std::string("arch_") + models::to_string(kind),
                       models::grad_check_model(kind, bb, use, 77, 2, 6, step)});
    }
    return out;
}

}  // namespace ct
