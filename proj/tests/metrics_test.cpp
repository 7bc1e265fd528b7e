#include <doctest.h>

#include <cmath>
#include <map>

#include "ct/metrics.hpp"
#include "ct/rng.hpp"

namespace metrics = ct::metrics;

namespace {

// From-definition oracle on raw pairs, independent of ConfusionMatrix.
double macro_f1_oracle(int k, const std::vector<int>& truth, const std::vector<int>& pred) {
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
        std::int64_t tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] == c) {
                ++support;
                if (pred[i] == c) ++tp;
                else ++fn;
            } else if (pred[i] == c) {
                ++fp;
            }
        }
        if (support == 0) continue;
        ++present;
        const double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
        const double r = double(tp) / double(tp + fn);
        sum += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return sum / present;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("macro f1 basics") {
    // perfect diagonal
    metrics::ConfusionMatrix diag(3);
    diag.add(0, 0, 5);
    diag.add(1, 1, 2);
    diag.add(2, 2, 9);
    CHECK(metrics::macro_f1(diag) == 1.0);

    // the 2-class hand case: TP_A=1, FN_A=1, FP_A=1, TN_A=1
    metrics::ConfusionMatrix two(2);
    two.add(0, 0, 1);
    two.add(0, 1, 1);
    two.add(1, 0, 1);
    two.add(1, 1, 1);
    CHECK(metrics::macro_f1(two) == doctest::Approx(0.5).epsilon(1e-15));

    // zero-support class is excluded; present-but-never-predicted scores 0
    metrics::ConfusionMatrix z(3);
    z.add(0, 0, 4);
    z.add(1, 0, 3);  // class 1 never predicted, class 2 absent
    const double f1a = 2.0 * (4.0 / 7.0) * 1.0 / (4.0 / 7.0 + 1.0);
    CHECK(metrics::macro_f1(z) == doctest::Approx((f1a + 0.0) / 2.0).epsilon(1e-12));

    metrics::ConfusionMatrix empty(4);
    CHECK_THROWS_AS(metrics::macro_f1(empty), ct::EmptyError);
    CHECK_THROWS_AS(two.add(2, 0), ct::LabelError);
}

TEST_CASE("macro f1 matches the from-definition oracle on 10^4 random cases") {
    ct::Pcg32 rng(123);
    for (int trial = 0; trial < 10000; ++trial) {
        const int k = 2 + static_cast<int>(rng.next_below(8));
        const int n = 1 + static_cast<int>(rng.next_below(60));
        std::vector<int> truth(static_cast<std::size_t>(n)), pred(truth.size());
        for (auto& t : truth) t = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(k)));
        for (auto& p : pred) p = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(k)));
        const double got = metrics::macro_f1(metrics::ConfusionMatrix::from_pairs(k, truth, pred));
        const double want = macro_f1_oracle(k, truth, pred);
        CHECK(std::fabs(got - want) <= 1e-12);
    }
}

TEST_CASE("macro f1 is invariant under joint class permutation") {
    ct::Pcg32 rng(5);
    const int k = 5, n = 64;
    std::vector<int> truth(n), pred(n), perm{3, 0, 4, 1, 2};
    for (auto& t : truth) t = static_cast<int>(rng.next_below(k));
    for (auto& p : pred) p = static_cast<int>(rng.next_below(k));
    std::vector<int> ptruth, ppred;
    for (int i = 0; i < n; ++i) {
        ptruth.push_back(perm[static_cast<std::size_t>(truth[static_cast<std::size_t>(i)])]);
        ppred.push_back(perm[static_cast<std::size_t>(pred[static_cast<std::size_t>(i)])]);
    }
    CHECK(metrics::macro_f1(metrics::ConfusionMatrix::from_pairs(k, truth, pred)) ==
          doctest::Approx(metrics::macro_f1(metrics::ConfusionMatrix::from_pairs(k, ptruth, ppred)))
              .epsilon(1e-15));
}

TEST_CASE("imbalance ratio") {
    CHECK(metrics::imbalance_ratio({25, 25, 25}) == 1.0);
    CHECK(metrics::imbalance_ratio({1557, 400, 100}) == doctest::Approx(15.57).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::imbalance_ratio({4, 0, 2}), ct::DomainError);
    CHECK_THROWS_AS(metrics::imbalance_ratio({}), ct::EmptyError);
    // scale invariance
    CHECK(metrics::imbalance_ratio({30, 10, 20}) == metrics::imbalance_ratio({300, 100, 200}));
}

TEST_CASE("compound aggregation is the stated mixed radix and a bijection") {
    CHECK(metrics::aggregate_compound(0, 0, 0, 0) == 0);
    CHECK(metrics::aggregate_compound(1, 1, 2, 2) == 35);
    CHECK(metrics::aggregate_compound(1, 0, 1, 0) == 21);
    CHECK_THROWS_AS(metrics::aggregate_compound(2, 0, 0, 0), ct::LabelError);
    CHECK_THROWS_AS(metrics::aggregate_compound(0, 0, 3, 0), ct::LabelError);

    std::vector<bool> seen(36, false);
    for (int irf = 0; irf < 2; ++irf)
        for (int orf = 0; orf < 2; ++orf)
            for (int mis = 0; mis < 3; ++mis)
                for (int unb = 0; unb < 3; ++unb) {
                    const int idx = metrics::aggregate_compound(irf, orf, mis, unb);
                    CHECK(!seen[static_cast<std::size_t>(idx)]);
                    seen[static_cast<std::size_t>(idx)] = true;
                    const auto back = metrics::decompose_compound(idx);
                    CHECK(back[0] == irf);
                    CHECK(back[1] == orf);
                    CHECK(back[2] == mis);
                    CHECK(back[3] == unb);
                }
    for (bool b : seen) CHECK(b);
}

TEST_CASE("rank table") {
    auto r = metrics::rank_table({{"A", 0.9}, {"B", 0.8}});
    CHECK(r[0].name == "A");
    CHECK(r[0].rank == 1);
    CHECK(r[1].name == "B");
    CHECK(r[1].rank == 2);

    // dense tie rule
    auto t = metrics::rank_table({{"A", 0.9}, {"B", 0.9}, {"C", 0.8}});
    CHECK(t[0].rank == 1);
    CHECK(t[1].rank == 1);
    CHECK(t[2].rank == 2);

    // permutation of the input leaves ranks unchanged
    auto t2 = metrics::rank_table({{"C", 0.8}, {"B", 0.9}, {"A", 0.9}});
    std::map<std::string, int> ranks1, ranks2;
    for (const auto& e : t) ranks1[e.name] = e.rank;
    for (const auto& e : t2) ranks2[e.name] = e.rank;
    CHECK(ranks1 == ranks2);

    CHECK_THROWS_AS(metrics::rank_table({{"A", 0.5}}), ct::ConfigError);
    CHECK_THROWS_AS(metrics::rank_table({{"A", 0.5}, {"B", std::nan("")}}), ct::DomainError);
}

TEST_CASE("run report aggregates seed means and ranks") {
    metrics::RunReport rep;
    rep.headline_task = "compound";
    rep.add("rndr", 0, "compound", 0.8);
    rep.add("rndr", 1, "compound", 0.9);
    rep.add("stl", 0, "compound", 0.7);
    rep.add("stl", 1, "compound", 0.6);
    CHECK(rep.mean_for("rndr", "compound") == doctest::Approx(0.85));
    CHECK(rep.mean_for("stl", "compound") == doctest::Approx(0.65));
    auto ranks = rep.ranks();
    CHECK(ranks[0].name == "rndr");
    CHECK(ranks[0].rank == 1);
    CHECK(ranks[1].name == "stl");
    CHECK(ranks[1].rank == 2);
}

}  // TEST_SUITE
