#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ehrscale/metrics.hpp"
#include "ehrscale/rng.hpp"

using namespace ehrscale;

namespace {

ScoredCohort cohort_from(const std::vector<std::pair<double, int>>& pairs) {
    ScoredCohort c;
    int i = 0;
    for (const auto& [score, label] : pairs) c.push_back({"P" + std::to_string(i++), score, label, 0});
    return c;
}

// Exhaustive pair-enumeration oracle for the Mann-Whitney statistic.
double auc_brute_force(const ScoredCohort& cohort) {
    double wins = 0, pairs = 0;
    for (const auto& pos : cohort) {
        if (!pos.label) continue;
        for (const auto& neg : cohort) {
            if (neg.label) continue;
            pairs += 1;
            if (pos.score > neg.score) wins += 1;
            else if (pos.score == neg.score) wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST_CASE("empirical auc trivial cases") {
    CHECK(empirical_auc(cohort_from({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}})) == doctest::Approx(1.0));
    CHECK(empirical_auc(cohort_from({{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}})) == doctest::Approx(0.5));
    // brute force over all 4 pairs
    const auto cohort = cohort_from({{0.9, 1}, {0.4, 1}, {0.5, 0}, {0.1, 0}});
    CHECK(empirical_auc(cohort) == doctest::Approx(0.75));
    CHECK(auc_brute_force(cohort) == doctest::Approx(0.75));
    CHECK_THROWS_AS(empirical_auc(cohort_from({{0.5, 1}})), std::invalid_argument);
}

TEST_CASE("empirical auc equals exhaustive enumeration on every small cohort") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(7));  // up to 8 samples
        ScoredCohort cohort;
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            const int label = rng.bernoulli(0.5) ? 1 : 0;
            // discrete scores force plenty of ties
            const double score = static_cast<double>(rng.uniform_int(5)) / 4.0;
            cohort.push_back({"P" + std::to_string(i), score, label, 0});
            (label ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        CHECK(empirical_auc(cohort) == doctest::Approx(auc_brute_force(cohort)).epsilon(1e-12));
    }
}

TEST_CASE("empirical auc is invariant under strictly increasing transforms") {
    Rng rng(43);
    ScoredCohort cohort;
    for (int i = 0; i < 40; ++i)
        cohort.push_back({"P" + std::to_string(i), rng.uniform(), rng.bernoulli(0.4) ? 1 : 0, 0});
    const double base = empirical_auc(cohort);
    ScoredCohort transformed = cohort;
    for (auto& s : transformed) s.score = std::exp(3.0 * s.score) + 7.0;
    CHECK(empirical_auc(transformed) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("normal cdf and quantile invert each other") {
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-9));
    for (double p : {0.01, 0.1, 0.25, 0.5, 0.77, 0.95, 0.999})
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
    CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
}

TEST_CASE("binormal closed forms") {
    // symmetric case: equal transformed means gives auc 0.5
    BinormalRoc roc;
    roc.mu0 = roc.mu1 = 0.3;
    roc.sigma0 = 0.7;
    roc.sigma1 = 1.3;
    roc.auc = normal_cdf((roc.mu1 - roc.mu0) / std::sqrt(roc.sigma0 * roc.sigma0 + roc.sigma1 * roc.sigma1));
    CHECK(roc.auc == doctest::Approx(0.5).epsilon(1e-9));

    // mu1 - mu0 = sqrt(2) sigma with equal sigmas gives Phi(1)
    const double sigma = 0.42;
    const double auc = normal_cdf(std::sqrt(2.0) * sigma / std::sqrt(2.0 * sigma * sigma));
    CHECK(auc == doctest::Approx(0.8413447460685429).epsilon(1e-6));
}

TEST_CASE("binormal fit approaches the empirical auc on well-separated gaussians") {
    Rng rng(44);
    ScoredCohort cohort;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const bool pos = rng.bernoulli(0.5);
        // scores on (0,1): logistic squash of gaussian class scores
        const double z = pos ? 1.2 + 0.9 * rng.normal() : -0.3 + 1.1 * rng.normal();
        cohort.push_back({"P" + std::to_string(i), 1.0 / (1.0 + std::exp(-z)), pos ? 1 : 0, 0});
    }
    const auto roc = fit_binormal(cohort, 20);
    const double emp = empirical_auc(cohort);
    CHECK(std::abs(roc.auc - emp) < 0.01);
    CHECK(roc.sigma0 > 0);
    CHECK(roc.sigma1 > 0);

    ScoredCohort degenerate = cohort_from({{0.2, 0}, {0.2, 0}, {0.8, 1}});
    CHECK_THROWS_AS(fit_binormal(degenerate, 20), std::invalid_argument);
}

TEST_CASE("binormal auc flips under label swap") {
    Rng rng(45);
    ScoredCohort cohort;
    for (int i = 0; i < 200; ++i) {
        const bool pos = rng.bernoulli(0.4);
        const double z = (pos ? 0.8 : -0.2) + rng.normal();
        cohort.push_back({"P" + std::to_string(i), 1.0 / (1.0 + std::exp(-z)), pos ? 1 : 0, 0});
    }
    const auto roc = fit_binormal(cohort, 20);
    ScoredCohort swapped = cohort;
    for (auto& s : swapped) s.label = 1 - s.label;
    const auto roc2 = fit_binormal(swapped, 20);
    CHECK(roc2.auc == doctest::Approx(1.0 - roc.auc).epsilon(1e-9));
}

TEST_CASE("pr auc hand cases with tie grouping") {
    CHECK(pr_auc(cohort_from({{0.9, 1}, {0.3, 1}, {0.5, 1}})) == doctest::Approx(1.0));
    CHECK(pr_auc(cohort_from({{0.9, 1}, {0.7, 1}, {0.5, 0}, {0.3, 0}})) == doctest::Approx(1.0));
    // positives 0.9 and 0.3, negative 0.5: precision 1 at rank 1, 2/3 at rank 3
    CHECK(pr_auc(cohort_from({{0.9, 1}, {0.3, 1}, {0.5, 0}})) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    // tied group: both positives and the negative share a score
    const auto tied = pr_auc(cohort_from({{0.5, 1}, {0.5, 1}, {0.5, 0}}));
    CHECK(tied == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(pr_auc(cohort_from({{0.5, 0}})), std::invalid_argument);
}

TEST_CASE("bootstrap determinism, zero-variance interval, and shrinking width") {
    const auto flat = cohort_from({{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}});
    const auto ci = bootstrap_ci(flat, empirical_auc, 200, 0.95, 3);
    CHECK(ci.lo == doctest::Approx(0.5));
    CHECK(ci.hi == doctest::Approx(0.5));

    Rng rng(46);
    ScoredCohort small, large;
    for (int i = 0; i < 2000; ++i) {
        const bool pos = rng.bernoulli(0.5);
        const double score = std::clamp(0.5 + (pos ? 0.15 : -0.15) + 0.2 * rng.normal(), 0.0, 1.0);
        ScoredSample s{"P" + std::to_string(i), score, pos ? 1 : 0, 0};
        if (i < 100) small.push_back(s);
        large.push_back(s);
    }
    const auto ci_small = bootstrap_ci(small, empirical_auc, 400, 0.95, 5);
    const auto ci_large = bootstrap_ci(large, empirical_auc, 400, 0.95, 5);
    CHECK(ci_large.hi - ci_large.lo < ci_small.hi - ci_small.lo);

    const auto a = bootstrap_ci(small, empirical_auc, 300, 0.95, 11);
    const auto b = bootstrap_ci(small, empirical_auc, 300, 0.95, 11);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    const auto c = bootstrap_ci(small, empirical_auc, 300, 0.95, 12);
    CHECK((a.lo != c.lo || a.hi != c.hi));

    const auto single_class = cohort_from({{0.2, 1}, {0.4, 1}, {0.9, 1}});
    CHECK_THROWS_AS(bootstrap_ci(single_class, empirical_auc, 100, 0.95, 1), std::runtime_error);
}

TEST_CASE("bootstrap interval covers a known auc most of the time") {
    // planted auc ~0.80 via binormal construction; check coverage across
    // replications
    int covered = 0;
    const int reps = 60;
    for (int rep = 0; rep < reps; ++rep) {
        Rng rng(100 + rep);
        ScoredCohort cohort;
        for (int i = 0; i < 500; ++i) {
            const bool pos = rng.bernoulli(0.4);
            const double z = pos ? 1.19024 + rng.normal() : rng.normal();  // auc = Phi(1.19/sqrt2) ~ 0.80
            cohort.push_back({"P" + std::to_string(i), 1.0 / (1.0 + std::exp(-z)), pos ? 1 : 0, 0});
        }
        const auto ci = bootstrap_ci(cohort, empirical_auc, 300, 0.95, 7 + rep);
        if (ci.lo <= 0.80 && 0.80 <= ci.hi) ++covered;
    }
    CHECK(covered >= reps * 9 / 10 - 3);  // ~90% coverage with slack
}

TEST_CASE("loss-metric regression matches the generating line") {
    const auto exact = loss_vs_metric_regression({{1.0, 1.0}, {std::exp(1.0), 3.0}});
    CHECK(std::abs(exact.pearson_r) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(exact.slope == doctest::Approx(2.0).epsilon(1e-12));

    Rng rng(47);
    std::vector<std::pair<double, double>> pts;
    for (double loss : {0.8, 0.9, 1.0, 1.1, 1.3, 1.6}) {
        const double metric = -2.0 * std::log(loss) + 1.0 + 1e-4 * rng.normal();
        pts.emplace_back(loss, metric);
    }
    const auto reg = loss_vs_metric_regression(pts);
    CHECK(reg.slope == doctest::Approx(-2.0).epsilon(0.01));
    CHECK(reg.intercept == doctest::Approx(1.0).epsilon(0.01));
    CHECK(reg.pearson_r < -0.999);

    CHECK_THROWS_AS(loss_vs_metric_regression({{1.0, 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(loss_vs_metric_regression({{-1.0, 1.0}, {1.0, 2.0}}), std::invalid_argument);
}
