#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ehrscale {

struct ScoredSample {
    std::string patient_id;
    double score = 0;  // estimated probability in [0,1]
    int label = 0;     // 0 or 1
    int censored = 0;  // rollouts hitting the generation cap
};

using ScoredCohort = std::vector<ScoredSample>;

double normal_cdf(double x);
double normal_quantile(double p);  // inverse of normal_cdf on (0,1)

// Mann-Whitney statistic: P(score1 > score0) + 0.5 * P(tie).
double empirical_auc(const ScoredCohort& cohort);

// Class-conditional Gaussians with unequal variances, fitted by sample
// moments on probit-transformed scores (clamped away from 0 and 1 since
// rollout scores are discrete k/n values).
struct BinormalRoc {
    double mu0 = 0, sigma0 = 1;  // negatives
    double mu1 = 0, sigma1 = 1;  // positives
    double auc = 0.5;            // Phi((mu1-mu0)/sqrt(s0^2+s1^2))

    // ROC point (fpr, tpr) at a probit threshold.
    std::pair<double, double> roc_point(double threshold) const;
};

BinormalRoc fit_binormal(const ScoredCohort& cohort, int n_rollouts = 20);

// Average precision with tied scores handled as one group.
double pr_auc(const ScoredCohort& cohort);

struct Interval {
    double lo = 0, hi = 0;
};

using MetricFn = std::function<double(const ScoredCohort&)>;

// Percentile bootstrap over patient-level resamples; single-class resamples
// are redrawn up to 10 times each. Deterministic per seed.
std::vector<double> bootstrap_samples(const ScoredCohort& cohort, const MetricFn& metric,
                                      int n_resamples, std::uint64_t seed);

Interval bootstrap_ci(const ScoredCohort& cohort, const MetricFn& metric, int n_resamples = 1000,
                      double level = 0.95, std::uint64_t seed = 0);

double bootstrap_stddev(const ScoredCohort& cohort, const MetricFn& metric, int n_resamples = 1000,
                        std::uint64_t seed = 0);

// OLS of a task metric on ln(validation loss), with Pearson correlation.
struct LossMetricRegression {
    double slope = 0;
    double intercept = 0;
    double pearson_r = 0;
};

LossMetricRegression loss_vs_metric_regression(
    const std::vector<std::pair<double, double>>& loss_metric_points);

}  // namespace ehrscale
