#include "ehrscale/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ehrscale/rng.hpp"

namespace ehrscale {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    // Acklam's rational approximation refined by one Halley step.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= phigh) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    // Halley refinement against the exact CDF
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2 * 3.14159265358979323846) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

double empirical_auc(const ScoredCohort& cohort) {
    std::size_t n0 = 0, n1 = 0;
    for (const auto& s : cohort) (s.label ? n1 : n0) += 1;
    if (n0 == 0 || n1 == 0) throw std::invalid_argument("empirical_auc: need both classes");
    // midrank formulation
    std::vector<const ScoredSample*> sorted;
    sorted.reserve(cohort.size());
    for (const auto& s : cohort) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredSample* a, const ScoredSample* b) { return a->score < b->score; });
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j]->score == sorted[i]->score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average rank
        for (std::size_t t = i; t < j; ++t) {
            if (sorted[t]->label) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double u1 = rank_sum_pos - static_cast<double>(n1) * (static_cast<double>(n1) + 1) / 2.0;
    return u1 / (static_cast<double>(n0) * static_cast<double>(n1));
}

std::pair<double, double> BinormalRoc::roc_point(double threshold) const {
    const double fpr = 1.0 - normal_cdf((threshold - mu0) / sigma0);
    const double tpr = 1.0 - normal_cdf((threshold - mu1) / sigma1);
    return {fpr, tpr};
}

BinormalRoc fit_binormal(const ScoredCohort& cohort, int n_rollouts) {
    if (n_rollouts < 1) throw std::invalid_argument("fit_binormal: n_rollouts must be positive");
    const double eps = 1.0 / (2.0 * n_rollouts + 2.0);
    std::vector<double> t0, t1;
    for (const auto& s : cohort) {
        const double clamped = std::clamp(s.score, eps, 1.0 - eps);
        (s.label ? t1 : t0).push_back(normal_quantile(clamped));
    }
    if (t0.size() < 2 || t1.size() < 2)
        throw std::invalid_argument("fit_binormal: need at least 2 samples per class");
    auto moments = [](const std::vector<double>& v) {
        double mean = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::pair<double, double>(mean, std::sqrt(ss / static_cast<double>(v.size() - 1)));
    };
    BinormalRoc roc;
    std::tie(roc.mu0, roc.sigma0) = moments(t0);
    std::tie(roc.mu1, roc.sigma1) = moments(t1);
    if (roc.sigma0 <= 0 || roc.sigma1 <= 0)
        throw std::invalid_argument("fit_binormal: degenerate class (zero variance)");
    roc.auc = normal_cdf((roc.mu1 - roc.mu0) / std::sqrt(roc.sigma0 * roc.sigma0 + roc.sigma1 * roc.sigma1));
    return roc;
}

double pr_auc(const ScoredCohort& cohort) {
    std::size_t n_pos = 0;
    for (const auto& s : cohort) n_pos += s.label ? 1 : 0;
    if (n_pos == 0) throw std::invalid_argument("pr_auc: no positives");
    std::vector<const ScoredSample*> sorted;
    sorted.reserve(cohort.size());
    for (const auto& s : cohort) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredSample* a, const ScoredSample* b) { return a->score > b->score; });
    // average precision; each tied-score group contributes its positives at
    // the group-level precision
    double ap = 0;
    std::size_t seen = 0, tp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        std::size_t group_pos = 0;
        while (j < sorted.size() && sorted[j]->score == sorted[i]->score) {
            group_pos += sorted[j]->label ? 1 : 0;
            ++j;
        }
        seen += j - i;
        tp += group_pos;
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += precision * static_cast<double>(group_pos);
        i = j;
    }
    return ap / static_cast<double>(n_pos);
}

std::vector<double> bootstrap_samples(const ScoredCohort& cohort, const MetricFn& metric,
                                      int n_resamples, std::uint64_t seed) {
    if (cohort.empty()) throw std::invalid_argument("bootstrap: empty cohort");
    std::vector<double> samples(static_cast<std::size_t>(n_resamples));
    std::vector<char> ok(static_cast<std::size_t>(n_resamples), 0);
#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < n_resamples; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r), 0xB007));
        ScoredCohort resample(cohort.size());
        for (int attempt = 0; attempt < 10 && !ok[r]; ++attempt) {
            bool has0 = false, has1 = false;
            for (auto& slot : resample) {
                slot = cohort[rng.uniform_int(cohort.size())];
                (slot.label ? has1 : has0) = true;
            }
            ok[r] = has0 && has1;
        }
        if (ok[r]) samples[static_cast<std::size_t>(r)] = metric(resample);
    }
    for (char flag : ok) {
        if (!flag) throw std::runtime_error("bootstrap: cohort cannot yield two-class resamples");
    }
    return samples;
}

namespace {

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace

Interval bootstrap_ci(const ScoredCohort& cohort, const MetricFn& metric, int n_resamples,
                      double level, std::uint64_t seed) {
    const auto samples = bootstrap_samples(cohort, metric, n_resamples, seed);
    const double tail = (1.0 - level) / 2.0;
    return {percentile(samples, tail), percentile(samples, 1.0 - tail)};
}

double bootstrap_stddev(const ScoredCohort& cohort, const MetricFn& metric, int n_resamples,
                        std::uint64_t seed) {
    const auto samples = bootstrap_samples(cohort, metric, n_resamples, seed);
    double mean = 0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double ss = 0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    return std::sqrt(ss / static_cast<double>(samples.size()));
}

LossMetricRegression loss_vs_metric_regression(
    const std::vector<std::pair<double, double>>& loss_metric_points) {
    if (loss_metric_points.size() < 2)
        throw std::invalid_argument("loss_vs_metric_regression: need at least 2 points");
    const auto n = static_cast<double>(loss_metric_points.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& [loss, metric] : loss_metric_points) {
        if (loss <= 0) throw std::invalid_argument("loss_vs_metric_regression: nonpositive loss");
        const double x = std::log(loss);
        sx += x;
        sy += metric;
        sxx += x * x;
        sxy += x * metric;
        syy += metric * metric;
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0)
        throw std::invalid_argument("loss_vs_metric_regression: degenerate loss values");
    LossMetricRegression reg;
    reg.slope = (n * sxy - sx * sy) / denom;
    reg.intercept = (sy - reg.slope * sx) / n;
    const double var_y = n * syy - sy * sy;
    reg.pearson_r = var_y == 0.0 ? (reg.slope == 0.0 ? 0.0 : 1.0)
                                 : (n * sxy - sx * sy) / std::sqrt(denom * var_y);
    return reg;
}

}  // namespace ehrscale
