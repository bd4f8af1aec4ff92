#include "ehrscale/isoflop.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ehrscale {

ParabolaFit fit_parabola(const std::vector<std::pair<double, double>>& points) {
    std::set<double> distinct;
    for (const auto& [n, l] : points) {
        if (n <= 0) throw std::invalid_argument("fit_parabola: model sizes must be positive");
        distinct.insert(std::log(n));
        (void)l;
    }
    if (distinct.size() < 3)
        throw std::invalid_argument("fit_parabola: need at least 3 points with distinct N");

    // Centered quadratic least squares in u = ln N - mean(ln N).
    const std::size_t m = points.size();
    double mean_u = 0;
    std::vector<double> u(m), y(m);
    for (std::size_t i = 0; i < m; ++i) {
        u[i] = std::log(points[i].first);
        y[i] = points[i].second;
        mean_u += u[i];
    }
    mean_u /= static_cast<double>(m);
    for (auto& ui : u) ui -= mean_u;

    // normal equations for [a, b, c] on a*u^2 + b*u + c
    double s0 = static_cast<double>(m), s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    double t0 = 0, t1 = 0, t2 = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double u1 = u[i], u2 = u1 * u1;
        s1 += u1;
        s2 += u2;
        s3 += u2 * u1;
        s4 += u2 * u2;
        t0 += y[i];
        t1 += y[i] * u1;
        t2 += y[i] * u2;
    }
    double mat[3][4] = {{s4, s3, s2, t2}, {s3, s2, s1, t1}, {s2, s1, s0, t0}};
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r) {
            if (std::abs(mat[r][col]) > std::abs(mat[pivot][col])) pivot = r;
        }
        std::swap(mat[col], mat[pivot]);
        if (mat[col][col] == 0.0) throw std::runtime_error("fit_parabola: singular normal equations");
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = mat[r][col] / mat[col][col];
            for (int c2 = col; c2 < 4; ++c2) mat[r][c2] -= f * mat[col][c2];
        }
    }
    const double a = mat[0][3] / mat[0][0];
    const double b = mat[1][3] / mat[1][1];
    const double c = mat[2][3] / mat[2][2];
    if (!(a > 0))
        throw std::runtime_error(
            "fit_parabola: nonpositive curvature; the sweep grid does not bracket a loss minimum");

    ParabolaFit fit;
    fit.alpha = a;
    fit.beta = b - 2.0 * a * mean_u;
    fit.gamma = c - b * mean_u + a * mean_u * mean_u;
    fit.n_opt = std::exp(-fit.beta / (2.0 * fit.alpha));
    fit.l_min = fit.gamma - fit.beta * fit.beta / (4.0 * fit.alpha);
    double ss = 0;
    double n_min = std::numeric_limits<double>::infinity(), n_max = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double pred = a * u[i] * u[i] + b * u[i] + c;
        ss += (pred - y[i]) * (pred - y[i]);
        n_min = std::min(n_min, points[i].first);
        n_max = std::max(n_max, points[i].first);
    }
    fit.residual_rms = std::sqrt(ss / static_cast<double>(m));
    fit.extrapolated = fit.n_opt < n_min / 10.0 || fit.n_opt > n_max * 10.0;
    return fit;
}

std::vector<IsoFlopPoint> select_lowest(std::vector<IsoFlopPoint> points, int k) {
    if (points.empty()) throw std::invalid_argument("select_lowest: no points");
    std::stable_sort(points.begin(), points.end(), [](const IsoFlopPoint& a, const IsoFlopPoint& b) {
        if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
        return a.params < b.params;
    });
    if (static_cast<int>(points.size()) > k) points.resize(static_cast<std::size_t>(k));
    return points;
}

PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.size() < 2) throw std::invalid_argument("fit_power_law: need at least 2 pairs");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    PowerLawFit fit;
    fit.min_x = std::numeric_limits<double>::infinity();
    fit.max_x = 0;
    const auto n = static_cast<double>(pairs.size());
    for (const auto& [x, y] : pairs) {
        if (x <= 0 || y <= 0) throw std::invalid_argument("fit_power_law: inputs must be positive");
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
        fit.min_x = std::min(fit.min_x, x);
        fit.max_x = std::max(fit.max_x, x);
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw std::invalid_argument("fit_power_law: degenerate x values");
    fit.exponent = (n * sxy - sx * sy) / denom;
    fit.log_coeff = (sy - fit.exponent * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_ly = sy / n;
    for (const auto& [x, y] : pairs) {
        const double pred = fit.log_coeff + fit.exponent * std::log(x);
        ss_res += (std::log(y) - pred) * (std::log(y) - pred);
        ss_tot += (std::log(y) - mean_ly) * (std::log(y) - mean_ly);
    }
    fit.r2 = ss_tot == 0.0 ? 1.0 : std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
    return fit;
}

Extrapolation extrapolate(const PowerLawFit& fit, double c) {
    if (c <= 0) throw std::invalid_argument("extrapolate: budget must be positive");
    Extrapolation e;
    e.value = std::exp(fit.log_coeff) * std::pow(c, fit.exponent);
    e.extrapolated = c < fit.min_x || c > fit.max_x;
    return e;
}

void save_sweep_manifest(const std::string& path, const std::vector<IsoFlopPoint>& points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open sweep manifest for writing: " + path);
    out.precision(12);
    out << "budget,config_id,params,tokens,val_loss,status\n";
    for (const auto& p : points) {
        out << p.budget << ',' << p.config_id << ',' << p.params << ',' << p.tokens << ','
            << p.val_loss << ',' << p.status << '\n';
    }
    if (!out) throw std::runtime_error("failed writing sweep manifest: " + path);
}

std::vector<IsoFlopPoint> load_sweep_manifest(const std::string& path) {
    std::vector<IsoFlopPoint> points;
    std::ifstream in(path, std::ios::binary);
    if (!in) return points;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        IsoFlopPoint p;
        std::string field;
        std::getline(ss, field, ',');
        p.budget = std::stoull(field);
        std::getline(ss, p.config_id, ',');
        std::getline(ss, field, ',');
        p.params = std::stoull(field);
        std::getline(ss, field, ',');
        p.tokens = std::stoull(field);
        std::getline(ss, field, ',');
        p.val_loss = std::stod(field);
        std::getline(ss, p.status, ',');
        points.push_back(std::move(p));
    }
    return points;
}

std::vector<IsoFlopPoint> run_sweep(const SweepConfig& sweep,
                                    const std::vector<TrainingExample>& train_examples,
                                    const std::vector<TrainingExample>& val_examples,
                                    const SweepProgress& progress) {
    if (sweep.budgets.size() < 3) throw std::invalid_argument("run_sweep: need at least 3 budgets");
    if (sweep.grid.size() < 4)
        throw std::invalid_argument("run_sweep: need at least 4 grid configs per budget");

    std::vector<IsoFlopPoint> points;
    if (!sweep.manifest_path.empty() && std::filesystem::exists(sweep.manifest_path))
        points = load_sweep_manifest(sweep.manifest_path);
    auto already_done = [&points](std::uint64_t budget, const std::string& id) {
        return std::any_of(points.begin(), points.end(), [&](const IsoFlopPoint& p) {
            return p.budget == budget && p.config_id == id;
        });
    };

    std::uint64_t corpus_tokens = 0;
    for (const auto& ex : train_examples) corpus_tokens += ex.tokens.size();

    for (const auto budget : sweep.budgets) {
        for (const auto& config : sweep.grid) {
            const std::string id = config.id();
            if (already_done(budget, id)) continue;
            IsoFlopPoint p;
            p.budget = budget;
            p.config_id = id;
            p.params = count_params(config);
            p.tokens = tokens_for_budget(config, budget, sweep.accounting_seq_len);
            if (p.tokens > corpus_tokens) {
                // the fixed-compute premise fails once the corpus runs out
                p.status = "data_limited";
                p.val_loss = 0.0;
            } else {
                TrainOptions opts = sweep.train;
                opts.token_budget = p.tokens;
                const TrainResult r = train(config, train_examples, val_examples, opts);
                p.val_loss = r.final_val_loss;
                p.status = "ok";
            }
            points.push_back(p);
            if (!sweep.manifest_path.empty()) save_sweep_manifest(sweep.manifest_path, points);
            if (progress) progress(p);
        }
    }
    return points;
}

SweepFits fit_sweep(const std::vector<IsoFlopPoint>& points, const std::vector<ModelConfig>& grid,
                    int accounting_seq_len, int k_lowest) {
    SweepFits fits;
    std::vector<std::uint64_t> budgets;
    for (const auto& p : points) {
        if (std::find(budgets.begin(), budgets.end(), p.budget) == budgets.end())
            budgets.push_back(p.budget);
    }
    std::sort(budgets.begin(), budgets.end());

    // per-token forward cost vs parameter count over the grid, log-linear
    std::vector<std::pair<double, double>> nf;
    for (const auto& config : grid) {
        const auto f = forward_flops(config, accounting_seq_len);
        nf.emplace_back(static_cast<double>(count_params(config)), f.forward_per_token());
    }
    fits.flops_per_token_law = fit_power_law(nf);

    std::vector<std::pair<double, double>> n_opt_pairs, d_opt_pairs;
    for (const auto budget : budgets) {
        std::vector<IsoFlopPoint> usable;
        for (const auto& p : points) {
            if (p.budget == budget && p.usable()) usable.push_back(p);
        }
        if (usable.size() < 3) continue;
        const auto retained = select_lowest(std::move(usable), k_lowest);
        std::vector<std::pair<double, double>> nl;
        for (const auto& p : retained) nl.emplace_back(static_cast<double>(p.params), p.val_loss);
        SweepFits::BudgetFit bf;
        bf.budget = budget;
        bf.parabola = fit_parabola(nl);
        const double f_at_opt = extrapolate(fits.flops_per_token_law, bf.parabola.n_opt).value;
        bf.d_opt = static_cast<double>(budget) / (3.0 * f_at_opt);
        fits.budgets.push_back(bf);
        n_opt_pairs.emplace_back(static_cast<double>(budget), bf.parabola.n_opt);
        d_opt_pairs.emplace_back(static_cast<double>(budget), bf.d_opt);
    }
    if (n_opt_pairs.size() >= 2) {
        fits.n_opt_law = fit_power_law(n_opt_pairs);
        fits.d_opt_law = fit_power_law(d_opt_pairs);
    }
    return fits;
}

}  // namespace ehrscale
