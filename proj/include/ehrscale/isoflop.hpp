#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ehrscale/flops.hpp"
#include "ehrscale/model.hpp"

namespace ehrscale {

struct IsoFlopPoint {
    std::uint64_t budget = 0;      // C, FLOPs
    std::string config_id;
    std::uint64_t params = 0;      // N
    std::uint64_t tokens = 0;      // D
    double val_loss = 0;           // L, nats/token
    std::string status;            // "ok" | "data_limited"

    bool usable() const { return status == "ok"; }
};

// L = alpha*(ln N)^2 + beta*ln N + gamma fitted by ordinary least squares.
struct ParabolaFit {
    double alpha = 0, beta = 0, gamma = 0;
    double n_opt = 0;          // exp(-beta / 2 alpha)
    double l_min = 0;          // gamma - beta^2 / (4 alpha)
    double residual_rms = 0;
    bool extrapolated = false;  // n_opt outside [min N / 10, max N * 10]
};

// points are (N, L) pairs; needs >= 3 distinct N and a positive curvature.
ParabolaFit fit_parabola(const std::vector<std::pair<double, double>>& points);

// k points with the lowest loss; ties rank the smaller model first.
std::vector<IsoFlopPoint> select_lowest(std::vector<IsoFlopPoint> points, int k = 6);

struct PowerLawFit {
    double exponent = 0;
    double log_coeff = 0;  // ln of the multiplicative coefficient
    double r2 = 0;
    double min_x = 0, max_x = 0;  // fitted input range
};

// Least squares on (ln x, ln y); all inputs must be positive.
PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& pairs);

struct Extrapolation {
    double value = 0;
    bool extrapolated = false;  // input outside the fitted range
};

Extrapolation extrapolate(const PowerLawFit& fit, double c);

// Sweep orchestration. Completed points persist to a CSV manifest and are
// skipped when the sweep reruns.
struct SweepConfig {
    std::vector<std::uint64_t> budgets;
    std::vector<ModelConfig> grid;
    int accounting_seq_len = 2048;  // context used for FLOPs accounting
    TrainOptions train;
    std::string manifest_path;      // empty disables persistence
};

void save_sweep_manifest(const std::string& path, const std::vector<IsoFlopPoint>& points);
std::vector<IsoFlopPoint> load_sweep_manifest(const std::string& path);

using SweepProgress = std::function<void(const IsoFlopPoint&)>;

std::vector<IsoFlopPoint> run_sweep(const SweepConfig& sweep,
                                    const std::vector<TrainingExample>& train_examples,
                                    const std::vector<TrainingExample>& val_examples,
                                    const SweepProgress& progress = {});

// Per-budget parabola fits plus the two power laws traced through the minima.
struct SweepFits {
    struct BudgetFit {
        std::uint64_t budget = 0;
        ParabolaFit parabola;
        double d_opt = 0;  // tokens affordable at n_opt under this budget
    };
    std::vector<BudgetFit> budgets;
    PowerLawFit n_opt_law;  // N_opt vs C
    PowerLawFit d_opt_law;  // D_opt vs C
    PowerLawFit flops_per_token_law;  // per-token forward FLOPs vs N over the grid
};

SweepFits fit_sweep(const std::vector<IsoFlopPoint>& points, const std::vector<ModelConfig>& grid,
                    int accounting_seq_len, int k_lowest = 6);

}  // namespace ehrscale
