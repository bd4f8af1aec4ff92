#pragma once

#include <cstdint>
#include <vector>

#include "ehrscale/tokenizer.hpp"

namespace ehrscale {

// Synthetic cohort generator standing in for a real EHR extract. Each patient
// carries a latent severity that shifts lab/vital values toward abnormal
// quantiles and raises per-ICU-stay mortality, so downstream risk models have
// a recoverable signal.
struct SyntheticCohortConfig {
    int n_patients = 200;
    double mean_admissions = 2.0;
    double labs_per_admission = 8.0;
    double medication_rate = 3.0;       // medication orders per admission
    double base_icu_mortality = 0.22;   // death probability at median abnormality
    double readmission_hazard = 0.3;    // chance the next admission lands within 30 days
    double hazard_coupling = 12.0;       // log-odds of death per unit abnormality
    double icu_rate = 0.75;             // base chance an admission includes an ICU stay
    double observation_years = 2.0;     // no new admissions beyond this horizon
    // patient-level lab baseline spread and measurement noise, in z units;
    // high spread rewards in-context retrieval of earlier values, low spread
    // lets the acute state dominate the quantile tokens
    double lab_baseline_spread = 0.7;
    double lab_noise = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// One event list per patient, deterministic for a fixed seed and independent
// of the parallelism degree. Every admission is closed by a Discharge or a
// Death; ICU stays nest within admissions; Death is terminal.
std::vector<std::vector<ClinicalEvent>> generate_synthetic_cohort(const SyntheticCohortConfig& config);

}  // namespace ehrscale
