#include "ehrscale/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "ehrscale/rng.hpp"

namespace ehrscale {

namespace {

constexpr double kMinutesPerDay = 1440.0;
constexpr double kMinutesPerYear = 525600.0;

// Chronic condition flags; each patient carries a subset that shifts the
// distributions of specific labs, medications and diagnoses, so predicting
// later tokens well requires carrying early context.
enum Chronic { kCkd = 0, kDiabetes, kHeartFailure, kCopd, kChronicCount };

constexpr double kChronicPrev[kChronicCount] = {0.25, 0.22, 0.18, 0.20};
const char* const kChronicDx[kChronicCount] = {"N18.3", "E11.9", "I50.9", "J44.9"};

struct LabSpec {
    const char* code;
    double mu;
    double sigma;
    double acuity_w;                    // coupling to stay acuity
    double chronic_w[kChronicCount];    // coupling to each chronic flag
};

constexpr LabSpec kLabPanel[] = {
    {"CREAT", 1.1, 0.6, 0.9, {1.3, 0.3, 0.2, 0.0}},
    {"BUN", 18.0, 7.0, 0.7, {1.1, 0.2, 0.3, 0.0}},
    {"NA", 139.0, 4.0, -0.4, {0.2, 0.0, -0.5, 0.0}},
    {"K", 4.2, 0.6, 0.5, {0.8, 0.1, 0.2, 0.0}},
    {"HGB", 11.5, 2.2, -0.6, {-0.7, 0.0, -0.2, 0.0}},
    {"WBC", 9.5, 4.0, 1.0, {0.0, 0.1, 0.0, 0.3}},
    {"PLT", 240.0, 90.0, -0.5, {-0.2, 0.0, 0.0, 0.0}},
    {"LACTATE", 1.8, 1.2, 1.4, {0.0, 0.0, 0.3, 0.2}},
    {"GLUCOSE", 130.0, 45.0, 0.4, {0.2, 1.5, 0.0, 0.1}},
    {"HBA1C", 6.1, 1.1, 0.0, {0.0, 1.8, 0.0, 0.0}},
    {"TROPONIN", 0.05, 0.12, 0.9, {0.1, 0.1, 0.6, 0.0}},
    {"BNP", 180.0, 160.0, 0.6, {0.3, 0.0, 1.6, 0.0}},
    {"CRP", 22.0, 18.0, 1.1, {0.0, 0.1, 0.0, 0.4}},
    {"PCO2", 41.0, 7.0, 0.3, {0.0, 0.0, 0.1, 1.3}},
    {"PH", 7.38, 0.06, -0.9, {-0.2, 0.0, 0.0, -0.7}},
    {"ALBUMIN", 3.8, 0.5, -0.8, {-0.4, -0.1, -0.2, 0.0}},
};

constexpr LabSpec kVitalPanel[] = {
    {"HR", 85.0, 16.0, 1.0, {0.0, 0.0, 0.4, 0.2}},
    {"SBP", 120.0, 22.0, -0.9, {0.2, 0.1, -0.4, 0.0}},
    {"RR", 18.0, 4.5, 1.1, {0.0, 0.0, 0.3, 0.8}},
    {"SPO2", 96.5, 2.5, -1.0, {0.0, 0.0, -0.2, -1.1}},
};



struct MedSpec {
    const char* atc;
    double base_w;
    double chronic_w[kChronicCount];
    double acuity_w;
};

constexpr MedSpec kMedPanel[] = {
    {"B01AC06", 1.0, {0.2, 0.3, 0.8, 0.0}, 0.4},   // antiplatelet
    {"C03CA01", 0.3, {0.5, 0.0, 2.5, 0.0}, 0.5},   // loop diuretic
    {"A10AB01", 0.2, {0.0, 3.0, 0.0, 0.0}, 0.3},   // insulin
    {"A10BA02", 0.3, {-0.2, 2.6, 0.0, 0.0}, 0.0},  // metformin
    {"J01CR02", 0.6, {0.0, 0.2, 0.0, 1.2}, 1.0},   // amoxicillin/clavulanate
    {"J01DD04", 0.3, {0.0, 0.0, 0.0, 0.6}, 1.4},   // ceftriaxone
    {"C07AB07", 0.7, {0.2, 0.2, 1.4, -0.4}, 0.0},  // bisoprolol
    {"C09AA05", 0.8, {0.6, 0.4, 1.2, 0.0}, 0.0},   // ramipril
    {"R03AC02", 0.2, {0.0, 0.0, 0.0, 2.8}, 0.4},   // salbutamol
    {"N02BE01", 1.2, {0.0, 0.0, 0.0, 0.0}, 0.6},   // paracetamol
    {"A02BC01", 0.9, {0.1, 0.1, 0.1, 0.1}, 0.5},   // omeprazole
    {"H02AB07", 0.2, {0.0, 0.1, 0.0, 1.6}, 0.8},   // prednisone
};

struct AcuteDxSpec {
    const char* icd;
    double base_w;
    double acuity_w;
    double chronic_w[kChronicCount];
};

constexpr AcuteDxSpec kAcuteDx[] = {
    {"I21.4", 0.4, 1.2, {0.2, 0.4, 0.6, 0.0}},  // NSTEMI
    {"J18.9", 0.7, 0.8, {0.0, 0.1, 0.2, 0.9}},  // pneumonia
    {"A41.9", 0.3, 1.8, {0.2, 0.2, 0.1, 0.2}},  // sepsis
    {"K92.2", 0.4, 0.6, {0.3, 0.0, 0.0, 0.0}},  // GI bleed
    {"I63.9", 0.3, 0.9, {0.2, 0.3, 0.3, 0.0}},  // stroke
    {"N39.0", 0.8, 0.2, {0.3, 0.4, 0.0, 0.0}},  // UTI
    {"S72.0", 0.5, 0.1, {0.0, 0.0, 0.0, 0.0}},  // femur fracture
    {"I48.9", 0.4, 0.4, {0.1, 0.1, 0.8, 0.1}},  // atrial fibrillation
};

const char* const kDrgPanel[] = {"DRG_064", "DRG_190", "DRG_194", "DRG_291",
                                 "DRG_470", "DRG_603", "DRG_871", "DRG_981"};

// population moments of the stay acuity clamp(0.7*severity + 0.5*u, 0, 1.3)
constexpr double kAcuityMean = 0.6;
constexpr double kAcuityVar = (0.49 + 0.25) / 12.0;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

int poisson(Rng& rng, double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

template <typename Spec, std::size_t N>
std::size_t weighted_pick(Rng& rng, const Spec (&specs)[N], const bool* chronic, double acuity) {
    double weights[N];
    double total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        double w = specs[i].base_w + specs[i].acuity_w * acuity;
        for (int k = 0; k < kChronicCount; ++k) {
            if (chronic[k]) w += specs[i].chronic_w[k];
        }
        weights[i] = std::max(0.05, w);
        total += weights[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < N; ++i) {
        u -= weights[i];
        if (u <= 0) return i;
    }
    return N - 1;
}

struct PendingEvent {
    double age;
    EventKind kind;
    std::string code;
    std::optional<double> value;
};

std::vector<ClinicalEvent> generate_patient(const SyntheticCohortConfig& cfg, int index) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index), 0xC0110F7));
    char pid[16];
    std::snprintf(pid, sizeof(pid), "P%06d", index);

    std::vector<ClinicalEvent> events;
    events.push_back({pid, std::nullopt, EventKind::Demographic,
                      rng.bernoulli(0.5) ? "SEX_F" : "SEX_M", std::nullopt});
    const int start_year = 2008 + static_cast<int>(rng.uniform_int(12));
    events.push_back({pid, std::nullopt, EventKind::Demographic, std::string(kStartYearCode),
                      static_cast<double>(start_year)});

    const double severity = rng.uniform();
    bool chronic[kChronicCount];
    for (int k = 0; k < kChronicCount; ++k)
        chronic[k] = rng.bernoulli(std::clamp(kChronicPrev[k] * (0.5 + severity), 0.0, 1.0));

    // baselines persist across a patient's measurements, so repeat values are
    // predictable for models able to retrieve the earlier quantile from context
    double lab_baseline[std::size(kLabPanel)];
    double vital_baseline[std::size(kVitalPanel)];
    for (auto& b : lab_baseline) b = cfg.lab_baseline_spread * rng.normal();
    for (auto& b : vital_baseline) b = 0.6 * cfg.lab_baseline_spread * rng.normal();

    const double start_age = (20.0 + 70.0 * rng.uniform()) * kMinutesPerYear;
    const double horizon = start_age + cfg.observation_years * kMinutesPerYear;

    const double base_logit =
        cfg.base_icu_mortality <= 0.0
            ? -std::numeric_limits<double>::infinity()
            : std::log(std::min(cfg.base_icu_mortality, 1.0 - 1e-12) /
                       (1.0 - std::min(cfg.base_icu_mortality, 1.0 - 1e-12)));

    std::vector<PendingEvent> pending;
    const int n_admissions = poisson(rng, cfg.mean_admissions);
    double t = start_age;
    bool died = false;
    for (int adm = 0; adm < n_admissions && !died; ++adm) {
        if (t > horizon) break;
        const double stay_days = std::min(30.0, 0.5 - 4.0 * std::log(1.0 - rng.uniform()));
        const double stay_minutes = stay_days * kMinutesPerDay;
        const double stay_end_planned = t + stay_minutes;
        // stay acuity: patient severity plus an admission-level surge
        const double acuity = std::clamp(0.7 * severity + 0.5 * rng.uniform(), 0.0, 1.3);

        const double u_type = rng.uniform();
        const char* adm_type = u_type < 0.25 + 0.45 * acuity ? "ADM_EMERGENCY"
                               : u_type < 0.75               ? "ADM_URGENT"
                                                             : "ADM_ELECTIVE";
        pending.push_back({t, EventKind::Admission, adm_type, std::nullopt});

        // chronic diagnoses re-coded on admission, acute diagnosis per stay
        for (int k = 0; k < kChronicCount; ++k) {
            if (chronic[k] && rng.bernoulli(0.7))
                pending.push_back({t + rng.uniform() * 120.0, EventKind::Diagnosis, kChronicDx[k],
                                   std::nullopt});
        }
        const auto acute_idx = weighted_pick(rng, kAcuteDx, chronic, acuity);
        pending.push_back({t + rng.uniform() * 240.0, EventKind::Diagnosis,
                           kAcuteDx[acute_idx].icd, std::nullopt});

        // ICU decision up front: the entry assessment depends only on
        // measurements recorded before the ICU admission, so the planted
        // mortality signal is fully visible in a history ending at the anchor
        const double p_icu = std::clamp(cfg.icu_rate * (0.35 + acuity), 0.0, 1.0);
        const bool to_icu = rng.bernoulli(p_icu);
        const double icu_start = t + stay_minutes * (0.15 + 0.2 * rng.uniform());

        std::vector<double> pre_icu_z;
        auto measure = [&](const LabSpec& spec, double baseline, EventKind kind, double age,
                           double boost) {
            double z = baseline + spec.acuity_w * (acuity + boost);
            for (int k = 0; k < kChronicCount; ++k) {
                if (chronic[k]) z += spec.chronic_w[k];
            }
            z += cfg.lab_noise * rng.normal();
            pending.push_back({age, kind, spec.code, spec.mu + spec.sigma * z});
            // standardized oriented score, so the cohort-wide abnormality mean
            // sits at one half and the hazard logit is centered
            if (age <= icu_start) {
                const double spread =
                    kind == EventKind::VitalSign ? 0.6 * cfg.lab_baseline_spread : cfg.lab_baseline_spread;
                double m = spec.acuity_w * kAcuityMean;
                double var = spec.acuity_w * spec.acuity_w * kAcuityVar +
                             cfg.lab_noise * cfg.lab_noise + spread * spread;
                for (int k = 0; k < kChronicCount; ++k) {
                    m += spec.chronic_w[k] * kChronicPrev[k];
                    var += spec.chronic_w[k] * spec.chronic_w[k] * kChronicPrev[k] *
                           (1.0 - kChronicPrev[k]);
                }
                const double standardized = (z - m) / std::sqrt(var);
                pre_icu_z.push_back(spec.acuity_w >= 0 ? standardized : -standardized);
            }
        };
        for (std::size_t v = 0; v < std::size(kVitalPanel); ++v)
            measure(kVitalPanel[v], vital_baseline[v], EventKind::VitalSign,
                    t + rng.uniform() * 90.0, 0.0);
        // front-loaded, repeat-heavy lab draws: the admission workup lands
        // before any ICU transfer, and repeats of an already-measured code let
        // a capable model anchor on the earlier quantile
        const int n_labs = poisson(rng, cfg.labs_per_admission);
        std::vector<std::size_t> measured;
        for (int i = 0; i < n_labs; ++i) {
            std::size_t lab_idx;
            if (!measured.empty() && rng.bernoulli(0.6)) {
                lab_idx = measured[rng.uniform_int(measured.size())];
            } else {
                lab_idx = rng.uniform_int(std::size(kLabPanel));
                measured.push_back(lab_idx);
            }
            const double u = rng.uniform();
            const double frac = u * u * 0.8;  // density concentrated at admission
            measure(kLabPanel[lab_idx], lab_baseline[lab_idx], EventKind::LabResult,
                    t + frac * stay_minutes, 0.0);
        }
        const int n_meds = poisson(rng, cfg.medication_rate);
        for (int i = 0; i < n_meds; ++i) {
            const auto med_idx = weighted_pick(rng, kMedPanel, chronic, acuity);
            pending.push_back({t + rng.uniform() * stay_minutes * 0.5, EventKind::Medication,
                               kMedPanel[med_idx].atc, std::nullopt});
        }

        double abnormality = 0.0;
        for (double z : pre_icu_z) abnormality += normal_cdf(z);
        abnormality = pre_icu_z.empty() ? normal_cdf(1.2 * (severity - 0.5))
                                        : abnormality / static_cast<double>(pre_icu_z.size());

        double stay_end = stay_end_planned;
        if (to_icu) {
            const double icu_len = (stay_end - icu_start) * (0.4 + 0.4 * rng.uniform());
            const char* unit = chronic[kHeartFailure] && rng.bernoulli(0.5) ? "CCU"
                               : rng.bernoulli(0.5)                          ? "MICU"
                                                                             : "SICU";
            pending.push_back({icu_start, EventKind::IcuAdmission, unit, std::nullopt});
            const double sofa =
                std::clamp(std::round(2.0 + 16.0 * abnormality + 1.2 * rng.normal()), 0.0, 24.0);
            pending.push_back({icu_start, EventKind::SofaScore, "", sofa});
            // workup in the first third of the ICU stay; the outcome resolves
            // after it, so outcome tokens sit a short, consistent distance
            // past the admission
            for (int i = 0; i < 2; ++i) {
                const std::size_t lab_idx = !measured.empty() && rng.bernoulli(0.6)
                                                ? measured[rng.uniform_int(measured.size())]
                                                : rng.uniform_int(std::size(kLabPanel));
                measure(kLabPanel[lab_idx], lab_baseline[lab_idx], EventKind::LabResult,
                        icu_start + rng.uniform() * 0.3 * icu_len, 0.5);
            }
            // the stay resolves right after the workup, for deaths and ICU
            // step-downs alike, so the two outcome tokens are alternatives at
            // the same sequence position
            const double resolve_age = icu_start + (0.32 + 0.08 * rng.uniform()) * icu_len;
            const double p_death =
                1.0 / (1.0 + std::exp(-(base_logit + cfg.hazard_coupling * (abnormality - 0.5))));
            if (rng.bernoulli(p_death)) {
                std::erase_if(pending,
                              [resolve_age](const PendingEvent& e) { return e.age > resolve_age; });
                pending.push_back({resolve_age, EventKind::Death, "", std::nullopt});
                died = true;
                break;
            }
            pending.push_back({resolve_age, EventKind::IcuDischarge, "", std::nullopt});
        }
        pending.push_back({stay_end, EventKind::Discharge, "", std::nullopt});
        const int drg_idx = std::min<int>(static_cast<int>(std::size(kDrgPanel)) - 1,
                                          static_cast<int>((0.7 * abnormality + 0.3 * rng.uniform()) *
                                                           std::size(kDrgPanel)));
        pending.push_back({stay_end, EventKind::DrgAssignment, kDrgPanel[drg_idx], std::nullopt});

        const double p_readmit =
            std::clamp(cfg.readmission_hazard * (0.3 + 0.9 * severity + 0.4 * abnormality), 0.0, 1.0);
        const double gap_days = rng.bernoulli(p_readmit)
                                    ? 2.0 + 26.0 * rng.uniform()
                                    : 40.0 - 120.0 * std::log(1.0 - rng.uniform());
        t = stay_end + gap_days * kMinutesPerDay;
    }

    std::stable_sort(pending.begin(), pending.end(),
                     [](const PendingEvent& a, const PendingEvent& b) { return a.age < b.age; });
    for (auto& p : pending) events.push_back({pid, p.age, p.kind, std::move(p.code), p.value});
    return events;
}

}  // namespace

void SyntheticCohortConfig::validate() const {
    if (n_patients <= 0) throw std::invalid_argument("n_patients must be positive");
    if (mean_admissions < 0 || labs_per_admission < 0 || medication_rate < 0)
        throw std::invalid_argument("rates must be nonnegative");
    if (base_icu_mortality < 0 || base_icu_mortality > 1)
        throw std::invalid_argument("base_icu_mortality must be in [0,1]");
    if (readmission_hazard < 0 || readmission_hazard > 1)
        throw std::invalid_argument("readmission_hazard must be in [0,1]");
    if (icu_rate < 0 || icu_rate > 1) throw std::invalid_argument("icu_rate must be in [0,1]");
    if (observation_years <= 0) throw std::invalid_argument("observation_years must be positive");
    if (lab_baseline_spread < 0 || lab_noise < 0)
        throw std::invalid_argument("lab spread parameters must be nonnegative");
}

std::vector<std::vector<ClinicalEvent>> generate_synthetic_cohort(const SyntheticCohortConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<ClinicalEvent>> cohort(static_cast<std::size_t>(cfg.n_patients));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < cfg.n_patients; ++i)
        cohort[static_cast<std::size_t>(i)] = generate_patient(cfg, i);
    return cohort;
}

}  // namespace ehrscale
