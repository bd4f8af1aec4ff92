#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehrscale/metrics.hpp"
#include "ehrscale/model.hpp"
#include "ehrscale/rng.hpp"
#include "ehrscale/tokenizer.hpp"

namespace ehrscale {

enum class Task { IcuMortality, Readmission30d };

const char* to_string(Task task);
std::optional<Task> parse_task(std::string_view text);

struct RolloutConfig {
    int n_rollouts = 20;
    int context_window = 2048;
    int max_generated = 8192;
    double temperature = 1.0;
    std::uint64_t base_seed = 0;

    void validate() const;
};

enum class Terminal { Death, Discharge, Admission, TimeExceeded, Censored };

struct TrajectoryOutcome {
    Terminal terminal = Terminal::Censored;
    int tokens_generated = 0;
    double simulated_minutes = 0;  // nominal durations of generated interval tokens
};

// Token-id classes the stop rules need, resolved once from the vocabulary.
struct TokenClasses {
    TokenId death = 0, discharge = 0, admission = 0, icu_admission = 0, icu_discharge = 0;
    std::vector<std::pair<TokenId, double>> interval_minutes;

    static TokenClasses from_vocab(const Vocabulary& vocab, const IntervalLadder& ladder);
    double interval_duration(TokenId id) const;  // 0 for non-interval tokens
};

// Stateful next-token source; one instance serves one trajectory at a time.
class TrajectorySampler {
public:
    virtual ~TrajectorySampler() = default;
    virtual void reset(std::span<const TokenId> context) = 0;
    virtual TokenId sample(Rng& rng, double temperature) = 0;
    virtual std::unique_ptr<TrajectorySampler> clone() const = 0;
};

// Samples from trained parameters through a sliding-window decoder.
class ModelTrajectorySampler final : public TrajectorySampler {
public:
    ModelTrajectorySampler(const ParameterSet<float>& params, int window);
    void reset(std::span<const TokenId> context) override;
    TokenId sample(Rng& rng, double temperature) override;
    std::unique_ptr<TrajectorySampler> clone() const override;

private:
    const ParameterSet<float>* params_;
    int window_;
    Decoder decoder_;
};

struct StopRules {
    bool on_death = false;
    bool on_discharge = false;      // Discharge and IcuDischarge both stop
    bool on_admission = false;
    double time_limit_minutes = 0;  // 0 disables; exceeded strictly

    static StopRules for_task(Task task);
};

TrajectoryOutcome simulate_rollout(TrajectorySampler& sampler, std::span<const TokenId> context,
                                   const StopRules& rules, const TokenClasses& classes,
                                   const RolloutConfig& config, Rng& rng);

// Context ending at the task anchor (last ICU admission / last discharge),
// truncated to the most recent context_window tokens. Empty optional when the
// anchor is absent.
std::optional<std::vector<TokenId>> prefix_for_task(const PatientTimeline& timeline, Task task,
                                                    const TokenClasses& classes, int context_window);

struct RiskEstimate {
    double probability = 0;
    int event_count = 0;
    int rollout_count = 0;
    int censored_count = 0;
};

RiskEstimate estimate_icu_mortality(TrajectorySampler& sampler, const PatientTimeline& timeline,
                                    const TokenClasses& classes, const RolloutConfig& config);

RiskEstimate estimate_readmission_30d(TrajectorySampler& sampler, const PatientTimeline& timeline,
                                      const TokenClasses& classes, const RolloutConfig& config);

// Ground-truth labels from the raw event history ("true future events").
// Empty optional when the patient has no task anchor.
std::optional<int> icu_mortality_label(const std::vector<ClinicalEvent>& events);
std::optional<int> readmission_30d_label(const std::vector<ClinicalEvent>& events);

struct CohortScoring {
    ScoredCohort scored;
    int skipped_no_anchor = 0;
};

// One (score, label) pair per eligible patient. Rollout seeds derive from
// (base seed, patient id, rollout index), so scoring is deterministic and
// independent of scheduling order.
CohortScoring score_cohort(const TrajectorySampler& sampler_prototype,
                           const std::vector<PatientTimeline>& timelines,
                           const std::vector<std::vector<ClinicalEvent>>& events, Task task,
                           const TokenClasses& classes, const RolloutConfig& config);

void write_scored_cohort_csv(const std::string& path, const ScoredCohort& cohort, Task task);
ScoredCohort read_scored_cohort_csv(const std::string& path);

}  // namespace ehrscale
