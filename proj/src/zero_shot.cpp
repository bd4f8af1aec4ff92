#include "ehrscale/zero_shot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ehrscale {

const char* to_string(Task task) {
    return task == Task::IcuMortality ? "icu_mortality" : "readmission_30d";
}

std::optional<Task> parse_task(std::string_view text) {
    if (text == "icu_mortality" || text == "mortality") return Task::IcuMortality;
    if (text == "readmission_30d" || text == "readmission") return Task::Readmission30d;
    return std::nullopt;
}

void RolloutConfig::validate() const {
    if (n_rollouts < 1) throw std::invalid_argument("n_rollouts must be >= 1");
    if (max_generated < 1) throw std::invalid_argument("max_generated must be >= 1");
    if (context_window < 1) throw std::invalid_argument("context_window must be >= 1");
    if (temperature < 0) throw std::invalid_argument("temperature must be nonnegative");
}

TokenClasses TokenClasses::from_vocab(const Vocabulary& vocab, const IntervalLadder& ladder) {
    TokenClasses c;
    c.death = vocab.death();
    c.discharge = vocab.discharge();
    c.admission = vocab.admission();
    c.icu_admission = vocab.icu_admission();
    c.icu_discharge = vocab.icu_discharge();
    for (int i = 0; i < 13; ++i) c.interval_minutes.emplace_back(vocab.interval_token(i), ladder.minutes[i]);
    return c;
}

double TokenClasses::interval_duration(TokenId id) const {
    for (const auto& [tok, minutes] : interval_minutes) {
        if (tok == id) return minutes;
    }
    return 0.0;
}

ModelTrajectorySampler::ModelTrajectorySampler(const ParameterSet<float>& params, int window)
    : params_(&params), window_(window), decoder_(params, window) {}

void ModelTrajectorySampler::reset(std::span<const TokenId> context) { decoder_.reset(context); }

TokenId ModelTrajectorySampler::sample(Rng& rng, double temperature) {
    return decoder_.sample(rng, temperature);
}

std::unique_ptr<TrajectorySampler> ModelTrajectorySampler::clone() const {
    return std::make_unique<ModelTrajectorySampler>(*params_, window_);
}

StopRules StopRules::for_task(Task task) {
    StopRules rules;
    if (task == Task::IcuMortality) {
        rules.on_death = true;
        rules.on_discharge = true;
    } else {
        rules.on_death = true;
        rules.on_admission = true;
        rules.time_limit_minutes = 30.0 * 1440.0;
    }
    return rules;
}

TrajectoryOutcome simulate_rollout(TrajectorySampler& sampler, std::span<const TokenId> context,
                                   const StopRules& rules, const TokenClasses& classes,
                                   const RolloutConfig& config, Rng& rng) {
    config.validate();
    if (context.size() > static_cast<std::size_t>(config.context_window))
        throw std::invalid_argument("simulate_rollout: context exceeds the window");
    sampler.reset(context);
    TrajectoryOutcome out;
    while (out.tokens_generated < config.max_generated) {
        const TokenId tok = sampler.sample(rng, config.temperature);
        ++out.tokens_generated;
        if (rules.on_death && tok == classes.death) {
            out.terminal = Terminal::Death;
            return out;
        }
        if (rules.on_discharge && (tok == classes.discharge || tok == classes.icu_discharge)) {
            out.terminal = Terminal::Discharge;
            return out;
        }
        if (rules.on_admission && tok == classes.admission) {
            out.terminal = Terminal::Admission;
            return out;
        }
        const double dur = classes.interval_duration(tok);
        if (dur > 0) {
            out.simulated_minutes += dur;
            if (rules.time_limit_minutes > 0 && out.simulated_minutes > rules.time_limit_minutes) {
                out.terminal = Terminal::TimeExceeded;
                return out;
            }
        }
    }
    out.terminal = Terminal::Censored;
    return out;
}

std::optional<std::vector<TokenId>> prefix_for_task(const PatientTimeline& timeline, Task task,
                                                    const TokenClasses& classes,
                                                    int context_window) {
    const TokenId anchor_token =
        task == Task::IcuMortality ? classes.icu_admission : classes.discharge;
    const auto& toks = timeline.tokens;
    std::size_t anchor = toks.size();
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i] == anchor_token) anchor = i;
    }
    if (anchor == toks.size()) return std::nullopt;
    const std::size_t end = anchor + 1;
    const std::size_t begin =
        end > static_cast<std::size_t>(context_window) ? end - context_window : 0;
    return std::vector<TokenId>(toks.begin() + begin, toks.begin() + end);
}

namespace {

RiskEstimate run_estimate(TrajectorySampler& sampler, const PatientTimeline& timeline, Task task,
                          const TokenClasses& classes, const RolloutConfig& config) {
    config.validate();
    const auto prefix = prefix_for_task(timeline, task, classes, config.context_window);
    if (!prefix)
        throw std::invalid_argument("patient " + timeline.patient_id + " has no anchor for task " +
                                    to_string(task));
    const StopRules rules = StopRules::for_task(task);
    const Terminal event_terminal =
        task == Task::IcuMortality ? Terminal::Death : Terminal::Admission;
    RiskEstimate est;
    est.rollout_count = config.n_rollouts;
    for (int r = 0; r < config.n_rollouts; ++r) {
        Rng rng(derive_seed(config.base_seed, fnv1a64(timeline.patient_id),
                            static_cast<std::uint64_t>(r)));
        const auto outcome = simulate_rollout(sampler, *prefix, rules, classes, config, rng);
        if (outcome.terminal == event_terminal) ++est.event_count;
        if (outcome.terminal == Terminal::Censored) ++est.censored_count;  // counts as non-event
    }
    est.probability = static_cast<double>(est.event_count) / static_cast<double>(est.rollout_count);
    return est;
}

}  // namespace

RiskEstimate estimate_icu_mortality(TrajectorySampler& sampler, const PatientTimeline& timeline,
                                    const TokenClasses& classes, const RolloutConfig& config) {
    return run_estimate(sampler, timeline, Task::IcuMortality, classes, config);
}

RiskEstimate estimate_readmission_30d(TrajectorySampler& sampler, const PatientTimeline& timeline,
                                      const TokenClasses& classes, const RolloutConfig& config) {
    return run_estimate(sampler, timeline, Task::Readmission30d, classes, config);
}

namespace {

std::vector<const ClinicalEvent*> chronological(const std::vector<ClinicalEvent>& events) {
    std::vector<const ClinicalEvent*> timed;
    for (const auto& e : events) {
        if (e.age_minutes) timed.push_back(&e);
    }
    std::stable_sort(timed.begin(), timed.end(), [](const ClinicalEvent* a, const ClinicalEvent* b) {
        if (*a->age_minutes != *b->age_minutes) return *a->age_minutes < *b->age_minutes;
        if (a->kind != b->kind) return a->kind < b->kind;
        return a->code < b->code;
    });
    return timed;
}

}  // namespace

std::optional<int> icu_mortality_label(const std::vector<ClinicalEvent>& events) {
    const auto timed = chronological(events);
    std::size_t anchor = timed.size();
    for (std::size_t i = 0; i < timed.size(); ++i) {
        if (timed[i]->kind == EventKind::IcuAdmission) anchor = i;
    }
    if (anchor == timed.size()) return std::nullopt;
    for (std::size_t i = anchor + 1; i < timed.size(); ++i) {
        switch (timed[i]->kind) {
            case EventKind::Death:
                return 1;
            case EventKind::IcuDischarge:
            case EventKind::Discharge:
                return 0;
            default:
                break;
        }
    }
    return 0;  // stay runs past the record without a death
}

std::optional<int> readmission_30d_label(const std::vector<ClinicalEvent>& events) {
    const auto timed = chronological(events);
    std::size_t anchor = timed.size();
    for (std::size_t i = 0; i < timed.size(); ++i) {
        if (timed[i]->kind == EventKind::Discharge) anchor = i;
    }
    if (anchor == timed.size()) return std::nullopt;
    const double d0 = *timed[anchor]->age_minutes;
    for (std::size_t i = anchor + 1; i < timed.size(); ++i) {
        if (timed[i]->kind == EventKind::Admission && *timed[i]->age_minutes - d0 <= 30.0 * 1440.0)
            return 1;
    }
    return 0;
}

CohortScoring score_cohort(const TrajectorySampler& sampler_prototype,
                           const std::vector<PatientTimeline>& timelines,
                           const std::vector<std::vector<ClinicalEvent>>& events, Task task,
                           const TokenClasses& classes, const RolloutConfig& config) {
    if (timelines.size() != events.size())
        throw std::invalid_argument("score_cohort: timelines/events size mismatch");
    config.validate();
    const std::size_t n = timelines.size();
    std::vector<char> eligible(n, 0);
    std::vector<ScoredSample> slots(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const auto label = task == Task::IcuMortality ? icu_mortality_label(events[i])
                                                      : readmission_30d_label(events[i]);
        if (!label) continue;
        const auto prefix = prefix_for_task(timelines[i], task, classes, config.context_window);
        if (!prefix) continue;
        auto sampler = sampler_prototype.clone();
        const auto est = run_estimate(*sampler, timelines[i], task, classes, config);
        slots[i] = {timelines[i].patient_id, est.probability, *label, est.censored_count};
        eligible[i] = 1;
    }
    CohortScoring result;
    for (std::size_t i = 0; i < n; ++i) {
        if (eligible[i]) {
            result.scored.push_back(std::move(slots[i]));
        } else {
            ++result.skipped_no_anchor;
        }
    }
    if (result.scored.empty()) throw std::runtime_error("score_cohort: no eligible patients");
    return result;
}

void write_scored_cohort_csv(const std::string& path, const ScoredCohort& cohort, Task task) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open scored cohort for writing: " + path);
    out.precision(10);
    out << "patient_id,task,score,label,censored_count\n";
    for (const auto& s : cohort) {
        out << s.patient_id << ',' << to_string(task) << ',' << s.score << ',' << s.label << ','
            << s.censored << '\n';
    }
    if (!out) throw std::runtime_error("failed writing scored cohort: " + path);
}

ScoredCohort read_scored_cohort_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open scored cohort: " + path);
    ScoredCohort cohort;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ScoredSample s;
        std::string field;
        std::getline(ss, s.patient_id, ',');
        std::getline(ss, field, ',');  // task
        std::getline(ss, field, ',');
        s.score = std::stod(field);
        std::getline(ss, field, ',');
        s.label = std::stoi(field);
        std::getline(ss, field, ',');
        s.censored = std::stoi(field);
        cohort.push_back(std::move(s));
    }
    return cohort;
}

}  // namespace ehrscale
