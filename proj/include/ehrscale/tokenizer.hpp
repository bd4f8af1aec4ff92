#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ehrscale {

using TokenId = std::uint32_t;

enum class EventKind : std::uint8_t {
    Diagnosis,
    Medication,
    LabResult,
    Procedure,
    Admission,
    Discharge,
    IcuAdmission,
    IcuDischarge,
    Death,
    Demographic,
    DrgAssignment,
    SofaScore,
    VitalSign,
};

inline constexpr int kEventKindCount = 13;

const char* to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view text);

// One age-stamped clinical event. age_minutes is minutes since birth and is
// absent only for static (Demographic) events.
struct ClinicalEvent {
    std::string patient_id;
    std::optional<double> age_minutes;
    EventKind kind = EventKind::Diagnosis;
    std::string code;
    std::optional<double> value;
};

// Demographic pseudo-event carrying the timeline start year in `value`.
inline constexpr std::string_view kStartYearCode = "META_START_YEAR";

// Thirteen elapsed-time classes, minutes, strictly ascending from 5 minutes
// to 6 months.
struct IntervalLadder {
    std::array<double, 13> minutes;

    static IntervalLadder standard();
    void validate() const;
    double six_months() const { return minutes.back(); }
};

// Indices into ladder.minutes for the tokens representing a gap. Empty for
// gaps under 5 minutes; a single floor-rule class up to 6 months; repeated
// 6-month tokens (rounded, ties up, at least one) beyond.
std::vector<int> intervals_for_gap(double gap_minutes, const IntervalLadder& ladder);

// Empirical quantile discretizer for one (kind, code) group.
struct QuantileBinner {
    EventKind kind = EventKind::LabResult;
    std::string code;                 // empty for a per-kind fallback binner
    std::vector<double> boundaries;   // Q-1 nondecreasing upper bin edges
    int bin_count = 0;

    // Smallest b with v <= boundaries[b], else bin_count-1.
    int bin(double v) const;
};

QuantileBinner fit_quantile_binner(std::vector<double> values, int bin_count);

// Per-code binners with per-kind fallbacks for sparse groups.
struct BinnerRegistry {
    std::map<std::pair<EventKind, std::string>, QuantileBinner> per_code;
    std::map<EventKind, QuantileBinner> per_kind;
    int bin_count = 10;

    const QuantileBinner* lookup(EventKind kind, const std::string& code) const;
};

BinnerRegistry fit_binners(const std::vector<std::vector<ClinicalEvent>>& cohort,
                           int bin_count = 10, std::size_t min_group = 50);

// Bijective token-text <-> id map with designated special tokens.
class Vocabulary {
public:
    Vocabulary() = default;

    // Creates a vocabulary pre-populated with the special tokens (event-stop
    // tokens and one token per interval class).
    static Vocabulary with_specials();

    TokenId add(const std::string& text);      // idempotent
    TokenId encode(const std::string& text) const;  // throws on unknown text
    const std::string& decode(TokenId id) const;
    bool contains(const std::string& text) const;
    std::size_t size() const { return texts_.size(); }

    TokenId death() const { return death_; }
    TokenId discharge() const { return discharge_; }
    TokenId admission() const { return admission_; }
    TokenId icu_admission() const { return icu_admission_; }
    TokenId icu_discharge() const { return icu_discharge_; }
    TokenId interval_token(int klass) const { return interval_[klass]; }
    // Ladder class for an interval token, -1 otherwise.
    int interval_class(TokenId id) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    void bind_specials();

    std::vector<std::string> texts_;
    std::unordered_map<std::string, TokenId> ids_;
    TokenId death_ = 0, discharge_ = 0, admission_ = 0, icu_admission_ = 0, icu_discharge_ = 0;
    std::array<TokenId, 13> interval_{};
};

// Token text constants shared by the tokenizer and the vocabulary.
const char* kind_token(EventKind kind);
std::string quantile_token(int bin);
std::string age_bucket_token(double age_years);
std::string start_year_token(int year);
const char* interval_token_text(int klass);

// Hierarchical code prefixes, most general first, at most three levels.
// ATC decomposes at levels 1/3/5 (prefix lengths 1, 4, 7); ICD-10 families at
// prefix lengths 3 and 4 plus the full code.
std::vector<std::string> hierarchical_prefixes(EventKind kind, const std::string& code);

// Token texts for one event: [kind] ++ [code tokens] ++ [optional quantile].
std::vector<std::string> event_token_texts(const ClinicalEvent& event,
                                           const BinnerRegistry& binners);

// Encoded form; 1..7 tokens. Throws if a token text is missing from vocab.
std::vector<TokenId> tokenize_event(const ClinicalEvent& event, const Vocabulary& vocab,
                                    const BinnerRegistry& binners);

// Static-context token texts: 5-year age bucket and 5-year start-year bucket.
std::pair<std::string, std::string> encode_age_and_start_year(double age_years, int start_year);

struct PatientTimeline {
    std::string patient_id;
    std::vector<TokenId> tokens;
    // Minutes since birth per token; NaN for static and interval tokens.
    std::vector<double> token_ages;
    std::size_t static_prefix_len = 0;
};

// Full tokenization of one patient's events: static prefix, chronological
// event tokens with interval tokens between distinct ages, DRG tokens pinned
// after their discharge and SOFA tokens after their ICU admission.
PatientTimeline build_timeline(const std::vector<ClinicalEvent>& events, const Vocabulary& vocab,
                               const BinnerRegistry& binners, const IntervalLadder& ladder);

// Scans a cohort and registers every token text build_timeline can emit.
Vocabulary build_vocabulary(const std::vector<std::vector<ClinicalEvent>>& cohort,
                            const BinnerRegistry& binners);

// Line-delimited event records: patient_id,age_minutes,kind,code,value with a
// header row; empty fields for absent age/value. Parse errors carry the
// 1-based line number.
std::vector<ClinicalEvent> read_events_file(const std::string& path);
void write_events_file(const std::string& path, const std::vector<std::vector<ClinicalEvent>>& cohort);

// Groups a flat event list by patient id, preserving first-seen patient order.
std::vector<std::vector<ClinicalEvent>> group_by_patient(std::vector<ClinicalEvent> events);

}  // namespace ehrscale
