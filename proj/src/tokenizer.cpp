#include "ehrscale/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ehrscale {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMinutesPerYear = 525600.0;

const char* const kKindNames[kEventKindCount] = {
    "Diagnosis",    "Medication", "LabResult",    "Procedure", "Admission",
    "Discharge",    "IcuAdmission", "IcuDischarge", "Death",   "Demographic",
    "DrgAssignment", "SofaScore", "VitalSign",
};

const char* const kKindTokens[kEventKindCount] = {
    "DX",  "MED",      "LAB",           "PROC",          "ADMISSION",
    "DISCHARGE", "ICU_ADMISSION", "ICU_DISCHARGE", "DEATH", "DEMO",
    "DRG", "SOFA",     "VITAL",
};

const char* const kIntervalTokens[13] = {
    "INT_5MIN", "INT_15MIN", "INT_30MIN", "INT_1H",  "INT_2H",  "INT_6H", "INT_12H",
    "INT_1D",   "INT_3D",    "INT_1W",    "INT_1MO", "INT_3MO", "INT_6MO",
};

}  // namespace

const char* to_string(EventKind kind) { return kKindNames[static_cast<int>(kind)]; }

std::optional<EventKind> parse_event_kind(std::string_view text) {
    for (int i = 0; i < kEventKindCount; ++i) {
        if (text == kKindNames[i]) return static_cast<EventKind>(i);
    }
    return std::nullopt;
}

const char* kind_token(EventKind kind) { return kKindTokens[static_cast<int>(kind)]; }
const char* interval_token_text(int klass) { return kIntervalTokens[klass]; }

std::string quantile_token(int bin) { return "Q" + std::to_string(bin); }

std::string age_bucket_token(double age_years) {
    const int lo = static_cast<int>(std::floor(age_years / 5.0)) * 5;
    return "AGE_" + std::to_string(lo) + "_" + std::to_string(lo + 5);
}

std::string start_year_token(int year) {
    // floor division, robust to years before 0 even if never expected
    int q = year / 5;
    if (year % 5 != 0 && year < 0) --q;
    const int lo = q * 5;
    return "YEAR_" + std::to_string(lo) + "_" + std::to_string(lo + 5);
}

IntervalLadder IntervalLadder::standard() {
    // 5m 15m 30m 1h 2h 6h 12h 1d 3d 1w 1mo 3mo 6mo, month = 1/12 year
    return IntervalLadder{{5, 15, 30, 60, 120, 360, 720, 1440, 4320, 10080, 43800, 131400, 262800}};
}

void IntervalLadder::validate() const {
    if (minutes.front() != 5.0 || minutes.back() != 262800.0)
        throw std::invalid_argument("interval ladder endpoints must be 5 minutes and 6 months");
    for (std::size_t i = 1; i < minutes.size(); ++i) {
        if (!(minutes[i] > minutes[i - 1]))
            throw std::invalid_argument("interval ladder must be strictly ascending");
    }
}

std::vector<int> intervals_for_gap(double gap_minutes, const IntervalLadder& ladder) {
    if (gap_minutes < 0.0 || !std::isfinite(gap_minutes))
        throw std::invalid_argument("gap must be a nonnegative finite number of minutes");
    std::vector<int> out;
    if (gap_minutes < ladder.minutes.front()) return out;
    const double six_months = ladder.six_months();
    if (gap_minutes <= six_months) {
        // largest class not exceeding the gap
        int klass = 0;
        for (std::size_t i = 0; i < ladder.minutes.size(); ++i) {
            if (ladder.minutes[i] <= gap_minutes) klass = static_cast<int>(i);
        }
        out.push_back(klass);
        return out;
    }
    // repeated 6-month tokens, rounded to nearest, ties up, at least one
    auto count = static_cast<long long>(std::floor(gap_minutes / six_months + 0.5));
    if (count < 1) count = 1;
    out.assign(static_cast<std::size_t>(count), static_cast<int>(ladder.minutes.size()) - 1);
    return out;
}

int QuantileBinner::bin(double v) const {
    auto it = std::lower_bound(boundaries.begin(), boundaries.end(), v);
    if (it == boundaries.end()) return bin_count - 1;
    return static_cast<int>(it - boundaries.begin());
}

QuantileBinner fit_quantile_binner(std::vector<double> values, int bin_count) {
    if (values.empty()) throw std::invalid_argument("cannot fit quantile binner on empty values");
    if (bin_count < 2) throw std::invalid_argument("quantile binner needs at least 2 bins");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    QuantileBinner binner;
    binner.bin_count = bin_count;
    binner.boundaries.reserve(static_cast<std::size_t>(bin_count) - 1);
    for (int i = 1; i < bin_count; ++i) {
        // empirical quantile at i/Q: order statistic ceil(i*n/Q), 1-based
        auto rank = static_cast<std::size_t>(
            (static_cast<unsigned long long>(i) * n + bin_count - 1) / bin_count);
        if (rank < 1) rank = 1;
        if (rank > n) rank = n;
        binner.boundaries.push_back(values[rank - 1]);
    }
    return binner;
}

const QuantileBinner* BinnerRegistry::lookup(EventKind kind, const std::string& code) const {
    auto it = per_code.find({kind, code});
    if (it != per_code.end()) return &it->second;
    auto kt = per_kind.find(kind);
    if (kt != per_kind.end()) return &kt->second;
    return nullptr;
}

BinnerRegistry fit_binners(const std::vector<std::vector<ClinicalEvent>>& cohort, int bin_count,
                           std::size_t min_group) {
    BinnerRegistry reg;
    reg.bin_count = bin_count;
    std::map<std::pair<EventKind, std::string>, std::vector<double>> groups;
    std::map<EventKind, std::vector<double>> kind_values;
    for (const auto& events : cohort) {
        for (const auto& e : events) {
            if (!e.value || e.kind == EventKind::Demographic) continue;
            groups[{e.kind, e.code}].push_back(*e.value);
            kind_values[e.kind].push_back(*e.value);
        }
    }
    for (auto& [key, values] : groups) {
        if (values.size() < min_group) continue;
        QuantileBinner b = fit_quantile_binner(std::move(values), bin_count);
        b.kind = key.first;
        b.code = key.second;
        reg.per_code.emplace(key, std::move(b));
    }
    for (auto& [kind, values] : kind_values) {
        QuantileBinner b = fit_quantile_binner(std::move(values), bin_count);
        b.kind = kind;
        reg.per_kind.emplace(kind, std::move(b));
    }
    return reg;
}

Vocabulary Vocabulary::with_specials() {
    Vocabulary v;
    for (int i = 0; i < kEventKindCount; ++i) v.add(kKindTokens[i]);
    for (const char* t : kIntervalTokens) v.add(t);
    v.bind_specials();
    return v;
}

void Vocabulary::bind_specials() {
    death_ = encode(kind_token(EventKind::Death));
    discharge_ = encode(kind_token(EventKind::Discharge));
    admission_ = encode(kind_token(EventKind::Admission));
    icu_admission_ = encode(kind_token(EventKind::IcuAdmission));
    icu_discharge_ = encode(kind_token(EventKind::IcuDischarge));
    for (int i = 0; i < 13; ++i) interval_[i] = encode(kIntervalTokens[i]);
}

TokenId Vocabulary::add(const std::string& text) {
    auto it = ids_.find(text);
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<TokenId>(texts_.size());
    texts_.push_back(text);
    ids_.emplace(text, id);
    return id;
}

TokenId Vocabulary::encode(const std::string& text) const {
    auto it = ids_.find(text);
    if (it == ids_.end())
        throw std::out_of_range("token text not in vocabulary: '" + text +
                                "' (vocabulary/build mismatch)");
    return it->second;
}

const std::string& Vocabulary::decode(TokenId id) const {
    if (id >= texts_.size()) throw std::out_of_range("token id out of range");
    return texts_[id];
}

bool Vocabulary::contains(const std::string& text) const { return ids_.count(text) != 0; }

int Vocabulary::interval_class(TokenId id) const {
    for (int i = 0; i < 13; ++i) {
        if (interval_[i] == id) return i;
    }
    return -1;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open vocabulary file for writing: " + path);
    for (std::size_t i = 0; i < texts_.size(); ++i) out << i << '\t' << texts_[i] << '\n';
    if (!out) throw std::runtime_error("failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected id<TAB>token");
        const auto id = std::stoull(line.substr(0, tab));
        if (id != v.texts_.size())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ids must be dense from 0");
        v.add(line.substr(tab + 1));
    }
    v.bind_specials();
    return v;
}

std::vector<std::string> hierarchical_prefixes(EventKind kind, const std::string& code) {
    std::vector<std::string> out;
    auto push_unique = [&out](std::string s) {
        if (!s.empty() && (out.empty() || out.back() != s)) out.push_back(std::move(s));
    };
    if (kind == EventKind::Medication) {
        push_unique(code.substr(0, 1));
        push_unique(code.substr(0, std::min<std::size_t>(4, code.size())));
        push_unique(code);
    } else if (kind == EventKind::Diagnosis || kind == EventKind::Procedure) {
        // ICD-10 family: category (3 chars), subcategory (4), full code on the
        // dot-stripped form
        std::string plain;
        for (char c : code) {
            if (c != '.') plain.push_back(c);
        }
        push_unique(plain.substr(0, std::min<std::size_t>(3, plain.size())));
        push_unique(plain.substr(0, std::min<std::size_t>(4, plain.size())));
        push_unique(plain);
    } else {
        push_unique(code);
    }
    return out;
}

std::vector<std::string> event_token_texts(const ClinicalEvent& event,
                                           const BinnerRegistry& binners) {
    std::vector<std::string> out;
    out.emplace_back(kind_token(event.kind));
    switch (event.kind) {
        case EventKind::Death:
        case EventKind::IcuDischarge:
            return out;  // terminal / bare markers carry no attributes
        case EventKind::Diagnosis:
        case EventKind::Medication:
        case EventKind::Procedure: {
            for (auto& p : hierarchical_prefixes(event.kind, event.code)) out.push_back(std::move(p));
            return out;
        }
        default:
            break;
    }
    if (!event.code.empty()) out.push_back(event.code);
    if (event.value) {
        if (const QuantileBinner* b = binners.lookup(event.kind, event.code))
            out.push_back(quantile_token(b->bin(*event.value)));
    }
    return out;
}

std::vector<TokenId> tokenize_event(const ClinicalEvent& event, const Vocabulary& vocab,
                                    const BinnerRegistry& binners) {
    const auto texts = event_token_texts(event, binners);
    std::vector<TokenId> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(vocab.encode(t));
    return out;
}

std::pair<std::string, std::string> encode_age_and_start_year(double age_years, int start_year) {
    if (age_years < 0.0) throw std::invalid_argument("age must be nonnegative");
    return {age_bucket_token(age_years), start_year_token(start_year)};
}

namespace {

struct OrderedEvent {
    const ClinicalEvent* event;
    std::size_t input_index;
};

bool chrono_less(const OrderedEvent& a, const OrderedEvent& b) {
    const double age_a = a.event->age_minutes.value_or(0.0);
    const double age_b = b.event->age_minutes.value_or(0.0);
    if (age_a != age_b) return age_a < age_b;
    if (a.event->kind != b.event->kind) return a.event->kind < b.event->kind;
    return a.event->code < b.event->code;
}

}  // namespace

PatientTimeline build_timeline(const std::vector<ClinicalEvent>& events, const Vocabulary& vocab,
                               const BinnerRegistry& binners, const IntervalLadder& ladder) {
    if (events.empty()) throw std::invalid_argument("build_timeline: empty event list");
    const std::string& pid = events.front().patient_id;
    double death_age = std::numeric_limits<double>::infinity();
    for (const auto& e : events) {
        if (e.patient_id != pid)
            throw std::invalid_argument("build_timeline: events span multiple patient ids");
        if (!e.age_minutes && e.kind != EventKind::Demographic)
            throw std::invalid_argument("build_timeline: timed event without age");
        if (e.kind == EventKind::Death) death_age = std::min(death_age, *e.age_minutes);
    }
    for (const auto& e : events) {
        if (e.age_minutes && *e.age_minutes > death_age)
            throw std::invalid_argument("build_timeline: event after death");
    }

    std::vector<OrderedEvent> statics, timed;
    std::optional<int> start_year;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.kind == EventKind::Demographic) {
            if (e.code == kStartYearCode) {
                if (e.value) start_year = static_cast<int>(std::llround(*e.value));
            } else {
                statics.push_back({&e, i});
            }
        } else {
            timed.push_back({&e, i});
        }
    }
    std::stable_sort(statics.begin(), statics.end(), chrono_less);
    std::stable_sort(timed.begin(), timed.end(), chrono_less);

    PatientTimeline tl;
    tl.patient_id = pid;
    auto emit = [&tl](TokenId id, double age) {
        tl.tokens.push_back(id);
        tl.token_ages.push_back(age);
    };

    // Static prefix: demographics, then age bucket and start-year bucket.
    for (const auto& s : statics) {
        for (TokenId id : tokenize_event(*s.event, vocab, binners)) emit(id, kNaN);
    }
    if (!timed.empty()) {
        const double first_age = *timed.front().event->age_minutes;
        emit(vocab.encode(age_bucket_token(first_age / kMinutesPerYear)), kNaN);
        if (start_year) emit(vocab.encode(start_year_token(*start_year)), kNaN);
    }
    tl.static_prefix_len = tl.tokens.size();

    // Leakage-safe placement: DRG rides with the latest discharge at or before
    // it, SOFA with the latest ICU admission at or before it.
    std::vector<std::vector<const ClinicalEvent*>> attached(timed.size());
    std::vector<bool> deferred(timed.size(), false);
    for (std::size_t i = 0; i < timed.size(); ++i) {
        const auto& e = *timed[i].event;
        const bool is_drg = e.kind == EventKind::DrgAssignment;
        const bool is_sofa = e.kind == EventKind::SofaScore;
        if (!is_drg && !is_sofa) continue;
        const EventKind anchor_kind = is_drg ? EventKind::Discharge : EventKind::IcuAdmission;
        std::size_t anchor = timed.size();
        for (std::size_t j = 0; j < i; ++j) {
            if (timed[j].event->kind == anchor_kind) anchor = j;
        }
        if (anchor == timed.size()) continue;  // no anchor yet: keep chronological slot
        attached[anchor].push_back(&e);
        deferred[i] = true;
    }

    std::optional<double> prev_age;
    for (std::size_t i = 0; i < timed.size(); ++i) {
        if (deferred[i]) continue;
        const auto& e = *timed[i].event;
        const double age = *e.age_minutes;
        if (prev_age) {
            for (int klass : intervals_for_gap(age - *prev_age, ladder))
                emit(vocab.interval_token(klass), kNaN);
        }
        prev_age = age;
        for (TokenId id : tokenize_event(e, vocab, binners)) emit(id, age);
        // Attached DRG/SOFA tokens carry the anchor age: the information
        // becomes available at the anchor event, not at its recording time.
        for (const ClinicalEvent* a : attached[i]) {
            for (TokenId id : tokenize_event(*a, vocab, binners)) emit(id, age);
        }
    }
    return tl;
}

Vocabulary build_vocabulary(const std::vector<std::vector<ClinicalEvent>>& cohort,
                            const BinnerRegistry& binners) {
    Vocabulary vocab = Vocabulary::with_specials();
    for (int q = 0; q < binners.bin_count; ++q) vocab.add(quantile_token(q));
    // Token texts in sorted order so vocabulary ids do not depend on cohort
    // traversal order.
    std::vector<std::string> texts;
    for (const auto& events : cohort) {
        std::optional<double> first_age;
        for (const auto& e : events) {
            if (e.kind == EventKind::Demographic && e.code == kStartYearCode) {
                if (e.value) texts.push_back(start_year_token(static_cast<int>(std::llround(*e.value))));
                continue;
            }
            if (e.age_minutes && (!first_age || *e.age_minutes < *first_age)) first_age = e.age_minutes;
            for (auto& t : event_token_texts(e, binners)) texts.push_back(std::move(t));
        }
        if (first_age) texts.push_back(age_bucket_token(*first_age / kMinutesPerYear));
    }
    std::sort(texts.begin(), texts.end());
    texts.erase(std::unique(texts.begin(), texts.end()), texts.end());
    for (const auto& t : texts) vocab.add(t);
    return vocab;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

std::vector<ClinicalEvent> read_events_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open events file: " + path);
    std::vector<ClinicalEvent> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;  // header
        const auto f = split_csv_line(line);
        const auto fail = [&](const std::string& what) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
        };
        if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
        ClinicalEvent e;
        e.patient_id = f[0];
        if (e.patient_id.empty()) fail("empty patient_id");
        try {
            if (!f[1].empty()) e.age_minutes = std::stod(f[1]);
            if (!f[4].empty()) e.value = std::stod(f[4]);
        } catch (const std::exception&) {
            fail("malformed numeric field");
        }
        const auto kind = parse_event_kind(f[2]);
        if (!kind) fail("unknown event kind '" + f[2] + "'");
        e.kind = *kind;
        e.code = f[3];
        if (!e.age_minutes && e.kind != EventKind::Demographic) fail("timed event missing age");
        if (e.age_minutes && *e.age_minutes < 0.0) fail("negative age");
        events.push_back(std::move(e));
    }
    return events;
}

void write_events_file(const std::string& path,
                       const std::vector<std::vector<ClinicalEvent>>& cohort) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open events file for writing: " + path);
    out << "patient_id,age_minutes,kind,code,value\n";
    out.precision(10);
    for (const auto& events : cohort) {
        for (const auto& e : events) {
            out << e.patient_id << ',';
            if (e.age_minutes) out << *e.age_minutes;
            out << ',' << to_string(e.kind) << ',' << e.code << ',';
            if (e.value) out << *e.value;
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("failed writing events file: " + path);
}

std::vector<std::vector<ClinicalEvent>> group_by_patient(std::vector<ClinicalEvent> events) {
    std::vector<std::vector<ClinicalEvent>> cohort;
    std::unordered_map<std::string, std::size_t> index;
    for (auto& e : events) {
        auto [it, inserted] = index.emplace(e.patient_id, cohort.size());
        if (inserted) cohort.emplace_back();
        cohort[it->second].push_back(std::move(e));
    }
    return cohort;
}

}  // namespace ehrscale
