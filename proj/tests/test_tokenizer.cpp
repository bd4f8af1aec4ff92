#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ehrscale/rng.hpp"
#include "ehrscale/tokenizer.hpp"

using namespace ehrscale;

namespace {

// Independent oracle for quantile assignment: rank within the sorted fitting
// data, floor(rank * Q / n).
int quantile_oracle(std::vector<double> values, int q, double v) {
    std::sort(values.begin(), values.end());
    std::size_t rank = 0;
    while (rank < values.size() && values[rank] <= v) ++rank;
    const auto bin = static_cast<int>(rank * static_cast<std::size_t>(q) / values.size());
    return std::min(bin, q - 1);
}

// Independent oracle for single-class gaps: scan the ladder for the largest
// class not exceeding the gap.
int floor_class_oracle(const IntervalLadder& ladder, double gap) {
    int best = -1;
    for (std::size_t i = 0; i < ladder.minutes.size(); ++i) {
        if (ladder.minutes[i] <= gap) best = static_cast<int>(i);
    }
    return best;
}

ClinicalEvent make_event(const std::string& pid, std::optional<double> age, EventKind kind,
                         std::string code, std::optional<double> value = std::nullopt) {
    return {pid, age, kind, std::move(code), value};
}

double represented_minutes(const std::vector<int>& classes, const IntervalLadder& ladder) {
    double total = 0;
    for (int k : classes) total += ladder.minutes[static_cast<std::size_t>(k)];
    return total;
}

}  // namespace

TEST_CASE("quantile binner boundary cases") {
    std::vector<double> v100;
    for (int i = 1; i <= 100; ++i) v100.push_back(i);
    const auto binner = fit_quantile_binner(v100, 10);
    CHECK(binner.bin(1) == 0);     // minimum lands in the lowest bin
    CHECK(binner.bin(100) == 9);   // maximum lands in the highest bin

    const auto collapsed = fit_quantile_binner(std::vector<double>(50, 7.0), 10);
    CHECK(collapsed.bin(7.0) == 0);  // collapsed boundaries, smallest-index rule

    std::vector<double> v1000;
    for (int i = 1; i <= 1000; ++i) v1000.push_back(i);
    const int expected = quantile_oracle(v1000, 10, 455);
    CHECK(expected == 4);
    CHECK(fit_quantile_binner(v1000, 10).bin(455) == expected);
}

TEST_CASE("quantile binner rejects bad input") {
    CHECK_THROWS_AS(fit_quantile_binner({}, 10), std::invalid_argument);
    CHECK_THROWS_AS(fit_quantile_binner({1.0, 2.0}, 1), std::invalid_argument);
}

TEST_CASE("quantile binning is monotone and agrees with the rank oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 20 + static_cast<int>(rng.uniform_int(400));
        const int q = 2 + static_cast<int>(rng.uniform_int(12));
        std::vector<double> values(n);
        for (auto& x : values) x = rng.normal() * 10.0;
        const auto binner = fit_quantile_binner(values, q);
        int prev = 0;
        for (double probe = -40; probe <= 40; probe += 0.5) {
            const int b = binner.bin(probe);
            CHECK(b >= prev);  // monotone nondecreasing
            CHECK(b >= 0);
            CHECK(b < q);
            prev = b;
        }
        // occupancy on the fitting data stays within one of n/q for distinct
        // values (duplicated boundaries can skew it further)
        std::sort(values.begin(), values.end());
        if (std::adjacent_find(values.begin(), values.end()) == values.end()) {
            std::vector<int> occupancy(q, 0);
            for (double x : values) ++occupancy[binner.bin(x)];
            for (int b = 0; b < q; ++b)
                CHECK(std::abs(occupancy[b] - static_cast<double>(n) / q) <= 1.0);
        }
    }
}

TEST_CASE("interval ladder endpoints and shape") {
    const auto ladder = IntervalLadder::standard();
    ladder.validate();
    CHECK(ladder.minutes.size() == 13);
    CHECK(ladder.minutes.front() == 5.0);
    CHECK(ladder.minutes.back() == 262800.0);
}

TEST_CASE("intervals_for_gap follows the floor and repeat rules") {
    const auto ladder = IntervalLadder::standard();
    CHECK(intervals_for_gap(3.0, ladder).empty());  // below 5 minutes

    // 1.4 years decomposes into exactly three 6-month tokens
    const auto long_gap = intervals_for_gap(736128.0, ladder);
    CHECK(long_gap.size() == 3);
    for (int k : long_gap) CHECK(k == 12);

    const auto exact5 = intervals_for_gap(5.0, ladder);
    REQUIRE(exact5.size() == 1);
    CHECK(exact5[0] == 0);

    const auto g20 = intervals_for_gap(20.0, ladder);
    REQUIRE(g20.size() == 1);
    CHECK(g20[0] == floor_class_oracle(ladder, 20.0));
    CHECK(ladder.minutes[static_cast<std::size_t>(g20[0])] == 15.0);

    CHECK_THROWS_AS(intervals_for_gap(-1.0, ladder), std::invalid_argument);
}

TEST_CASE("interval representation is monotone and approximates the gap") {
    const auto ladder = IntervalLadder::standard();
    Rng rng(77);
    double prev_gap = 0, prev_repr = 0;
    for (int i = 0; i < 4000; ++i) {
        const double gap = rng.uniform() * 4.0 * 525600.0;  // up to four years
        const double repr = represented_minutes(intervals_for_gap(gap, ladder), ladder);
        if (gap >= prev_gap) {
            CHECK(repr >= prev_repr - 1e-9);
        }
        if (gap > ladder.six_months()) {
            CHECK(std::abs(repr - gap) <= ladder.six_months() / 2.0 + 1e-6);
        } else if (gap >= 5.0) {
            // floor rule: within one ladder step below
            const int k = floor_class_oracle(ladder, gap);
            const double step = k + 1 < 13 ? ladder.minutes[k + 1] - ladder.minutes[k] : 0.0;
            CHECK(gap - repr <= step + 1e-9);
            CHECK(repr <= gap + 1e-9);
        }
        prev_gap = gap;
        prev_repr = repr;
    }
}

TEST_CASE("hierarchical decomposition matches ATC and ICD conventions") {
    const auto atc = hierarchical_prefixes(EventKind::Medication, "B01AC06");
    REQUIRE(atc.size() == 3);
    CHECK(atc[0] == "B");
    CHECK(atc[1] == "B01A");
    CHECK(atc[2] == "B01AC06");

    const auto icd = hierarchical_prefixes(EventKind::Diagnosis, "I21.4");
    REQUIRE(icd.size() == 2);  // dot-stripped: category then full
    CHECK(icd[0] == "I21");
    CHECK(icd[1] == "I214");

    const auto pcs = hierarchical_prefixes(EventKind::Procedure, "0DJ08ZZ");
    REQUIRE(pcs.size() == 3);
    CHECK(pcs[0] == "0DJ");
    CHECK(pcs[1] == "0DJ0");
    CHECK(pcs[2] == "0DJ08ZZ");

    const auto short_code = hierarchical_prefixes(EventKind::Medication, "B");
    REQUIRE(short_code.size() == 1);
    CHECK(short_code[0] == "B");
}

namespace {

struct Fixture {
    BinnerRegistry binners;
    Vocabulary vocab;
    IntervalLadder ladder = IntervalLadder::standard();

    Fixture() {
        std::vector<std::vector<ClinicalEvent>> cohort(1);
        for (int i = 1; i <= 100; ++i)
            cohort[0].push_back(make_event("P0", 1000.0 + i, EventKind::LabResult, "CREAT",
                                           static_cast<double>(i)));
        cohort[0].push_back(make_event("P0", 900.0, EventKind::Medication, "B01AC06"));
        cohort[0].push_back(make_event("P0", 910.0, EventKind::Death, ""));
        binners = fit_binners(cohort, 10, 50);
        vocab = Vocabulary::with_specials();
        for (int q = 0; q < 10; ++q) vocab.add(quantile_token(q));
        for (const char* s : {"CREAT", "B", "B01A", "B01AC06"}) vocab.add(s);
    }
};

}  // namespace

TEST_CASE("tokenize_event composes kind, code and quantile tokens") {
    Fixture fx;

    const auto death = tokenize_event(make_event("P0", 910.0, EventKind::Death, ""), fx.vocab, fx.binners);
    REQUIRE(death.size() == 1);
    CHECK(death[0] == fx.vocab.death());

    // lab oracle: binner lookup plus vocabulary encode
    const auto* binner = fx.binners.lookup(EventKind::LabResult, "CREAT");
    REQUIRE(binner != nullptr);
    const double value = 55.0;
    const std::vector<TokenId> expected_lab = {fx.vocab.encode("LAB"), fx.vocab.encode("CREAT"),
                                               fx.vocab.encode(quantile_token(binner->bin(value)))};
    const auto lab =
        tokenize_event(make_event("P0", 1000.0, EventKind::LabResult, "CREAT", value), fx.vocab, fx.binners);
    CHECK(lab == expected_lab);
    CHECK(lab.size() == 3);

    const auto med =
        tokenize_event(make_event("P0", 900.0, EventKind::Medication, "B01AC06"), fx.vocab, fx.binners);
    REQUIRE(med.size() == 4);
    CHECK(fx.vocab.decode(med[0]) == "MED");
    CHECK(fx.vocab.decode(med[1]) == "B");
    CHECK(fx.vocab.decode(med[2]) == "B01A");
    CHECK(fx.vocab.decode(med[3]) == "B01AC06");

    CHECK_THROWS_AS(
        tokenize_event(make_event("P0", 1.0, EventKind::LabResult, "UNKNOWN_CODE", 1.0), fx.vocab, fx.binners),
        std::out_of_range);
}

TEST_CASE("every fuzzed event tokenizes to between 1 and 7 tokens") {
    Rng rng(303);
    std::vector<std::vector<ClinicalEvent>> cohort(1);
    const char* codes[] = {"CREAT", "NA", "B01AC06", "I21.4", "J18.9", "0DJ08ZZ", "HR", "DRG_470"};
    const EventKind kinds[] = {EventKind::Diagnosis,   EventKind::Medication, EventKind::LabResult,
                               EventKind::Procedure,   EventKind::Admission,  EventKind::Discharge,
                               EventKind::IcuAdmission, EventKind::IcuDischarge, EventKind::Death,
                               EventKind::Demographic, EventKind::DrgAssignment, EventKind::SofaScore,
                               EventKind::VitalSign};
    for (int i = 0; i < 3000; ++i) {
        const auto kind = kinds[rng.uniform_int(13)];
        ClinicalEvent e;
        e.patient_id = "P0";
        e.kind = kind;
        if (kind != EventKind::Demographic) e.age_minutes = rng.uniform() * 1e6;
        e.code = codes[rng.uniform_int(8)];
        if (rng.bernoulli(0.5)) e.value = rng.normal() * 5.0;
        cohort[0].push_back(std::move(e));
    }
    const auto binners = fit_binners(cohort, 10, 20);
    for (const auto& e : cohort[0]) {
        const auto texts = event_token_texts(e, binners);
        CHECK(texts.size() >= 1);
        CHECK(texts.size() <= 7);
    }
}

TEST_CASE("encode_age_and_start_year buckets by fives") {
    CHECK(encode_age_and_start_year(62.0, 2013).first == "AGE_60_65");
    CHECK(encode_age_and_start_year(0.0, 2013).first == "AGE_0_5");
    CHECK(encode_age_and_start_year(62.0, 2013).second == "YEAR_2010_2015");
    CHECK_THROWS_AS(encode_age_and_start_year(-1.0, 2000), std::invalid_argument);
}

namespace {

std::vector<ClinicalEvent> demo_patient_events() {
    constexpr double day = 1440.0;
    const double t0 = 40.0 * 525600.0;
    std::vector<ClinicalEvent> events;
    events.push_back(make_event("P7", std::nullopt, EventKind::Demographic, "SEX_F"));
    events.push_back(make_event("P7", std::nullopt, EventKind::Demographic,
                                std::string(kStartYearCode), 2013.0));
    events.push_back(make_event("P7", t0, EventKind::Admission, "ADM_EMERGENCY"));
    events.push_back(make_event("P7", t0 + 3.0, EventKind::VitalSign, "HR", 88.0));
    events.push_back(make_event("P7", t0 + day, EventKind::Discharge, ""));
    events.push_back(make_event("P7", t0 + day, EventKind::DrgAssignment, "DRG_470"));
    return events;
}

Vocabulary vocab_for(const std::vector<ClinicalEvent>& events, const BinnerRegistry& binners) {
    std::vector<std::vector<ClinicalEvent>> cohort = {events};
    return build_vocabulary(cohort, binners);
}

}  // namespace

TEST_CASE("build_timeline places statics first and respects leakage rules") {
    const auto events = demo_patient_events();
    BinnerRegistry binners;
    const auto vocab = vocab_for(events, binners);
    const auto ladder = IntervalLadder::standard();
    const auto tl = build_timeline(events, vocab, binners, ladder);

    // static prefix: DEMO, SEX_F, age bucket, year bucket
    REQUIRE(tl.static_prefix_len == 4);
    CHECK(vocab.decode(tl.tokens[0]) == "DEMO");
    CHECK(vocab.decode(tl.tokens[1]) == "SEX_F");
    CHECK(vocab.decode(tl.tokens[2]) == "AGE_40_45");
    CHECK(vocab.decode(tl.tokens[3]) == "YEAR_2010_2015");

    // demographics strictly precede admission tokens
    std::size_t admission_pos = 0;
    for (std::size_t i = 0; i < tl.tokens.size(); ++i) {
        if (tl.tokens[i] == vocab.admission()) admission_pos = i;
    }
    CHECK(admission_pos >= tl.static_prefix_len);

    // two events 3 minutes apart get no interval token between them
    std::size_t vital_pos = 0;
    for (std::size_t i = 0; i < tl.tokens.size(); ++i) {
        if (vocab.decode(tl.tokens[i]) == "HR") vital_pos = i;
    }
    CHECK(vocab.decode(tl.tokens[vital_pos - 1]) == "VITAL");
    CHECK(vocab.interval_class(tl.tokens[vital_pos - 2]) == -1);

    // DRG token appears immediately after the discharge token
    std::size_t discharge_pos = 0;
    for (std::size_t i = 0; i < tl.tokens.size(); ++i) {
        if (tl.tokens[i] == vocab.discharge()) discharge_pos = i;
    }
    CHECK(vocab.decode(tl.tokens[discharge_pos + 1]) == "DRG");
    CHECK(vocab.decode(tl.tokens[discharge_pos + 2]) == "DRG_470");

    // gap from the vital (t0+3) to discharge (t0+1d) is 1437 min: floor class 12h
    CHECK(vocab.interval_class(tl.tokens[discharge_pos - 1]) == 6);
}

TEST_CASE("build_timeline is invariant to input order") {
    auto events = demo_patient_events();
    BinnerRegistry binners;
    const auto vocab = vocab_for(events, binners);
    const auto ladder = IntervalLadder::standard();
    const auto reference = build_timeline(events, vocab, binners, ladder);
    Rng rng(555);
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(events);
        const auto tl = build_timeline(events, vocab, binners, ladder);
        CHECK(tl.tokens == reference.tokens);
        CHECK(tl.static_prefix_len == reference.static_prefix_len);
    }
}

TEST_CASE("build_timeline validates its inputs") {
    BinnerRegistry binners;
    const auto ladder = IntervalLadder::standard();
    const auto vocab = Vocabulary::with_specials();
    CHECK_THROWS_AS(build_timeline({}, vocab, binners, ladder), std::invalid_argument);

    std::vector<ClinicalEvent> mixed = {make_event("A", 1.0, EventKind::Admission, ""),
                                        make_event("B", 2.0, EventKind::Discharge, "")};
    CHECK_THROWS_AS(build_timeline(mixed, vocab, binners, ladder), std::invalid_argument);

    std::vector<ClinicalEvent> after_death = {make_event("A", 10.0, EventKind::Death, ""),
                                              make_event("A", 20.0, EventKind::Admission, "")};
    CHECK_THROWS_AS(build_timeline(after_death, vocab, binners, ladder), std::invalid_argument);
}

TEST_CASE("nondecreasing token ages outside statics and intervals") {
    const auto events = demo_patient_events();
    BinnerRegistry binners;
    const auto vocab = vocab_for(events, binners);
    const auto tl = build_timeline(events, vocab, binners, IntervalLadder::standard());
    double prev = 0;
    for (std::size_t i = tl.static_prefix_len; i < tl.tokens.size(); ++i) {
        if (std::isnan(tl.token_ages[i])) continue;
        CHECK(tl.token_ages[i] >= prev);
        prev = tl.token_ages[i];
    }
}

TEST_CASE("vocabulary round-trips bit-exactly") {
    Fixture fx;
    const auto path = std::filesystem::temp_directory_path() / "ehrscale_vocab_test.txt";
    fx.vocab.save(path.string());
    const auto loaded = Vocabulary::load(path.string());
    REQUIRE(loaded.size() == fx.vocab.size());
    for (TokenId id = 0; id < fx.vocab.size(); ++id) {
        CHECK(loaded.decode(id) == fx.vocab.decode(id));
        CHECK(loaded.encode(fx.vocab.decode(id)) == id);
    }
    CHECK(loaded.death() == fx.vocab.death());
    CHECK(loaded.interval_token(12) == fx.vocab.interval_token(12));
    // byte-for-byte identical on re-save
    const auto path2 = std::filesystem::temp_directory_path() / "ehrscale_vocab_test2.txt";
    loaded.save(path2.string());
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("events file round-trip and malformed line diagnostics") {
    const auto events = demo_patient_events();
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "ehrscale_events_test.csv").string();
    write_events_file(path, {events});
    const auto loaded = read_events_file(path);
    REQUIRE(loaded.size() == events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        CHECK(loaded[i].patient_id == events[i].patient_id);
        CHECK(loaded[i].kind == events[i].kind);
        CHECK(loaded[i].code == events[i].code);
        CHECK(loaded[i].age_minutes.has_value() == events[i].age_minutes.has_value());
    }
    std::filesystem::remove(path);

    const auto bad_path = (dir / "ehrscale_events_bad.csv").string();
    {
        std::ofstream out(bad_path);
        out << "patient_id,age_minutes,kind,code,value\n";
        out << "P1,100,Admission,CODE,\n";
        out << "P1,not_a_number,LabResult,NA,1\n";
    }
    try {
        read_events_file(bad_path);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);  // line number reported
    }
    std::filesystem::remove(bad_path);
}
