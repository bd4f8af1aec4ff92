#include "ehrscale/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace fs = std::filesystem;

namespace ehrscale {

BuiltCorpus build_corpus(const std::vector<std::vector<ClinicalEvent>>& cohort,
                         const CorpusBuildOptions& options) {
    if (cohort.empty()) throw std::invalid_argument("build_corpus: empty cohort");
    BuiltCorpus out;
    out.ladder = IntervalLadder::standard();

    std::vector<std::string> ids;
    ids.reserve(cohort.size());
    for (const auto& events : cohort) {
        if (events.empty()) throw std::invalid_argument("build_corpus: patient with no events");
        ids.push_back(events.front().patient_id);
    }
    out.split = split_patients(ids, options.train_ratio, options.val_ratio, options.test_ratio,
                               options.split_seed);

    std::unordered_map<std::string, const std::vector<ClinicalEvent>*> by_id;
    for (const auto& events : cohort) by_id[events.front().patient_id] = &events;

    // binners fit on training patients only; the token universe covers all
    std::vector<std::vector<ClinicalEvent>> train_events;
    for (const auto& id : out.split.train) train_events.push_back(*by_id.at(id));
    out.binners = fit_binners(train_events, options.quantile_bins, options.min_group);
    out.vocab = build_vocabulary(cohort, out.binners);

    auto build_split = [&](const std::vector<std::string>& split_ids,
                           std::vector<PatientTimeline>& timelines,
                           std::vector<TrainingExample>& examples, CorpusStats& stats) {
        timelines.resize(split_ids.size());
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(split_ids.size()); ++i) {
            timelines[i] = build_timeline(*by_id.at(split_ids[i]), out.vocab, out.binners, out.ladder);
        }
        std::vector<std::size_t> tl_lens, ex_lens;
        for (const auto& tl : timelines) {
            tl_lens.push_back(tl.tokens.size());
            for (auto& ex : segment_timeline(tl, options.max_len, options.min_len)) {
                ex_lens.push_back(ex.tokens.size());
                examples.push_back(std::move(ex));
            }
        }
        stats = compute_stats(tl_lens, ex_lens);
    };
    build_split(out.split.train, out.train_timelines, out.train_examples, out.train_stats);
    build_split(out.split.val, out.val_timelines, out.val_examples, out.val_stats);
    build_split(out.split.test, out.test_timelines, out.test_examples, out.test_stats);

    for (const auto& id : out.split.test) out.test_events.push_back(*by_id.at(id));
    return out;
}

namespace {

void save_patient_ids(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write patient ids: " + path);
    out << "index,patient_id\n";
    for (std::size_t i = 0; i < ids.size(); ++i) out << i << ',' << ids[i] << '\n';
}

std::vector<std::string> load_patient_ids(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read patient ids: " + path);
    std::vector<std::string> ids;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        ids.push_back(line.substr(comma + 1));
    }
    return ids;
}

}  // namespace

void save_corpus_dir(const std::string& dir, const BuiltCorpus& corpus) {
    fs::create_directories(dir);
    const fs::path base(dir);
    corpus.vocab.save((base / "vocab.txt").string());

    auto save_split = [&](const char* name, const std::vector<PatientTimeline>& timelines) {
        const auto stream =
            stream_from_timelines(timelines, static_cast<std::uint32_t>(corpus.vocab.size()));
        save_token_stream((base / (std::string(name) + ".bin")).string(), stream);
        std::vector<std::string> ids;
        for (const auto& tl : timelines) ids.push_back(tl.patient_id);
        save_patient_ids((base / ("patients_" + std::string(name) + ".csv")).string(), ids);
    };
    save_split("train", corpus.train_timelines);
    save_split("val", corpus.val_timelines);
    save_split("test", corpus.test_timelines);

    write_stats_csv((base / "stats.csv").string(), corpus.train_stats, corpus.val_stats,
                    corpus.test_stats);
    write_events_file((base / "events_test.csv").string(), corpus.test_events);
}

std::vector<TrainingExample> LoadedCorpus::examples(const TokenStream& stream, std::size_t max_len,
                                                    std::size_t min_len) const {
    return segment_stream(stream, max_len, min_len);
}

std::vector<PatientTimeline> LoadedCorpus::timelines(const TokenStream& stream) const {
    std::vector<PatientTimeline> out;
    for (std::size_t p = 0; p < stream.patient_count(); ++p) {
        const auto [begin, end] = stream.patient_range(p);
        PatientTimeline tl;
        tl.patient_id = stream.patient_ids.empty() ? "p" + std::to_string(p) : stream.patient_ids[p];
        tl.tokens.assign(stream.tokens.begin() + begin, stream.tokens.begin() + end);
        tl.token_ages.assign(tl.tokens.size(), 0.0);
        out.push_back(std::move(tl));
    }
    return out;
}

LoadedCorpus load_corpus_dir(const std::string& dir) {
    const fs::path base(dir);
    LoadedCorpus corpus;
    corpus.vocab = Vocabulary::load((base / "vocab.txt").string());
    corpus.ladder = IntervalLadder::standard();
    corpus.train_stream = load_token_stream((base / "train.bin").string());
    corpus.val_stream = load_token_stream((base / "val.bin").string());
    corpus.test_stream = load_token_stream((base / "test.bin").string());
    corpus.train_stream.patient_ids = load_patient_ids((base / "patients_train.csv").string());
    corpus.val_stream.patient_ids = load_patient_ids((base / "patients_val.csv").string());
    corpus.test_stream.patient_ids = load_patient_ids((base / "patients_test.csv").string());
    const auto events_path = base / "events_test.csv";
    if (fs::exists(events_path))
        corpus.test_events = group_by_patient(read_events_file(events_path.string()));
    return corpus;
}

}  // namespace ehrscale
