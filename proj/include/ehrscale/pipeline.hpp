#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehrscale/corpus.hpp"
#include "ehrscale/tokenizer.hpp"

namespace ehrscale {

// End-to-end corpus construction from grouped events: binner fitting on the
// training split, a shared vocabulary, per-split timelines/examples/stats.
struct CorpusBuildOptions {
    int quantile_bins = 10;
    std::size_t min_group = 50;     // observations per (kind, code) binner
    std::size_t max_len = 2048;
    std::size_t min_len = 32;
    double train_ratio = 0.8, val_ratio = 0.1, test_ratio = 0.1;
    std::uint64_t split_seed = 0;
};

struct BuiltCorpus {
    Vocabulary vocab;
    BinnerRegistry binners;
    IntervalLadder ladder;
    PatientSplit split;
    std::vector<PatientTimeline> train_timelines, val_timelines, test_timelines;
    std::vector<TrainingExample> train_examples, val_examples, test_examples;
    CorpusStats train_stats, val_stats, test_stats;
    // raw events per test patient, aligned with test_timelines (labels come
    // from true future events)
    std::vector<std::vector<ClinicalEvent>> test_events;
};

BuiltCorpus build_corpus(const std::vector<std::vector<ClinicalEvent>>& cohort,
                         const CorpusBuildOptions& options);

// Corpus directory layout shared by the CLI commands.
void save_corpus_dir(const std::string& dir, const BuiltCorpus& corpus);

struct LoadedCorpus {
    Vocabulary vocab;
    IntervalLadder ladder;
    TokenStream train_stream, val_stream, test_stream;
    std::vector<std::vector<ClinicalEvent>> test_events;

    std::vector<TrainingExample> examples(const TokenStream& stream, std::size_t max_len,
                                          std::size_t min_len) const;
    std::vector<PatientTimeline> timelines(const TokenStream& stream) const;
};

LoadedCorpus load_corpus_dir(const std::string& dir);

}  // namespace ehrscale
