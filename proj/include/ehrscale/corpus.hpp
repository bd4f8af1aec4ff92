#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehrscale/rng.hpp"
#include "ehrscale/tokenizer.hpp"

namespace ehrscale {

// Flat token sequence for many patients. patient_offsets[i] is where patient
// i's timeline starts; the last segment runs to the end of tokens.
struct TokenStream {
    std::vector<TokenId> tokens;
    std::vector<std::uint64_t> patient_offsets;
    std::vector<std::string> patient_ids;  // sidecar; not part of the binary format
    std::uint32_t vocab_size = 0;

    std::size_t patient_count() const { return patient_offsets.size(); }
    std::pair<std::uint64_t, std::uint64_t> patient_range(std::size_t i) const;
    void validate() const;
};

TokenStream stream_from_timelines(const std::vector<PatientTimeline>& timelines,
                                  std::uint32_t vocab_size);

// Binary format: "EHRT", version byte, vocab size (u32 LE), patient count
// (u64 LE), offsets (u64 LE each), tokens (u32 LE each).
void save_token_stream(const std::string& path, const TokenStream& stream);
TokenStream load_token_stream(const std::string& path);

struct PatientSplit {
    std::vector<std::string> train, val, test;
};

// Disjoint, exhaustive partition; val/test sizes floor to their ratios and
// the remainder goes to train. Deterministic per seed.
PatientSplit split_patients(std::vector<std::string> patient_ids,
                            double train_ratio, double val_ratio, double test_ratio,
                            std::uint64_t seed);

struct TrainingExample {
    std::string patient_id;
    std::vector<TokenId> tokens;
};

// Consecutive non-overlapping chunks of at most max_len tokens; a final chunk
// shorter than min_len is dropped. Never crosses the patient boundary.
std::vector<TrainingExample> segment_timeline(const PatientTimeline& timeline,
                                              std::size_t max_len = 2048, std::size_t min_len = 32);

std::vector<TrainingExample> segment_stream(const TokenStream& stream, std::size_t max_len = 2048,
                                            std::size_t min_len = 32);

struct SummaryStats {
    double mean = 0, stddev = 0, min = 0, max = 0, q1 = 0, q2 = 0, q3 = 0;
};

SummaryStats summarize(std::vector<double> values);

struct CorpusStats {
    std::size_t patient_count = 0;
    SummaryStats timeline_len;
    SummaryStats example_len;
    std::uint64_t total_timeline_tokens = 0;
    std::uint64_t total_examples = 0;
    std::uint64_t total_trainable_tokens = 0;
};

CorpusStats compute_stats(const std::vector<std::size_t>& timeline_lengths,
                          const std::vector<std::size_t>& example_lengths);

// CSV with one row per statistic and one column per split.
void write_stats_csv(const std::string& path, const CorpusStats& train, const CorpusStats& val,
                     const CorpusStats& test);

// Epoch-based batching: example order reshuffled each epoch, examples
// accumulated until one more would exceed the token budget.
class BatchIterator {
public:
    BatchIterator(const std::vector<TrainingExample>& examples, std::size_t tokens_per_batch,
                  std::uint64_t seed);

    // Indices into the example vector for the next batch; never empty.
    std::vector<std::size_t> next();
    std::uint64_t epochs_completed() const { return epochs_; }

private:
    void start_epoch();

    const std::vector<TrainingExample>* examples_;
    std::size_t tokens_per_batch_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t epochs_ = 0;
};

}  // namespace ehrscale
