#include "ehrscale/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ehrscale {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

std::pair<std::uint64_t, std::uint64_t> TokenStream::patient_range(std::size_t i) const {
    const std::uint64_t begin = patient_offsets[i];
    const std::uint64_t end = i + 1 < patient_offsets.size() ? patient_offsets[i + 1] : tokens.size();
    return {begin, end};
}

void TokenStream::validate() const {
    if (patient_offsets.empty()) throw std::invalid_argument("token stream has no patients");
    if (patient_offsets.front() != 0) throw std::invalid_argument("first patient offset must be 0");
    for (std::size_t i = 1; i < patient_offsets.size(); ++i) {
        if (patient_offsets[i] <= patient_offsets[i - 1])
            throw std::invalid_argument("patient offsets must be strictly increasing");
    }
    if (patient_offsets.back() >= tokens.size())
        throw std::invalid_argument("last patient segment is empty");
    if (!patient_ids.empty() && patient_ids.size() != patient_offsets.size())
        throw std::invalid_argument("patient id count does not match offsets");
}

TokenStream stream_from_timelines(const std::vector<PatientTimeline>& timelines,
                                  std::uint32_t vocab_size) {
    TokenStream s;
    s.vocab_size = vocab_size;
    for (const auto& tl : timelines) {
        if (tl.tokens.empty()) continue;
        s.patient_offsets.push_back(s.tokens.size());
        s.patient_ids.push_back(tl.patient_id);
        s.tokens.insert(s.tokens.end(), tl.tokens.begin(), tl.tokens.end());
    }
    s.validate();
    return s;
}

void save_token_stream(const std::string& path, const TokenStream& stream) {
    stream.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open token stream for writing: " + path);
    out.write("EHRT", 4);
    const char version = 1;
    out.write(&version, 1);
    put_u32(out, stream.vocab_size);
    put_u64(out, stream.patient_offsets.size());
    for (auto off : stream.patient_offsets) put_u64(out, off);
    for (auto tok : stream.tokens) put_u32(out, tok);
    if (!out) throw std::runtime_error("failed writing token stream: " + path);
}

TokenStream load_token_stream(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open token stream: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EHRT", 4) != 0)
        throw std::runtime_error(path + ": bad magic, not a token stream");
    char version = 0;
    in.read(&version, 1);
    if (version != 1) throw std::runtime_error(path + ": unsupported format version");
    TokenStream s;
    s.vocab_size = get_u32(in);
    const std::uint64_t n_patients = get_u64(in);
    s.patient_offsets.resize(n_patients);
    for (auto& off : s.patient_offsets) off = get_u64(in);
    if (!in) throw std::runtime_error(path + ": truncated header");
    for (;;) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() == 0) break;
        if (in.gcount() != 4) throw std::runtime_error(path + ": truncated token data");
        s.tokens.push_back(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                           (static_cast<std::uint32_t>(b[2]) << 16) |
                           (static_cast<std::uint32_t>(b[3]) << 24));
    }
    s.validate();
    return s;
}

PatientSplit split_patients(std::vector<std::string> patient_ids, double train_ratio,
                            double val_ratio, double test_ratio, std::uint64_t seed) {
    if (patient_ids.empty()) throw std::invalid_argument("split_patients: empty id list");
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0)
        throw std::invalid_argument("split ratios must be positive");
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    Rng rng(derive_seed(seed, 0x5911u));
    rng.shuffle(patient_ids);
    const std::size_t n = patient_ids.size();
    const auto n_val = static_cast<std::size_t>(std::floor(n * val_ratio));
    const auto n_test = static_cast<std::size_t>(std::floor(n * test_ratio));
    const std::size_t n_train = n - n_val - n_test;  // remainder rounds toward train
    PatientSplit split;
    split.train.assign(patient_ids.begin(), patient_ids.begin() + n_train);
    split.val.assign(patient_ids.begin() + n_train, patient_ids.begin() + n_train + n_val);
    split.test.assign(patient_ids.begin() + n_train + n_val, patient_ids.end());
    return split;
}

std::vector<TrainingExample> segment_timeline(const PatientTimeline& timeline, std::size_t max_len,
                                              std::size_t min_len) {
    if (min_len < 1 || max_len < min_len)
        throw std::invalid_argument("segment_timeline: require max_len >= min_len >= 1");
    std::vector<TrainingExample> out;
    const auto& toks = timeline.tokens;
    for (std::size_t pos = 0; pos < toks.size(); pos += max_len) {
        const std::size_t len = std::min(max_len, toks.size() - pos);
        if (len < min_len) break;  // drop short final chunk
        TrainingExample ex;
        ex.patient_id = timeline.patient_id;
        ex.tokens.assign(toks.begin() + pos, toks.begin() + pos + len);
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<TrainingExample> segment_stream(const TokenStream& stream, std::size_t max_len,
                                            std::size_t min_len) {
    std::vector<TrainingExample> out;
    for (std::size_t p = 0; p < stream.patient_count(); ++p) {
        const auto [begin, end] = stream.patient_range(p);
        PatientTimeline tl;
        tl.patient_id = stream.patient_ids.empty() ? "p" + std::to_string(p) : stream.patient_ids[p];
        tl.tokens.assign(stream.tokens.begin() + begin, stream.tokens.begin() + end);
        auto chunks = segment_timeline(tl, max_len, min_len);
        for (auto& c : chunks) out.push_back(std::move(c));
    }
    return out;
}

SummaryStats summarize(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("summarize: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    SummaryStats s;
    s.min = values.front();
    s.max = values.back();
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(n);
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(n));
    // quartiles by linear interpolation between closest ranks
    auto quantile = [&values, n](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= n) return values[n - 1];
        return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
    };
    s.q1 = quantile(0.25);
    s.q2 = quantile(0.50);
    s.q3 = quantile(0.75);
    return s;
}

CorpusStats compute_stats(const std::vector<std::size_t>& timeline_lengths,
                          const std::vector<std::size_t>& example_lengths) {
    if (timeline_lengths.empty() || example_lengths.empty())
        throw std::invalid_argument("compute_stats: empty inputs");
    CorpusStats stats;
    stats.patient_count = timeline_lengths.size();
    std::vector<double> tl(timeline_lengths.begin(), timeline_lengths.end());
    std::vector<double> ex(example_lengths.begin(), example_lengths.end());
    stats.timeline_len = summarize(std::move(tl));
    stats.example_len = summarize(std::move(ex));
    for (auto v : timeline_lengths) stats.total_timeline_tokens += v;
    stats.total_examples = example_lengths.size();
    for (auto v : example_lengths) stats.total_trainable_tokens += v;
    return stats;
}

void write_stats_csv(const std::string& path, const CorpusStats& train, const CorpusStats& val,
                     const CorpusStats& test) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open stats csv for writing: " + path);
    out.precision(10);
    out << "field,train,validation,test\n";
    auto emit = [&out](const std::string& name, double a, double b, double c) {
        out << name << ',' << a << ',' << b << ',' << c << '\n';
    };
    emit("patients", static_cast<double>(train.patient_count), static_cast<double>(val.patient_count),
         static_cast<double>(test.patient_count));
    auto emit_summary = [&emit](const std::string& prefix, const SummaryStats& a,
                                const SummaryStats& b, const SummaryStats& c) {
        emit(prefix + "_mean", a.mean, b.mean, c.mean);
        emit(prefix + "_std", a.stddev, b.stddev, c.stddev);
        emit(prefix + "_min", a.min, b.min, c.min);
        emit(prefix + "_max", a.max, b.max, c.max);
        emit(prefix + "_q1", a.q1, b.q1, c.q1);
        emit(prefix + "_q2", a.q2, b.q2, c.q2);
        emit(prefix + "_q3", a.q3, b.q3, c.q3);
    };
    emit_summary("timeline_length", train.timeline_len, val.timeline_len, test.timeline_len);
    emit("total_timeline_tokens", static_cast<double>(train.total_timeline_tokens),
         static_cast<double>(val.total_timeline_tokens), static_cast<double>(test.total_timeline_tokens));
    emit_summary("example_length", train.example_len, val.example_len, test.example_len);
    emit("total_training_examples", static_cast<double>(train.total_examples),
         static_cast<double>(val.total_examples), static_cast<double>(test.total_examples));
    emit("total_trainable_tokens", static_cast<double>(train.total_trainable_tokens),
         static_cast<double>(val.total_trainable_tokens), static_cast<double>(test.total_trainable_tokens));
    if (!out) throw std::runtime_error("failed writing stats csv: " + path);
}

BatchIterator::BatchIterator(const std::vector<TrainingExample>& examples,
                             std::size_t tokens_per_batch, std::uint64_t seed)
    : examples_(&examples), tokens_per_batch_(tokens_per_batch), seed_(seed) {
    if (examples.empty()) throw std::invalid_argument("batch iterator: no examples");
    for (const auto& ex : examples) {
        if (ex.tokens.size() > tokens_per_batch)
            throw std::invalid_argument("example longer than the per-batch token budget");
    }
    start_epoch();
}

void BatchIterator::start_epoch() {
    order_.resize(examples_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, epochs_));
    rng.shuffle(order_);
    cursor_ = 0;
}

std::vector<std::size_t> BatchIterator::next() {
    if (cursor_ >= order_.size()) {
        ++epochs_;
        start_epoch();
    }
    std::vector<std::size_t> batch;
    std::size_t used = 0;
    while (cursor_ < order_.size()) {
        const std::size_t idx = order_[cursor_];
        const std::size_t len = (*examples_)[idx].tokens.size();
        if (!batch.empty() && used + len > tokens_per_batch_) break;
        batch.push_back(idx);
        used += len;
        ++cursor_;
    }
    return batch;
}

}  // namespace ehrscale
