#include "ehrscale/flops.hpp"

#include <stdexcept>

namespace ehrscale {

namespace {
using u128 = unsigned __int128;
}

FlopsBreakdown forward_flops(const ModelConfig& config, int seq_len, bool include_logits) {
    config.validate();
    if (seq_len < 1) throw std::invalid_argument("forward_flops: seq_len must be >= 1");
    const std::uint64_t s = static_cast<std::uint64_t>(seq_len);
    const std::uint64_t d = config.d_model, h = config.n_heads, dh = config.d_head();
    const std::uint64_t kv = config.n_kv_heads, ff = config.d_ff, v = config.vocab_size;
    const std::uint64_t l = static_cast<std::uint64_t>(config.n_layers);

    const std::uint64_t q_proj = 2 * s * d * (h * dh);
    const std::uint64_t kv_proj = 2 * s * d * (2 * kv * dh);
    const std::uint64_t scores = 2 * s * s * h * dh;
    const std::uint64_t softmax = 3 * h * s * s;
    const std::uint64_t score_value = 2 * s * s * h * dh;
    const std::uint64_t out_proj = 2 * s * d * (h * dh);
    const std::uint64_t dense = 2 * s * 3 * d * ff;

    FlopsBreakdown b;
    b.seq_len = seq_len;
    b.attention_flops = l * (q_proj + kv_proj + scores + softmax + score_value + out_proj);
    b.dense_flops = l * dense;
    b.embedding_flops = 0;
    b.logit_flops = include_logits ? 2 * s * d * v : 0;
    b.total_forward = b.attention_flops + b.dense_flops + b.embedding_flops + b.logit_flops;
    return b;
}

std::uint64_t training_flops(const ModelConfig& config, std::uint64_t n_tokens, int seq_len,
                             bool include_logits) {
    if (n_tokens < 1) throw std::invalid_argument("training_flops: n_tokens must be >= 1");
    const FlopsBreakdown b = forward_flops(config, seq_len, include_logits);
    // ceil(3 * total_forward * n / s): exact per-token rational, rounded up
    const u128 numer = u128(3) * b.total_forward * n_tokens;
    const u128 s = static_cast<std::uint64_t>(seq_len);
    return static_cast<std::uint64_t>((numer + s - 1) / s);
}

std::uint64_t palm_flops_per_token(const ModelConfig& config, int seq_len) {
    config.validate();
    if (seq_len < 0) throw std::invalid_argument("palm_flops_per_token: negative seq_len");
    const std::uint64_t n = count_params(config);
    return 6 * n + 12 * static_cast<std::uint64_t>(config.n_layers) * config.n_heads *
                       config.d_head() * static_cast<std::uint64_t>(seq_len);
}

std::uint64_t tokens_for_budget(const ModelConfig& config, std::uint64_t budget_flops, int seq_len,
                                bool include_logits) {
    const FlopsBreakdown b = forward_flops(config, seq_len, include_logits);
    // floor(budget * s / (3 * total_forward))
    const u128 numer = u128(budget_flops) * static_cast<std::uint64_t>(seq_len);
    const u128 denom = u128(3) * b.total_forward;
    const auto tokens = static_cast<std::uint64_t>(numer / denom);
    if (tokens == 0)
        throw std::invalid_argument("tokens_for_budget: budget below the cost of one token");
    return tokens;
}

}  // namespace ehrscale
