#pragma once

#include <cstdint>

#include "ehrscale/model.hpp"

namespace ehrscale {

// Exact integer FLOPs accounting for one forward pass over seq_len tokens.
// Embedding lookups count as zero; output logits are counted by default and
// can be excluded for comparison with conventions that drop them.
struct FlopsBreakdown {
    std::uint64_t attention_flops = 0;  // all layers
    std::uint64_t dense_flops = 0;      // all layers
    std::uint64_t embedding_flops = 0;  // always 0, kept explicit
    std::uint64_t logit_flops = 0;
    std::uint64_t total_forward = 0;
    int seq_len = 0;

    double forward_per_token() const { return static_cast<double>(total_forward) / seq_len; }
};

FlopsBreakdown forward_flops(const ModelConfig& config, int seq_len, bool include_logits = true);

// Backward costs about twice the forward pass, so training costs 3x forward
// per token. Exact rational accounting, rounded up to a whole FLOP.
std::uint64_t training_flops(const ModelConfig& config, std::uint64_t n_tokens, int seq_len,
                             bool include_logits = true);

// 6*N + 12*L*H*dh*s training FLOPs per token.
std::uint64_t palm_flops_per_token(const ModelConfig& config, int seq_len);

// Largest D with training_flops(config, D) <= budget. Throws when the budget
// cannot pay for a single token.
std::uint64_t tokens_for_budget(const ModelConfig& config, std::uint64_t budget_flops, int seq_len,
                                bool include_logits = true);

}  // namespace ehrscale
