#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ehrscale/corpus.hpp"
#include "ehrscale/rng.hpp"
#include "ehrscale/tokenizer.hpp"

namespace ehrscale {

// Decoder-only transformer: pre-norm (RMS) blocks with rotary-embedded
// grouped-query attention and a SwiGLU feed-forward, untied output head.
struct ModelConfig {
    std::uint32_t vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int n_kv_heads = 1;
    int d_ff = 176;
    int context_len = 2048;
    double rope_base = 10000.0;

    int d_head() const { return d_model / n_heads; }
    int q_dim() const { return n_heads * d_head(); }
    int kv_dim() const { return n_kv_heads * d_head(); }
    void validate() const;
    std::string id() const;  // e.g. "d64L2h2kv1"
};

std::uint64_t count_params(const ModelConfig& config);

// Stand-in sweep grid (the underlying study does not publish its exact model
// table): d_model in {64..384} x n_layers in {2,4,6,8}, d_head 32, SwiGLU
// width 8/3 * d_model rounded to a multiple of 16, kv heads = max(1, h/4).
std::vector<ModelConfig> default_sweep_grid(std::uint32_t vocab_size, int context_len = 2048);

// Scaled-down grid for desk experiments: d_model in {16..64}, 2 layers,
// head dimension 8.
std::vector<ModelConfig> desk_sweep_grid(std::uint32_t vocab_size, int context_len = 256);

template <typename T>
struct LayerParams {
    std::vector<T> attn_norm;        // [d]
    std::vector<T> wq, wk, wv, wo;   // [d,q_dim] [d,kv_dim] [d,kv_dim] [q_dim,d]
    std::vector<T> ffn_norm;         // [d]
    std::vector<T> w_gate, w_up;     // [d,ff]
    std::vector<T> w_down;           // [ff,d]
};

template <typename T>
struct ParameterSet {
    ModelConfig config;
    std::vector<T> tok_emb;     // [V,d]
    std::vector<LayerParams<T>> layers;
    std::vector<T> final_norm;  // [d]
    std::vector<T> head;        // [d,V]

    static ParameterSet zeros(const ModelConfig& config);
    std::uint64_t total_elements() const;

    // Walks tensors in declaration order. fn(name, vector, is_norm_gain).
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn("tok_emb", tok_emb, false);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "attn_norm", layers[l].attn_norm, true);
            fn(p + "wq", layers[l].wq, false);
            fn(p + "wk", layers[l].wk, false);
            fn(p + "wv", layers[l].wv, false);
            fn(p + "wo", layers[l].wo, false);
            fn(p + "ffn_norm", layers[l].ffn_norm, true);
            fn(p + "w_gate", layers[l].w_gate, false);
            fn(p + "w_up", layers[l].w_up, false);
            fn(p + "w_down", layers[l].w_down, false);
        }
        fn("final_norm", final_norm, true);
        fn("head", head, false);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<ParameterSet*>(this)->for_each_tensor(
            [&fn](const std::string& name, auto& v, bool gain) {
                fn(name, const_cast<const std::vector<T>&>(v), gain);
            });
    }
};

// Normal(0, 0.02^2) weights with residual output projections scaled by
// 1/sqrt(2*n_layers); norm gains start at 1. Deterministic per seed.
template <typename T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Per-position logits, row-major [len, vocab].
template <typename T>
std::vector<T> forward(const ParameterSet<T>& params, std::span<const TokenId> tokens);

// Mean negative log-likelihood in nats/token over aligned (position, target)
// pairs: logits row i scores targets[i].
template <typename T>
T nll_loss(const std::vector<T>& logits, std::uint32_t vocab_size,
           std::span<const TokenId> targets);

// Accumulates weight * d(sum of per-position nll)/d(params) into grads and
// returns the nll sum. Pass weight = 1/len for mean-loss gradients.
template <typename T>
T backward(const ParameterSet<T>& params, std::span<const TokenId> tokens,
           std::span<const TokenId> targets, ParameterSet<T>& grads, T weight);

// Cosine schedule with linear warmup from 0; decays to floor.
double lr_at(long step, long total_steps, long warmup_steps, double peak, double floor);

struct OptimizerConfig {
    double peak_lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;  // norm gains exempt
    double clip_norm = 1.0;
    long total_steps = 0;
    long warmup_steps = 0;
    double lr_floor_frac = 0.1;
};

struct AdamState {
    long step = 0;
    ParameterSet<float> m, v;
};

// Global-norm clip in place; returns the pre-clip norm.
double clip_gradients(ParameterSet<float>& grads, double max_norm);

// Decoupled-weight-decay adaptive-moment update. Throws on nonfinite grads.
void optimizer_step(AdamState& state, ParameterSet<float>& params,
                    const ParameterSet<float>& grads, const OptimizerConfig& opt);

struct TrainOptions {
    std::uint64_t token_budget = 0;   // > 0 selects budget mode
    int patience = 5;                 // early-stop mode: validations without improvement
    int max_epochs = 40;              // early-stop schedule horizon
    std::size_t tokens_per_batch = 8192;
    double peak_lr = 0.0;             // 0 = lr_multiplier * 3e-3 * 64 / d_model
    double lr_multiplier = 1.0;       // scales the default rule only
    double beta1 = 0.9, beta2 = 0.95, weight_decay = 0.1, clip_norm = 1.0;
    double warmup_frac = 0.01;
    double lr_floor_frac = 0.1;
    std::uint64_t seed = 0;
    std::size_t max_val_tokens = 200000;  // cap on per-validation cost
    bool record_train_curve = true;
};

struct CurvePoint {
    long step = 0;
    std::string split;  // "train" | "val"
    double loss = 0;
};

struct TrainResult {
    ParameterSet<float> params;   // best checkpoint (early-stop) or final (budget)
    double final_val_loss = 0;    // validation loss of the returned params
    double best_val_loss = 0;
    std::vector<CurvePoint> curve;
    std::uint64_t tokens_processed = 0;
    long steps = 0;
    std::uint64_t epochs = 0;
};

TrainResult train(const ModelConfig& config, const std::vector<TrainingExample>& train_examples,
                  const std::vector<TrainingExample>& val_examples, const TrainOptions& options);

double evaluate_loss(const ParameterSet<float>& params,
                     const std::vector<TrainingExample>& examples, std::size_t max_tokens = 0);

// Draws from softmax(logits/temperature) at the last position; temperature 0
// means argmax with smallest-id tie break. Negative temperature is an error.
TokenId sample_next(const ParameterSet<float>& params, std::span<const TokenId> context, Rng& rng,
                    double temperature = 1.0);

// Incremental autoregressive decoder with a sliding KV cache. Positions keep
// their absolute index as the window slides, so cached keys stay valid.
class Decoder {
public:
    Decoder(const ParameterSet<float>& params, int window);

    void reset(std::span<const TokenId> context);
    TokenId sample(Rng& rng, double temperature = 1.0);
    // Logits for the position after everything consumed so far.
    const std::vector<float>& logits() const { return logits_; }

private:
    void feed(TokenId token);

    const ParameterSet<float>* params_;
    int window_;
    long next_pos_ = 0;
    int cached_ = 0;  // number of valid cache entries (<= window_)
    std::vector<std::vector<float>> k_cache_, v_cache_;  // per layer, ring [window, kv_dim]
    std::vector<long> cache_pos_;                        // absolute position per ring slot
    int ring_head_ = 0;
    std::vector<float> logits_;
    bool primed_ = false;
};

// Checkpoint file: "key=value" text header, a "tensors" separator line, then
// raw little-endian float32 tensor data in declaration order.
void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const std::map<std::string, std::string>& metadata);

struct Checkpoint {
    ParameterSet<float> params;
    std::map<std::string, std::string> metadata;
};

Checkpoint load_checkpoint(const std::string& path);

void write_loss_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

}  // namespace ehrscale
