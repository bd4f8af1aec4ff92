#include "ehrscale/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ehrscale/kernels.hpp"

namespace ehrscale {

namespace {
constexpr double kNormEps = 1e-5;
}

void ModelConfig::validate() const {
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
    if (d_model <= 0 || n_heads <= 0 || n_kv_heads <= 0 || d_ff <= 0)
        throw std::invalid_argument("model dimensions must be positive");
    if (n_layers < 0) throw std::invalid_argument("n_layers must be nonnegative");
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must divide into n_heads");
    if (n_heads % n_kv_heads != 0)
        throw std::invalid_argument("n_heads must be a multiple of n_kv_heads");
    if (d_head() % 2 != 0) throw std::invalid_argument("head dimension must be even (rotary pairs)");
    if (context_len <= 0) throw std::invalid_argument("context_len must be positive");
    if (rope_base < 0) throw std::invalid_argument("rope_base must be nonnegative");
}

std::string ModelConfig::id() const {
    std::ostringstream os;
    os << 'd' << d_model << 'L' << n_layers << 'h' << n_heads << "kv" << n_kv_heads;
    return os.str();
}

std::uint64_t count_params(const ModelConfig& c) {
    c.validate();
    const std::uint64_t d = c.d_model, v = c.vocab_size, ff = c.d_ff;
    const std::uint64_t qd = c.q_dim(), kvd = c.kv_dim();
    const std::uint64_t per_layer = d * qd        // wq
                                    + 2 * d * kvd  // wk, wv
                                    + qd * d       // wo
                                    + 2 * d        // attn_norm, ffn_norm
                                    + 2 * d * ff   // w_gate, w_up
                                    + ff * d;      // w_down
    return v * d + static_cast<std::uint64_t>(c.n_layers) * per_layer + d + d * v;
}

std::vector<ModelConfig> default_sweep_grid(std::uint32_t vocab_size, int context_len) {
    std::vector<ModelConfig> grid;
    for (int d : {64, 96, 128, 192, 256, 384}) {
        for (int layers : {2, 4, 6, 8}) {
            ModelConfig c;
            c.vocab_size = vocab_size;
            c.d_model = d;
            c.n_layers = layers;
            c.n_heads = d / 32;
            c.n_kv_heads = std::max(1, c.n_heads / 4);
            c.d_ff = static_cast<int>(std::lround(8.0 / 3.0 * d / 16.0)) * 16;
            c.context_len = context_len;
            c.validate();
            grid.push_back(c);
        }
    }
    return grid;
}

std::vector<ModelConfig> desk_sweep_grid(std::uint32_t vocab_size, int context_len) {
    std::vector<ModelConfig> grid;
    for (int d : {16, 24, 32, 48, 64}) {
        ModelConfig c;
        c.vocab_size = vocab_size;
        c.d_model = d;
        c.n_layers = 2;
        c.n_heads = d / 8;
        c.n_kv_heads = std::max(1, c.n_heads / 4);
        c.d_ff = static_cast<int>(std::lround(8.0 / 3.0 * d / 16.0)) * 16;
        c.context_len = context_len;
        c.validate();
        grid.push_back(c);
    }
    return grid;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros(const ModelConfig& config) {
    config.validate();
    ParameterSet<T> p;
    p.config = config;
    const std::size_t d = config.d_model, v = config.vocab_size, ff = config.d_ff;
    const std::size_t qd = config.q_dim(), kvd = config.kv_dim();
    p.tok_emb.assign(v * d, T(0));
    p.layers.resize(config.n_layers);
    for (auto& l : p.layers) {
        l.attn_norm.assign(d, T(0));
        l.wq.assign(d * qd, T(0));
        l.wk.assign(d * kvd, T(0));
        l.wv.assign(d * kvd, T(0));
        l.wo.assign(qd * d, T(0));
        l.ffn_norm.assign(d, T(0));
        l.w_gate.assign(d * ff, T(0));
        l.w_up.assign(d * ff, T(0));
        l.w_down.assign(ff * d, T(0));
    }
    p.final_norm.assign(d, T(0));
    p.head.assign(d * v, T(0));
    return p;
}

template <typename T>
std::uint64_t ParameterSet<T>::total_elements() const {
    std::uint64_t n = 0;
    for_each_tensor([&n](const std::string&, const std::vector<T>& t, bool) { n += t.size(); });
    return n;
}

template <typename T>
ParameterSet<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    ParameterSet<T> p = ParameterSet<T>::zeros(config);
    Rng rng(derive_seed(seed, 0x1217));
    const double base_std = 0.02;
    const double resid_std =
        config.n_layers > 0 ? base_std / std::sqrt(2.0 * config.n_layers) : base_std;
    p.for_each_tensor([&](const std::string& name, std::vector<T>& t, bool is_gain) {
        if (is_gain) {
            std::fill(t.begin(), t.end(), T(1));
            return;
        }
        const bool residual_proj = name.ends_with("wo") || name.ends_with("w_down");
        const double std_dev = residual_proj ? resid_std : base_std;
        for (auto& x : t) x = static_cast<T>(rng.normal(0.0, std_dev));
    });
    return p;
}

namespace {

// y[t,:] = x[t,:] * inv_rms(x[t,:]) * gain ; returns inv_rms per row
template <typename T>
void rmsnorm_forward(const T* x, const T* gain, T* y, T* inv_r, int rows, int d) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < rows; ++t) {
        const T* xr = x + static_cast<std::size_t>(t) * d;
        T* yr = y + static_cast<std::size_t>(t) * d;
        T ss = T(0);
        for (int c = 0; c < d; ++c) ss += xr[c] * xr[c];
        const T r = T(1) / std::sqrt(ss / T(d) + T(kNormEps));
        inv_r[t] = r;
        for (int c = 0; c < d; ++c) yr[c] = xr[c] * r * gain[c];
    }
}

// Adds into dx and dgain. dgain accumulation is serial over rows per column.
template <typename T>
void rmsnorm_backward(const T* x, const T* gain, const T* inv_r, const T* dy, T* dx, T* dgain,
                      int rows, int d) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < rows; ++t) {
        const std::size_t off = static_cast<std::size_t>(t) * d;
        const T* xr = x + off;
        const T* dyr = dy + off;
        T* dxr = dx + off;
        const T r = inv_r[t];
        T dot = T(0);
        for (int c = 0; c < d; ++c) dot += dyr[c] * gain[c] * xr[c];
        const T scale = r * r * r * dot / T(d);
        for (int c = 0; c < d; ++c) dxr[c] += dyr[c] * gain[c] * r - xr[c] * scale;
    }
#pragma omp parallel for schedule(static)
    for (int c = 0; c < d; ++c) {
        T acc = T(0);
        for (int t = 0; t < rows; ++t) {
            const std::size_t off = static_cast<std::size_t>(t) * d;
            acc += dy[off + c] * x[off + c] * inv_r[t];
        }
        dgain[c] += acc;
    }
}

// Rotates pairs (2i, 2i+1) of every head slice in place. rows carry absolute
// positions pos0..pos0+rows-1. base == 0 disables rotation.
template <typename T>
void rope_apply(T* x, int rows, int n_heads, int d_head, long pos0, double base, bool inverse) {
    if (base == 0.0) return;
    const int half = d_head / 2;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < rows; ++t) {
        const double pos = static_cast<double>(pos0 + t);
        T* row = x + static_cast<std::size_t>(t) * n_heads * d_head;
        for (int i = 0; i < half; ++i) {
            const double freq = std::pow(base, -2.0 * i / d_head);
            const double angle = pos * freq;
            const T c = static_cast<T>(std::cos(angle));
            const T s = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
            for (int h = 0; h < n_heads; ++h) {
                T* pair = row + static_cast<std::size_t>(h) * d_head + 2 * i;
                const T x0 = pair[0], x1 = pair[1];
                pair[0] = x0 * c - x1 * s;
                pair[1] = x0 * s + x1 * c;
            }
        }
    }
}

template <typename T>
struct LayerCache {
    std::vector<T> x_in;          // [T,d] residual input
    std::vector<T> n1, n2;        // [T,d]
    std::vector<T> inv_r1, inv_r2;  // [T]
    std::vector<T> q;             // [T,q_dim] rotated
    std::vector<T> k, v;          // [T,kv_dim] (k rotated)
    std::vector<T> probs;         // [H,T,T] causal softmax rows
    std::vector<T> att;           // [T,q_dim]
    std::vector<T> x_mid;         // [T,d] after attention residual
    std::vector<T> gate, up, act; // [T,ff]
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    std::vector<T> x_final;       // [T,d]
    std::vector<T> fn;            // [T,d] final-normed
    std::vector<T> inv_rf;        // [T]
    std::vector<T> logits;        // [T,V]
};

template <typename T>
void attention_forward(const ModelConfig& cfg, LayerCache<T>& lc, int len) {
    const int H = cfg.n_heads, KV = cfg.n_kv_heads, dh = cfg.d_head();
    const int group = H / KV;
    const int qd = cfg.q_dim(), kvd = cfg.kv_dim();
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    lc.probs.assign(static_cast<std::size_t>(H) * len * len, T(0));
    lc.att.assign(static_cast<std::size_t>(len) * qd, T(0));
#pragma omp parallel for schedule(static) collapse(2)
    for (int h = 0; h < H; ++h) {
        for (int t = 0; t < len; ++t) {
            const int g = h / group;
            const T* qrow = lc.q.data() + static_cast<std::size_t>(t) * qd + h * dh;
            T* prow = lc.probs.data() +
                      (static_cast<std::size_t>(h) * len + t) * len;
            T max_score = -std::numeric_limits<T>::infinity();
            for (int u = 0; u <= t; ++u) {
                const T* krow = lc.k.data() + static_cast<std::size_t>(u) * kvd + g * dh;
                T acc = T(0);
                for (int c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
                acc *= inv_sqrt_dh;
                prow[u] = acc;
                if (acc > max_score) max_score = acc;
            }
            T denom = T(0);
            for (int u = 0; u <= t; ++u) {
                prow[u] = std::exp(prow[u] - max_score);
                denom += prow[u];
            }
            const T inv_denom = T(1) / denom;
            for (int u = 0; u <= t; ++u) prow[u] *= inv_denom;
            T* arow = lc.att.data() + static_cast<std::size_t>(t) * qd + h * dh;
            for (int u = 0; u <= t; ++u) {
                const T p = prow[u];
                const T* vrow = lc.v.data() + static_cast<std::size_t>(u) * kvd + g * dh;
                for (int c = 0; c < dh; ++c) arow[c] += p * vrow[c];
            }
        }
    }
}

template <typename T>
void forward_cached(const ParameterSet<T>& params, std::span<const TokenId> tokens,
                    ForwardCache<T>& cache) {
    const ModelConfig& cfg = params.config;
    const int len = static_cast<int>(tokens.size());
    if (len < 1) throw std::invalid_argument("forward: empty token sequence");
    if (len > cfg.context_len) throw std::invalid_argument("forward: sequence exceeds context_len");
    for (TokenId t : tokens) {
        if (t >= cfg.vocab_size) throw std::invalid_argument("forward: token id out of range");
    }
    const int d = cfg.d_model, ff = cfg.d_ff;
    const int qd = cfg.q_dim(), kvd = cfg.kv_dim();

    cache.layers.assign(cfg.n_layers, LayerCache<T>{});
    std::vector<T> x(static_cast<std::size_t>(len) * d);
    for (int t = 0; t < len; ++t) {
        std::memcpy(x.data() + static_cast<std::size_t>(t) * d,
                    params.tok_emb.data() + static_cast<std::size_t>(tokens[t]) * d, sizeof(T) * d);
    }

    std::vector<T> tmp(static_cast<std::size_t>(len) * d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& lc = cache.layers[l];
        const auto& lp = params.layers[l];
        lc.x_in = x;
        lc.n1.resize(x.size());
        lc.inv_r1.resize(len);
        rmsnorm_forward(lc.x_in.data(), lp.attn_norm.data(), lc.n1.data(), lc.inv_r1.data(), len, d);
        lc.q.resize(static_cast<std::size_t>(len) * qd);
        lc.k.resize(static_cast<std::size_t>(len) * kvd);
        lc.v.resize(static_cast<std::size_t>(len) * kvd);
        kernels::matmul(lc.n1.data(), lp.wq.data(), lc.q.data(), len, d, qd);
        kernels::matmul(lc.n1.data(), lp.wk.data(), lc.k.data(), len, d, kvd);
        kernels::matmul(lc.n1.data(), lp.wv.data(), lc.v.data(), len, d, kvd);
        rope_apply(lc.q.data(), len, cfg.n_heads, cfg.d_head(), 0, cfg.rope_base, false);
        rope_apply(lc.k.data(), len, cfg.n_kv_heads, cfg.d_head(), 0, cfg.rope_base, false);
        attention_forward(cfg, lc, len);
        kernels::matmul(lc.att.data(), lp.wo.data(), tmp.data(), len, qd, d);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += tmp[i];
        lc.x_mid = x;

        lc.n2.resize(x.size());
        lc.inv_r2.resize(len);
        rmsnorm_forward(lc.x_mid.data(), lp.ffn_norm.data(), lc.n2.data(), lc.inv_r2.data(), len, d);
        lc.gate.resize(static_cast<std::size_t>(len) * ff);
        lc.up.resize(static_cast<std::size_t>(len) * ff);
        lc.act.resize(static_cast<std::size_t>(len) * ff);
        kernels::matmul(lc.n2.data(), lp.w_gate.data(), lc.gate.data(), len, d, ff);
        kernels::matmul(lc.n2.data(), lp.w_up.data(), lc.up.data(), len, d, ff);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < static_cast<long>(lc.gate.size()); ++i) {
            const T g = lc.gate[i];
            const T sig = T(1) / (T(1) + std::exp(-g));
            lc.act[i] = g * sig * lc.up[i];
        }
        kernels::matmul(lc.act.data(), lp.w_down.data(), tmp.data(), len, ff, d);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += tmp[i];
    }

    cache.x_final = x;
    cache.fn.resize(x.size());
    cache.inv_rf.resize(len);
    rmsnorm_forward(cache.x_final.data(), params.final_norm.data(), cache.fn.data(),
                    cache.inv_rf.data(), len, d);
    cache.logits.resize(static_cast<std::size_t>(len) * cfg.vocab_size);
    kernels::matmul(cache.fn.data(), params.head.data(), cache.logits.data(), len, d,
                    static_cast<int>(cfg.vocab_size));
}

}  // namespace

template <typename T>
std::vector<T> forward(const ParameterSet<T>& params, std::span<const TokenId> tokens) {
    ForwardCache<T> cache;
    forward_cached(params, tokens, cache);
    return std::move(cache.logits);
}

template <typename T>
T nll_loss(const std::vector<T>& logits, std::uint32_t vocab_size,
           std::span<const TokenId> targets) {
    if (vocab_size == 0 || logits.size() != targets.size() * vocab_size)
        throw std::invalid_argument("nll_loss: logits/targets shape mismatch");
    const int rows = static_cast<int>(targets.size());
    T total = T(0);
    for (int t = 0; t < rows; ++t) {
        const T* row = logits.data() + static_cast<std::size_t>(t) * vocab_size;
        if (targets[t] >= vocab_size) throw std::invalid_argument("nll_loss: target out of range");
        T max_logit = row[0];
        for (std::uint32_t j = 1; j < vocab_size; ++j) max_logit = std::max(max_logit, row[j]);
        T denom = T(0);
        for (std::uint32_t j = 0; j < vocab_size; ++j) denom += std::exp(row[j] - max_logit);
        total += std::log(denom) + max_logit - row[targets[t]];
    }
    return total / T(rows);
}

namespace {

template <typename T>
void attention_backward(const ModelConfig& cfg, const LayerCache<T>& lc, const T* datt, T* dq,
                        T* dk, T* dv, int len) {
    const int H = cfg.n_heads, KV = cfg.n_kv_heads, dh = cfg.d_head();
    const int group = H / KV;
    const int qd = cfg.q_dim(), kvd = cfg.kv_dim();
    const T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    // dscores buffer reused across heads; heads processed serially so the
    // shared kv-head gradients accumulate deterministically.
    std::vector<T> ds(static_cast<std::size_t>(len) * len);
    for (int h = 0; h < H; ++h) {
        const int g = h / group;
#pragma omp parallel for schedule(static)
        for (int t = 0; t < len; ++t) {
            const T* prow = lc.probs.data() + (static_cast<std::size_t>(h) * len + t) * len;
            const T* darow = datt + static_cast<std::size_t>(t) * qd + h * dh;
            T* dsrow = ds.data() + static_cast<std::size_t>(t) * len;
            // dP then softmax jacobian, fused
            T dot = T(0);
            for (int u = 0; u <= t; ++u) {
                const T* vrow = lc.v.data() + static_cast<std::size_t>(u) * kvd + g * dh;
                T dp = T(0);
                for (int c = 0; c < dh; ++c) dp += darow[c] * vrow[c];
                dsrow[u] = dp;
                dot += dp * prow[u];
            }
            for (int u = 0; u <= t; ++u) dsrow[u] = prow[u] * (dsrow[u] - dot);
        }
        // dq rows are private to this head
#pragma omp parallel for schedule(static)
        for (int t = 0; t < len; ++t) {
            const T* dsrow = ds.data() + static_cast<std::size_t>(t) * len;
            T* dqrow = dq + static_cast<std::size_t>(t) * qd + h * dh;
            for (int u = 0; u <= t; ++u) {
                const T w = dsrow[u] * inv_sqrt_dh;
                const T* krow = lc.k.data() + static_cast<std::size_t>(u) * kvd + g * dh;
                for (int c = 0; c < dh; ++c) dqrow[c] += w * krow[c];
            }
        }
        // dk/dv rows accumulate across query heads sharing g; parallel over u
        // keeps one writer per row.
#pragma omp parallel for schedule(static)
        for (int u = 0; u < len; ++u) {
            T* dkrow = dk + static_cast<std::size_t>(u) * kvd + g * dh;
            T* dvrow = dv + static_cast<std::size_t>(u) * kvd + g * dh;
            for (int t = u; t < len; ++t) {
                const T* prow = lc.probs.data() + (static_cast<std::size_t>(h) * len + t) * len;
                const T* darow = datt + static_cast<std::size_t>(t) * qd + h * dh;
                const T* qrow = lc.q.data() + static_cast<std::size_t>(t) * qd + h * dh;
                const T wds = ds[static_cast<std::size_t>(t) * len + u] * inv_sqrt_dh;
                const T p = prow[u];
                for (int c = 0; c < dh; ++c) {
                    dvrow[c] += p * darow[c];
                    dkrow[c] += wds * qrow[c];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
T backward(const ParameterSet<T>& params, std::span<const TokenId> tokens,
           std::span<const TokenId> targets, ParameterSet<T>& grads, T weight) {
    const ModelConfig& cfg = params.config;
    if (tokens.size() != targets.size())
        throw std::invalid_argument("backward: tokens/targets length mismatch");
    ForwardCache<T> cache;
    forward_cached(params, tokens, cache);
    const int len = static_cast<int>(tokens.size());
    const int d = cfg.d_model, ff = cfg.d_ff;
    const int qd = cfg.q_dim(), kvd = cfg.kv_dim();
    const auto v = cfg.vocab_size;

    // loss (sum over positions) and dlogits
    T loss_sum = T(0);
    std::vector<T> dlogits(cache.logits.size());
    for (int t = 0; t < len; ++t) {
        const T* row = cache.logits.data() + static_cast<std::size_t>(t) * v;
        T* drow = dlogits.data() + static_cast<std::size_t>(t) * v;
        if (targets[t] >= v) throw std::invalid_argument("backward: target out of range");
        T max_logit = row[0];
        for (std::uint32_t j = 1; j < v; ++j) max_logit = std::max(max_logit, row[j]);
        T denom = T(0);
        for (std::uint32_t j = 0; j < v; ++j) denom += std::exp(row[j] - max_logit);
        loss_sum += std::log(denom) + max_logit - row[targets[t]];
        const T inv_denom = T(1) / denom;
        for (std::uint32_t j = 0; j < v; ++j) drow[j] = std::exp(row[j] - max_logit) * inv_denom * weight;
        drow[targets[t]] -= weight;
    }

    // head and final norm
    std::vector<T> dx(static_cast<std::size_t>(len) * d, T(0));
    kernels::matmul_at_acc(cache.fn.data(), dlogits.data(), grads.head.data(), len, d,
                           static_cast<int>(v));
    std::vector<T> dfn(static_cast<std::size_t>(len) * d);
    kernels::matmul_bt(dlogits.data(), params.head.data(), dfn.data(), len, static_cast<int>(v), d);
    rmsnorm_backward(cache.x_final.data(), params.final_norm.data(), cache.inv_rf.data(), dfn.data(),
                     dx.data(), grads.final_norm.data(), len, d);

    std::vector<T> dn(static_cast<std::size_t>(len) * d);
    std::vector<T> dtmp_ff(static_cast<std::size_t>(len) * ff);
    std::vector<T> dgate(static_cast<std::size_t>(len) * ff), dup(static_cast<std::size_t>(len) * ff);
    std::vector<T> dq(static_cast<std::size_t>(len) * qd);
    std::vector<T> dk(static_cast<std::size_t>(len) * kvd), dv(static_cast<std::size_t>(len) * kvd);
    std::vector<T> datt(static_cast<std::size_t>(len) * qd);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lc = cache.layers[l];
        const auto& lp = params.layers[l];
        auto& lg = grads.layers[l];

        // FFN: x_out = x_mid + act * w_down
        kernels::matmul_at_acc(lc.act.data(), dx.data(), lg.w_down.data(), len, ff, d);
        kernels::matmul_bt(dx.data(), lp.w_down.data(), dtmp_ff.data(), len, d, ff);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < static_cast<long>(dtmp_ff.size()); ++i) {
            const T g = lc.gate[i];
            const T sig = T(1) / (T(1) + std::exp(-g));
            const T silu = g * sig;
            dup[i] = dtmp_ff[i] * silu;
            dgate[i] = dtmp_ff[i] * lc.up[i] * sig * (T(1) + g * (T(1) - sig));
        }
        kernels::matmul_at_acc(lc.n2.data(), dgate.data(), lg.w_gate.data(), len, d, ff);
        kernels::matmul_at_acc(lc.n2.data(), dup.data(), lg.w_up.data(), len, d, ff);
        kernels::matmul_bt(dgate.data(), lp.w_gate.data(), dn.data(), len, ff, d);
        std::vector<T> dn_up(static_cast<std::size_t>(len) * d);
        kernels::matmul_bt(dup.data(), lp.w_up.data(), dn_up.data(), len, ff, d);
        for (std::size_t i = 0; i < dn.size(); ++i) dn[i] += dn_up[i];
        // dx currently holds d(x_out); residual passes it to x_mid unchanged
        rmsnorm_backward(lc.x_mid.data(), lp.ffn_norm.data(), lc.inv_r2.data(), dn.data(), dx.data(),
                         lg.ffn_norm.data(), len, d);

        // attention: x_mid = x_in + att * wo
        kernels::matmul_at_acc(lc.att.data(), dx.data(), lg.wo.data(), len, qd, d);
        kernels::matmul_bt(dx.data(), lp.wo.data(), datt.data(), len, d, qd);
        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        attention_backward(cfg, lc, datt.data(), dq.data(), dk.data(), dv.data(), len);
        rope_apply(dq.data(), len, cfg.n_heads, cfg.d_head(), 0, cfg.rope_base, true);
        rope_apply(dk.data(), len, cfg.n_kv_heads, cfg.d_head(), 0, cfg.rope_base, true);
        kernels::matmul_at_acc(lc.n1.data(), dq.data(), lg.wq.data(), len, d, qd);
        kernels::matmul_at_acc(lc.n1.data(), dk.data(), lg.wk.data(), len, d, kvd);
        kernels::matmul_at_acc(lc.n1.data(), dv.data(), lg.wv.data(), len, d, kvd);
        kernels::matmul_bt(dq.data(), lp.wq.data(), dn.data(), len, qd, d);
        std::vector<T> dn_k(static_cast<std::size_t>(len) * d), dn_v(static_cast<std::size_t>(len) * d);
        kernels::matmul_bt(dk.data(), lp.wk.data(), dn_k.data(), len, kvd, d);
        kernels::matmul_bt(dv.data(), lp.wv.data(), dn_v.data(), len, kvd, d);
        for (std::size_t i = 0; i < dn.size(); ++i) dn[i] += dn_k[i] + dn_v[i];
        rmsnorm_backward(lc.x_in.data(), lp.attn_norm.data(), lc.inv_r1.data(), dn.data(), dx.data(),
                         lg.attn_norm.data(), len, d);
    }

    // embedding scatter; serial over positions, parallel over columns
#pragma omp parallel for schedule(static)
    for (int c = 0; c < d; ++c) {
        for (int t = 0; t < len; ++t) {
            grads.tok_emb[static_cast<std::size_t>(tokens[t]) * d + c] +=
                dx[static_cast<std::size_t>(t) * d + c];
        }
    }
    return loss_sum;
}

double lr_at(long step, long total_steps, long warmup_steps, double peak, double floor) {
    if (warmup_steps > 0 && step < warmup_steps)
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return floor;
    const double progress = std::clamp(
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps),
        0.0, 1.0);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double clip_gradients(ParameterSet<float>& grads, double max_norm) {
    double sum_sq = 0.0;
    grads.for_each_tensor([&sum_sq](const std::string&, std::vector<float>& t, bool) {
        for (float g : t) sum_sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sum_sq);
    if (max_norm > 0 && norm > max_norm) {
        const auto scale = static_cast<float>(max_norm / norm);
        grads.for_each_tensor([scale](const std::string&, std::vector<float>& t, bool) {
            for (float& g : t) g *= scale;
        });
    }
    return norm;
}

void optimizer_step(AdamState& state, ParameterSet<float>& params, const ParameterSet<float>& grads,
                    const OptimizerConfig& opt) {
    bool finite = true;
    grads.for_each_tensor([&finite](const std::string&, const std::vector<float>& t, bool) {
        for (float g : t) {
            if (!std::isfinite(g)) finite = false;
        }
    });
    if (!finite)
        throw std::runtime_error("optimizer_step: nonfinite gradient at step " +
                                 std::to_string(state.step));

    const double lr =
        lr_at(state.step, opt.total_steps, opt.warmup_steps, opt.peak_lr, opt.peak_lr * opt.lr_floor_frac);
    const long t1 = state.step + 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t1));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t1));

    struct TensorRef {
        std::vector<float>* data;
        bool is_gain;
    };
    auto collect = [](ParameterSet<float>& set) {
        std::vector<TensorRef> refs;
        set.for_each_tensor([&refs](const std::string&, std::vector<float>& t, bool gain) {
            refs.push_back({&t, gain});
        });
        return refs;
    };
    const auto p_refs = collect(params);
    const auto m_refs = collect(state.m);
    const auto v_refs = collect(state.v);
    const auto g_refs = collect(const_cast<ParameterSet<float>&>(grads));

    for (std::size_t ti = 0; ti < p_refs.size(); ++ti) {
        auto& p = *p_refs[ti].data;
        auto& m = *m_refs[ti].data;
        auto& v = *v_refs[ti].data;
        const auto& g = *g_refs[ti].data;
        const double wd = p_refs[ti].is_gain ? 0.0 : opt.weight_decay;
#pragma omp parallel for schedule(static)
        for (long i = 0; i < static_cast<long>(p.size()); ++i) {
            const double gi = g[i];
            const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
            p[i] = static_cast<float>(p[i] - lr * update - lr * wd * p[i]);
        }
    }
    ++state.step;
}

double evaluate_loss(const ParameterSet<float>& params, const std::vector<TrainingExample>& examples,
                     std::size_t max_tokens) {
    double nll_sum = 0.0;
    std::uint64_t positions = 0;
    std::size_t used = 0;
    for (const auto& ex : examples) {
        if (ex.tokens.size() < 2) continue;
        if (max_tokens > 0 && used >= max_tokens) break;
        std::span<const TokenId> inputs(ex.tokens.data(), ex.tokens.size() - 1);
        std::span<const TokenId> targets(ex.tokens.data() + 1, ex.tokens.size() - 1);
        const auto logits = forward(params, inputs);
        const double mean = nll_loss(logits, params.config.vocab_size, targets);
        nll_sum += mean * static_cast<double>(targets.size());
        positions += targets.size();
        used += ex.tokens.size();
    }
    if (positions == 0) throw std::invalid_argument("evaluate_loss: no usable examples");
    return nll_sum / static_cast<double>(positions);
}

TrainResult train(const ModelConfig& config, const std::vector<TrainingExample>& train_examples,
                  const std::vector<TrainingExample>& val_examples, const TrainOptions& options) {
    config.validate();
    std::vector<TrainingExample> usable;
    usable.reserve(train_examples.size());
    std::uint64_t corpus_tokens = 0;
    for (const auto& ex : train_examples) {
        if (ex.tokens.size() >= 2) {
            corpus_tokens += ex.tokens.size();
            usable.push_back(ex);
        }
    }
    if (usable.empty()) throw std::invalid_argument("train: corpus smaller than one batch");

    const bool budget_mode = options.token_budget > 0;
    const auto steps_per_epoch = static_cast<long>(
        std::max<std::uint64_t>(1, corpus_tokens / options.tokens_per_batch));
    const long total_steps =
        budget_mode ? std::max<long>(1, static_cast<long>(options.token_budget / options.tokens_per_batch))
                    : steps_per_epoch * options.max_epochs;
    const long cadence = std::max<long>(50, total_steps / 100);

    OptimizerConfig opt;
    opt.peak_lr =
        options.peak_lr > 0 ? options.peak_lr : options.lr_multiplier * 3e-3 * 64.0 / config.d_model;
    opt.beta1 = options.beta1;
    opt.beta2 = options.beta2;
    opt.weight_decay = options.weight_decay;
    opt.clip_norm = options.clip_norm;
    opt.total_steps = total_steps;
    opt.warmup_steps = std::max<long>(1, std::lround(options.warmup_frac * total_steps));
    opt.lr_floor_frac = options.lr_floor_frac;

    TrainResult result;
    result.params = init_params<float>(config, options.seed);
    AdamState state;
    state.m = ParameterSet<float>::zeros(config);
    state.v = ParameterSet<float>::zeros(config);
    ParameterSet<float> grads = ParameterSet<float>::zeros(config);

    BatchIterator batches(usable, options.tokens_per_batch, derive_seed(options.seed, 0xBA7C));

    auto validate = [&](long step) {
        const double loss = evaluate_loss(result.params, val_examples, options.max_val_tokens);
        result.curve.push_back({step, "val", loss});
        return loss;
    };

    double best_val = std::numeric_limits<double>::infinity();
    ParameterSet<float> best_params = result.params;
    int since_improve = 0;
    bool stopped_early = false;

    if (!val_examples.empty()) {
        const double v0 = validate(0);
        best_val = v0;
    }

    while (state.step < total_steps) {
        const auto batch = batches.next();
        std::uint64_t batch_tokens = 0;
        std::uint64_t batch_positions = 0;
        for (auto idx : batch) {
            batch_tokens += usable[idx].tokens.size();
            batch_positions += usable[idx].tokens.size() - 1;
        }
        if (budget_mode && result.tokens_processed + batch_tokens > options.token_budget) break;

        grads.for_each_tensor(
            [](const std::string&, std::vector<float>& t, bool) { std::fill(t.begin(), t.end(), 0.f); });
        const auto weight = static_cast<float>(1.0 / static_cast<double>(batch_positions));
        double loss_sum = 0.0;
        for (auto idx : batch) {
            const auto& toks = usable[idx].tokens;
            std::span<const TokenId> inputs(toks.data(), toks.size() - 1);
            std::span<const TokenId> targets(toks.data() + 1, toks.size() - 1);
            loss_sum += backward(result.params, inputs, targets, grads, weight);
        }
        const double train_loss = loss_sum / static_cast<double>(batch_positions);
        clip_gradients(grads, opt.clip_norm);
        optimizer_step(state, result.params, grads, opt);
        result.tokens_processed += batch_tokens;
        result.steps = state.step;
        result.epochs = batches.epochs_completed();
        if (options.record_train_curve) result.curve.push_back({state.step, "train", train_loss});

        if (!val_examples.empty() && state.step % cadence == 0) {
            const double val = validate(state.step);
            if (val < best_val) {
                best_val = val;
                best_params = result.params;
                since_improve = 0;
            } else {
                ++since_improve;
            }
            if (!budget_mode && since_improve >= options.patience) {
                stopped_early = true;
                break;
            }
        }
    }

    if (!val_examples.empty()) {
        const double final_val = validate(result.steps);
        if (final_val < best_val) {
            best_val = final_val;
            best_params = result.params;
        }
        if (!budget_mode) {
            // early-stop mode returns the argmin checkpoint
            result.params = std::move(best_params);
            result.final_val_loss = best_val;
        } else {
            result.final_val_loss = final_val;
        }
        result.best_val_loss = best_val;
    }
    (void)stopped_early;
    return result;
}

TokenId sample_next(const ParameterSet<float>& params, std::span<const TokenId> context, Rng& rng,
                    double temperature) {
    if (temperature < 0) throw std::invalid_argument("sample_next: negative temperature");
    if (context.size() > static_cast<std::size_t>(params.config.context_len))
        throw std::invalid_argument("sample_next: context exceeds window");
    const auto logits = forward(params, context);
    const std::uint32_t v = params.config.vocab_size;
    const float* row = logits.data() + (context.size() - 1) * v;
    if (temperature == 0.0) {
        TokenId best = 0;
        for (std::uint32_t j = 1; j < v; ++j) {
            if (row[j] > row[best]) best = j;
        }
        return best;
    }
    double max_logit = row[0];
    for (std::uint32_t j = 1; j < v; ++j) max_logit = std::max<double>(max_logit, row[j]);
    std::vector<double> probs(v);
    double denom = 0.0;
    for (std::uint32_t j = 0; j < v; ++j) {
        probs[j] = std::exp((row[j] - max_logit) / temperature);
        denom += probs[j];
    }
    const double u = rng.uniform() * denom;
    double acc = 0.0;
    for (std::uint32_t j = 0; j < v; ++j) {
        acc += probs[j];
        if (u < acc) return j;
    }
    return v - 1;
}

Decoder::Decoder(const ParameterSet<float>& params, int window)
    : params_(&params), window_(window) {
    if (window <= 0) throw std::invalid_argument("decoder window must be positive");
    const auto& cfg = params.config;
    k_cache_.assign(cfg.n_layers, std::vector<float>(static_cast<std::size_t>(window) * cfg.kv_dim()));
    v_cache_.assign(cfg.n_layers, std::vector<float>(static_cast<std::size_t>(window) * cfg.kv_dim()));
    cache_pos_.assign(window, -1);
    logits_.resize(cfg.vocab_size);
}

void Decoder::reset(std::span<const TokenId> context) {
    next_pos_ = 0;
    cached_ = 0;
    ring_head_ = 0;
    primed_ = false;
    std::fill(cache_pos_.begin(), cache_pos_.end(), -1);
    // keep only the most recent window-worth of context
    const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(window_));
    for (std::size_t i = context.size() - keep; i < context.size(); ++i) feed(context[i]);
}

void Decoder::feed(TokenId token) {
    const auto& cfg = params_->config;
    if (token >= cfg.vocab_size) throw std::invalid_argument("decoder: token id out of range");
    const int d = cfg.d_model, ff = cfg.d_ff;
    const int qd = cfg.q_dim(), kvd = cfg.kv_dim();
    const int H = cfg.n_heads, KV = cfg.n_kv_heads, dh = cfg.d_head();
    const int group = H / KV;

    std::vector<float> x(params_->tok_emb.begin() + static_cast<std::size_t>(token) * d,
                         params_->tok_emb.begin() + static_cast<std::size_t>(token) * d + d);
    // claim the ring slot for this position
    int slot;
    if (cached_ < window_) {
        slot = (ring_head_ + cached_) % window_;
        ++cached_;
    } else {
        slot = ring_head_;
        ring_head_ = (ring_head_ + 1) % window_;
    }
    cache_pos_[slot] = next_pos_;

    std::vector<float> n1(d), q(qd), krow(kvd), vrow(kvd), att(qd), out(d);
    std::vector<float> n2(d), gate(ff), up(ff), act(ff);
    float inv_r = 0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = params_->layers[l];
        rmsnorm_forward(x.data(), lp.attn_norm.data(), n1.data(), &inv_r, 1, d);
        kernels::matmul(n1.data(), lp.wq.data(), q.data(), 1, d, qd);
        kernels::matmul(n1.data(), lp.wk.data(), krow.data(), 1, d, kvd);
        kernels::matmul(n1.data(), lp.wv.data(), vrow.data(), 1, d, kvd);
        rope_apply(q.data(), 1, H, dh, next_pos_, cfg.rope_base, false);
        rope_apply(krow.data(), 1, KV, dh, next_pos_, cfg.rope_base, false);
        std::memcpy(k_cache_[l].data() + static_cast<std::size_t>(slot) * kvd, krow.data(),
                    sizeof(float) * kvd);
        std::memcpy(v_cache_[l].data() + static_cast<std::size_t>(slot) * kvd, vrow.data(),
                    sizeof(float) * kvd);

        std::fill(att.begin(), att.end(), 0.f);
        const float inv_sqrt_dh = 1.f / std::sqrt(static_cast<float>(dh));
        const int start = cached_ < window_ ? 0 : ring_head_;
        std::vector<float> scores(cached_);
        for (int h = 0; h < H; ++h) {
            const int g = h / group;
            float max_score = -std::numeric_limits<float>::infinity();
            for (int i = 0; i < cached_; ++i) {
                const int s = (start + i) % window_;
                const float* kk = k_cache_[l].data() + static_cast<std::size_t>(s) * kvd + g * dh;
                float acc = 0.f;
                for (int c = 0; c < dh; ++c) acc += q[h * dh + c] * kk[c];
                acc *= inv_sqrt_dh;
                scores[i] = acc;
                max_score = std::max(max_score, acc);
            }
            float denom = 0.f;
            for (int i = 0; i < cached_; ++i) {
                scores[i] = std::exp(scores[i] - max_score);
                denom += scores[i];
            }
            const float inv_denom = 1.f / denom;
            for (int i = 0; i < cached_; ++i) {
                const int s = (start + i) % window_;
                const float p = scores[i] * inv_denom;
                const float* vv = v_cache_[l].data() + static_cast<std::size_t>(s) * kvd + g * dh;
                for (int c = 0; c < dh; ++c) att[h * dh + c] += p * vv[c];
            }
        }
        kernels::matmul(att.data(), lp.wo.data(), out.data(), 1, qd, d);
        for (int c = 0; c < d; ++c) x[c] += out[c];

        rmsnorm_forward(x.data(), lp.ffn_norm.data(), n2.data(), &inv_r, 1, d);
        kernels::matmul(n2.data(), lp.w_gate.data(), gate.data(), 1, d, ff);
        kernels::matmul(n2.data(), lp.w_up.data(), up.data(), 1, d, ff);
        for (int i = 0; i < ff; ++i) {
            const float g = gate[i];
            act[i] = g / (1.f + std::exp(-g)) * up[i];
        }
        std::vector<float> down(d);
        kernels::matmul(act.data(), lp.w_down.data(), down.data(), 1, ff, d);
        for (int c = 0; c < d; ++c) x[c] += down[c];
    }
    std::vector<float> fn(d);
    rmsnorm_forward(x.data(), params_->final_norm.data(), fn.data(), &inv_r, 1, d);
    kernels::matmul(fn.data(), params_->head.data(), logits_.data(), 1, d,
                    static_cast<int>(cfg.vocab_size));
    ++next_pos_;
    primed_ = true;
}

TokenId Decoder::sample(Rng& rng, double temperature) {
    if (!primed_) throw std::logic_error("decoder: sample before reset with context");
    if (temperature < 0) throw std::invalid_argument("decoder: negative temperature");
    const std::uint32_t v = params_->config.vocab_size;
    TokenId chosen;
    if (temperature == 0.0) {
        chosen = 0;
        for (std::uint32_t j = 1; j < v; ++j) {
            if (logits_[j] > logits_[chosen]) chosen = j;
        }
    } else {
        double max_logit = logits_[0];
        for (std::uint32_t j = 1; j < v; ++j) max_logit = std::max<double>(max_logit, logits_[j]);
        double denom = 0.0;
        std::vector<double> probs(v);
        for (std::uint32_t j = 0; j < v; ++j) {
            probs[j] = std::exp((logits_[j] - max_logit) / temperature);
            denom += probs[j];
        }
        const double u = rng.uniform() * denom;
        double acc = 0.0;
        chosen = v - 1;
        for (std::uint32_t j = 0; j < v; ++j) {
            acc += probs[j];
            if (u < acc) {
                chosen = j;
                break;
            }
        }
    }
    feed(chosen);
    return chosen;
}

void save_checkpoint(const std::string& path, const ParameterSet<float>& params,
                     const std::map<std::string, std::string>& metadata) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    const auto& c = params.config;
    out << "ehrscale-checkpoint v1\n";
    out << "vocab_size=" << c.vocab_size << "\n";
    out << "d_model=" << c.d_model << "\n";
    out << "n_layers=" << c.n_layers << "\n";
    out << "n_heads=" << c.n_heads << "\n";
    out << "n_kv_heads=" << c.n_kv_heads << "\n";
    out << "d_ff=" << c.d_ff << "\n";
    out << "context_len=" << c.context_len << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", c.rope_base);
    out << "rope_base=" << buf << "\n";
    for (const auto& [k, v] : metadata) out << "meta." << k << "=" << v << "\n";
    out << "tensors\n";
    params.for_each_tensor([&out](const std::string&, const std::vector<float>& t, bool) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    });
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "ehrscale-checkpoint v1")
        throw std::runtime_error(path + ": not an ehrscale checkpoint");
    ModelConfig cfg;
    Checkpoint ck;
    while (std::getline(in, line)) {
        if (line == "tensors") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error(path + ": malformed header line");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "vocab_size") cfg.vocab_size = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "d_model") cfg.d_model = std::stoi(value);
        else if (key == "n_layers") cfg.n_layers = std::stoi(value);
        else if (key == "n_heads") cfg.n_heads = std::stoi(value);
        else if (key == "n_kv_heads") cfg.n_kv_heads = std::stoi(value);
        else if (key == "d_ff") cfg.d_ff = std::stoi(value);
        else if (key == "context_len") cfg.context_len = std::stoi(value);
        else if (key == "rope_base") cfg.rope_base = std::stod(value);
        else if (key.starts_with("meta.")) ck.metadata[key.substr(5)] = value;
        else throw std::runtime_error(path + ": unknown header key " + key);
    }
    ck.params = ParameterSet<float>::zeros(cfg);
    ck.params.for_each_tensor([&in, &path](const std::string& name, std::vector<float>& t, bool) {
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw std::runtime_error(path + ": truncated tensor " + name);
    });
    return ck;
}

void write_loss_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open loss curve for writing: " + path);
    out.precision(10);
    out << "step,split,loss\n";
    for (const auto& p : curve) out << p.step << ',' << p.split << ',' << p.loss << '\n';
    if (!out) throw std::runtime_error("failed writing loss curve: " + path);
}

// explicit instantiations: 32-bit training path, 64-bit gradient-check path
template struct ParameterSet<float>;
template struct ParameterSet<double>;
template ParameterSet<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_params<double>(const ModelConfig&, std::uint64_t);
template std::vector<float> forward<float>(const ParameterSet<float>&, std::span<const TokenId>);
template std::vector<double> forward<double>(const ParameterSet<double>&, std::span<const TokenId>);
template float nll_loss<float>(const std::vector<float>&, std::uint32_t, std::span<const TokenId>);
template double nll_loss<double>(const std::vector<double>&, std::uint32_t, std::span<const TokenId>);
template float backward<float>(const ParameterSet<float>&, std::span<const TokenId>,
                               std::span<const TokenId>, ParameterSet<float>&, float);
template double backward<double>(const ParameterSet<double>&, std::span<const TokenId>,
                                 std::span<const TokenId>, ParameterSet<double>&, double);

}  // namespace ehrscale
