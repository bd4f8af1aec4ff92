// Benchmarks the OpenMP kernels against the serial reference and reports the
// realized GFLOP/s of a full training step at desk scale.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ehrscale/kernels.hpp"
#include "ehrscale/model.hpp"
#include "ehrscale/rng.hpp"

using namespace ehrscale;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_matmul(int m, int k, int n) {
    Rng rng(1);
    std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
        c(static_cast<std::size_t>(m) * n);
    for (auto& x : a) x = static_cast<float>(rng.normal());
    for (auto& x : b) x = static_cast<float>(rng.normal());
    const double flops = 2.0 * m * k * n;
    const double t_ref =
        time_best_of(3, [&] { kernels::ref::matmul(a.data(), b.data(), c.data(), m, k, n); });
    const double t_par =
        time_best_of(3, [&] { kernels::matmul(a.data(), b.data(), c.data(), m, k, n); });
    std::printf("matmul %4dx%4dx%4d  serial %7.2f GF/s  parallel %7.2f GF/s  speedup %.2fx\n", m, k,
                n, flops / t_ref / 1e9, flops / t_par / 1e9, t_ref / t_par);
}

void bench_training_step() {
    ModelConfig c;
    c.vocab_size = 512;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 8;
    c.n_kv_heads = 2;
    c.d_ff = 176;
    c.context_len = 256;
    auto params = init_params<float>(c, 7);
    Rng rng(3);
    std::vector<TokenId> toks(256);
    for (auto& t : toks) t = static_cast<TokenId>(rng.uniform_int(512));
    std::span<const TokenId> inputs(toks.data(), toks.size() - 1);
    std::span<const TokenId> targets(toks.data() + 1, toks.size() - 1);
    auto grads = ParameterSet<float>::zeros(c);
    const double step_flops = 3.0 * 2.0 * static_cast<double>(count_params(c)) * 255;  // rough 6ND
    const double t = time_best_of(3, [&] {
        grads.for_each_tensor(
            [](const std::string&, std::vector<float>& v, bool) { std::fill(v.begin(), v.end(), 0.f); });
        backward(params, inputs, targets, grads, 1.f / 255);
    });
    std::printf("training step (%s, 255 tokens): %.1f ms, ~%.2f GF/s effective\n", c.id().c_str(),
                t * 1e3, step_flops / t / 1e9);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled, serial build\n");
#endif
    bench_matmul(256, 256, 256);
    bench_matmul(512, 512, 512);
    bench_matmul(2048, 64, 512);
    bench_training_step();
    return 0;
}
