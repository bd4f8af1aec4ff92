#include "ehrscale/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ehrscale::kernels {

namespace {
int g_threads = 0;  // 0 = runtime default
}

void set_threads(int n) {
    g_threads = n > 0 ? n : 0;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

namespace ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void matmul_bt(const T* a, const T* bt, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bt + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int kk = 0; kk < k; ++kk) {
        T* crow = c + static_cast<std::size_t>(kk) * n;
        for (int mm = 0; mm < m; ++mm) {
            const T av = a[static_cast<std::size_t>(mm) * k + kk];
            const T* brow = b + static_cast<std::size_t>(mm) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template void matmul<float>(const float*, const float*, float*, int, int, int);
template void matmul<double>(const double*, const double*, double*, int, int, int);
template void matmul_bt<float>(const float*, const float*, float*, int, int, int);
template void matmul_bt<double>(const double*, const double*, double*, int, int, int);
template void matmul_at_acc<float>(const float*, const float*, float*, int, int, int);
template void matmul_at_acc<double>(const double*, const double*, double*, int, int, int);

}  // namespace ref

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void matmul_bt(const T* a, const T* bt, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bt + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int kk = 0; kk < k; ++kk) {
        T* crow = c + static_cast<std::size_t>(kk) * n;
        for (int mm = 0; mm < m; ++mm) {
            const T av = a[static_cast<std::size_t>(mm) * k + kk];
            const T* brow = b + static_cast<std::size_t>(mm) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template void matmul<float>(const float*, const float*, float*, int, int, int);
template void matmul<double>(const double*, const double*, double*, int, int, int);
template void matmul_bt<float>(const float*, const float*, float*, int, int, int);
template void matmul_bt<double>(const double*, const double*, double*, int, int, int);
template void matmul_at_acc<float>(const float*, const float*, float*, int, int, int);
template void matmul_at_acc<double>(const double*, const double*, double*, int, int, int);

}  // namespace ehrscale::kernels
