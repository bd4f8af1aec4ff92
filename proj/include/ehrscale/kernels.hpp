#pragma once

#include <cstdint>

namespace ehrscale::kernels {

// Dense row-major kernels used by the model. The parallel variants split work
// so that every output element is written by exactly one thread and reduced in
// the same order as the serial reference, so results are bit-identical for any
// thread count. The serial reference lives in kernels::ref and is kept for
// testing and benchmarking.

void set_threads(int n);  // n <= 0 restores the hardware default
int threads();

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n);

// c[m,n] = a[m,k] * bt[n,k]^T  (bt stored row-major as [n,k])
template <typename T>
void matmul_bt(const T* a, const T* bt, T* c, int m, int k, int n);

// c[k,n] += a[m,k]^T * b[m,n]  (weight-gradient accumulation)
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, int m, int k, int n);

namespace ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n);

template <typename T>
void matmul_bt(const T* a, const T* bt, T* c, int m, int k, int n);

template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, int m, int k, int n);

}  // namespace ref

}  // namespace ehrscale::kernels
