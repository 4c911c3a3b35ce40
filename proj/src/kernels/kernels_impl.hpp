// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-ISA entry points. The AVX2 translation unit is built with -mavx2 -mfma,
// so it must only define plain functions over raw pointers: an inline or
// template instantiated there could be picked by the linker for callers that
// never checked the CPU.

#include "pbp/kernels.hpp"

namespace pbp::kernels::scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void relu(const double* x, double* y, std::size_t n);
void relu_backward(const double* x, const double* gy, double* gx, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
}  // namespace pbp::kernels::scalar

namespace pbp::kernels::avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void relu(const double* x, double* y, std::size_t n);
void relu_backward(const double* x, const double* gy, double* gx, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
}  // namespace pbp::kernels::avx2
