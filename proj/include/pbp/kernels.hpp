// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop arithmetic used by the tape, the candidate trainer and MFCC.
// Every kernel has a scalar reference implementation; wider ISA variants are
// compiled separately and picked once at runtime. Variants agree to rounding
// (FMA and lane-wise reassociation), not bit-for-bit, so any run that needs
// bitwise replay must stay on one table.

#include <cstddef>
#include <span>
#include <string_view>

namespace pbp::kernels {

enum class Isa { Scalar, Avx2 };

enum class Trans : unsigned char { No, Yes };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// C(m x n) = op(A) * op(B) [+ C when accumulate]. Row-major, tightly packed.
  /// op(A) is m x k; A is stored k x m when ta == Yes. Likewise B.
  void (*gemm)(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c, bool accumulate);
  void (*relu)(const double* x, double* y, std::size_t n);
  /// gx += gy * (x > 0)
  void (*relu_backward)(const double* x, const double* gy, double* gx, std::size_t n);
  /// y = a + b
  void (*add)(const double* a, const double* b, double* y, std::size_t n);
  /// y = a * b
  void (*mul)(const double* a, const double* b, double* y, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);
Isa best_supported();

/// The table in use. Chosen on first call: PBP_ISA=scalar|avx2 if set and
/// supported, otherwise best_supported().
const KernelTable& active();
/// Throws pbp::ConfigError if the ISA is unavailable.
void select(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c, bool accumulate) {
  active().gemm(ta, tb, m, n, k, a, b, c, accumulate);
}

}  // namespace pbp::kernels
