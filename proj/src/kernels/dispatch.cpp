// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "pbp/error.hpp"

namespace pbp::kernels {

const KernelTable* avx2_table() {
#if defined(PBP_HAVE_AVX2)
  static const KernelTable table{Isa::Avx2,  "avx2",    avx2::dot,           avx2::axpy, avx2::gemm,
                                 avx2::relu, avx2::relu_backward, avx2::add, avx2::mul};
  return &table;
#else
  return nullptr;
#endif
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(PBP_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa best_supported() { return cpu_supports(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

namespace {

const KernelTable* table_for(Isa isa) { return isa == Isa::Avx2 ? avx2_table() : &scalar_table(); }

const KernelTable* initial_table() {
  Isa isa = best_supported();
  if (const char* env = std::getenv("PBP_ISA")) {
    const std::string want(env);
    if (want == "scalar") isa = Isa::Scalar;
    if (want == "avx2" && cpu_supports(Isa::Avx2)) isa = Isa::Avx2;
  }
  return table_for(isa);
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (!cpu_supports(isa)) {
    throw ConfigError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available on this machine");
  }
  current().store(table_for(isa), std::memory_order_release);
}

}  // namespace pbp::kernels
