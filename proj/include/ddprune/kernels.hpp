#pragma once

// Data-parallel inner loops used by the autograd engine. Each kernel has a
// portable scalar reference and an AVX2/FMA variant; the variant is chosen
// once at startup from CPUID (override with DDPRUNE_ISA=scalar|avx2).

#include <cstddef>
#include <string_view>

namespace ddprune::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

template <class T>
struct KernelTable {
  // c[m x n] = a[m x k] * b[k x n]
  void (*gemm_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
  // c[m x n] = a[m x k] * b[n x k]^T
  void (*gemm_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  // out = scale * x + shift
  void (*affine)(const T* x, T scale, T shift, T* out, std::size_t n);
};

template <class T>
const KernelTable<T>& scalar_table();

// nullptr when the build or the CPU lacks AVX2/FMA.
template <class T>
const KernelTable<T>* avx2_table();

Isa active_isa();

template <class T>
const KernelTable<T>& active();

// c = op(a) * op(b); op(a) is m x k, op(b) is k x n.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a,
          bool trans_b);

}  // namespace ddprune::kernels
