#include <cstdlib>
#include <string>
#include <vector>

#include "ddprune/kernels.hpp"

namespace ddprune::kernels {
namespace {

Isa detect_isa() {
  if (const char* env = std::getenv("DDPRUNE_ISA")) {
    if (std::string(env) == "scalar") return Isa::kScalar;
  }
  return avx2_table<float>() != nullptr && avx2_table<double>() != nullptr ? Isa::kAvx2
                                                                           : Isa::kScalar;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

Isa active_isa() {
  static const Isa isa = detect_isa();
  return isa;
}

template <class T>
const KernelTable<T>& active() {
  static const KernelTable<T>& table =
      active_isa() == Isa::kAvx2 ? *avx2_table<T>() : scalar_table<T>();
  return table;
}

template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a,
          bool trans_b) {
  const KernelTable<T>& kt = active<T>();
  std::vector<T> packed;
  if (trans_a) {
    // a is stored k x m; pack to m x k.
    packed.resize(m * k);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) packed[i * k + p] = a[p * m + i];
    }
    a = packed.data();
  }
  if (trans_b && n < 8) {
    kt.gemm_nt(a, b, c, m, n, k);
  } else if (trans_b) {
    // Wide outputs go through the register-blocked nn kernel.
    std::vector<T> packed_b(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) packed_b[p * n + j] = b[j * k + p];
    }
    kt.gemm_nn(a, packed_b.data(), c, m, n, k);
  } else {
    kt.gemm_nn(a, b, c, m, n, k);
  }
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();
template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t,
                          std::size_t, bool, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t,
                           std::size_t, bool, bool);

}  // namespace ddprune::kernels
