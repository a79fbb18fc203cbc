#include "ddprune/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define DDPRUNE_HAVE_AVX2_VARIANT 1
#include <immintrin.h>
#else
#define DDPRUNE_HAVE_AVX2_VARIANT 0
#endif

namespace ddprune::kernels {

#if DDPRUNE_HAVE_AVX2_VARIANT
namespace {

#define DDPRUNE_AVX2 __attribute__((target("avx2,fma")))

DDPRUNE_AVX2 inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

DDPRUNE_AVX2 inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// Thin traits so the float and double kernels share one body.
struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  DDPRUNE_AVX2 static V load(const T* p) { return _mm256_loadu_ps(p); }
  DDPRUNE_AVX2 static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  DDPRUNE_AVX2 static V set1(T x) { return _mm256_set1_ps(x); }
  DDPRUNE_AVX2 static V zero() { return _mm256_setzero_ps(); }
  DDPRUNE_AVX2 static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  DDPRUNE_AVX2 static V add(V a, V b) { return _mm256_add_ps(a, b); }
  DDPRUNE_AVX2 static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  DDPRUNE_AVX2 static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  DDPRUNE_AVX2 static T sum(V v) { return hsum(v); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  DDPRUNE_AVX2 static V load(const T* p) { return _mm256_loadu_pd(p); }
  DDPRUNE_AVX2 static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  DDPRUNE_AVX2 static V set1(T x) { return _mm256_set1_pd(x); }
  DDPRUNE_AVX2 static V zero() { return _mm256_setzero_pd(); }
  DDPRUNE_AVX2 static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  DDPRUNE_AVX2 static V add(V a, V b) { return _mm256_add_pd(a, b); }
  DDPRUNE_AVX2 static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  DDPRUNE_AVX2 static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  DDPRUNE_AVX2 static T sum(V v) { return hsum(v); }
};

template <class S>
DDPRUNE_AVX2 typename S::T avx2_dot(const typename S::T* a, const typename S::T* b,
                                    std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  auto acc0 = S::zero();
  auto acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
    acc1 = S::fmadd(S::load(a + i + L), S::load(b + i + L), acc1);
  }
  for (; i + L <= n; i += L) acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
  typename S::T acc = S::sum(S::add(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
DDPRUNE_AVX2 void avx2_axpy(typename S::T alpha, const typename S::T* x, typename S::T* y,
                            std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  const auto va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(y + i, S::fmadd(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class S>
DDPRUNE_AVX2 void avx2_gemm_nn(const typename S::T* a, const typename S::T* b, typename S::T* c,
                               std::size_t m, std::size_t n, std::size_t k) {
  using T = typename S::T;
  constexpr std::size_t L = S::kLanes;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::size_t j = 0;
    // Register-blocked over 2 vectors of the output row.
    for (; j + 2 * L <= n; j += 2 * L) {
      auto c0 = S::zero();
      auto c1 = S::zero();
      for (std::size_t p = 0; p < k; ++p) {
        const auto av = S::set1(arow[p]);
        c0 = S::fmadd(av, S::load(b + p * n + j), c0);
        c1 = S::fmadd(av, S::load(b + p * n + j + L), c1);
      }
      S::store(crow + j, c0);
      S::store(crow + j + L, c1);
    }
    for (; j + L <= n; j += L) {
      auto c0 = S::zero();
      for (std::size_t p = 0; p < k; ++p) c0 = S::fmadd(S::set1(arow[p]), S::load(b + p * n + j), c0);
      S::store(crow + j, c0);
    }
    for (; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

template <class S>
DDPRUNE_AVX2 void avx2_gemm_nt(const typename S::T* a, const typename S::T* b, typename S::T* c,
                               std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = avx2_dot<S>(a + i * k, b + j * k, k);
  }
}

template <class S>
DDPRUNE_AVX2 void avx2_add(const typename S::T* a, const typename S::T* b, typename S::T* out,
                           std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(out + i, S::add(S::load(a + i), S::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <class S>
DDPRUNE_AVX2 void avx2_sub(const typename S::T* a, const typename S::T* b, typename S::T* out,
                           std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(out + i, S::sub(S::load(a + i), S::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <class S>
DDPRUNE_AVX2 void avx2_mul(const typename S::T* a, const typename S::T* b, typename S::T* out,
                           std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(out + i, S::mul(S::load(a + i), S::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <class S>
DDPRUNE_AVX2 void avx2_affine(const typename S::T* x, typename S::T scale, typename S::T shift,
                              typename S::T* out, std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  const auto vs = S::set1(scale);
  const auto vb = S::set1(shift);
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(out + i, S::fmadd(vs, S::load(x + i), vb));
  for (; i < n; ++i) out[i] = scale * x[i] + shift;
}

template <class S>
constexpr KernelTable<typename S::T> kAvx2Table{
    &avx2_gemm_nn<S>, &avx2_gemm_nt<S>, &avx2_dot<S>, &avx2_axpy<S>,
    &avx2_add<S>,     &avx2_sub<S>,     &avx2_mul<S>, &avx2_affine<S>,
};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

template <class S>
const KernelTable<typename S::T>* checked_table() {
  static const bool supported = cpu_has_avx2();
  return supported ? &kAvx2Table<S> : nullptr;
}

}  // namespace

template <>
const KernelTable<float>* avx2_table<float>() {
  return checked_table<F32>();
}
template <>
const KernelTable<double>* avx2_table<double>() {
  return checked_table<F64>();
}

#else

template <>
const KernelTable<float>* avx2_table<float>() {
  return nullptr;
}
template <>
const KernelTable<double>* avx2_table<double>() {
  return nullptr;
}

#endif

}  // namespace ddprune::kernels
