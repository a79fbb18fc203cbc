#include "ddprune/kernels.hpp"

namespace ddprune::kernels {
namespace {

template <class T>
void scalar_gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
T scalar_dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void scalar_gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = scalar_dot(a + i * k, b + j * k, k);
  }
}

template <class T>
void scalar_axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scalar_add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void scalar_sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void scalar_mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void scalar_affine(const T* x, T scale, T shift, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = scale * x[i] + shift;
}

template <class T>
constexpr KernelTable<T> kScalarTable{
    &scalar_gemm_nn<T>, &scalar_gemm_nt<T>, &scalar_dot<T>, &scalar_axpy<T>,
    &scalar_add<T>,     &scalar_sub<T>,     &scalar_mul<T>, &scalar_affine<T>,
};

}  // namespace

template <class T>
const KernelTable<T>& scalar_table() {
  return kScalarTable<T>;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace ddprune::kernels
