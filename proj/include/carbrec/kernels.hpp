#pragma once

// Dense numeric kernels used by the autodiff engine and the optimizer.
//
// Every kernel has a serial reference and an OpenMP version. Both versions
// run the same per-element inner loop and only split the outer loop across
// threads, so for a given input they produce bitwise-identical output
// regardless of thread count. The serial path is kept for testing and for the
// benchmark in bench/.

#include <cstddef>
#include <cstdint>
#include <span>

namespace carbrec::kernels {

enum class Policy : std::uint8_t { serial, parallel };

/// Work (in multiply-adds) below which the parallel policy stays serial.
inline constexpr std::size_t kParallelMinWork = 1u << 14;

/// C[m x n] (+)= A[m x k] * B[k x n], all row-major.
void gemm(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);

/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);

/// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);

struct AdamCoefficients {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

/// One bias-corrected Adam update over flat arrays.
void adam_update(Policy policy, std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamCoefficients& coef);

/// Elementwise loop helper. `f(i)` must only touch index i.
template <class F>
void for_each_index(Policy policy, std::size_t n, F&& f) {
  if (policy == Policy::parallel && n >= kParallelMinWork) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) f(i);
  }
}

/// Caps the OpenMP team size used by the parallel policy. Non-positive means
/// the OpenMP default.
void set_thread_count(int threads);
int thread_count();

}  // namespace carbrec::kernels
