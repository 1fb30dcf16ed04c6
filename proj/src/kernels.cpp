#include "carbrec/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <vector>

namespace carbrec::kernels {

namespace {

// Row i of C = A[i,:] * B. Summation order over k is fixed. The AVX2 clone
// only widens the j loop; with contraction off it rounds exactly like the
// baseline build.
__attribute__((target_clones("avx2", "default"))) void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k, std::size_t n,
                     bool accumulate) {
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

// Row p of C = sum_i A[i,p] * B[i,:], accumulated in increasing i.
__attribute__((target_clones("avx2", "default"))) void gemm_tn_row(const double* a, const double* b, double* c_row, std::size_t p, std::size_t m,
                        std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    if (av == 0.0) continue;
    const double* b_row = b + i * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

inline bool go_parallel(Policy policy, std::size_t rows, std::size_t work) {
  return policy == Policy::parallel && rows > 1 && work >= kParallelMinWork;
}

}  // namespace

void gemm(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  if (go_parallel(policy, m, m * k * n)) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      const auto r = static_cast<std::size_t>(i);
      gemm_row(a + r * k, b, c + r * n, k, n, accumulate);
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void gemm_nt(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  // Transposing B first turns the inner loop into a contiguous axpy over j,
  // which vectorizes; a per-element dot product would not without reassociation.
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm(policy, a, bt.data(), c, m, k, n, true);
}

void gemm_tn(Policy policy, const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (go_parallel(policy, k, m * k * n)) {
    const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < rows; ++p) {
      const auto r = static_cast<std::size_t>(p);
      gemm_tn_row(a, b, c + r * n, r, m, k, n);
    }
    return;
  }
  for (std::size_t p = 0; p < k; ++p) gemm_tn_row(a, b, c + p * n, p, m, k, n);
}

void adam_update(Policy policy, std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamCoefficients& coef) {
  double* p = params.data();
  const double* g = grads.data();
  double* mm = m.data();
  double* vv = v.data();
  for_each_index(policy, params.size(), [=](std::size_t i) {
    mm[i] = coef.beta1 * mm[i] + (1.0 - coef.beta1) * g[i];
    vv[i] = coef.beta2 * vv[i] + (1.0 - coef.beta2) * g[i] * g[i];
    const double m_hat = mm[i] / coef.bias_correction1;
    const double v_hat = vv[i] / coef.bias_correction2;
    p[i] -= coef.lr * m_hat / (std::sqrt(v_hat) + coef.eps);
  });
}

void set_thread_count(int threads) {
  if (threads > 0) {
    omp_set_num_threads(threads);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
}

int thread_count() { return omp_get_max_threads(); }

}  // namespace carbrec::kernels
