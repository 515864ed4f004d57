#pragma once

#include <cstddef>

namespace mga::kernels {

// Worker count for the parallel kernels. MGA_THREADS (when set and >= 1)
// caps it, otherwise the OpenMP default applies.
int thread_count();

// Dense row-major matrix products. Every output element is accumulated by a
// serial inner loop in a fixed order, so the parallel kernels are bitwise
// identical to their serial references for any thread count.

// c[m x n] = a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a[m x k] * b^T, with b stored as [n x k]
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a^T * b, with a stored as [k x m]
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

// Align-corners bilinear interpolation of src[sh x sw] onto dst[dh x dw].
// Exact at the corner sample points.
void bilinear_upsample(const double* src, std::size_t sh, std::size_t sw,
                       double* dst, std::size_t dh, std::size_t dw);
void bilinear_upsample_serial(const double* src, std::size_t sh, std::size_t sw,
                              double* dst, std::size_t dh, std::size_t dw);

} // namespace mga::kernels
