#include "mga/kernels.hpp"

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mga::kernels {

namespace {

// Small products are not worth the fork/join overhead.
constexpr std::size_t kParallelFlopThreshold = 1 << 16;

int resolve_thread_count() {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    if (const char* env = std::getenv("MGA_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1 && cap < n) {
            n = cap;
        }
    }
    return n < 1 ? 1 : n;
}

} // namespace

int thread_count() {
    static const int n = resolve_thread_count();
    return n;
}

void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < kParallelFlopThreshold) {
        matmul_nn_serial(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] = acc;
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < kParallelFlopThreshold) {
        matmul_nt_serial(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] = acc;
        }
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[p * m + i] * b[p * n + j];
            }
            crow[j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < kParallelFlopThreshold) {
        matmul_tn_serial(a, b, c, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[p * m + i] * b[p * n + j];
            }
            crow[j] = acc;
        }
    }
}

namespace {

inline void bilinear_row(const double* src, std::size_t sh, std::size_t sw,
                         double* drow, std::size_t dh, std::size_t dw, std::size_t r) {
    double sy = (dh > 1 && sh > 1)
                    ? static_cast<double>(r) * static_cast<double>(sh - 1) / static_cast<double>(dh - 1)
                    : 0.0;
    auto y0 = static_cast<std::size_t>(sy);
    if (y0 >= sh - 1 && sh > 1) y0 = sh - 2;
    std::size_t y1 = (sh > 1) ? y0 + 1 : 0;
    double ty = sy - static_cast<double>(y0);
    const double* row0 = src + y0 * sw;
    const double* row1 = src + y1 * sw;
    for (std::size_t col = 0; col < dw; ++col) {
        double sx = (dw > 1 && sw > 1)
                        ? static_cast<double>(col) * static_cast<double>(sw - 1) / static_cast<double>(dw - 1)
                        : 0.0;
        auto x0 = static_cast<std::size_t>(sx);
        if (x0 >= sw - 1 && sw > 1) x0 = sw - 2;
        std::size_t x1 = (sw > 1) ? x0 + 1 : 0;
        double tx = sx - static_cast<double>(x0);
        double top = row0[x0] * (1.0 - tx) + row0[x1] * tx;
        double bot = row1[x0] * (1.0 - tx) + row1[x1] * tx;
        drow[col] = top * (1.0 - ty) + bot * ty;
    }
}

} // namespace

void bilinear_upsample_serial(const double* src, std::size_t sh, std::size_t sw,
                              double* dst, std::size_t dh, std::size_t dw) {
    for (std::size_t r = 0; r < dh; ++r) {
        bilinear_row(src, sh, sw, dst + r * dw, dh, dw, r);
    }
}

void bilinear_upsample(const double* src, std::size_t sh, std::size_t sw,
                       double* dst, std::size_t dh, std::size_t dw) {
    if (dh * dw < kParallelFlopThreshold) {
        bilinear_upsample_serial(src, sh, sw, dst, dh, dw);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (long long rr = 0; rr < static_cast<long long>(dh); ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        bilinear_row(src, sh, sw, dst + r * dw, dh, dw, r);
    }
}

} // namespace mga::kernels
