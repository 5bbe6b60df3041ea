#include "cdiff/kernels.hpp"

#ifdef CDIFF_BUILD_AVX2

#include <immintrin.h>

#include <cstring>

namespace cdiff::kernels::avx2 {

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}
}  // namespace

double dot(size_t n, const double* a, const double* b) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(size_t n, double alpha, const double* x, double* y) {
    __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(y + i, r);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(size_t n, const double* a, const double* b, double* out) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(size_t n, const double* a, const double* b, double* out) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(size_t n, const double* a, const double* b, double* out) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(size_t n, double alpha, const double* x, double* out) {
    __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

double sum(size_t n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double a = A[static_cast<size_t>(i) * k + p];
            if (a == 0.0) continue;
            axpy(static_cast<size_t>(n), a, B + static_cast<size_t>(p) * n, crow);
        }
    }
}

void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<size_t>(i) * k;
        double* crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            double s = dot(static_cast<size_t>(k), arow, B + static_cast<size_t>(j) * k);
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int p = 0; p < k; ++p) {
        const double* arow = A + static_cast<size_t>(p) * m;
        const double* brow = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            double a = arow[i];
            if (a == 0.0) continue;
            axpy(static_cast<size_t>(n), a, brow, C + static_cast<size_t>(i) * n);
        }
    }
}

}  // namespace cdiff::kernels::avx2

#endif  // CDIFF_BUILD_AVX2
