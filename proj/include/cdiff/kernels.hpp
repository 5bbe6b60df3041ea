#pragma once

#include <cstddef>

namespace cdiff::kernels {

// Data-parallel inner loops behind every matrix op in the project. Two
// implementations exist: portable scalar reference kernels and AVX2+FMA
// variants. The backend is chosen at runtime from cpuid; tests force each
// backend in turn and check equivalence. Transcendentals (exp, log) stay
// scalar everywhere, so backends differ only in accumulation order.
enum class Backend { scalar, avx2 };

Backend active_backend();
// Returns false if the requested backend is not available on this CPU/build.
bool set_backend(Backend b);
const char* backend_name();
bool avx2_available();

double dot(size_t n, const double* a, const double* b);
void axpy(size_t n, double alpha, const double* x, double* y);  // y += alpha*x
void add(size_t n, const double* a, const double* b, double* out);
void sub(size_t n, const double* a, const double* b, double* out);
void mul(size_t n, const double* a, const double* b, double* out);
void scale(size_t n, double alpha, const double* x, double* out);
double sum(size_t n, const double* x);

// Row-major GEMM. A is m x k, result C is m x n. B is k x n for gemm_nn,
// n x k for gemm_nt (C = A * B^T), and for gemm_tn A is k x m, B is k x n
// (C = A^T * B). When accumulate is false C is overwritten.
void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);

namespace ref {
// Scalar reference kernels, always available; the equivalence oracle.
double dot(size_t n, const double* a, const double* b);
void axpy(size_t n, double alpha, const double* x, double* y);
void add(size_t n, const double* a, const double* b, double* out);
void sub(size_t n, const double* a, const double* b, double* out);
void mul(size_t n, const double* a, const double* b, double* out);
void scale(size_t n, double alpha, const double* x, double* out);
double sum(size_t n, const double* x);
void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
}  // namespace ref

#ifdef CDIFF_BUILD_AVX2
namespace avx2 {
double dot(size_t n, const double* a, const double* b);
void axpy(size_t n, double alpha, const double* x, double* y);
void add(size_t n, const double* a, const double* b, double* out);
void sub(size_t n, const double* a, const double* b, double* out);
void mul(size_t n, const double* a, const double* b, double* out);
void scale(size_t n, double alpha, const double* x, double* out);
double sum(size_t n, const double* x);
void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate);
}  // namespace avx2
#endif

}  // namespace cdiff::kernels
