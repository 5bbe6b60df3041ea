#include "cdiff/kernels.hpp"

#include <cstring>

namespace cdiff::kernels {

namespace ref {

double dot(size_t n, const double* a, const double* b) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(size_t n, double alpha, const double* x, double* y) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add(size_t n, const double* a, const double* b, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(size_t n, const double* a, const double* b, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(size_t n, const double* a, const double* b, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(size_t n, double alpha, const double* x, double* out) {
    for (size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

double sum(size_t n, const double* x) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double a = A[static_cast<size_t>(i) * k + p];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
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
            double* crow = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

}  // namespace ref

namespace {

struct Table {
    double (*dot)(size_t, const double*, const double*);
    void (*axpy)(size_t, double, const double*, double*);
    void (*add)(size_t, const double*, const double*, double*);
    void (*sub)(size_t, const double*, const double*, double*);
    void (*mul)(size_t, const double*, const double*, double*);
    void (*scale)(size_t, double, const double*, double*);
    double (*sum)(size_t, const double*);
    void (*gemm_nn)(int, int, int, const double*, const double*, double*, bool);
    void (*gemm_nt)(int, int, int, const double*, const double*, double*, bool);
    void (*gemm_tn)(int, int, int, const double*, const double*, double*, bool);
};

constexpr Table kScalarTable{ref::dot, ref::axpy, ref::add,    ref::sub,     ref::mul,
                             ref::scale, ref::sum, ref::gemm_nn, ref::gemm_nt, ref::gemm_tn};

#ifdef CDIFF_BUILD_AVX2
constexpr Table kAvx2Table{avx2::dot, avx2::axpy, avx2::add,    avx2::sub,     avx2::mul,
                           avx2::scale, avx2::sum, avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn};
#endif

bool detect_avx2() {
#ifdef CDIFF_BUILD_AVX2
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

struct State {
    Backend backend;
    const Table* table;
    State() {
        if (detect_avx2()) {
            backend = Backend::avx2;
#ifdef CDIFF_BUILD_AVX2
            table = &kAvx2Table;
#else
            table = &kScalarTable;
#endif
        } else {
            backend = Backend::scalar;
            table = &kScalarTable;
        }
    }
};

State& state() {
    static State s;
    return s;
}

}  // namespace

bool avx2_available() { return detect_avx2(); }

Backend active_backend() { return state().backend; }

bool set_backend(Backend b) {
    if (b == Backend::avx2) {
        if (!detect_avx2()) return false;
#ifdef CDIFF_BUILD_AVX2
        state().backend = Backend::avx2;
        state().table = &kAvx2Table;
        return true;
#else
        return false;
#endif
    }
    state().backend = Backend::scalar;
    state().table = &kScalarTable;
    return true;
}

const char* backend_name() { return state().backend == Backend::avx2 ? "avx2" : "scalar"; }

double dot(size_t n, const double* a, const double* b) { return state().table->dot(n, a, b); }
void axpy(size_t n, double alpha, const double* x, double* y) { state().table->axpy(n, alpha, x, y); }
void add(size_t n, const double* a, const double* b, double* out) { state().table->add(n, a, b, out); }
void sub(size_t n, const double* a, const double* b, double* out) { state().table->sub(n, a, b, out); }
void mul(size_t n, const double* a, const double* b, double* out) { state().table->mul(n, a, b, out); }
void scale(size_t n, double alpha, const double* x, double* out) { state().table->scale(n, alpha, x, out); }
double sum(size_t n, const double* x) { return state().table->sum(n, x); }
void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    state().table->gemm_nn(m, n, k, A, B, C, accumulate);
}
void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    state().table->gemm_nt(m, n, k, A, B, C, accumulate);
}
void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C, bool accumulate) {
    state().table->gemm_tn(m, n, k, A, B, C, accumulate);
}

}  // namespace cdiff::kernels
