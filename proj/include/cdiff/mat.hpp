#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cdiff/errors.hpp"

namespace cdiff {

// Dense row-major double matrix. The single numeric container of the project:
// connectomes, BOLD series, embeddings, parameters and feature maps are all
// Mats (feature maps carry their spatial dims alongside, as op metadata).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, double fill) : rows(r), cols(c), d(static_cast<size_t>(r) * c, fill) {}

    static Mat zeros(int r, int c) { return Mat(r, c); }

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return d.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }

    void fill(double v) { std::fill(d.begin(), d.end(), v); }

    bool all_finite() const {
        for (double v : d)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline void check_same_shape(const Mat& a, const Mat& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": " + a.shape_str() + " vs " + b.shape_str());
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline double frobenius_distance(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "frobenius_distance");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double dv = a.d[i] - b.d[i];
        s += dv * dv;
    }
    return std::sqrt(s);
}

inline double mean_abs_difference(const Mat& a, const Mat& b) {
    check_same_shape(a, b, "mean_abs_difference");
    if (a.size() == 0) return 0.0;
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::fabs(a.d[i] - b.d[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace cdiff
