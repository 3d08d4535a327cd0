#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "prop/error.hpp"

namespace prop {

using Vector = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return a.size(); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (double x : m.a)
        if (!std::isfinite(x)) return false;
    return true;
}

// y = W x
inline Vector matvec(const Matrix& w, const Vector& x) {
    if (static_cast<int>(x.size()) != w.cols)
        throw Error(ErrorKind::Logic, "matvec: dimension mismatch");
    Vector y(w.rows, 0.0);
    for (int r = 0; r < w.rows; ++r) {
        double s = 0.0;
        const double* row = &w.a[static_cast<std::size_t>(r) * w.cols];
        for (int c = 0; c < w.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

// y = W^T x
inline Vector matvec_t(const Matrix& w, const Vector& x) {
    if (static_cast<int>(x.size()) != w.rows)
        throw Error(ErrorKind::Logic, "matvec_t: dimension mismatch");
    Vector y(w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
        const double* row = &w.a[static_cast<std::size_t>(r) * w.cols];
        for (int c = 0; c < w.cols; ++c) y[c] += row[c] * x[r];
    }
    return y;
}

// M += u v^T
inline void add_outer(Matrix& m, const Vector& u, const Vector& v) {
    for (int r = 0; r < m.rows; ++r) {
        double* row = &m.a[static_cast<std::size_t>(r) * m.cols];
        for (int c = 0; c < m.cols; ++c) row[c] += u[r] * v[c];
    }
}

inline double l2_distance(const Vector& u, const Vector& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double d = u[i] - v[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace prop
