#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ebd {

using Vec3 = std::array<double, 3>;
using Coords = std::vector<Vec3>;   // n x 3, Angstrom
using Mat3 = std::array<Vec3, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Mat3 mat3_identity() {
    return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
            c[i][j] = s;
        }
    return c;
}

inline Mat3 mat3_transpose(const Mat3& a) {
    Mat3 t{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
    return t;
}

inline Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
    return {dot(a[0], v), dot(a[1], v), dot(a[2], v)};
}

inline double mat3_det(const Mat3& a) {
    return dot(a[0], cross(a[1], a[2]));
}

// y = x * A^T, applied row-wise (each row treated as a row vector)
inline Coords apply_rotation(const Mat3& r, const Coords& x) {
    Coords y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = mat3_apply(r, x[i]);
    return y;
}

inline Coords translate(const Coords& x, const Vec3& v) {
    Coords y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + v;
    return y;
}

inline double frobenius_sq(const Coords& a, const Coords& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vec3 d = a[i] - b[i];
        s += dot(d, d);
    }
    return s;
}

// Dense symmetric matrix in row-major storage.
struct SymMatrix {
    std::size_t n = 0;
    std::vector<double> a;   // n*n

    explicit SymMatrix(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
    double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct EigenDecomposition {
    std::vector<double> values;                  // ascending
    std::vector<std::vector<double>> vectors;    // vectors[k] = k-th eigenvector
};

// Cyclic Jacobi eigensolver for dense symmetric matrices. Adequate for the
// desk-scale sizes here (n up to a few hundred).
inline EigenDecomposition jacobi_eigen(SymMatrix m, double off_tol = 1e-12, int max_sweeps = 100) {
    const std::size_t n = m.n;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-9)
                throw std::invalid_argument("jacobi_eigen: asymmetric input");

    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;   // v[i][k]: i-th entry of k-th vector

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += m.at(i, j) * m.at(i, j);
        if (std::sqrt(2.0 * off) < off_tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < off_tol * 1e-3) continue;
                const double app = m.at(p, p), aqq = m.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = m.at(k, p), akq = m.at(k, q);
                    m.at(k, p) = c * akp - s * akq;
                    m.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = m.at(p, k), aqk = m.at(q, k);
                    m.at(p, k) = c * apk - s * aqk;
                    m.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = m.at(i, i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return diag[a] < diag[b]; });

    EigenDecomposition out;
    out.values.resize(n);
    out.vectors.assign(n, std::vector<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = diag[order[k]];
        for (std::size_t i = 0; i < n; ++i) out.vectors[k][i] = v[i][order[k]];
        // sign convention: largest-magnitude entry positive
        std::size_t imax = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(out.vectors[k][i]) > std::abs(out.vectors[k][imax])) imax = i;
        if (out.vectors[k][imax] < 0)
            for (auto& e : out.vectors[k]) e = -e;
    }
    return out;
}

} // namespace ebd
