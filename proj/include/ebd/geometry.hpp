#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ebd/linalg.hpp"
#include "ebd/rng.hpp"

namespace ebd {

/// Subtracts the row mean; output column sums are zero to machine precision.
inline Coords remove_mean(const Coords& x) {
    if (x.empty()) throw std::invalid_argument("remove_mean: empty input");
    Vec3 mean{0, 0, 0};
    for (const auto& r : x) mean = mean + r;
    mean = (1.0 / static_cast<double>(x.size())) * mean;
    Coords y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - mean;
    return y;
}

namespace detail {

// Eigendecomposition of a symmetric 3x3 matrix via the dense Jacobi solver.
inline void sym3_eigen(const Mat3& a, Mat3& vecs, Vec3& vals) {
    SymMatrix m(3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.at(i, j) = a[i][j];
    const EigenDecomposition e = jacobi_eigen(m, 1e-14, 60);
    // descending order; vecs columns are eigenvectors
    for (int k = 0; k < 3; ++k) {
        vals[k] = e.values[2 - k];
        for (int i = 0; i < 3; ++i) vecs[i][k] = e.vectors[2 - k][i];
    }
}

} // namespace detail

/// Optimal proper rotation R minimizing ||Q - P R^T||_F for centered P, Q,
/// via SVD of the 3x3 cross-covariance H = P^T Q with reflection correction.
inline Mat3 kabsch(const Coords& p, const Coords& q) {
    if (p.size() != q.size() || p.size() < 2)
        throw std::invalid_argument("kabsch: shape mismatch or n < 2");
    for (std::size_t i = 0; i < p.size(); ++i)
        for (int c = 0; c < 3; ++c)
            if (!std::isfinite(p[i][c]) || !std::isfinite(q[i][c]))
                throw std::invalid_argument("kabsch: non-finite input");

    Mat3 h{};
    for (std::size_t i = 0; i < p.size(); ++i)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) h[a][b] += p[i][a] * q[i][b];

    // SVD of H through the eigendecompositions of H^T H (right vectors V) and
    // recovered left vectors U = H V / sigma; small singular values fall back
    // to completing an orthonormal basis, keeping degenerate inputs valid.
    Mat3 hth = mat3_mul(mat3_transpose(h), h);
    Mat3 v{};
    Vec3 lam{};
    detail::sym3_eigen(hth, v, lam);

    Vec3 sigma{};
    for (int k = 0; k < 3; ++k) sigma[k] = std::sqrt(std::max(lam[k], 0.0));

    const double scale = std::max(sigma[0], 1e-300);
    Mat3 u{};
    for (int k = 0; k < 3; ++k) {
        Vec3 vk{v[0][k], v[1][k], v[2][k]};
        Vec3 uk = mat3_apply(h, vk);
        if (sigma[k] > 1e-10 * scale) {
            uk = (1.0 / sigma[k]) * uk;
        } else if (k == 2) {
            Vec3 u0{u[0][0], u[1][0], u[2][0]};
            Vec3 u1{u[0][1], u[1][1], u[2][1]};
            uk = cross(u0, u1);
        } else if (k == 1) {
            // rank 1: pick a deterministic unit vector orthogonal to u0
            Vec3 u0{u[0][0], u[1][0], u[2][0]};
            Vec3 t = std::abs(u0[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
            uk = cross(u0, t);
            const double nn = norm(uk);
            uk = (1.0 / (nn > 0 ? nn : 1.0)) * uk;
        } else {
            // rank 0 (H ~ 0): no preferred direction, fall back to the axes
            uk = Vec3{1, 0, 0};
        }
        for (int i = 0; i < 3; ++i) u[i][k] = uk[i];
    }

    // re-orthonormalize U (Gram-Schmidt) to absorb roundoff from H V / sigma
    for (int k = 0; k < 3; ++k) {
        Vec3 uk{u[0][k], u[1][k], u[2][k]};
        for (int j = 0; j < k; ++j) {
            Vec3 uj{u[0][j], u[1][j], u[2][j]};
            uk = uk - dot(uk, uj) * uj;
        }
        const double nn = norm(uk);
        uk = (1.0 / (nn > 0 ? nn : 1.0)) * uk;
        for (int i = 0; i < 3; ++i) u[i][k] = uk[i];
    }

    const double d = mat3_det(mat3_mul(v, mat3_transpose(u)));
    Mat3 corr = mat3_identity();
    corr[2][2] = d >= 0 ? 1.0 : -1.0;
    return mat3_mul(mat3_mul(v, corr), mat3_transpose(u));
}

/// Kabsch-aligned RMSD: sqrt(||P' - Q'||_F^2 / n) after centering both and
/// rotating P onto Q.
inline double aligned_rmsd(const Coords& p_in, const Coords& q_in) {
    if (p_in.size() != q_in.size()) throw std::invalid_argument("aligned_rmsd: shape mismatch");
    const std::size_t n = p_in.size();
    if (n == 0) throw std::invalid_argument("aligned_rmsd: empty input");
    // canonical argument order: the value is symmetric, ordering makes it
    // bit-identical under argument swap
    bool swap_args = false;
    for (std::size_t i = 0; i < n && !swap_args; ++i)
        for (int c = 0; c < 3; ++c) {
            if (q_in[i][c] < p_in[i][c]) {
                swap_args = true;
                break;
            }
            if (q_in[i][c] > p_in[i][c]) {
                i = n - 1;
                break;
            }
        }
    const Coords& p = swap_args ? q_in : p_in;
    const Coords& q = swap_args ? p_in : q_in;
    const Coords pc = remove_mean(p);
    const Coords qc = remove_mean(q);
    if (n == 1) return 0.0;
    const Mat3 r = kabsch(pc, qc);
    // row convention: aligned P rows are R applied to P rows
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = mat3_apply(r, pc[i]) - qc[i];
        s += dot(d, d);
    }
    return std::sqrt(std::max(s, 0.0) / static_cast<double>(n));
}

/// Uniform random rotation over SO(3) (quaternion method), deterministic per seed.
inline Mat3 random_rotation(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "rotation"));
    double q[4];
    double nn = 0;
    do {
        nn = 0;
        for (double& c : q) {
            c = rng.gaussian();
            nn += c * c;
        }
    } while (nn < 1e-12);
    const double inv = 1.0 / std::sqrt(nn);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

/// Minimum-cost assignment on a square cost matrix (Jonker-Volgenant style
/// augmenting paths, O(K^3)). Returns row -> column.
inline std::vector<int> linear_sum_assignment(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) throw std::invalid_argument("linear_sum_assignment: empty cost");
    for (const auto& row : cost) {
        if (static_cast<int>(row.size()) != n)
            throw std::invalid_argument("linear_sum_assignment: non-square cost");
        for (double c : row)
            if (!std::isfinite(c)) throw std::invalid_argument("linear_sum_assignment: non-finite cost");
    }

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> result(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j]) result[p[j] - 1] = j - 1;
    return result;
}

} // namespace ebd
