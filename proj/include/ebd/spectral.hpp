#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebd/diffusion.hpp"
#include "ebd/linalg.hpp"
#include "ebd/molio.hpp"

namespace ebd {

struct LaplacianSpectrum {
    std::vector<double> eigenvalues;             // ascending, lambda_0 = 0 for connected graphs
    std::vector<std::vector<double>> eigenvectors;   // eigenvectors[k][i]
};

/// Combinatorial Laplacian L = D - A on the bonded graph.
inline SymMatrix graph_laplacian(const MoleculeRecord& mol) {
    const std::size_t n = mol.atom_count();
    SymMatrix l(n);
    for (const auto& b : mol.bonds) {
        l.at(b.i, b.j) -= 1.0;
        l.at(b.j, b.i) -= 1.0;
        l.at(b.i, b.i) += 1.0;
        l.at(b.j, b.j) += 1.0;
    }
    return l;
}

inline LaplacianSpectrum eigendecompose(const SymMatrix& l) {
    const EigenDecomposition e = jacobi_eigen(l);
    return LaplacianSpectrum{e.values, e.vectors};
}

/// PSD_i = (1/3) sum over coordinate axes of |V_i^T x^c|^2.
inline std::vector<double> psd(const Coords& x, const LaplacianSpectrum& spectrum) {
    const std::size_t n = x.size();
    if (spectrum.eigenvalues.size() != n) throw std::invalid_argument("psd: shape mismatch");
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        for (int c = 0; c < 3; ++c) {
            double proj = 0;
            for (std::size_t i = 0; i < n; ++i) proj += spectrum.eigenvectors[k][i] * x[i][c];
            out[k] += proj * proj;
        }
        out[k] /= 3.0;
    }
    return out;
}

/// Heat-kernel reference operator: V exp(-lambda tau) V^T applied columnwise.
inline Coords heat_kernel_blur(const Coords& x, const LaplacianSpectrum& spectrum, double tau) {
    if (tau < 0) throw std::invalid_argument("heat_kernel_blur: negative tau");
    const std::size_t n = x.size();
    if (spectrum.eigenvalues.size() != n) throw std::invalid_argument("heat_kernel_blur: shape mismatch");
    Coords out(n, Vec3{0, 0, 0});
    for (std::size_t k = 0; k < n; ++k) {
        const double damp = std::exp(-spectrum.eigenvalues[k] * tau);
        for (int c = 0; c < 3; ++c) {
            double proj = 0;
            for (std::size_t i = 0; i < n; ++i) proj += spectrum.eigenvectors[k][i] * x[i][c];
            proj *= damp;
            for (std::size_t i = 0; i < n; ++i) out[i][c] += spectrum.eigenvectors[k][i] * proj;
        }
    }
    return out;
}

enum class ForwardProcess { Blurring, Gaussian, Heat };

inline ForwardProcess parse_process(const std::string& tag) {
    if (tag == "blurring") return ForwardProcess::Blurring;
    if (tag == "gaussian") return ForwardProcess::Gaussian;
    if (tag == "heat") return ForwardProcess::Heat;
    throw std::invalid_argument("unknown process: " + tag);
}

// Per-step std of the comparison gaussian process, chosen so the cumulative
// std at T is 1.5 Angstrom (typical conformer scale at desk size).
inline double gaussian_step_std(const DiffusionSchedule& schedule) {
    return 1.5 / std::sqrt(static_cast<double>(schedule.T));
}

/// PSD of x_t for t = 0..T under the selected forward process, one row per t.
inline std::vector<std::vector<double>> trajectory_psd(ForwardProcess process, const MoleculeRecord& mol,
                                                       const Coords& x0, const CoarseStructure& coarse,
                                                       const MappingMatrix& map,
                                                       const DiffusionSchedule& schedule, Rng& rng) {
    const LaplacianSpectrum spectrum = eigendecompose(graph_laplacian(mol));
    std::vector<std::vector<double>> rows;
    const Coords x0c = remove_mean(x0);

    if (process == ForwardProcess::Blurring) {
        for (int t = 0; t <= schedule.T; ++t)
            rows.push_back(psd(remove_mean(blur(x0c, coarse, map, t, schedule.T)), spectrum));
    } else if (process == ForwardProcess::Gaussian) {
        Coords x = x0c;
        rows.push_back(psd(remove_mean(x), spectrum));
        const double step = gaussian_step_std(schedule);
        for (int t = 1; t <= schedule.T; ++t) {
            const Coords eps = centered_noise(x.size(), step, rng);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + eps[i];
            rows.push_back(psd(remove_mean(x), spectrum));
        }
    } else {
        // heat: tau grows linearly with t; tau at T chosen to reach near-full blur
        const double tau_max = 5.0;
        for (int t = 0; t <= schedule.T; ++t) {
            const double tau = tau_max * static_cast<double>(t) / schedule.T;
            rows.push_back(psd(remove_mean(heat_kernel_blur(x0c, spectrum, tau)), spectrum));
        }
    }
    return rows;
}

inline void write_psd_csv(const std::string& path, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open PSD output: " + path);
    if (rows.empty()) return;
    out << "t";
    for (std::size_t i = 0; i < rows[0].size(); ++i) out << ",psd_" << i;
    out << '\n';
    for (std::size_t t = 0; t < rows.size(); ++t) {
        out << t;
        char buf[40];
        for (double v : rows[t]) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

} // namespace ebd
