#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ebd/spectral.hpp"

using namespace ebd;

namespace {

MoleculeRecord path_molecule(int n) {
    MoleculeRecord mol;
    mol.id = "path" + std::to_string(n);
    for (int i = 0; i < n; ++i) mol.atoms.push_back({"C", 0});
    for (int i = 1; i < n; ++i) mol.bonds.push_back({i - 1, i, 0});
    return mol;
}

MoleculeRecord cycle_molecule(int n) {
    MoleculeRecord mol = path_molecule(n);
    mol.id = "cycle" + std::to_string(n);
    mol.bonds.push_back({0, n - 1, 0});
    return mol;
}

Coords random_coords(int n, Rng& rng) {
    Coords x(n);
    for (auto& r : x)
        for (int c = 0; c < 3; ++c) r[c] = 2.0 * rng.gaussian();
    return x;
}

} // namespace

TEST_CASE("2-path Laplacian spectrum is {0, 2}") {
    const LaplacianSpectrum s = eigendecompose(graph_laplacian(path_molecule(2)));
    REQUIRE(s.eigenvalues[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(s.eigenvalues[1] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("n-cycle eigenvalues follow the circulant closed form") {
    const int n = 8;
    const LaplacianSpectrum s = eigendecompose(graph_laplacian(cycle_molecule(n)));
    std::vector<double> want;
    for (int k = 0; k < n; ++k) want.push_back(2.0 - 2.0 * std::cos(2.0 * M_PI * k / n));
    std::sort(want.begin(), want.end());
    for (int k = 0; k < n; ++k) REQUIRE(s.eigenvalues[k] == Catch::Approx(want[k]).margin(1e-9));
}

TEST_CASE("identity matrix has all unit eigenvalues") {
    SymMatrix m(4);
    for (int i = 0; i < 4; ++i) m.at(i, i) = 1.0;
    const LaplacianSpectrum s = eigendecompose(m);
    for (double v : s.eigenvalues) REQUIRE(v == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("PSD mass distribution and Parseval identity") {
    const MoleculeRecord mol = path_molecule(6);
    const LaplacianSpectrum s = eigendecompose(graph_laplacian(mol));

    // constant rows: all mass on the lambda = 0 mode
    const Coords flat(6, Vec3{1.0, -2.0, 0.5});
    const std::vector<double> p_flat = psd(flat, s);
    for (std::size_t k = 1; k < p_flat.size(); ++k) REQUIRE(p_flat[k] < 1e-18);
    REQUIRE(p_flat[0] > 0.0);

    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        const Coords x = random_coords(6, rng);
        const std::vector<double> p = psd(x, s);
        double total = 0, fro = 0;
        for (double v : p) {
            REQUIRE(v >= 0.0);
            total += v;
        }
        for (const auto& r : x) fro += dot(r, r);
        REQUIRE(total == Catch::Approx(fro / 3.0).margin(1e-9));

        // centered input is orthogonal to the constant mode
        const std::vector<double> pc = psd(remove_mean(x), s);
        REQUIRE(pc[0] < 1e-18);
    }
}

TEST_CASE("heat kernel: identity at tau=0, closed form on the 2-path, semigroup") {
    const MoleculeRecord two = path_molecule(2);
    const LaplacianSpectrum s2 = eigendecompose(graph_laplacian(two));
    Rng rng(102);
    const Coords x = random_coords(2, rng);

    const Coords id = heat_kernel_blur(x, s2, 0.0);
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c) REQUIRE(id[i][c] == Catch::Approx(x[i][c]).margin(1e-12));

    // spectrum {0,2}: output = mean + exp(-2 tau) (x - mean)
    for (double tau : {0.1, 0.5 * std::log(2.0), 2.0}) {
        const Coords got = heat_kernel_blur(x, s2, tau);
        const Vec3 mean = 0.5 * (x[0] + x[1]);
        const double damp = std::exp(-2.0 * tau);
        for (int i = 0; i < 2; ++i)
            for (int c = 0; c < 3; ++c)
                REQUIRE(got[i][c] ==
                        Catch::Approx(mean[c] + damp * (x[i][c] - mean[c])).margin(1e-12));
    }

    // semigroup on a larger graph
    const MoleculeRecord six = path_molecule(6);
    const LaplacianSpectrum s6 = eigendecompose(graph_laplacian(six));
    const Coords y = random_coords(6, rng);
    const Coords ab = heat_kernel_blur(heat_kernel_blur(y, s6, 0.7), s6, 1.1);
    const Coords once = heat_kernel_blur(y, s6, 1.8);
    for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 3; ++c) REQUIRE(ab[i][c] == Catch::Approx(once[i][c]).margin(1e-8));

    // long-time limit: every row converges to the mean row
    const Coords limit = heat_kernel_blur(y, s6, 1000.0);
    Vec3 mean{0, 0, 0};
    for (const auto& r : y) mean = mean + r;
    mean = (1.0 / 6.0) * mean;
    for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 3; ++c) REQUIRE(limit[i][c] == Catch::Approx(mean[c]).margin(1e-6));

    REQUIRE_THROWS_AS(heat_kernel_blur(y, s6, -0.1), std::invalid_argument);
}

TEST_CASE("process tags parse and reject unknown names") {
    REQUIRE(parse_process("blurring") == ForwardProcess::Blurring);
    REQUIRE(parse_process("gaussian") == ForwardProcess::Gaussian);
    REQUIRE(parse_process("heat") == ForwardProcess::Heat);
    REQUIRE_THROWS_AS(parse_process("brownian"), std::invalid_argument);
}

TEST_CASE("blurring trajectory conserves the fragment-subspace projection norm") {
    const MoleculeRecord mol = path_molecule(6);
    Partition part;
    part.assignment = {0, 0, 1, 1, 2, 2};
    part.m = 3;
    const MappingMatrix map(part);
    Rng rng(103);
    const Coords x0 = remove_mean(random_coords(6, rng));
    CoarseStructure coarse;
    coarse.partition = part;
    coarse.frag_coords = map.centroids(x0);   // ground truth's own centroids
    DiffusionSchedule sched;

    double norm0 = -1;
    for (int t = 0; t <= sched.T; ++t) {
        const Coords xt = blur(x0, coarse, map, t, sched.T);
        const Coords proj = map.project(xt);
        double n2 = 0;
        for (const auto& r : proj) n2 += dot(r, r);
        if (norm0 < 0) norm0 = n2;
        REQUIRE(n2 == Catch::Approx(norm0).margin(1e-10));
    }
}

TEST_CASE("gaussian trajectory PSD grows at most indices (Monte Carlo)") {
    const MoleculeRecord mol = path_molecule(6);
    Partition part;
    part.assignment = {0, 0, 0, 1, 1, 1};
    part.m = 2;
    const MappingMatrix map(part);
    Rng seed_rng(104);
    const Coords x0 = remove_mean(random_coords(6, seed_rng));
    CoarseStructure coarse;
    coarse.partition = part;
    coarse.frag_coords = map.centroids(x0);
    DiffusionSchedule sched;

    const int seeds = 100;
    std::vector<std::vector<double>> mean_rows;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(200, "psd", s));
        const auto rows = trajectory_psd(ForwardProcess::Gaussian, mol, x0, coarse, map, sched, rng);
        if (mean_rows.empty()) mean_rows.assign(rows.size(), std::vector<double>(rows[0].size(), 0.0));
        for (std::size_t t = 0; t < rows.size(); ++t)
            for (std::size_t k = 0; k < rows[t].size(); ++k) mean_rows[t][k] += rows[t][k] / seeds;
    }
    // compare start vs end of the averaged trajectory, skipping the centered
    // zero mode, and require growth at >= 80% of the remaining indices
    int grew = 0, considered = 0;
    for (std::size_t k = 1; k < mean_rows[0].size(); ++k) {
        ++considered;
        if (mean_rows.back()[k] > mean_rows.front()[k]) ++grew;
    }
    REQUIRE(grew * 5 >= considered * 4);
}

TEST_CASE("heat trajectory PSD decays exactly as exp(-2 lambda tau)") {
    const MoleculeRecord mol = path_molecule(5);
    Partition part;
    part.assignment = {0, 0, 0, 1, 1};
    part.m = 2;
    const MappingMatrix map(part);
    Rng rng(105);
    const Coords x0 = remove_mean(random_coords(5, rng));
    CoarseStructure coarse;
    coarse.partition = part;
    coarse.frag_coords = map.centroids(x0);
    DiffusionSchedule sched;

    const LaplacianSpectrum s = eigendecompose(graph_laplacian(mol));
    const auto rows = trajectory_psd(ForwardProcess::Heat, mol, x0, coarse, map, sched, rng);
    REQUIRE(static_cast<int>(rows.size()) == sched.T + 1);
    for (int t = 0; t <= sched.T; ++t) {
        const double tau = 5.0 * static_cast<double>(t) / sched.T;
        for (std::size_t k = 1; k < rows[t].size(); ++k) {
            const double want = std::exp(-2.0 * s.eigenvalues[k] * tau) * rows[0][k];
            REQUIRE(rows[t][k] == Catch::Approx(want).margin(1e-9));
        }
    }
}

TEST_CASE("PSD CSV has a header and one row per time step") {
    const MoleculeRecord mol = path_molecule(4);
    Partition part;
    part.assignment = {0, 0, 1, 1};
    part.m = 2;
    const MappingMatrix map(part);
    Rng rng(106);
    const Coords x0 = remove_mean(random_coords(4, rng));
    CoarseStructure coarse;
    coarse.partition = part;
    coarse.frag_coords = map.centroids(x0);
    DiffusionSchedule sched;
    const auto rows = trajectory_psd(ForwardProcess::Blurring, mol, x0, coarse, map, sched, rng);

    const std::string path = "/tmp/ebd_test_psd.csv";
    write_psd_csv(path, rows);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "t,psd_0,psd_1,psd_2,psd_3");
    int count = 0;
    while (std::getline(in, line)) ++count;
    REQUIRE(count == sched.T + 1);
    std::remove(path.c_str());
}
