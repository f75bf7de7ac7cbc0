#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "ebd/diffusion.hpp"

using namespace ebd;

namespace {

struct Setup {
    MoleculeRecord mol;
    Partition part;
    CoarseStructure coarse;
    Conformer x0;
};

Setup make_setup(std::uint64_t seed, int n = 6) {
    Setup s;
    for (int i = 0; i < n; ++i) s.mol.atoms.push_back({"C", 0});
    for (int i = 1; i < n; ++i) s.mol.bonds.push_back({i - 1, i, 0});
    s.mol.id = "d" + std::to_string(seed);
    s.part.m = n / 2;
    s.part.assignment.resize(n);
    for (int i = 0; i < n; ++i) s.part.assignment[i] = i / 2;
    Rng rng(seed);
    Conformer raw(n);
    for (auto& r : raw)
        for (int c = 0; c < 3; ++c) r[c] = 2.0 * rng.gaussian();
    s.x0 = remove_mean(raw);
    Conformer ref(n);
    for (auto& r : ref)
        for (int c = 0; c < 3; ++c) r[c] = 2.0 * rng.gaussian();
    s.coarse = coarse_from_reference(s.mol, s.part, ref);
    return s;
}

bool bit_equal(const Coords& a, const Coords& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(Vec3)) == 0;
}

} // namespace

TEST_CASE("schedule defaults and validation") {
    DiffusionSchedule s;
    REQUIRE(s.T == 50);
    REQUIRE(s.sigma == 0.01);
    REQUIRE(s.delta == 0.0125);
    REQUIRE_NOTHROW(s.validate());
    s.T = 0;
    REQUIRE_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("blurring is bit-exact at both endpoints") {
    const Setup s = make_setup(1);
    const MappingMatrix map(s.part);
    REQUIRE(bit_equal(blur(s.x0, s.coarse, map, 0, 50), s.x0));
    REQUIRE(bit_equal(blur(s.x0, s.coarse, map, 50, 50), map.lift(s.coarse.frag_coords)));
    REQUIRE_THROWS_AS(blur(s.x0, s.coarse, map, 51, 50), std::invalid_argument);
    REQUIRE_THROWS_AS(blur(s.x0, s.coarse, map, -1, 50), std::invalid_argument);
}

TEST_CASE("blurring interpolates linearly between the endpoints") {
    const Setup s = make_setup(2);
    const MappingMatrix map(s.part);
    const Coords lifted = map.lift(s.coarse.frag_coords);
    for (int t = 1; t < 50; ++t) {
        const Coords xt = blur(s.x0, s.coarse, map, t, 50);
        const double w = t / 50.0;
        for (std::size_t i = 0; i < xt.size(); ++i)
            for (int c = 0; c < 3; ++c)
                REQUIRE(xt[i][c] ==
                        Catch::Approx((1 - w) * s.x0[i][c] + w * lifted[i][c]).margin(1e-14));
    }
}

TEST_CASE("fragment-subspace projection of the blurred state is conserved") {
    // with the coarse structure set to the ground truth's own centroids, the
    // projection onto the fragment-piecewise-constant subspace is constant in t
    const Setup base = make_setup(3);
    Setup s = base;
    const MappingMatrix map(s.part);
    s.coarse.frag_coords = map.centroids(s.x0);
    const Coords p0 = map.project(s.x0);
    for (int t = 0; t <= 50; ++t) {
        const Coords pt = map.project(blur(s.x0, s.coarse, map, t, 50));
        for (std::size_t i = 0; i < pt.size(); ++i)
            for (int c = 0; c < 3; ++c) REQUIRE(pt[i][c] == Catch::Approx(p0[i][c]).margin(1e-10));
    }
}

TEST_CASE("centered noise has zero center of mass") {
    Rng rng(44);
    for (int trial = 0; trial < 100; ++trial) {
        const Coords eps = centered_noise(7, 0.01, rng);
        Vec3 mean{0, 0, 0};
        for (const auto& r : eps) mean = mean + r;
        REQUIRE(norm(mean) < 1e-14);
    }
}

TEST_CASE("forward-sample noise variance matches sigma^2 (1 - 1/n) (Monte Carlo)") {
    const Setup s = make_setup(5);
    const MappingMatrix map(s.part);
    DiffusionSchedule sched;
    const int t = 20;
    const Coords center = blur(s.x0, s.coarse, map, t, sched.T);
    Rng rng(55);
    const int draws = 100000;
    double sumsq = 0;
    long long count = 0;
    for (int k = 0; k < draws / 100; ++k) {
        for (int rep = 0; rep < 100; ++rep) {
            const Coords xt = forward_sample(s.x0, s.coarse, map, t, sched, rng);
            for (std::size_t i = 0; i < xt.size(); ++i)
                for (int c = 0; c < 3; ++c) {
                    const double d = xt[i][c] - center[i][c];
                    sumsq += d * d;
                    ++count;
                }
        }
    }
    const double n = static_cast<double>(s.x0.size());
    const double want_std = sched.sigma * std::sqrt(1.0 - 1.0 / n);
    const double got_std = std::sqrt(sumsq / static_cast<double>(count));
    REQUIRE(got_std > 0.97 * want_std);
    REQUIRE(got_std < 1.03 * want_std);
}

TEST_CASE("forward sample with zero noise is the blur itself") {
    const Setup s = make_setup(6);
    const MappingMatrix map(s.part);
    DiffusionSchedule sched;
    sched.sigma = 0.0;
    Rng rng(66);
    for (int t : {0, 10, 50})
        REQUIRE(bit_equal(forward_sample(s.x0, s.coarse, map, t, sched, rng),
                          blur(s.x0, s.coarse, map, t, sched.T)));
}

TEST_CASE("prior sampling centers on the lifted coarse structure") {
    const Setup s = make_setup(7);
    const MappingMatrix map(s.part);
    DiffusionSchedule sched;

    DiffusionSchedule noiseless = sched;
    noiseless.delta = 0.0;
    Rng rng0(77);
    REQUIRE(bit_equal(prior_sample(s.coarse, map, noiseless, rng0), map.lift(s.coarse.frag_coords)));

    // with noise: mean over many draws approaches the lift, spread matches delta
    Rng rng(78);
    const int draws = 20000;
    Coords mean(s.x0.size(), Vec3{0, 0, 0});
    double sumsq = 0;
    const Coords lifted = map.lift(s.coarse.frag_coords);
    for (int k = 0; k < draws; ++k) {
        const Coords p = prior_sample(s.coarse, map, sched, rng);
        for (std::size_t i = 0; i < p.size(); ++i) {
            mean[i] = mean[i] + (1.0 / draws) * p[i];
            sumsq += dot(p[i] - lifted[i], p[i] - lifted[i]);
        }
    }
    for (std::size_t i = 0; i < mean.size(); ++i)
        REQUIRE(norm(mean[i] - lifted[i]) < 5e-4);
    const double n = static_cast<double>(s.x0.size());
    const double want_std = sched.delta * std::sqrt(1.0 - 1.0 / n);
    const double got_std = std::sqrt(sumsq / (draws * n * 3.0));
    REQUIRE(got_std > 0.97 * want_std);
    REQUIRE(got_std < 1.03 * want_std);
}
