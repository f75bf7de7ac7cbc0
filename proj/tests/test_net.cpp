#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <set>

#include "ebd/geometry.hpp"
#include "ebd/net.hpp"

using namespace ebd;

namespace {

NetworkConfig small_config() {
    NetworkConfig cfg;
    cfg.layers = 2;
    cfg.width = 8;
    cfg.hops = 2;
    cfg.time_dim = 4;
    return cfg;
}

struct Setup {
    MoleculeRecord mol;
    Partition part;
    Coords x;
};

Setup make_setup(std::uint64_t seed, int n = 6) {
    Setup s;
    Rng rng(seed);
    const std::vector<std::string> pool{"C", "N", "O"};
    for (int i = 0; i < n; ++i) {
        const int t = static_cast<int>(rng.uniform_int(3));
        s.mol.atoms.push_back({pool[t], t});
    }
    for (int i = 1; i < n; ++i)
        s.mol.bonds.push_back({static_cast<int>(rng.uniform_int(i)), i, 0});
    std::sort(s.mol.bonds.begin(), s.mol.bonds.end(),
              [](const Bond& a, const Bond& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    s.mol.id = "n" + std::to_string(seed);
    s.part.m = n / 2;
    s.part.assignment.resize(n);
    for (int i = 0; i < n; ++i) s.part.assignment[i] = std::min(i / 2, s.part.m - 1);
    // partitions must induce connected fragments; fall back to per-atom if not
    try {
        s.part.validate(s.mol);
    } catch (const std::invalid_argument&) {
        s.part.m = n;
        for (int i = 0; i < n; ++i) s.part.assignment[i] = i;
    }
    s.x.resize(n);
    for (auto& r : s.x)
        for (int c = 0; c < 3; ++c) r[c] = 1.5 * rng.gaussian();
    return s;
}

} // namespace

TEST_CASE("edge expansion classifies a 4-chain by bond, 2-hop, and 3-hop") {
    MoleculeRecord mol;
    for (int i = 0; i < 4; ++i) mol.atoms.push_back({"C", 0});
    mol.bonds = {{0, 1, 0}, {1, 2, 0}, {2, 3, 0}};
    NetworkConfig cfg;
    cfg.hops = 3;
    cfg.cutoff = 100.0;
    const Coords x{{0, 0, 0}, {1.5, 0, 0}, {3, 0, 0}, {4.5, 0, 0}};
    const EdgeSet edges = expand_edges(mol, x, cfg);

    const auto type_of = [&](int i, int j) {
        for (const auto& e : edges)
            if (e.i == i && e.j == j) return e.type;
        return -1;
    };
    for (const auto& [i, j] : std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 3}}) {
        REQUIRE(type_of(i, j) == 0);   // single bond
        REQUIRE(type_of(j, i) == 0);
    }
    REQUIRE(type_of(0, 2) == cfg.hop_type(2));
    REQUIRE(type_of(1, 3) == cfg.hop_type(2));
    REQUIRE(type_of(0, 3) == cfg.hop_type(3));
    REQUIRE(edges.size() == 12);   // 6 undirected pairs, both directions
}

TEST_CASE("edge expansion adds radius edges only within the cutoff") {
    MoleculeRecord mol;
    for (int i = 0; i < 3; ++i) mol.atoms.push_back({"C", 0});
    mol.bonds = {{0, 1, 0}, {1, 2, 0}};
    NetworkConfig cfg;
    cfg.hops = 1;   // no hop edges: 0-2 can only be a radius edge
    const Coords near{{0, 0, 0}, {1.5, 0, 0}, {3, 0, 0}};
    const Coords far{{0, 0, 0}, {9, 0, 0}, {18, 0, 0}};
    const auto has_02 = [&](const EdgeSet& edges) {
        for (const auto& e : edges)
            if (e.i == 0 && e.j == 2) return true;
        return false;
    };
    REQUIRE(has_02(expand_edges(mol, near, cfg)));
    REQUIRE_FALSE(has_02(expand_edges(mol, far, cfg)));
}

TEST_CASE("forward output is rotation-equivariant and translation-invariant") {
    const NetworkConfig cfg = small_config();
    for (int trial = 0; trial < 20; ++trial) {
        const Setup s = make_setup(3000 + trial);
        const Parameters params = init_parameters(cfg, 4000 + trial);
        const Coords out = forward(params, cfg, s.mol, s.part, s.x, 0.4);

        const Mat3 r = random_rotation(5000 + trial);
        Rng rng(6000 + trial);
        const Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
        const Coords out_moved =
            forward(params, cfg, s.mol, s.part, translate(apply_rotation(r, s.x), v), 0.4);
        const Coords want = apply_rotation(r, out);
        for (std::size_t i = 0; i < out.size(); ++i)
            for (int c = 0; c < 3; ++c)
                REQUIRE(out_moved[i][c] == Catch::Approx(want[i][c]).margin(1e-6));
    }
}

TEST_CASE("permuting atoms permutes the output rows identically") {
    const NetworkConfig cfg = small_config();
    const Setup s = make_setup(7000);
    const Parameters params = init_parameters(cfg, 7001);
    const Coords out = forward(params, cfg, s.mol, s.part, s.x, 0.7);

    const int n = static_cast<int>(s.mol.atom_count());
    Rng rng(7002);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

    Setup sp = s;
    for (int i = 0; i < n; ++i) {
        sp.mol.atoms[perm[i]] = s.mol.atoms[i];
        sp.part.assignment[perm[i]] = s.part.assignment[i];
        sp.x[perm[i]] = s.x[i];
    }
    for (auto& b : sp.mol.bonds) {
        b.i = perm[b.i];
        b.j = perm[b.j];
        if (b.i > b.j) std::swap(b.i, b.j);
    }
    const Coords out_p = forward(params, cfg, sp.mol, sp.part, sp.x, 0.7);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            REQUIRE(out_p[perm[i]][c] == Catch::Approx(out[i][c]).margin(1e-9));
}

TEST_CASE("freshly initialized network is the identity on centered input") {
    const NetworkConfig cfg = small_config();
    const Setup s = make_setup(8000);
    const Parameters params = init_parameters(cfg, 8001);
    const Coords out = forward(params, cfg, s.mol, s.part, s.x, 0.3);
    const Coords want = remove_mean(s.x);
    for (std::size_t i = 0; i < out.size(); ++i)
        for (int c = 0; c < 3; ++c) REQUIRE(out[i][c] == Catch::Approx(want[i][c]).margin(1e-12));
}

TEST_CASE("initialization is deterministic per seed") {
    const NetworkConfig cfg = small_config();
    const Parameters a = init_parameters(cfg, 9);
    const Parameters b = init_parameters(cfg, 9);
    const Parameters c = init_parameters(cfg, 10);
    REQUIRE(a.tensors.size() == b.tensors.size());
    bool identical = true, differs = false;
    for (const auto& [name, t] : a.tensors) {
        if (t.v != b.tensors.at(name).v) identical = false;
        if (t.v != c.tensors.at(name).v) differs = true;
    }
    REQUIRE(identical);
    REQUIRE(differs);
}

TEST_CASE("checkpoint round-trip is bit-exact and validates its header") {
    const NetworkConfig cfg = small_config();
    const Parameters params = init_parameters(cfg, 11);
    const std::string path = "/tmp/ebd_test_ckpt.bin";
    nlohmann::json extra;
    extra["note"] = 5;
    save_checkpoint(path, cfg, params, extra);

    const Checkpoint back = load_checkpoint(path);
    REQUIRE(back.config.layers == cfg.layers);
    REQUIRE(back.config.width == cfg.width);
    REQUIRE(back.extra.at("note").get<int>() == 5);
    REQUIRE(back.params.tensors.size() == params.tensors.size());
    for (const auto& [name, t] : params.tensors)
        REQUIRE(back.params.tensors.at(name).v == t.v);

    // corrupt the magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    REQUIRE_THROWS(load_checkpoint(path));
    std::remove(path.c_str());
    REQUIRE_THROWS(load_checkpoint(path));
}
