#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ebd/elements.hpp"
#include "ebd/geometry.hpp"
#include "ebd/molio.hpp"

using namespace ebd;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/ebd_test_") + name;
}

MoleculeRecord three_chain() {
    MoleculeRecord mol;
    mol.id = "chain3";
    mol.atoms = {{"C", 0}, {"C", 0}, {"C", 0}};
    mol.bonds = {{0, 1, 0}, {1, 2, 0}};
    mol.conformers = {{{0, 0, 0}, {1.54, 0, 0}, {2.5, 1.0, 0}}};
    return mol;
}

} // namespace

TEST_CASE("serialization round-trip is byte-identical on a toy corpus") {
    ToyCorpusSpec spec;
    spec.count = 20;
    spec.min_atoms = 4;
    spec.max_atoms = 10;
    spec.conformers_per_molecule = 2;
    const auto corpus = generate_toy_corpus(spec, 321);
    const std::string path = tmp_path("roundtrip.jsonl");
    write_molecules(path, corpus);
    const auto parsed = parse_molecules(path);
    REQUIRE(parsed.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        REQUIRE(serialize_molecule(parsed[i]) == serialize_molecule(corpus[i]));
    std::remove(path.c_str());
}

TEST_CASE("mapping matrix matches the hand pseudoinverse for assignment [0,0,1]") {
    Partition p;
    p.assignment = {0, 0, 1};
    p.m = 2;
    const MappingMatrix map(p);

    const Coords xa{{1, 2, 3}, {3, 4, 5}, {10, 20, 30}};
    // hand M-dagger = [[1/2,1/2,0],[0,0,1]]
    const Coords cf = map.centroids(xa);
    REQUIRE(cf.size() == 2);
    for (int c = 0; c < 3; ++c) {
        REQUIRE(cf[0][c] == Catch::Approx(0.5 * (xa[0][c] + xa[1][c])));
        REQUIRE(cf[1][c] == Catch::Approx(xa[2][c]));
    }
    // hand M = [[1,0],[1,0],[0,1]]
    const Coords lifted = map.lift(cf);
    REQUIRE(lifted.size() == 3);
    for (int c = 0; c < 3; ++c) {
        REQUIRE(lifted[0][c] == cf[0][c]);
        REQUIRE(lifted[1][c] == cf[0][c]);
        REQUIRE(lifted[2][c] == cf[1][c]);
    }
}

TEST_CASE("centroids-of-lift is the identity and projection is idempotent") {
    Rng rng(61);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + static_cast<int>(rng.uniform_int(5));
        const int n = m + static_cast<int>(rng.uniform_int(10));
        Partition p;
        p.m = m;
        p.assignment.resize(n);
        for (int i = 0; i < m; ++i) p.assignment[i] = i;   // every fragment non-empty
        for (int i = m; i < n; ++i) p.assignment[i] = static_cast<int>(rng.uniform_int(m));
        const MappingMatrix map(p);

        Coords xf(m), xa(n);
        for (auto& r : xf)
            for (int c = 0; c < 3; ++c) r[c] = rng.gaussian();
        for (auto& r : xa)
            for (int c = 0; c < 3; ++c) r[c] = rng.gaussian();

        const Coords back = map.centroids(map.lift(xf));
        for (int k = 0; k < m; ++k)
            for (int c = 0; c < 3; ++c) REQUIRE(back[k][c] == Catch::Approx(xf[k][c]).margin(1e-12));

        // projection onto the fragment-piecewise-constant subspace, computed
        // against the explicit dense projector M M-dagger
        const Coords proj = map.project(xa);
        const Coords proj2 = map.project(proj);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                double dense = 0;
                for (int j = 0; j < n; ++j)
                    if (p.assignment[i] == p.assignment[j])
                        dense += xa[j][c] / map.fragment_size(p.assignment[i]);
                REQUIRE(proj[i][c] == Catch::Approx(dense).margin(1e-12));
                REQUIRE(proj2[i][c] == Catch::Approx(proj[i][c]).margin(1e-12));
            }
    }
}

TEST_CASE("partition validation rejects malformed partitions") {
    const MoleculeRecord mol = three_chain();
    Partition ok;
    ok.assignment = {0, 0, 1};
    ok.m = 2;
    REQUIRE_NOTHROW(ok.validate(mol));

    Partition empty_frag;
    empty_frag.assignment = {0, 0, 0};
    empty_frag.m = 2;   // fragment 1 has no members
    REQUIRE_THROWS_AS(empty_frag.validate(mol), std::invalid_argument);

    Partition disconnected;
    disconnected.assignment = {0, 1, 0};   // atoms 0 and 2 are not bonded
    disconnected.m = 2;
    REQUIRE_THROWS_AS(disconnected.validate(mol), std::invalid_argument);

    Partition wrong_len;
    wrong_len.assignment = {0, 0};
    wrong_len.m = 1;
    REQUIRE_THROWS_AS(wrong_len.validate(mol), std::invalid_argument);
}

TEST_CASE("parser reports schema violations with line context") {
    const auto expect_error = [](const std::string& line, const std::string& needle) {
        try {
            parse_molecule_line(line, 1);
            FAIL("expected a parse error for: " + line);
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            INFO(msg);
            REQUIRE(msg.find("line 1") != std::string::npos);
            REQUIRE(msg.find(needle) != std::string::npos);
        }
    };
    expect_error("not json", "invalid JSON");
    expect_error("{\"atoms\":[{\"el\":\"C\",\"type\":0}]}", "id");
    expect_error("{\"id\":\"x\",\"atoms\":[]}", "atoms");
    expect_error("{\"id\":\"x\",\"atoms\":[{\"el\":\"C\",\"type\":0}],\"bonds\":[[0,5,0]]}",
                 "out of range");
    expect_error(
        "{\"id\":\"x\",\"atoms\":[{\"el\":\"C\",\"type\":0},{\"el\":\"C\",\"type\":0}],"
        "\"bonds\":[[0,1,0],[1,0,0]]}",
        "duplicate");
    expect_error(
        "{\"id\":\"x\",\"atoms\":[{\"el\":\"C\",\"type\":0},{\"el\":\"C\",\"type\":0}],\"bonds\":[]}",
        "disconnected");
    expect_error(
        "{\"id\":\"x\",\"atoms\":[{\"el\":\"C\",\"type\":0},{\"el\":\"C\",\"type\":0}],"
        "\"bonds\":[[0,1,0]],\"conformers\":[[[0,0,0]]]}",
        "conformers");
}

TEST_CASE("toy 4-atom chain uses ideal bond lengths") {
    ToyCorpusSpec spec;
    spec.count = 1;
    spec.min_atoms = 4;
    spec.max_atoms = 4;
    spec.conformers_per_molecule = 1;
    spec.ring_weight = 0;
    spec.branched_weight = 0;
    const auto corpus = generate_toy_corpus(spec, 17);
    REQUIRE(corpus.size() == 1);
    const auto& mol = corpus[0];
    REQUIRE(mol.bonds.size() == 3);
    const auto& x = mol.conformers.at(0);
    for (const auto& b : mol.bonds) {
        const double want = ideal_bond_length(mol.atoms[b.i].element, mol.atoms[b.j].element, b.order);
        REQUIRE(norm(x[b.i] - x[b.j]) == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("toy corpus emits the requested shape with distinct conformers") {
    ToyCorpusSpec spec;
    spec.count = 50;
    spec.min_atoms = 4;
    spec.max_atoms = 9;
    spec.conformers_per_molecule = 5;
    const auto corpus = generate_toy_corpus(spec, 2024);
    REQUIRE(corpus.size() == 50);
    for (const auto& mol : corpus) {
        REQUIRE(mol.conformers.size() == 5);
        REQUIRE(graph_connected(mol.atom_count(), mol.bonds));
        for (std::size_t a = 0; a < mol.conformers.size(); ++a)
            for (std::size_t b = a + 1; b < mol.conformers.size(); ++b)
                REQUIRE(aligned_rmsd(mol.conformers[a], mol.conformers[b]) > 0.0);
    }
    // determinism
    const auto again = generate_toy_corpus(spec, 2024);
    for (std::size_t i = 0; i < corpus.size(); ++i)
        REQUIRE(serialize_molecule(again[i]) == serialize_molecule(corpus[i]));
}

TEST_CASE("toy corpus rejects infeasible requests") {
    ToyCorpusSpec bad;
    bad.count = 0;
    REQUIRE_THROWS_AS(generate_toy_corpus(bad, 1), std::invalid_argument);
    ToyCorpusSpec bad2;
    bad2.min_atoms = 8;
    bad2.max_atoms = 4;
    REQUIRE_THROWS_AS(generate_toy_corpus(bad2, 1), std::invalid_argument);
}
