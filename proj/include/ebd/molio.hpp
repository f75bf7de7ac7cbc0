#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebd/elements.hpp"
#include "ebd/linalg.hpp"
#include "ebd/rng.hpp"

namespace ebd {

struct Atom {
    std::string element;
    int type_index = 0;
};

struct Bond {
    int i = 0;
    int j = 0;     // stored with i < j
    int order = 0; // single/double/triple/aromatic -> 0..3
};

using Conformer = Coords;

struct MoleculeRecord {
    std::string id;
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::vector<Conformer> conformers;            // ground truth
    std::vector<Conformer> reference_conformers;  // surrogate-embedded
    std::vector<Conformer> generated_conformers;  // sampler output

    std::size_t atom_count() const { return atoms.size(); }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(atoms.size());
        for (const auto& b : bonds) {
            adj[b.i].push_back(b.j);
            adj[b.j].push_back(b.i);
        }
        return adj;
    }
};

inline bool graph_connected(std::size_t n, const std::vector<Bond>& bonds) {
    if (n == 0) return false;
    std::vector<std::vector<int>> adj(n);
    for (const auto& b : bonds) {
        adj[b.i].push_back(b.j);
        adj[b.j].push_back(b.i);
    }
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    return count == n;
}

// Atom -> fragment assignment. Fragment indices are dense 0..m-1 and each
// fragment induces a connected subgraph of the bond graph.
struct Partition {
    std::vector<int> assignment;
    int m = 0;

    void validate(const MoleculeRecord& mol) const {
        if (assignment.size() != mol.atom_count())
            throw std::invalid_argument("Partition: assignment length != atom count");
        std::vector<int> count(m, 0);
        for (int f : assignment) {
            if (f < 0 || f >= m) throw std::invalid_argument("Partition: fragment index out of range");
            ++count[f];
        }
        for (int k = 0; k < m; ++k)
            if (count[k] == 0) throw std::invalid_argument("Partition: empty fragment " + std::to_string(k));
        // each fragment connected in the bond subgraph
        const auto adj = mol.adjacency();
        for (int k = 0; k < m; ++k) {
            int start = -1;
            for (std::size_t i = 0; i < assignment.size(); ++i)
                if (assignment[i] == k) { start = static_cast<int>(i); break; }
            std::vector<char> seen(assignment.size(), 0);
            std::vector<int> stack{start};
            seen[start] = 1;
            int reached = 1;
            while (!stack.empty()) {
                const int v = stack.back();
                stack.pop_back();
                for (int w : adj[v])
                    if (assignment[w] == k && !seen[w]) {
                        seen[w] = 1;
                        ++reached;
                        stack.push_back(w);
                    }
            }
            if (reached != count[k])
                throw std::invalid_argument("Partition: fragment " + std::to_string(k) + " disconnected");
        }
    }
};

// M / M-dagger algebra realized through the assignment array; the dense
// matrices are never materialized.
class MappingMatrix {
public:
    explicit MappingMatrix(Partition partition) : partition_(std::move(partition)) {
        sizes_.assign(partition_.m, 0);
        for (int f : partition_.assignment) {
            if (f < 0 || f >= partition_.m)
                throw std::invalid_argument("MappingMatrix: fragment index out of range");
            ++sizes_[f];
        }
        for (int k = 0; k < partition_.m; ++k)
            if (sizes_[k] == 0)
                throw std::invalid_argument("MappingMatrix: empty fragment " + std::to_string(k));
    }

    int n() const { return static_cast<int>(partition_.assignment.size()); }
    int m() const { return partition_.m; }
    const Partition& partition() const { return partition_; }
    const std::vector<int>& assignment() const { return partition_.assignment; }
    int fragment_size(int k) const { return sizes_[k]; }

    // M x^f: row i = xf[assignment[i]]
    Coords lift(const Coords& xf) const {
        if (static_cast<int>(xf.size()) != m())
            throw std::invalid_argument("lift: shape mismatch");
        Coords out(partition_.assignment.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = xf[partition_.assignment[i]];
        return out;
    }

    // M-dagger x^a: row k = mean over member atoms
    Coords centroids(const Coords& xa) const {
        if (static_cast<int>(xa.size()) != n())
            throw std::invalid_argument("centroids: shape mismatch");
        Coords out(partition_.m, Vec3{0, 0, 0});
        for (std::size_t i = 0; i < xa.size(); ++i) {
            const int k = partition_.assignment[i];
            out[k] = out[k] + xa[i];
        }
        for (int k = 0; k < partition_.m; ++k) out[k] = (1.0 / sizes_[k]) * out[k];
        return out;
    }

    // M M-dagger x^a: orthogonal projection onto the fragment-piecewise-constant subspace
    Coords project(const Coords& xa) const { return lift(centroids(xa)); }

private:
    Partition partition_;
    std::vector<int> sizes_;
};

inline MappingMatrix build_mapping(const Partition& partition) {
    return MappingMatrix(partition);
}

// ---------------------------------------------------------------------------
// JSON Lines I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void append_conformers(std::string& out, const std::vector<Conformer>& confs) {
    out += '[';
    for (std::size_t c = 0; c < confs.size(); ++c) {
        if (c) out += ',';
        out += '[';
        for (std::size_t i = 0; i < confs[c].size(); ++i) {
            if (i) out += ',';
            out += '[';
            out += fmt9(confs[c][i][0]);
            out += ',';
            out += fmt9(confs[c][i][1]);
            out += ',';
            out += fmt9(confs[c][i][2]);
            out += ']';
        }
        out += ']';
    }
    out += ']';
}

inline std::vector<Conformer> parse_conformer_list(const nlohmann::json& j, std::size_t n,
                                                   const std::string& where) {
    if (!j.is_array()) throw std::invalid_argument(where + ": expected array");
    std::vector<Conformer> out;
    for (std::size_t c = 0; c < j.size(); ++c) {
        const auto& jc = j[c];
        if (!jc.is_array() || jc.size() != n)
            throw std::invalid_argument(where + "[" + std::to_string(c) + "]: expected " +
                                        std::to_string(n) + " rows");
        Conformer conf(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = jc[i];
            if (!row.is_array() || row.size() != 3)
                throw std::invalid_argument(where + "[" + std::to_string(c) + "][" +
                                            std::to_string(i) + "]: expected 3 coordinates");
            for (int d = 0; d < 3; ++d) {
                const double v = row[d].get<double>();
                if (!std::isfinite(v))
                    throw std::invalid_argument(where + "[" + std::to_string(c) + "][" +
                                                std::to_string(i) + "]: non-finite coordinate");
                conf[i][d] = v;
            }
        }
        out.push_back(std::move(conf));
    }
    return out;
}

} // namespace detail

/// Canonical one-line serialization: fixed key order, 9 significant digits.
inline std::string serialize_molecule(const MoleculeRecord& mol) {
    std::string out = "{\"id\":";
    out += nlohmann::json(mol.id).dump();
    out += ",\"atoms\":[";
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        if (i) out += ',';
        out += "{\"el\":" + nlohmann::json(mol.atoms[i].element).dump() +
               ",\"type\":" + std::to_string(mol.atoms[i].type_index) + "}";
    }
    out += "],\"bonds\":[";
    for (std::size_t i = 0; i < mol.bonds.size(); ++i) {
        if (i) out += ',';
        out += '[' + std::to_string(mol.bonds[i].i) + ',' + std::to_string(mol.bonds[i].j) + ',' +
               std::to_string(mol.bonds[i].order) + ']';
    }
    out += "],\"conformers\":";
    detail::append_conformers(out, mol.conformers);
    if (!mol.reference_conformers.empty()) {
        out += ",\"reference_conformers\":";
        detail::append_conformers(out, mol.reference_conformers);
    }
    if (!mol.generated_conformers.empty()) {
        out += ",\"generated_conformers\":";
        detail::append_conformers(out, mol.generated_conformers);
    }
    out += '}';
    return out;
}

inline MoleculeRecord parse_molecule_line(const std::string& line, int line_number) {
    const std::string ctx = "line " + std::to_string(line_number);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        throw std::invalid_argument(ctx + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument(ctx + ": expected object");

    MoleculeRecord mol;
    try {
        if (!j.contains("id") || !j["id"].is_string())
            throw std::invalid_argument("id: expected string");
        mol.id = j["id"].get<std::string>();

        if (!j.contains("atoms") || !j["atoms"].is_array() || j["atoms"].empty())
            throw std::invalid_argument("atoms: expected non-empty array");
        for (std::size_t i = 0; i < j["atoms"].size(); ++i) {
            const auto& ja = j["atoms"][i];
            Atom a;
            a.element = ja.at("el").get<std::string>();
            a.type_index = ja.at("type").get<int>();
            if (a.type_index < 0)
                throw std::invalid_argument("atoms[" + std::to_string(i) + "].type: negative");
            covalent_radius(a.element);   // validates the element symbol
            mol.atoms.push_back(std::move(a));
        }

        const int n = static_cast<int>(mol.atoms.size());
        if (j.contains("bonds")) {
            for (std::size_t b = 0; b < j["bonds"].size(); ++b) {
                const auto& jb = j["bonds"][b];
                if (!jb.is_array() || jb.size() != 3)
                    throw std::invalid_argument("bonds[" + std::to_string(b) + "]: expected [i,j,order]");
                Bond bond;
                bond.i = jb[0].get<int>();
                bond.j = jb[1].get<int>();
                bond.order = jb[2].get<int>();
                if (bond.i < 0 || bond.i >= n)
                    throw std::invalid_argument("bonds[" + std::to_string(b) + "].i: out of range");
                if (bond.j < 0 || bond.j >= n)
                    throw std::invalid_argument("bonds[" + std::to_string(b) + "].j: out of range");
                if (bond.i == bond.j)
                    throw std::invalid_argument("bonds[" + std::to_string(b) + "]: self-bond");
                if (bond.order < 0 || bond.order > 3)
                    throw std::invalid_argument("bonds[" + std::to_string(b) + "].order: out of range");
                if (bond.i > bond.j) std::swap(bond.i, bond.j);
                for (const auto& prev : mol.bonds)
                    if (prev.i == bond.i && prev.j == bond.j)
                        throw std::invalid_argument("bonds[" + std::to_string(b) + "]: duplicate pair");
                mol.bonds.push_back(bond);
            }
        }
        if (!graph_connected(mol.atoms.size(), mol.bonds))
            throw std::invalid_argument("bond graph disconnected");

        if (j.contains("conformers"))
            mol.conformers = detail::parse_conformer_list(j["conformers"], mol.atoms.size(), "conformers");
        if (j.contains("reference_conformers"))
            mol.reference_conformers =
                detail::parse_conformer_list(j["reference_conformers"], mol.atoms.size(), "reference_conformers");
        if (j.contains("generated_conformers"))
            mol.generated_conformers =
                detail::parse_conformer_list(j["generated_conformers"], mol.atoms.size(), "generated_conformers");
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(ctx + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(ctx + ": " + e.what());
    }
    return mol;
}

inline std::vector<MoleculeRecord> parse_molecules(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open molecule file: " + path);
    std::vector<MoleculeRecord> out;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        out.push_back(parse_molecule_line(line, line_number));
    }
    return out;
}

inline void write_molecules(const std::string& path, const std::vector<MoleculeRecord>& mols) {
    std::ofstream outf(path);
    if (!outf) throw std::runtime_error("cannot open output file: " + path);
    for (const auto& mol : mols) outf << serialize_molecule(mol) << '\n';
    if (!outf) throw std::runtime_error("write failure: " + path);
}

// ---------------------------------------------------------------------------
// Procedural toy corpus
// ---------------------------------------------------------------------------

struct ToyCorpusSpec {
    int count = 50;
    int min_atoms = 4;
    int max_atoms = 24;
    int conformers_per_molecule = 5;
    // topology mix weights
    double chain_weight = 1.0;
    double ring_weight = 1.0;
    double branched_weight = 1.0;
    bool add_hydrogens = false;
};

// Fixed corpus atom-type table; type_index of every generated atom indexes it.
inline const std::vector<std::string>& toy_atom_types() {
    static const std::vector<std::string> table{"C", "N", "O", "H"};
    return table;
}

namespace detail {

constexpr double kTetrahedralAngle = 1.9106332362490186;   // 109.471 deg in rad

// Places atom at bond length L from parent, with the given bond angle to the
// parent->anchor direction and torsion phi around it.
inline Vec3 place_atom(const Vec3& parent, const Vec3& anchor, double length, double angle, double phi) {
    Vec3 d = parent - anchor;
    const double dn = norm(d);
    d = dn > 1e-12 ? (1.0 / dn) * d : Vec3{1, 0, 0};
    Vec3 helper = std::abs(d[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 0, 1};
    Vec3 n1 = cross(d, helper);
    n1 = (1.0 / norm(n1)) * n1;
    const Vec3 n2 = cross(d, n1);
    const double s = std::sin(3.14159265358979323846 - angle);
    const double c = std::cos(3.14159265358979323846 - angle);
    const Vec3 dir = c * d + s * (std::cos(phi) * n1 + std::sin(phi) * n2);
    return parent + length * dir;
}

inline std::string pick_heavy_element(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.70) return "C";
    if (u < 0.85) return "N";
    return "O";
}

inline int type_of(const std::string& el) {
    const auto& t = toy_atom_types();
    const auto it = std::find(t.begin(), t.end(), el);
    return static_cast<int>(it - t.begin());
}

} // namespace detail

/// Deterministic procedural corpus: chains, rings, and branched trees with
/// ideal bond lengths and tetrahedral angles; conformers differ by seeded
/// torsional (or ring-pucker) perturbations.
inline std::vector<MoleculeRecord> generate_toy_corpus(const ToyCorpusSpec& spec, std::uint64_t seed) {
    if (spec.count < 1 || spec.min_atoms < 1 || spec.max_atoms < spec.min_atoms)
        throw std::invalid_argument("generate_toy_corpus: infeasible spec");
    if (spec.min_atoms < 3 && spec.ring_weight > 0 && spec.chain_weight == 0 && spec.branched_weight == 0)
        throw std::invalid_argument("generate_toy_corpus: ring size < 3");
    if (spec.conformers_per_molecule < 0)
        throw std::invalid_argument("generate_toy_corpus: negative conformer count");

    std::vector<MoleculeRecord> out;
    for (int mi = 0; mi < spec.count; ++mi) {
        Rng rng(derive_seed(seed, "toy-molecule", static_cast<std::uint64_t>(mi)));
        const int n = spec.min_atoms + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(spec.max_atoms - spec.min_atoms + 1)));

        const double wtot = spec.chain_weight + spec.ring_weight + spec.branched_weight;
        if (wtot <= 0) throw std::invalid_argument("generate_toy_corpus: all topology weights zero");
        double u = rng.uniform() * wtot;
        enum class Topo { Chain, Ring, Branched } topo;
        if (u < spec.chain_weight) topo = Topo::Chain;
        else if (u < spec.chain_weight + spec.ring_weight) topo = Topo::Ring;
        else topo = Topo::Branched;
        if (topo == Topo::Ring && n < 3) topo = Topo::Chain;

        MoleculeRecord mol;
        mol.id = "toy-" + std::to_string(mi);
        std::vector<int> parent(n, -1);
        bool is_ring = false;

        for (int i = 0; i < n; ++i) {
            Atom a;
            a.element = detail::pick_heavy_element(rng);
            a.type_index = detail::type_of(a.element);
            mol.atoms.push_back(a);
        }

        if (topo == Topo::Chain) {
            for (int i = 1; i < n; ++i) parent[i] = i - 1;
        } else if (topo == Topo::Ring) {
            is_ring = true;
            for (int i = 1; i < n; ++i) parent[i] = i - 1;   // ring closure bond added below
        } else {
            for (int i = 1; i < n; ++i) {
                // prefer recent atoms so the tree stays chain-like with branches
                const int p = (i == 1) ? 0
                                       : static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i)));
                parent[i] = p;
            }
        }

        for (int i = 1; i < n; ++i) {
            Bond b;
            b.i = std::min(parent[i], i);
            b.j = std::max(parent[i], i);
            b.order = 0;
            mol.bonds.push_back(b);
        }
        if (is_ring) mol.bonds.push_back(Bond{0, n - 1, 0});
        std::sort(mol.bonds.begin(), mol.bonds.end(),
                  [](const Bond& a, const Bond& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });

        // base torsions per bond, perturbed per conformer
        std::vector<double> base_torsion(n, 0.0);
        for (int i = 0; i < n; ++i) base_torsion[i] = rng.uniform(0, 2 * 3.14159265358979323846);

        const int K = spec.conformers_per_molecule;
        for (int c = 0; c < K; ++c) {
            Conformer x(n, Vec3{0, 0, 0});
            if (is_ring) {
                // regular n-gon with the ideal edge length, plus seeded pucker
                const double edge = ideal_bond_length(mol.atoms[0].element, mol.atoms[1].element, 0);
                const double radius = edge / (2.0 * std::sin(3.14159265358979323846 / n));
                const double amp = (K > 1) ? 0.15 + 0.25 * rng.uniform() : 0.2;
                const double phase = rng.uniform(0, 2 * 3.14159265358979323846);
                const int waves = 2 + static_cast<int>(rng.uniform_int(2));
                for (int i = 0; i < n; ++i) {
                    const double a = 2 * 3.14159265358979323846 * i / n;
                    x[i] = {radius * std::cos(a), radius * std::sin(a),
                            amp * std::sin(waves * a + phase)};
                }
            } else {
                std::vector<int> sibling_index(n, 0);
                std::vector<int> child_count(n, 0);
                for (int i = 1; i < n; ++i) sibling_index[i] = child_count[parent[i]]++;
                for (int i = 1; i < n; ++i) {
                    const int p = parent[i];
                    const double len =
                        ideal_bond_length(mol.atoms[i].element, mol.atoms[p].element, 0);
                    if (p == 0 && i == 1) {
                        x[i] = x[p] + Vec3{len, 0, 0};
                        continue;
                    }
                    const int anchor = (parent[p] >= 0) ? parent[p] : 1;
                    const double phi = base_torsion[i] + rng.uniform(-1.0, 1.0) +
                                       sibling_index[i] * (2 * 3.14159265358979323846 / 3.0);
                    x[i] = detail::place_atom(x[p], x[anchor], len, detail::kTetrahedralAngle, phi);
                }
            }
            mol.conformers.push_back(std::move(x));
        }

        if (spec.add_hydrogens) {
            std::vector<int> degree(n, 0);
            for (const auto& b : mol.bonds) {
                ++degree[b.i];
                ++degree[b.j];
            }
            const int heavy_n = n;
            for (int i = 0; i < heavy_n; ++i) {
                const int missing = default_valence(mol.atoms[i].element) - degree[i];
                for (int h = 0; h < missing; ++h) {
                    Atom ha{"H", detail::type_of("H")};
                    const int hi = static_cast<int>(mol.atoms.size());
                    mol.atoms.push_back(ha);
                    mol.bonds.push_back(Bond{i, hi, 0});
                    const double len = ideal_bond_length(mol.atoms[i].element, "H", 0);
                    const int anchor_idx =
                        (i > 0 && parent[i] >= 0) ? parent[i] : std::min(1, heavy_n - 1);
                    for (int c = 0; c < K; ++c) {
                        auto& x = mol.conformers[c];
                        const double phi = rng.uniform(0, 2 * 3.14159265358979323846);
                        x.push_back(
                            detail::place_atom(x[i], x[anchor_idx], len, detail::kTetrahedralAngle, phi));
                    }
                }
            }
        }

        out.push_back(std::move(mol));
    }
    return out;
}

} // namespace ebd
