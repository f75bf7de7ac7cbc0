#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ebd/coarse.hpp"
#include "ebd/config.hpp"
#include "ebd/diffusion.hpp"
#include "ebd/engine.hpp"
#include "ebd/eval.hpp"
#include "ebd/fragmenting.hpp"
#include "ebd/geometry.hpp"
#include "ebd/molio.hpp"
#include "ebd/net.hpp"
#include "ebd/spectral.hpp"

namespace ebd {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace selfcheck_detail {

inline Coords random_coords(std::size_t n, Rng& rng, double scale = 2.0) {
    Coords x(n);
    for (auto& r : x)
        for (int c = 0; c < 3; ++c) r[c] = scale * rng.gaussian();
    return x;
}

// Random dense partition of n atoms into m non-empty fragments (no
// connectivity requirement; the mapping algebra is partition-only).
inline Partition random_partition(int n, int m, Rng& rng) {
    Partition p;
    p.m = m;
    p.assignment.resize(n);
    for (int i = 0; i < m; ++i) p.assignment[i] = i;
    for (int i = m; i < n; ++i)
        p.assignment[i] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m)));
    // shuffle
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(p.assignment[i], p.assignment[j]);
    }
    return p;
}

inline double max_abs_diff(const Coords& a, const Coords& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(a[i][c] - b[i][c]));
    return m;
}

inline double rel_coords_error(const Coords& got, const Coords& want) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const Vec3 d = got[i] - want[i];
        num += dot(d, d);
        den += dot(want[i], want[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

inline NetworkConfig small_net_config() {
    NetworkConfig cfg;
    cfg.layers = 2;
    cfg.width = 8;
    cfg.hops = 2;
    cfg.cutoff = 10.0;
    cfg.atom_types = 4;
    cfg.time_dim = 4;
    return cfg;
}

inline MoleculeRecord small_toy_molecule(std::uint64_t seed, int min_atoms = 5, int max_atoms = 8) {
    ToyCorpusSpec spec;
    spec.count = 1;
    spec.min_atoms = min_atoms;
    spec.max_atoms = max_atoms;
    spec.conformers_per_molecule = 2;
    return generate_toy_corpus(spec, seed)[0];
}

inline Partition single_atom_partition_pairs(const MoleculeRecord& mol) {
    // two-atom fragments along the atom order, last fragment may be a singleton;
    // not guaranteed bond-connected, used only where connectivity is irrelevant
    Partition p;
    const int n = static_cast<int>(mol.atom_count());
    p.assignment.resize(n);
    for (int i = 0; i < n; ++i) p.assignment[i] = i / 2;
    p.m = (n + 1) / 2;
    return p;
}

// Bond-connected partition: greedy pairing of bonded atoms.
inline Partition bonded_pair_partition(const MoleculeRecord& mol) {
    const int n = static_cast<int>(mol.atom_count());
    std::vector<int> frag(n, -1);
    int next = 0;
    for (const auto& b : mol.bonds)
        if (frag[b.i] < 0 && frag[b.j] < 0) {
            frag[b.i] = next;
            frag[b.j] = next;
            ++next;
        }
    for (int i = 0; i < n; ++i)
        if (frag[i] < 0) frag[i] = next++;
    Partition p;
    p.assignment = frag;
    p.m = next;
    p.validate(mol);
    return p;
}

inline CoarseStructure coarse_from_centroids(const MoleculeRecord& mol, const Partition& p,
                                             const Coords& x0) {
    CoarseStructure cs;
    cs.partition = p;
    const MappingMatrix map(p);
    cs.frag_coords = map.centroids(remove_mean(x0));
    cs.frag_features = fragment_features(mol, p);
    return cs;
}

} // namespace selfcheck_detail

/// Named invariant checks shared by the operator CLI and the test suites.
/// Each check throws or returns a failure message on violation.
inline std::vector<CheckResult> run_selfchecks() {
    namespace sd = selfcheck_detail;
    std::vector<CheckResult> results;

    const auto check = [&](const std::string& name, const std::function<std::string()>& body) {
        CheckResult r;
        r.name = name;
        try {
            r.detail = body();
            r.pass = r.detail.empty();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = e.what();
        }
        results.push_back(std::move(r));
    };

    // ---- mapping algebra -------------------------------------------------
    check("mapping.pseudoinverse-identity", [] {
        Rng rng(derive_seed(11, "check-map"));
        for (int trial = 0; trial < 50; ++trial) {
            const int m = 1 + static_cast<int>(rng.uniform_int(12));
            const int n = m + static_cast<int>(rng.uniform_int(40));
            const MappingMatrix map(sd::random_partition(n, m, rng));
            const Coords xf = sd::random_coords(m, rng);
            if (sd::max_abs_diff(map.centroids(map.lift(xf)), xf) > 1e-12)
                return std::string("centroids(lift(x)) != x beyond 1e-12");
        }
        return std::string();
    });

    check("mapping.projection-idempotent", [] {
        Rng rng(derive_seed(12, "check-map"));
        for (int trial = 0; trial < 50; ++trial) {
            const int m = 1 + static_cast<int>(rng.uniform_int(12));
            const int n = m + static_cast<int>(rng.uniform_int(40));
            const MappingMatrix map(sd::random_partition(n, m, rng));
            const Coords x = sd::random_coords(n, rng);
            const Coords p1 = map.project(x);
            if (sd::max_abs_diff(map.project(p1), p1) > 1e-10)
                return std::string("projection not idempotent within 1e-10");
        }
        return std::string();
    });

    // ---- blurring forward process -----------------------------------------
    check("blur.endpoint-ground-truth", [] {
        Rng rng(derive_seed(13, "check-blur"));
        const MoleculeRecord mol = sd::small_toy_molecule(13);
        const Partition p = sd::bonded_pair_partition(mol);
        const Coords x0 = sd::random_coords(mol.atom_count(), rng);
        const auto cs = sd::coarse_from_centroids(mol, p, x0);
        const MappingMatrix map(p);
        const Coords b0 = blur(x0, cs, map, 0, 50);
        if (std::memcmp(b0.data(), x0.data(), x0.size() * sizeof(Vec3)) != 0)
            return std::string("blur(t=0) not bit-exact");
        return std::string();
    });

    check("blur.endpoint-coarse", [] {
        Rng rng(derive_seed(14, "check-blur"));
        const MoleculeRecord mol = sd::small_toy_molecule(14);
        const Partition p = sd::bonded_pair_partition(mol);
        const Coords x0 = sd::random_coords(mol.atom_count(), rng);
        const auto cs = sd::coarse_from_centroids(mol, p, x0);
        const MappingMatrix map(p);
        const Coords lifted = map.lift(cs.frag_coords);
        const Coords bT = blur(x0, cs, map, 50, 50);
        if (std::memcmp(bT.data(), lifted.data(), bT.size() * sizeof(Vec3)) != 0)
            return std::string("blur(t=T) not bit-exact");
        return std::string();
    });

    check("blur.coarse-subspace-conserved", [] {
        Rng rng(derive_seed(15, "check-blur"));
        for (int trial = 0; trial < 10; ++trial) {
            const MoleculeRecord mol = sd::small_toy_molecule(100 + trial);
            const Partition p = sd::bonded_pair_partition(mol);
            const Coords x0 = sd::random_coords(mol.atom_count(), rng);
            const auto cs = sd::coarse_from_centroids(mol, p, x0);
            const MappingMatrix map(p);
            const Coords proj0 = map.project(remove_mean(x0));
            for (int t = 0; t <= 50; ++t) {
                const Coords xt = blur(remove_mean(x0), cs, map, t, 50);
                if (std::sqrt(frobenius_sq(map.project(xt), proj0)) > 1e-10)
                    return "projection drift at t=" + std::to_string(t);
            }
        }
        return std::string();
    });

    check("noise.zero-center-of-mass", [] {
        Rng rng(derive_seed(16, "check-noise"));
        for (int trial = 0; trial < 20; ++trial) {
            const Coords eps = centered_noise(5 + trial, 0.7, rng);
            Vec3 s{0, 0, 0};
            for (const auto& r : eps) s = s + r;
            if (norm(s) > 1e-12 * eps.size()) return std::string("noise has nonzero mean");
        }
        return std::string();
    });

    check("noise.variance-scale", [] {
        // per-entry variance of centered noise is sigma^2 (1 - 1/n)
        Rng rng(derive_seed(17, "check-noise"));
        const std::size_t n = 8;
        const double sigma = 0.5;
        double acc = 0;
        const int trials = 4000;
        for (int trial = 0; trial < trials; ++trial) {
            const Coords eps = centered_noise(n, sigma, rng);
            for (const auto& r : eps) acc += dot(r, r);
        }
        const double got = acc / (trials * n * 3.0);
        const double want = sigma * sigma * (1.0 - 1.0 / static_cast<double>(n));
        if (std::abs(got - want) > 0.1 * want)
            return "variance " + std::to_string(got) + " vs " + std::to_string(want);
        return std::string();
    });

    // ---- rigid alignment ---------------------------------------------------
    check("kabsch.planted-recovery", [] {
        Rng rng(derive_seed(18, "check-kabsch"));
        for (int trial = 0; trial < 50; ++trial) {
            const Coords p = sd::random_coords(4 + trial % 10, rng);
            const Mat3 r = random_rotation(900 + trial);
            Coords q = apply_rotation(r, p);
            q = translate(q, {rng.gaussian(), rng.gaussian(), rng.gaussian()});
            if (aligned_rmsd(p, q) > 1e-9) return std::string("planted motion not recovered");
        }
        return std::string();
    });

    check("kabsch.rotation-dominance", [] {
        Rng rng(derive_seed(19, "check-kabsch"));
        for (int trial = 0; trial < 5; ++trial) {
            const Coords p = remove_mean(sd::random_coords(6, rng));
            const Coords q = remove_mean(sd::random_coords(6, rng));
            const double best = aligned_rmsd(p, q);
            for (int k = 0; k < 100; ++k) {
                const Coords pr = apply_rotation(random_rotation(derive_seed(19, "rot", k)), p);
                const double r = std::sqrt(frobenius_sq(pr, q) / p.size());
                if (best > r + 1e-12) return std::string("a random rotation beat the alignment");
            }
        }
        return std::string();
    });

    check("kabsch.two-point-closed-form", [] {
        const Coords p{{-1, 0, 0}, {1, 0, 0}};
        const Coords q{{-1.5, 0, 0}, {1.5, 0, 0}};
        // aligned residual per point is 0.5, so RMSD = 0.5
        if (std::abs(aligned_rmsd(p, q) - 0.5) > 1e-12) return std::string("closed form violated");
        return std::string();
    });

    check("assignment.brute-force", [] {
        Rng rng(derive_seed(20, "check-lsa"));
        for (int trial = 0; trial < 20; ++trial) {
            const int k = 2 + static_cast<int>(rng.uniform_int(4));
            std::vector<std::vector<double>> cost(k, std::vector<double>(k));
            for (auto& row : cost)
                for (double& c : row) c = rng.uniform();
            const std::vector<int> got = linear_sum_assignment(cost);
            double got_cost = 0;
            for (int i = 0; i < k; ++i) got_cost += cost[i][got[i]];
            std::vector<int> perm(k);
            for (int i = 0; i < k; ++i) perm[i] = i;
            double best = 1e18;
            do {
                double c = 0;
                for (int i = 0; i < k; ++i) c += cost[i][perm[i]];
                best = std::min(best, c);
            } while (std::next_permutation(perm.begin(), perm.end()));
            if (std::abs(got_cost - best) > 1e-12) return std::string("assignment not optimal");
        }
        return std::string();
    });

    // ---- fragmentation -----------------------------------------------------
    check("canonical-key.permutation-invariance", [] {
        Rng rng(derive_seed(21, "check-canon"));
        for (int trial = 0; trial < 8; ++trial) {
            const int n = 3 + static_cast<int>(rng.uniform_int(3));
            LabeledSubgraph g;
            const char* labels[3] = {"C", "N", "O"};
            for (int i = 0; i < n; ++i) g.labels.push_back(labels[rng.uniform_int(3)]);
            for (int i = 1; i < n; ++i)
                g.edges.push_back({static_cast<int>(rng.uniform_int(i)), i,
                                   static_cast<int>(rng.uniform_int(2))});
            const FragmentKey base = canonical_key(g);
            std::vector<int> perm(n);
            for (int i = 0; i < n; ++i) perm[i] = i;
            do {
                LabeledSubgraph h;
                h.labels.resize(n);
                for (int i = 0; i < n; ++i) h.labels[perm[i]] = g.labels[i];
                for (const auto& e : g.edges) {
                    Bond b{std::min(perm[e.i], perm[e.j]), std::max(perm[e.i], perm[e.j]), e.order};
                    h.edges.push_back(b);
                }
                if (!(canonical_key(h) == base)) return std::string("key changed under relabeling");
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
        return std::string();
    });

    check("vocab.byte-determinism", [] {
        ToyCorpusSpec spec;
        spec.count = 10;
        spec.max_atoms = 10;
        const auto corpus = generate_toy_corpus(spec, 77);
        const FragmentVocabulary a = build_vocabulary(corpus, 10);
        const FragmentVocabulary b = build_vocabulary(corpus, 10);
        if (a.size() != b.size()) return std::string("vocabulary size differs between runs");
        for (int i = 0; i < a.size(); ++i)
            if (!(a.entries[i].key == b.entries[i].key) ||
                a.entries[i].frequency != b.entries[i].frequency)
                return std::string("vocabulary entries differ between runs");
        return std::string();
    });

    check("vocab.granularity-monotone", [] {
        ToyCorpusSpec spec;
        spec.count = 12;
        spec.max_atoms = 10;
        const auto corpus = generate_toy_corpus(spec, 78);
        double prev = 1e18;
        for (const int size : {18, 12, 6}) {   // smaller vocab -> finer fragments
            const FragmentVocabulary vocab = build_vocabulary(corpus, size);
            double atoms = 0, frags = 0;
            for (const auto& mol : corpus) {
                const Partition p = decompose(mol, vocab);
                atoms += static_cast<double>(mol.atom_count());
                frags += p.m;
            }
            const double mean = atoms / frags;
            if (mean > prev + 1e-12)
                return "atoms-per-fragment not monotone at size " + std::to_string(size);
            prev = mean;
        }
        return std::string();
    });

    check("decompose.connected-fragments", [] {
        ToyCorpusSpec spec;
        spec.count = 8;
        spec.max_atoms = 12;
        const auto corpus = generate_toy_corpus(spec, 79);
        const FragmentVocabulary vocab = build_vocabulary(corpus, 9);
        for (const auto& mol : corpus) decompose(mol, vocab).validate(mol);   // throws on violation
        return std::string();
    });

    // ---- surrogate embedding -----------------------------------------------
    check("embed.bonded-distances", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(23, 6, 6);
        const EmbedResult res = embed_reference(mol, 23);
        for (const auto& b : mol.bonds) {
            const double want = ideal_bond_length(mol.atoms[b.i].element, mol.atoms[b.j].element, b.order);
            const double got = norm(res.coords[b.i] - res.coords[b.j]);
            if (std::abs(got - want) > 0.5 * want)
                return std::string("embedded bond length off by more than 50%");
        }
        return std::string();
    });

    // ---- network -----------------------------------------------------------
    check("net.rotation-equivariance", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(24);
        const NetworkConfig cfg = sd::small_net_config();
        const Parameters params = init_parameters(cfg, 24);
        const Partition p = sd::bonded_pair_partition(mol);
        Rng rng(derive_seed(24, "check-equi"));
        for (int trial = 0; trial < 5; ++trial) {
            const Coords x = sd::random_coords(mol.atom_count(), rng);
            const Mat3 r = random_rotation(500 + trial);
            const Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
            const Coords out_ref = apply_rotation(r, forward(params, cfg, mol, p, x, 0.5));
            const Coords out_got =
                forward(params, cfg, mol, p, translate(apply_rotation(r, x), v), 0.5);
            if (sd::rel_coords_error(out_got, out_ref) > 1e-6)
                return std::string("rotation equivariance violated beyond 1e-6");
        }
        return std::string();
    });

    check("net.feature-invariance", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(25);
        const NetworkConfig cfg = sd::small_net_config();
        const Parameters params = init_parameters(cfg, 25);
        const Partition p = sd::bonded_pair_partition(mol);
        Rng rng(derive_seed(25, "check-inv"));
        const Coords x = sd::random_coords(mol.atom_count(), rng);
        ForwardRun a = forward_run(params, cfg, mol, p, x, 0.3);
        ForwardRun b = forward_run(
            params, cfg, mol, p,
            translate(apply_rotation(random_rotation(777), x), {1.5, -0.4, 2.2}), 0.3);
        const Tensor& ha = a.tape.value(a.h_atoms);
        const Tensor& hb = b.tape.value(b.h_atoms);
        double num = 0, den = 1e-30;
        for (std::size_t i = 0; i < ha.size(); ++i) {
            num = std::max(num, std::abs(ha.v[i] - hb.v[i]));
            den = std::max(den, std::abs(ha.v[i]));
        }
        if (num / den > 1e-8) return std::string("invariant features moved beyond 1e-8");
        return std::string();
    });

    check("net.identity-at-initialization", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(26);
        const NetworkConfig cfg = sd::small_net_config();
        const Parameters params = init_parameters(cfg, 26);
        const Partition p = sd::bonded_pair_partition(mol);
        Rng rng(derive_seed(26, "check-init"));
        const Coords x = sd::random_coords(mol.atom_count(), rng);
        const Coords out = forward(params, cfg, mol, p, x, 0.7);
        if (sd::max_abs_diff(out, remove_mean(x)) > 1e-12)
            return std::string("zero-initialized coordinate heads moved the input");
        return std::string();
    });

    check("grad.finite-difference", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(27, 4, 4);
        NetworkConfig cfg;
        cfg.layers = 1;
        cfg.width = 2;
        cfg.hops = 1;
        cfg.time_dim = 2;
        cfg.atom_types = 4;
        const Partition p = sd::bonded_pair_partition(mol);
        Parameters params = init_parameters(cfg, 27);
        Rng jitter(derive_seed(27, "check-fd"));
        for (auto& [name, t] : params.tensors)
            for (double& v : t.v) v += 0.05 * jitter.gaussian();   // move off the zero heads

        Rng rng(derive_seed(28, "check-fd"));
        const Coords x0 = remove_mean(mol.conformers[0]);
        const Coords x_t = translate(x0, {0.1, -0.05, 0.02});
        const double t_norm = 0.4;

        ForwardRun run = forward_run(params, cfg, mol, p, x_t, t_norm);
        const Var loss_var = append_loss(run, x0);
        run.tape.backward(loss_var);

        const auto loss_of = [&](const Parameters& q) {
            ForwardRun r = forward_run(q, cfg, mol, p, x_t, t_norm);
            const Var l = append_loss(r, x0);
            return r.tape.value(l).at(0, 0);
        };

        const double h = 1e-5;
        std::size_t checked = 0;
        for (auto& [name, t] : params.tensors) {
            const Tensor analytic = run.tape.grad(run.param_vars.at(name));
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double saved = t.v[i];
                t.v[i] = saved + h;
                const double lp = loss_of(params);
                t.v[i] = saved - h;
                const double lm = loss_of(params);
                t.v[i] = saved;
                const double fd = (lp - lm) / (2 * h);
                const double diff = std::abs(fd - analytic.v[i]);
                if (diff > 1e-7 && diff > 1e-4 * std::abs(fd))
                    return "gradient mismatch at " + name + "[" + std::to_string(i) + "]";
                ++checked;
            }
        }
        (void)rng;
        if (checked < 100 || checked > 200)
            return "unexpected parameter count " + std::to_string(checked);
        return std::string();
    });

    // ---- loss ----------------------------------------------------------------
    check("loss.rigid-invariance", [] {
        Rng rng(derive_seed(29, "check-loss"));
        for (int trial = 0; trial < 50; ++trial) {
            const Coords x0 = sd::random_coords(7, rng);
            const Coords pred = sd::random_coords(7, rng);
            const double base = loss_value(x0, pred);
            const Coords x0m = translate(apply_rotation(random_rotation(derive_seed(29, "a", trial)), x0),
                                         {rng.gaussian(), rng.gaussian(), rng.gaussian()});
            const Coords pm = translate(apply_rotation(random_rotation(derive_seed(29, "b", trial)), pred),
                                        {rng.gaussian(), rng.gaussian(), rng.gaussian()});
            if (std::abs(loss_value(x0m, pm) - base) > 1e-8)
                return std::string("loss moved under rigid motion beyond 1e-8");
        }
        return std::string();
    });

    check("loss.reparameterization-identity", [] {
        // || f_B(x0, t-1) - [(1-(t-1)/T) f + ((t-1)/T) M xf] ||^2
        //   == (1-(t-1)/T)^2 || x0 - f ||^2, exactly, for any f
        Rng rng(derive_seed(30, "check-repar"));
        const MoleculeRecord mol = sd::small_toy_molecule(30);
        const Partition p = sd::bonded_pair_partition(mol);
        const MappingMatrix map(p);
        for (int trial = 0; trial < 100; ++trial) {
            const Coords x0 = sd::random_coords(mol.atom_count(), rng);
            const auto cs = sd::coarse_from_centroids(mol, p, x0);
            const Coords f = sd::random_coords(mol.atom_count(), rng);
            const int T = 50;
            const int t = 1 + static_cast<int>(rng.uniform_int(T));
            const double w = static_cast<double>(t - 1) / T;
            const Coords target = blur(x0, cs, map, t - 1, T);
            const Coords lifted = map.lift(cs.frag_coords);
            double lhs = 0, rhs = 0;
            for (std::size_t i = 0; i < x0.size(); ++i) {
                const Vec3 mu = (1.0 - w) * f[i] + w * lifted[i];
                const Vec3 d = target[i] - mu;
                lhs += dot(d, d);
                const Vec3 e = x0[i] - f[i];
                rhs += dot(e, e);
            }
            rhs *= (1.0 - w) * (1.0 - w);
            if (std::abs(lhs - rhs) > 1e-10 * std::max(1.0, rhs))
                return std::string("loss scaling identity violated beyond 1e-10");
        }
        return std::string();
    });

    // ---- evaluation metrics ----------------------------------------------------
    check("metrics.naive-oracle", [] {
        Rng rng(derive_seed(31, "check-metrics"));
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 4;
            std::vector<Conformer> gt, gen;
            const int ng = 1 + static_cast<int>(rng.uniform_int(4));
            const int nc = 1 + static_cast<int>(rng.uniform_int(8));
            for (int i = 0; i < ng; ++i) gt.push_back(sd::random_coords(n, rng));
            for (int i = 0; i < nc; ++i) gen.push_back(sd::random_coords(n, rng));
            const double delta = 0.5 + rng.uniform();
            const CoverageMatching got = coverage_matching(gen, gt, delta);

            // independent naive double loop
            double cov_r = 0, mat_r = 0, cov_p = 0, mat_p = 0;
            for (const auto& g : gt) {
                double mn = 1e18;
                for (const auto& c : gen) mn = std::min(mn, aligned_rmsd(c, g));
                if (mn <= delta) cov_r += 1;
                mat_r += mn;
            }
            for (const auto& c : gen) {
                double mn = 1e18;
                for (const auto& g : gt) mn = std::min(mn, aligned_rmsd(c, g));
                if (mn <= delta) cov_p += 1;
                mat_p += mn;
            }
            cov_r /= ng;
            mat_r /= ng;
            cov_p /= nc;
            mat_p /= nc;
            if (got.cov_r != cov_r || got.cov_p != cov_p || std::abs(got.mat_r - mat_r) > 1e-14 ||
                std::abs(got.mat_p - mat_p) > 1e-14)
                return std::string("metrics disagree with the naive reference");
        }
        return std::string();
    });

    check("metrics.swap-symmetry", [] {
        Rng rng(derive_seed(32, "check-metrics"));
        std::vector<Conformer> a, b;
        for (int i = 0; i < 3; ++i) a.push_back(sd::random_coords(5, rng));
        for (int i = 0; i < 4; ++i) b.push_back(sd::random_coords(5, rng));
        const CoverageMatching ab = coverage_matching(a, b, 1.0);
        const CoverageMatching ba = coverage_matching(b, a, 1.0);
        if (ab.cov_r != ba.cov_p || ab.cov_p != ba.cov_r || ab.mat_r != ba.mat_p ||
            ab.mat_p != ba.mat_r)
            return std::string("role swap does not swap the metric pairs");
        return std::string();
    });

    check("metrics.duplicate-monotone", [] {
        Rng rng(derive_seed(33, "check-metrics"));
        std::vector<Conformer> gt, gen;
        for (int i = 0; i < 3; ++i) gt.push_back(sd::random_coords(5, rng));
        for (int i = 0; i < 4; ++i) gen.push_back(sd::random_coords(5, rng));
        const CoverageMatching base = coverage_matching(gen, gt, 1.0);
        gen.push_back(gen[0]);
        const CoverageMatching dup = coverage_matching(gen, gt, 1.0);
        if (dup.cov_r < base.cov_r || dup.mat_r > base.mat_r + 1e-15)
            return std::string("duplicate conformer hurt the recall metrics");
        return std::string();
    });

    check("wilcoxon.six-strict-wins", [] {
        const std::vector<double> a{1, 2, 3, 4, 5, 6};
        const std::vector<double> b{2, 3, 4, 5, 6, 7};
        const double p = wilcoxon_one_sided(a, b);
        if (std::abs(p - 1.0 / 64.0) > 1e-15) return "p = " + std::to_string(p);
        return std::string();
    });

    check("wilcoxon.all-zero-rejected", [] {
        const std::vector<double> a{1, 2, 3, 4, 5};
        try {
            wilcoxon_one_sided(a, a);
        } catch (const std::invalid_argument&) {
            return std::string();
        }
        return std::string("all-zero differences not rejected");
    });

    // ---- spectral ------------------------------------------------------------
    check("spectral.laplacian-eigenbasis", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(34, 6, 10);
        const SymMatrix l = graph_laplacian(mol);
        const LaplacianSpectrum s = eigendecompose(l);
        const std::size_t n = mol.atom_count();
        if (std::abs(s.eigenvalues[0]) > 1e-10) return std::string("lambda_0 != 0");
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double g = 0;
                for (std::size_t i = 0; i < n; ++i) g += s.eigenvectors[a][i] * s.eigenvectors[b][i];
                if (std::abs(g - (a == b ? 1.0 : 0.0)) > 1e-8)
                    return std::string("eigenvectors not orthonormal");
            }
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < n; ++i) {
                double lv = 0;
                for (std::size_t j = 0; j < n; ++j) lv += l.at(i, j) * s.eigenvectors[k][j];
                if (std::abs(lv - s.eigenvalues[k] * s.eigenvectors[k][i]) > 1e-8)
                    return std::string("L v != lambda v");
            }
        return std::string();
    });

    check("spectral.parseval", [] {
        Rng rng(derive_seed(35, "check-psd"));
        const MoleculeRecord mol = sd::small_toy_molecule(35, 5, 9);
        const LaplacianSpectrum s = eigendecompose(graph_laplacian(mol));
        const Coords x = sd::random_coords(mol.atom_count(), rng);
        double total = 0;
        for (double v : psd(x, s)) total += v;
        double want = 0;
        for (const auto& r : x) want += dot(r, r);
        want /= 3.0;
        if (std::abs(total - want) > 1e-8 * std::max(1.0, want))
            return std::string("PSD sum != ||x||^2 / 3");
        return std::string();
    });

    check("spectral.heat-semigroup", [] {
        Rng rng(derive_seed(36, "check-heat"));
        const MoleculeRecord mol = sd::small_toy_molecule(36, 5, 9);
        const LaplacianSpectrum s = eigendecompose(graph_laplacian(mol));
        const Coords x = sd::random_coords(mol.atom_count(), rng);
        const Coords two_step = heat_kernel_blur(heat_kernel_blur(x, s, 0.8), s, 1.3);
        const Coords one_step = heat_kernel_blur(x, s, 2.1);
        if (sd::max_abs_diff(two_step, one_step) > 1e-8)
            return std::string("semigroup property violated beyond 1e-8");
        return std::string();
    });

    check("spectral.heat-psd-decay", [] {
        Rng rng(derive_seed(37, "check-heat"));
        const MoleculeRecord mol = sd::small_toy_molecule(37, 5, 9);
        const LaplacianSpectrum s = eigendecompose(graph_laplacian(mol));
        const Coords x = sd::random_coords(mol.atom_count(), rng);
        const double tau = 0.9;
        const std::vector<double> before = psd(x, s);
        const std::vector<double> after = psd(heat_kernel_blur(x, s, tau), s);
        for (std::size_t i = 0; i < before.size(); ++i) {
            const double want = std::exp(-2.0 * s.eigenvalues[i] * tau) * before[i];
            if (std::abs(after[i] - want) > 1e-8 * std::max(1.0, want))
                return std::string("PSD decay law violated beyond 1e-8");
        }
        return std::string();
    });

    // ---- sampling & persistence -------------------------------------------------
    check("sampler.oracle-stub-recovery", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(38);
        const Partition p = sd::bonded_pair_partition(mol);
        const Coords x0 = remove_mean(mol.conformers[0]);
        const auto cs = sd::coarse_from_centroids(mol, p, x0);
        const MappingMatrix map(p);
        DiffusionSchedule sched;
        Rng rng(derive_seed(38, "check-sample"));
        const Predictor oracle = [&](const Coords&, double) { return x0; };
        const Conformer out = sample_one(oracle, cs, map, sched, rng);
        if (aligned_rmsd(out, x0) > 1e-9)
            return std::string("oracle-driven sampler did not recover the ground truth");
        return std::string();
    });

    check("checkpoint.bit-exact-roundtrip", [] {
        const NetworkConfig cfg = sd::small_net_config();
        const Parameters params = init_parameters(cfg, 39);
        const std::string path = "/tmp/ebd-selfcheck-ckpt.bin";
        save_checkpoint(path, cfg, params);
        const Checkpoint ckpt = load_checkpoint(path);
        std::remove(path.c_str());
        if (ckpt.params.tensors.size() != params.tensors.size())
            return std::string("parameter count changed through the roundtrip");
        for (const auto& [name, t] : params.tensors) {
            const Tensor& u = ckpt.params.at(name);
            if (u.rows != t.rows || u.cols != t.cols ||
                std::memcmp(u.v.data(), t.v.data(), t.v.size() * sizeof(double)) != 0)
                return "tensor " + name + " not bit-exact";
        }
        return std::string();
    });

    check("io.molecule-roundtrip", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(40);
        const std::string line = serialize_molecule(mol);
        const MoleculeRecord back = parse_molecule_line(line, 1);
        if (serialize_molecule(back) != line) return std::string("serialization not stable");
        return std::string();
    });

    check("config.hash-order-stable", [] {
        std::istringstream a("x = 1\ny = \"two\"\n");
        std::istringstream b("y = \"two\"\nx = 1\n");
        if (RunConfig::parse(a).hash() != RunConfig::parse(b).hash())
            return std::string("config hash depends on key order");
        return std::string();
    });

    check("train.resume-bit-exact", [] {
        const MoleculeRecord mol = sd::small_toy_molecule(41, 4, 5);
        const Partition p = sd::bonded_pair_partition(mol);
        const Coords x0 = remove_mean(mol.conformers[0]);
        TrainExample ex;
        ex.molecule = &mol;
        ex.x0 = x0;
        ex.coarse = sd::coarse_from_centroids(mol, p, x0);
        NetworkConfig cfg = sd::small_net_config();
        cfg.layers = 1;
        cfg.width = 4;
        DiffusionSchedule sched;
        OptimizerConfig opt;
        opt.batch_size = 1;
        opt.iterations = 6;
        opt.ckpt_every = 0;

        TrainState full = init_train_state(cfg, 41);
        train(full, {ex}, sched, opt);

        TrainState half = init_train_state(cfg, 41);
        OptimizerConfig opt3 = opt;
        opt3.iterations = 3;
        train(half, {ex}, sched, opt3);
        save_train_state("/tmp/ebd-selfcheck-train.bin", half);
        TrainState resumed = load_train_state("/tmp/ebd-selfcheck-train.bin");
        std::remove("/tmp/ebd-selfcheck-train.bin");
        train(resumed, {ex}, sched, opt);

        for (const auto& [name, t] : full.params.tensors) {
            const Tensor& u = resumed.params.at(name);
            if (std::memcmp(u.v.data(), t.v.data(), t.v.size() * sizeof(double)) != 0)
                return "resumed run diverged at " + name;
        }
        return std::string();
    });

    return results;
}

} // namespace ebd
