#pragma once

#include <cmath>
#include <queue>
#include <stdexcept>
#include <vector>

#include "ebd/fragmenting.hpp"
#include "ebd/geometry.hpp"
#include "ebd/molio.hpp"

namespace ebd {

struct CoarseStructure {
    Coords frag_coords;                        // m x 3, x-hat^f
    std::vector<std::array<int, 3>> frag_features;   // m x 3, h^f
    Partition partition;
};

struct TrainingPair {
    std::string molecule_id;
    Conformer x0;            // ground truth, centered and aligned to its reference
    CoarseStructure coarse;
};

struct EmbedResult {
    Conformer coords;
    double stress = 0.0;
    bool converged = true;
};

namespace detail {

// Target distances: ideal bond lengths summed along the minimum-weight path,
// contracted by 0.95^(hops-1).
inline std::vector<std::vector<double>> target_distances(const MoleculeRecord& mol) {
    const std::size_t n = mol.atom_count();
    std::vector<std::vector<std::pair<int, double>>> adj(n);
    for (const auto& b : mol.bonds) {
        const double len = ideal_bond_length(mol.atoms[b.i].element, mol.atoms[b.j].element, b.order);
        adj[b.i].push_back({b.j, len});
        adj[b.j].push_back({b.i, len});
    }
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t s = 0; s < n; ++s) {
        // Dijkstra on length weights, tracking hop counts of the chosen paths
        std::vector<double> dist(n, 1e18);
        std::vector<int> hops(n, 0);
        dist[s] = 0;
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        pq.push({0.0, static_cast<int>(s)});
        while (!pq.empty()) {
            const auto [dv, v] = pq.top();
            pq.pop();
            if (dv > dist[v] + 1e-15) continue;
            for (const auto& [w, len] : adj[v]) {
                if (dist[v] + len < dist[w] - 1e-15) {
                    dist[w] = dist[v] + len;
                    hops[w] = hops[v] + 1;
                    pq.push({dist[w], w});
                }
            }
        }
        for (std::size_t t = 0; t < n; ++t)
            d[s][t] = (s == t) ? 0.0 : dist[t] * std::pow(0.95, hops[t] - 1);
    }
    return d;
}

inline double stress_value(const Conformer& x, const std::vector<std::vector<double>>& target) {
    const std::size_t n = x.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dij = norm(x[i] - x[j]);
            const double e = dij - target[i][j];
            s += e * e;
        }
    return s;
}

} // namespace detail

/// Surrogate distance-geometry embedder: shortest-path distance targets plus
/// SMACOF stress majorization from a seeded random start.
inline EmbedResult embed_reference(const MoleculeRecord& mol, std::uint64_t seed) {
    const std::size_t n = mol.atom_count();
    if (!graph_connected(n, mol.bonds)) throw std::invalid_argument("embed_reference: disconnected molecule");
    const auto target = detail::target_distances(mol);

    Rng rng(derive_seed(seed, "embed"));
    Conformer x(n);
    const double spread = std::cbrt(static_cast<double>(n));
    for (auto& r : x)
        for (int c = 0; c < 3; ++c) r[c] = spread * rng.gaussian();

    EmbedResult result;
    if (n == 1) {
        result.coords = {Vec3{0, 0, 0}};
        return result;
    }

    double prev_stress = detail::stress_value(x, target);
    const int max_iters = 500;
    bool converged = false;
    for (int iter = 0; iter < max_iters; ++iter) {
        // Guttman transform with unit weights: row i of (1/n) B(x) x is
        // (1/n) sum_{j != i} (target_ij / d_ij) (x_i - x_j)
        Conformer xn(n, Vec3{0, 0, 0});
        for (std::size_t i = 0; i < n; ++i) {
            Vec3 acc{0, 0, 0};
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const Vec3 diff = x[i] - x[j];
                const double dij = norm(diff);
                const double ratio = dij > 1e-12 ? target[i][j] / dij : 0.0;
                acc = acc + ratio * diff;
            }
            xn[i] = (1.0 / static_cast<double>(n)) * acc;
        }
        x = std::move(xn);
        const double s = detail::stress_value(x, target);
        const double denom = std::max(prev_stress, 1e-30);
        if (std::abs(prev_stress - s) / denom < 1e-6) {
            converged = true;
            prev_stress = s;
            break;
        }
        prev_stress = s;
    }

    result.coords = remove_mean(x);
    result.stress = prev_stress;
    result.converged = converged;
    return result;
}

/// Fragment coordinates as member-atom centroids of the (centered) reference,
/// with fragment features from the partition. The lifted structure has zero
/// center of mass.
inline CoarseStructure coarse_from_reference(const MoleculeRecord& mol, const Partition& partition,
                                             const Conformer& reference) {
    if (reference.size() != mol.atom_count())
        throw std::invalid_argument("coarse_from_reference: shape mismatch");
    CoarseStructure cs;
    cs.partition = partition;
    const MappingMatrix map(partition);
    cs.frag_coords = map.centroids(remove_mean(reference));
    cs.frag_features = fragment_features(mol, partition);
    return cs;
}

/// Optimal matching of ground-truth conformers to references (linear sum
/// assignment on the aligned-RMSD cost matrix), then Kabsch alignment of each
/// ground truth onto its assigned reference. Pairs returned in ground-truth order.
inline std::vector<TrainingPair> match_and_align(const MoleculeRecord& mol, const Partition& partition,
                                                 const std::vector<Conformer>& ground_truth,
                                                 const std::vector<Conformer>& references) {
    if (ground_truth.size() != references.size())
        throw std::invalid_argument("match_and_align: conformer count mismatch");
    const int k = static_cast<int>(ground_truth.size());
    if (k == 0) return {};

    // cost[i][j] = rmsd(reference_i, ground_truth_j); assignment gives the
    // reference for each row i; invert to per-ground-truth
    std::vector<std::vector<double>> cost(k, std::vector<double>(k));
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) cost[i][j] = aligned_rmsd(references[i], ground_truth[j]);
    const std::vector<int> ref_to_gt = linear_sum_assignment(cost);
    std::vector<int> gt_to_ref(k, -1);
    for (int i = 0; i < k; ++i) gt_to_ref[ref_to_gt[i]] = i;

    std::vector<TrainingPair> pairs;
    for (int j = 0; j < k; ++j) {
        const int i = gt_to_ref[j];
        const Conformer ref = remove_mean(references[i]);
        const Conformer gt = remove_mean(ground_truth[j]);
        Conformer aligned(gt.size());
        if (gt.size() >= 2) {
            const Mat3 r = kabsch(gt, ref);
            for (std::size_t a = 0; a < gt.size(); ++a) aligned[a] = mat3_apply(r, gt[a]);
        } else {
            aligned = gt;
        }
        TrainingPair tp;
        tp.molecule_id = mol.id;
        tp.x0 = std::move(aligned);
        tp.coarse = coarse_from_reference(mol, partition, ref);
        pairs.push_back(std::move(tp));
    }
    return pairs;
}

} // namespace ebd
