#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ebd/molio.hpp"

namespace ebd {

// Small atom-labeled, bond-labeled graph (local indices).
struct LabeledSubgraph {
    std::vector<std::string> labels;
    std::vector<Bond> edges;   // i < j, order 0..3
};

struct FragmentKey {
    std::string canonical_string;
    bool operator==(const FragmentKey& o) const { return canonical_string == o.canonical_string; }
    bool operator<(const FragmentKey& o) const { return canonical_string < o.canonical_string; }
};

namespace detail {

// Iterative neighborhood refinement: stable vertex coloring invariant under
// isomorphism. Returns per-vertex class ranks (dense, by sorted signature).
inline std::vector<int> refine_colors(const LabeledSubgraph& g) {
    const std::size_t n = g.labels.size();
    std::vector<std::vector<std::pair<int, int>>> adj(n);   // (neighbor, order)
    for (const auto& e : g.edges) {
        adj[e.i].push_back({e.j, e.order});
        adj[e.j].push_back({e.i, e.order});
    }
    std::vector<std::string> sig(n);
    for (std::size_t v = 0; v < n; ++v) sig[v] = g.labels[v];

    std::vector<int> rank(n, 0);
    int num_classes = 0;
    for (std::size_t round = 0; round <= n; ++round) {
        std::vector<std::string> sorted = sig;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        for (std::size_t v = 0; v < n; ++v)
            rank[v] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), sig[v]) - sorted.begin());
        const int classes = static_cast<int>(sorted.size());
        if (classes == num_classes || classes == static_cast<int>(n)) break;
        num_classes = classes;
        std::vector<std::string> next(n);
        for (std::size_t v = 0; v < n; ++v) {
            std::vector<std::pair<int, int>> nb;   // (order, neighbor rank)
            for (const auto& [u, ord] : adj[v]) nb.push_back({ord, rank[u]});
            std::sort(nb.begin(), nb.end());
            std::string s = std::to_string(rank[v]);
            for (const auto& [ord, r] : nb) s += ";" + std::to_string(ord) + "," + std::to_string(r);
            next[v] = std::move(s);
        }
        sig = std::move(next);
    }
    return rank;
}

struct CanonSearch {
    const LabeledSubgraph& g;
    std::vector<int> color;                 // refined class ranks
    std::vector<std::vector<int>> adj;      // adj[i][j] = order+1 or 0
    std::vector<int> class_sequence;        // sorted color ranks (target sequence)
    std::vector<int> best;                  // best complete encoding so far
    std::vector<int> current;
    std::vector<int> perm;                  // position -> vertex (best ordering)
    std::vector<int> trial;
    std::vector<char> used;
    bool have_best = false;

    explicit CanonSearch(const LabeledSubgraph& graph) : g(graph) {
        const std::size_t n = g.labels.size();
        color = refine_colors(g);
        adj.assign(n, std::vector<int>(n, 0));
        for (const auto& e : g.edges) {
            adj[e.i][e.j] = e.order + 1;
            adj[e.j][e.i] = e.order + 1;
        }
        class_sequence = color;
        std::sort(class_sequence.begin(), class_sequence.end());
        used.assign(n, 0);
        trial.assign(n, -1);
    }

    // Encoding grows by one color entry plus the adjacency column to all
    // earlier positions each time a vertex is placed. `tight` tracks whether
    // the current prefix equals the best prefix; comparisons only prune then.
    void dfs(std::size_t pos, bool tight) {
        const std::size_t n = g.labels.size();
        if (pos == n) {
            if (!have_best || current < best) {
                best = current;
                perm = trial;
                have_best = true;
            }
            return;
        }
        const std::size_t entry_len = 1 + pos;
        for (std::size_t v = 0; v < n; ++v) {
            if (used[v] || color[v] != class_sequence[pos]) continue;
            current.push_back(color[v]);
            for (std::size_t p = 0; p < pos; ++p) current.push_back(adj[trial[p]][v]);
            bool prune = false;
            bool next_tight = tight && have_best;
            if (tight && have_best) {
                const std::size_t start = current.size() - entry_len;
                for (std::size_t k = start; k < current.size(); ++k) {
                    if (current[k] < best[k]) { next_tight = false; break; }
                    if (current[k] > best[k]) { prune = true; break; }
                }
            }
            if (!prune) {
                used[v] = 1;
                trial[pos] = static_cast<int>(v);
                dfs(pos + 1, next_tight);
                used[v] = 0;
            }
            current.resize(current.size() - entry_len);
        }
    }
};

} // namespace detail

/// Permutation-invariant canonical key of a connected labeled subgraph.
inline FragmentKey canonical_key(const LabeledSubgraph& g) {
    const std::size_t n = g.labels.size();
    if (n == 0) throw std::invalid_argument("canonical_key: empty subgraph");
    if (n > 64) throw std::invalid_argument("canonical_key: too many atoms");
    {
        std::vector<Bond> bonds = g.edges;
        if (!graph_connected(n, bonds)) throw std::invalid_argument("canonical_key: disconnected subgraph");
    }

    detail::CanonSearch search(g);
    search.dfs(0, true);

    std::string key;
    for (std::size_t p = 0; p < n; ++p) {
        if (p) key += ',';
        key += g.labels[search.perm[p]];
    }
    key += '|';
    bool first = true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const int a = search.adj[search.perm[i]][search.perm[j]];
            if (a == 0) continue;
            if (!first) key += ';';
            first = false;
            key += std::to_string(i) + "-" + std::to_string(j) + ":" + std::to_string(a - 1);
        }
    return FragmentKey{key};
}

/// Induced subgraph of a molecule on an atom subset (sorted indices).
inline LabeledSubgraph induced_subgraph(const MoleculeRecord& mol, const std::vector<int>& atoms) {
    LabeledSubgraph g;
    std::unordered_map<int, int> local;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        local[atoms[i]] = static_cast<int>(i);
        g.labels.push_back(mol.atoms[atoms[i]].element);
    }
    for (const auto& b : mol.bonds) {
        const auto it = local.find(b.i);
        const auto jt = local.find(b.j);
        if (it != local.end() && jt != local.end()) {
            Bond e{std::min(it->second, jt->second), std::max(it->second, jt->second), b.order};
            g.edges.push_back(e);
        }
    }
    return g;
}

struct VocabularyEntry {
    FragmentKey key;
    long long frequency = 0;
    int rank = 0;
};

struct FragmentVocabulary {
    std::vector<VocabularyEntry> entries;   // rank == index
    bool reached_target = true;

    int size() const { return static_cast<int>(entries.size()); }

    const VocabularyEntry* find(const FragmentKey& key) const {
        for (const auto& e : entries)
            if (e.key == key) return &e;
        return nullptr;
    }
};

namespace detail {

// Working partition during vocabulary building / decomposition: fragment id
// per atom plus cached member lists (sorted by atom index).
struct WorkPartition {
    std::vector<int> frag_of;                 // atom -> fragment id (sparse ids)
    std::map<int, std::vector<int>> members;  // fragment id -> sorted atoms

    explicit WorkPartition(std::size_t n) {
        frag_of.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            frag_of[i] = static_cast<int>(i);
            members[static_cast<int>(i)] = {static_cast<int>(i)};
        }
    }

    void merge(int a, int b) {
        if (a == b) return;
        auto& ma = members[a];
        auto& mb = members[b];
        for (int atom : mb) frag_of[atom] = a;
        ma.insert(ma.end(), mb.begin(), mb.end());
        std::sort(ma.begin(), ma.end());
        members.erase(b);
    }

    Partition finalize() const {
        Partition p;
        p.assignment.assign(frag_of.size(), -1);
        std::unordered_map<int, int> dense;
        // dense ids in order of lowest member atom
        std::vector<std::pair<int, int>> order;   // (lowest atom, fragment id)
        for (const auto& [fid, mem] : members) order.push_back({mem.front(), fid});
        std::sort(order.begin(), order.end());
        for (std::size_t k = 0; k < order.size(); ++k) dense[order[k].second] = static_cast<int>(k);
        for (std::size_t i = 0; i < frag_of.size(); ++i) p.assignment[i] = dense.at(frag_of[i]);
        p.m = static_cast<int>(order.size());
        return p;
    }
};

// Bond-adjacent fragment pairs, each pair once, keyed by (lowest atom of
// union, other fragment's lowest atom) for deterministic scans.
inline std::vector<std::pair<int, int>> adjacent_fragment_pairs(const MoleculeRecord& mol,
                                                                const WorkPartition& wp) {
    std::set<std::pair<int, int>> pairs;
    for (const auto& b : mol.bonds) {
        int a = wp.frag_of[b.i], c = wp.frag_of[b.j];
        if (a == c) continue;
        pairs.insert({std::min(a, c), std::max(a, c)});
    }
    return {pairs.begin(), pairs.end()};
}

inline FragmentKey merged_key(const MoleculeRecord& mol, const WorkPartition& wp, int fa, int fb) {
    std::vector<int> atoms = wp.members.at(fa);
    const auto& mb = wp.members.at(fb);
    atoms.insert(atoms.end(), mb.begin(), mb.end());
    std::sort(atoms.begin(), atoms.end());
    return canonical_key(induced_subgraph(mol, atoms));
}

} // namespace detail

/// Principal-Subgraph vocabulary mining: start from all unique atom keys,
/// per round promote the corpus-wide most frequent merged key of bond-adjacent
/// fragment pairs and apply that merge everywhere, until the target size.
inline FragmentVocabulary build_vocabulary(const std::vector<MoleculeRecord>& corpus, int target_size) {
    FragmentVocabulary vocab;
    std::unordered_map<std::string, int> in_vocab;   // key -> rank

    // initialization: every unique single-atom key, frequency = corpus count
    std::vector<std::string> atom_order;
    std::unordered_map<std::string, long long> atom_count;
    for (const auto& mol : corpus)
        for (const auto& a : mol.atoms) {
            if (!atom_count.count(a.element)) atom_order.push_back(a.element);
            ++atom_count[a.element];
        }
    for (const auto& el : atom_order) {
        const FragmentKey k{el + "|"};
        in_vocab[k.canonical_string] = vocab.size();
        vocab.entries.push_back({k, atom_count[el], vocab.size()});
    }
    if (target_size < vocab.size())
        throw std::invalid_argument("build_vocabulary: target_size below unique atom count");

    std::vector<detail::WorkPartition> parts;
    parts.reserve(corpus.size());
    for (const auto& mol : corpus) parts.emplace_back(mol.atom_count());

    while (vocab.size() < target_size) {
        // corpus-wide tally of merged keys, first-seen order kept for ties
        std::vector<std::pair<std::string, long long>> tally;
        std::unordered_map<std::string, std::size_t> tally_index;
        for (std::size_t mi = 0; mi < corpus.size(); ++mi) {
            for (const auto& [fa, fb] : detail::adjacent_fragment_pairs(corpus[mi], parts[mi])) {
                const FragmentKey k = detail::merged_key(corpus[mi], parts[mi], fa, fb);
                if (in_vocab.count(k.canonical_string)) continue;
                auto it = tally_index.find(k.canonical_string);
                if (it == tally_index.end()) {
                    tally_index[k.canonical_string] = tally.size();
                    tally.push_back({k.canonical_string, 1});
                } else {
                    ++tally[it->second].second;
                }
            }
        }
        if (tally.empty()) {
            vocab.reached_target = false;
            break;
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < tally.size(); ++i)
            if (tally[i].second > tally[best].second) best = i;

        const FragmentKey new_key{tally[best].first};
        in_vocab[new_key.canonical_string] = vocab.size();
        vocab.entries.push_back({new_key, tally[best].second, vocab.size()});

        // apply the just-inserted key greedily in every molecule,
        // left-to-right by lowest atom index
        for (std::size_t mi = 0; mi < corpus.size(); ++mi) {
            bool merged = true;
            while (merged) {
                merged = false;
                auto pairs = detail::adjacent_fragment_pairs(corpus[mi], parts[mi]);
                std::sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
                    const int la = std::min(parts[mi].members.at(a.first).front(),
                                            parts[mi].members.at(a.second).front());
                    const int lb = std::min(parts[mi].members.at(b.first).front(),
                                            parts[mi].members.at(b.second).front());
                    if (la != lb) return la < lb;
                    return std::max(parts[mi].members.at(a.first).front(),
                                    parts[mi].members.at(a.second).front()) <
                           std::max(parts[mi].members.at(b.first).front(),
                                    parts[mi].members.at(b.second).front());
                });
                for (const auto& [fa, fb] : pairs) {
                    if (detail::merged_key(corpus[mi], parts[mi], fa, fb) == new_key) {
                        parts[mi].merge(fa, fb);
                        merged = true;
                        break;
                    }
                }
            }
        }
    }
    return vocab;
}

/// Greedy decomposition under a fixed vocabulary: repeatedly merge the
/// adjacent fragment pair whose merged key has the highest vocabulary
/// frequency (ties: lower rank, then lowest involved atom index).
inline Partition decompose(const MoleculeRecord& mol, const FragmentVocabulary& vocab) {
    for (const auto& a : mol.atoms) {
        const FragmentKey k{a.element + "|"};
        if (!vocab.find(k))
            throw std::invalid_argument("decompose: element " + a.element + " absent from vocabulary");
    }

    detail::WorkPartition wp(mol.atom_count());
    while (true) {
        struct Candidate {
            long long freq;
            int rank;
            int low_atom;
            int high_atom;
            int fa, fb;
        };
        std::optional<Candidate> best;
        for (const auto& [fa, fb] : detail::adjacent_fragment_pairs(mol, wp)) {
            const FragmentKey k = detail::merged_key(mol, wp, fa, fb);
            const VocabularyEntry* e = vocab.find(k);
            if (!e) continue;
            Candidate c{e->frequency, e->rank,
                        std::min(wp.members.at(fa).front(), wp.members.at(fb).front()),
                        std::max(wp.members.at(fa).front(), wp.members.at(fb).front()), fa, fb};
            const auto better = [](const Candidate& x, const Candidate& y) {
                if (x.freq != y.freq) return x.freq > y.freq;
                if (x.rank != y.rank) return x.rank < y.rank;
                if (x.low_atom != y.low_atom) return x.low_atom < y.low_atom;
                return x.high_atom < y.high_atom;
            };
            if (!best || better(c, *best)) best = c;
        }
        if (!best) break;
        wp.merge(best->fa, best->fb);
    }
    return wp.finalize();
}

/// Per-fragment feature histogram: (C count, {O,N,S,P} count, halogen count).
inline std::vector<std::array<int, 3>> fragment_features(const MoleculeRecord& mol,
                                                         const Partition& partition) {
    partition.validate(mol);
    std::vector<std::array<int, 3>> out(partition.m, {0, 0, 0});
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        const int bucket = feature_bucket(mol.atoms[i].element);
        if (bucket >= 0) ++out[partition.assignment[i]][bucket];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary file I/O
// ---------------------------------------------------------------------------

inline void write_vocabulary(const std::string& path, const FragmentVocabulary& vocab) {
    nlohmann::ordered_json j;
    j["size"] = vocab.size();
    j["reached_target"] = vocab.reached_target;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : vocab.entries)
        j["entries"].push_back({{"key", e.key.canonical_string}, {"freq", e.frequency}, {"rank", e.rank}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open vocabulary file: " + path);
    out << j.dump() << '\n';
}

inline FragmentVocabulary read_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    nlohmann::json j;
    in >> j;
    FragmentVocabulary vocab;
    vocab.reached_target = j.value("reached_target", true);
    for (const auto& je : j.at("entries"))
        vocab.entries.push_back({FragmentKey{je.at("key").get<std::string>()},
                                 je.at("freq").get<long long>(), je.at("rank").get<int>()});
    for (int k = 0; k < vocab.size(); ++k)
        if (vocab.entries[k].rank != k)
            throw std::runtime_error("vocabulary file: ranks not dense");
    return vocab;
}

} // namespace ebd
