#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebd/fragmenting.hpp"
#include "ebd/molio.hpp"
#include "ebd/rng.hpp"
#include "ebd/tensor.hpp"

namespace ebd {

struct NetworkConfig {
    int layers = 6;
    int width = 128;
    int hops = 3;
    double cutoff = 10.0;   // Angstrom
    int atom_types = 4;
    int bond_types = 4;
    int time_dim = 16;
    bool frozen_frag_coords = false;

    void validate() const {
        if (layers < 1 || width < 1 || hops < 1 || cutoff <= 0 || atom_types < 1 || time_dim < 1)
            throw std::invalid_argument("NetworkConfig: invalid field");
    }

    // bond orders 0..3, hop-2..hop-`hops`, radius
    int edge_type_count() const { return 4 + (hops - 1) + 1; }
    int radius_type() const { return edge_type_count() - 1; }
    int hop_type(int h) const { return 4 + (h - 2); }
};

struct Parameters {
    std::map<std::string, Tensor> tensors;   // ordered: deterministic iteration

    Tensor& at(const std::string& name) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("missing parameter: " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("missing parameter: " + name);
        return it->second;
    }
    bool finite() const {
        for (const auto& [k, t] : tensors)
            if (!t.finite()) return false;
        return true;
    }
};

struct Edge {
    int i = 0;
    int j = 0;
    int type = 0;
};

using EdgeSet = std::vector<Edge>;

/// Directed edge set: bonded edges (bond-order types), multi-hop neighbors up
/// to config.hops, and radius neighbors within the cutoff. Precedence
/// bond > hop > radius.
inline EdgeSet expand_edges(const MoleculeRecord& mol, const Coords& coords, const NetworkConfig& cfg) {
    const int n = static_cast<int>(mol.atom_count());
    if (static_cast<int>(coords.size()) != n) throw std::invalid_argument("expand_edges: shape mismatch");
    for (const auto& r : coords)
        for (double c : r)
            if (!std::isfinite(c)) throw std::invalid_argument("expand_edges: non-finite coords");

    std::vector<std::vector<int>> type(n, std::vector<int>(n, -1));
    for (const auto& b : mol.bonds) {
        type[b.i][b.j] = b.order;
        type[b.j][b.i] = b.order;
    }
    // hop distances via BFS on the bonded graph
    const auto adj = mol.adjacency();
    for (int s = 0; s < n; ++s) {
        std::vector<int> dist(n, -1);
        std::queue<int> q;
        dist[s] = 0;
        q.push(s);
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            if (dist[v] >= cfg.hops) continue;
            for (int w : adj[v])
                if (dist[w] < 0) {
                    dist[w] = dist[v] + 1;
                    q.push(w);
                }
        }
        for (int t = 0; t < n; ++t)
            if (t != s && dist[t] >= 2 && dist[t] <= cfg.hops && type[s][t] < 0)
                type[s][t] = cfg.hop_type(dist[t]);
    }
    // radius neighbors
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (type[i][j] >= 0) continue;
            if (norm(coords[i] - coords[j]) <= cfg.cutoff) {
                type[i][j] = cfg.radius_type();
                type[j][i] = cfg.radius_type();
            }
        }

    EdgeSet edges;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && type[i][j] >= 0) edges.push_back({i, j, type[i][j]});
    return edges;
}

namespace detail {

inline void init_uniform(Tensor& t, double bound, Rng& rng) {
    for (double& x : t.v) x = rng.uniform(-bound, bound);
}

struct MlpSpec {
    std::string name;
    int in = 0;
    int out = 0;
    bool zero_out = false;   // phi_x heads: zero-initialized final layer
};

inline std::vector<MlpSpec> layer_mlps(const NetworkConfig& cfg, int layer) {
    const int d = cfg.width;
    const std::string p = "l" + std::to_string(layer) + ".";
    return {
        {p + "phi_m_f", d + d + 1, d, false},
        {p + "phi_h_f", d + d + d, d, false},
        {p + "phi_m_a", d + d + 1 + d, d, false},
        {p + "phi_h_a", d + d + d, d, false},
        {p + "phi_x_a", d + d + d + d, 1, true},
        {p + "phi_x_f", d + d + 1, 1, true},
    };
}

} // namespace detail

/// Seeded initialization: uniform +-sqrt(1/fan_in), except the zero-initialized
/// output layers of the coordinate heads (identity at init).
inline Parameters init_parameters(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int d = cfg.width;
    Rng rng(derive_seed(seed, "init"));
    Parameters params;

    const auto add = [&](const std::string& name, int rows, int cols, double bound) {
        Tensor t(rows, cols);
        detail::init_uniform(t, bound, rng);
        params.tensors[name] = std::move(t);
    };

    add("atom_embed", cfg.atom_types, d, std::sqrt(1.0 / d));
    add("edge_embed", cfg.edge_type_count(), d, std::sqrt(1.0 / d));
    add("frag_proj_w", 3, d, std::sqrt(1.0 / 3.0));
    add("frag_proj_b", 1, d, 0.0);
    add("time_atom_w", cfg.time_dim, d, std::sqrt(1.0 / cfg.time_dim));
    add("time_atom_b", 1, d, 0.0);
    add("time_frag_w", cfg.time_dim, d, std::sqrt(1.0 / cfg.time_dim));
    add("time_frag_b", 1, d, 0.0);

    for (int l = 0; l < cfg.layers; ++l) {
        for (const auto& spec : detail::layer_mlps(cfg, l)) {
            add(spec.name + ".w0", spec.in, d, std::sqrt(1.0 / spec.in));
            add(spec.name + ".b0", 1, d, std::sqrt(1.0 / spec.in));
            add(spec.name + ".w1", d, d, std::sqrt(1.0 / d));
            add(spec.name + ".b1", 1, d, std::sqrt(1.0 / d));
            const double out_bound = spec.zero_out ? 0.0 : std::sqrt(1.0 / d);
            add(spec.name + ".w2", d, spec.out, out_bound);
            add(spec.name + ".b2", 1, spec.out, out_bound);
        }
    }
    return params;
}

// A forward evaluation with its tape kept alive: the training engine appends
// loss nodes and runs the reverse pass against the recorded parameter vars.
struct ForwardRun {
    Tape tape;
    Var output = -1;          // n x 3, centered
    Var h_atoms = -1;         // final invariant atom features
    Var h_frags = -1;         // final invariant fragment features
    std::map<std::string, Var> param_vars;
};

namespace detail {

struct MlpVars {
    Var w0, b0, w1, b1, w2, b2;
};

inline Var mlp_apply(Tape& tape, const MlpVars& m, Var input) {
    Var h = tape.add_rowvec(tape.matmul(input, m.w0), m.b0);
    h = tape.silu(h);
    h = tape.add_rowvec(tape.matmul(h, m.w1), m.b1);
    h = tape.silu(h);
    return tape.add_rowvec(tape.matmul(h, m.w2), m.b2);
}

inline Tensor time_embedding(double t_norm, int time_dim) {
    Tensor e(1, time_dim);
    for (int k = 0; k < time_dim; ++k) {
        const double freq =
            time_dim > 1 ? std::pow(1.0e4, static_cast<double>(k) / (time_dim - 1)) : 1.0;
        e.at(0, k) = (k % 2 == 0) ? std::sin(t_norm * freq) : std::cos(t_norm * freq);
    }
    return e;
}

} // namespace detail

/// Hierarchical SE(3)-equivariant deblurring network. Builds the computation
/// on a fresh tape and returns it together with the parameter bindings.
inline ForwardRun forward_run(const Parameters& params, const NetworkConfig& cfg,
                              const MoleculeRecord& mol, const Partition& partition,
                              const Coords& x_t, double t_norm) {
    cfg.validate();
    partition.validate(mol);
    const int n = static_cast<int>(mol.atom_count());
    const int m = partition.m;
    if (static_cast<int>(x_t.size()) != n) throw std::invalid_argument("forward: shape mismatch");
    for (const auto& a : mol.atoms)
        if (a.type_index >= cfg.atom_types)
            throw std::invalid_argument("forward: atom type index exceeds config.atom_types");

    ForwardRun run;
    Tape& tape = run.tape;

    for (const auto& [name, tensor] : params.tensors) run.param_vars[name] = tape.constant(tensor);
    const auto pv = [&](const std::string& name) {
        const auto it = run.param_vars.find(name);
        if (it == run.param_vars.end()) throw std::out_of_range("missing parameter: " + name);
        return it->second;
    };
    const auto mlp_vars = [&](const std::string& name) {
        return detail::MlpVars{pv(name + ".w0"), pv(name + ".b0"), pv(name + ".w1"),
                               pv(name + ".b1"), pv(name + ".w2"), pv(name + ".b2")};
    };

    // initial features
    std::vector<int> atom_type_idx(n);
    for (int i = 0; i < n; ++i) atom_type_idx[i] = mol.atoms[i].type_index;
    const Var time_emb = tape.constant(detail::time_embedding(t_norm, cfg.time_dim));
    const Var time_atom = tape.matmul(time_emb, pv("time_atom_w"));
    const Var time_frag = tape.matmul(time_emb, pv("time_frag_w"));

    Var h_a = tape.gather_rows(pv("atom_embed"), atom_type_idx);
    h_a = tape.add_rowvec(h_a, tape.add(time_atom, pv("time_atom_b")));

    const auto features = fragment_features(mol, partition);
    Tensor feat(m, 3);
    for (int k = 0; k < m; ++k)
        for (int c = 0; c < 3; ++c) feat.at(k, c) = static_cast<double>(features[k][c]);
    Var h_f = tape.add_rowvec(tape.matmul(tape.constant(std::move(feat)), pv("frag_proj_w")),
                              pv("frag_proj_b"));
    h_f = tape.add_rowvec(h_f, tape.add(time_frag, pv("time_frag_b")));

    Tensor xt_tensor(n, 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) xt_tensor.at(i, c) = x_t[i][c];
    Var x_cur = tape.constant(std::move(xt_tensor));
    const Var x_input = x_cur;

    const std::vector<int>& assignment = partition.assignment;

    // complete fragment graph, directed
    std::vector<int> fei, fej;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) {
                fei.push_back(i);
                fej.push_back(j);
            }

    for (int l = 0; l < cfg.layers; ++l) {
        const auto phi_m_f = mlp_vars("l" + std::to_string(l) + ".phi_m_f");
        const auto phi_h_f = mlp_vars("l" + std::to_string(l) + ".phi_h_f");
        const auto phi_m_a = mlp_vars("l" + std::to_string(l) + ".phi_m_a");
        const auto phi_h_a = mlp_vars("l" + std::to_string(l) + ".phi_h_a");
        const auto phi_x_a = mlp_vars("l" + std::to_string(l) + ".phi_x_a");
        const auto phi_x_f = mlp_vars("l" + std::to_string(l) + ".phi_x_f");

        // fragment coordinates: centroids of the current (or input) layer
        const Var x_anchor = cfg.frozen_frag_coords ? x_input : x_cur;
        const Var xf = tape.segment_mean_rows(x_anchor, assignment, m);

        // (ii) fragment-level message passing on the complete fragment graph
        Var frag_agg;
        if (!fei.empty()) {
            const Var hfi = tape.gather_rows(h_f, fei);
            const Var hfj = tape.gather_rows(h_f, fej);
            const Var rel = tape.sub(tape.gather_rows(xf, fei), tape.gather_rows(xf, fej));
            const Var dist = tape.row_norm(rel);
            const Var msg = detail::mlp_apply(tape, phi_m_f, tape.concat_cols({hfi, hfj, dist}));
            frag_agg = tape.scatter_add_rows(msg, fei, m);
        } else {
            frag_agg = tape.constant(Tensor(m, cfg.width));
        }
        const Var pooled = tape.segment_mean_rows(h_a, assignment, m);
        h_f = detail::mlp_apply(tape, phi_h_f, tape.concat_cols({h_f, frag_agg, pooled}));

        // (iii) atom-level message passing over the expanded edge set
        Coords cur_coords(n);
        {
            const Tensor& xv = tape.value(x_cur);
            if (!xv.finite())
                throw std::runtime_error("forward: non-finite coordinates at layer " + std::to_string(l));
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c) cur_coords[i][c] = xv.at(i, c);
        }
        const EdgeSet edges = expand_edges(mol, cur_coords, cfg);

        Var h_f_of_atom = tape.gather_rows(h_f, assignment);
        if (!edges.empty()) {
            std::vector<int> ei, ej, etype;
            for (const auto& e : edges) {
                ei.push_back(e.i);
                ej.push_back(e.j);
                etype.push_back(e.type);
            }
            const Var e_emb = tape.gather_rows(pv("edge_embed"), etype);
            const Var hai = tape.gather_rows(h_a, ei);
            const Var haj = tape.gather_rows(h_a, ej);
            const Var rel_a = tape.sub(tape.gather_rows(x_cur, ei), tape.gather_rows(x_cur, ej));
            const Var dist_a = tape.row_norm(rel_a);
            const Var msg_a =
                detail::mlp_apply(tape, phi_m_a, tape.concat_cols({hai, haj, dist_a, e_emb}));
            const Var atom_agg = tape.scatter_add_rows(msg_a, ei, n);
            const Var h_a_new =
                detail::mlp_apply(tape, phi_h_a, tape.concat_cols({h_a, atom_agg, h_f_of_atom}));

            // (iv) coordinate update
            const Var hni = tape.gather_rows(h_a_new, ei);
            const Var hnj = tape.gather_rows(h_a_new, ej);
            const Var w_a =
                detail::mlp_apply(tape, phi_x_a, tape.concat_cols({hni, hnj, msg_a, e_emb}));
            const Var coef_a = tape.div(w_a, tape.add_const(dist_a, 1.0));
            const Var delta1 = tape.scatter_add_rows(tape.mul_colvec(rel_a, coef_a), ei, n);

            const Var xk = tape.gather_rows(xf, assignment);
            const Var rel_f = tape.sub(x_cur, xk);
            const Var dist_f = tape.row_norm(rel_f);
            const Var w_f = detail::mlp_apply(
                tape, phi_x_f, tape.concat_cols({h_a_new, h_f_of_atom, dist_f}));
            const Var coef_f = tape.div(w_f, tape.add_const(dist_f, 1.0));
            const Var delta2 = tape.mul_colvec(rel_f, coef_f);

            x_cur = tape.add(tape.add(x_cur, delta1), delta2);
            h_a = h_a_new;
        } else {
            // single-atom molecule: only the fragment-anchor term applies
            const Var atom_agg = tape.constant(Tensor(n, cfg.width));
            const Var h_a_new =
                detail::mlp_apply(tape, phi_h_a, tape.concat_cols({h_a, atom_agg, h_f_of_atom}));
            const Var xk = tape.gather_rows(xf, assignment);
            const Var rel_f = tape.sub(x_cur, xk);
            const Var dist_f = tape.row_norm(rel_f);
            const Var w_f = detail::mlp_apply(
                tape, phi_x_f, tape.concat_cols({h_a_new, h_f_of_atom, dist_f}));
            const Var coef_f = tape.div(w_f, tape.add_const(dist_f, 1.0));
            x_cur = tape.add(x_cur, tape.mul_colvec(rel_f, coef_f));
            h_a = h_a_new;
        }
        if (!tape.value(x_cur).finite())
            throw std::runtime_error("forward: non-finite coordinates after layer " + std::to_string(l));
    }

    run.output = tape.center_rows(x_cur);
    run.h_atoms = h_a;
    run.h_frags = h_f;
    return run;
}

/// Value-only forward pass: the ground-truth estimate x0-tilde.
inline Coords forward(const Parameters& params, const NetworkConfig& cfg, const MoleculeRecord& mol,
                      const Partition& partition, const Coords& x_t, double t_norm) {
    ForwardRun run = forward_run(params, cfg, mol, partition, x_t, t_norm);
    const Tensor& out = run.tape.value(run.output);
    Coords result(out.rows);
    for (int i = 0; i < out.rows; ++i)
        for (int c = 0; c < 3; ++c) result[i][c] = out.at(i, c);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O: JSON config header plus named raw double arrays; bit-exact.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const NetworkConfig& cfg, const Parameters& params,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    nlohmann::ordered_json header;
    header["layers"] = cfg.layers;
    header["width"] = cfg.width;
    header["hops"] = cfg.hops;
    header["cutoff"] = cfg.cutoff;
    header["atom_types"] = cfg.atom_types;
    header["bond_types"] = cfg.bond_types;
    header["time_dim"] = cfg.time_dim;
    header["frozen_frag_coords"] = cfg.frozen_frag_coords;
    header["extra"] = extra;
    const std::string hs = header.dump();

    const char magic[8] = {'E', 'B', 'D', 'C', 'K', 'P', 'T', '1'};
    out.write(magic, 8);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    const std::uint64_t count = params.tensors.size();
    out.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [name, t] : params.tensors) {
        const std::uint64_t nlen = name.size();
        out.write(reinterpret_cast<const char*>(&nlen), 8);
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const std::uint64_t rows = t.rows, cols = t.cols;
        out.write(reinterpret_cast<const char*>(&rows), 8);
        out.write(reinterpret_cast<const char*>(&cols), 8);
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failure: " + path);
}

struct Checkpoint {
    NetworkConfig config;
    Parameters params;
    nlohmann::json extra;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "EBDCKPT1")
        throw std::runtime_error("bad checkpoint magic: " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    const nlohmann::json header = nlohmann::json::parse(hs);

    NetworkConfig cfg;
    cfg.layers = header.at("layers").get<int>();
    cfg.width = header.at("width").get<int>();
    cfg.hops = header.at("hops").get<int>();
    cfg.cutoff = header.at("cutoff").get<double>();
    cfg.atom_types = header.at("atom_types").get<int>();
    cfg.bond_types = header.at("bond_types").get<int>();
    cfg.time_dim = header.at("time_dim").get<int>();
    cfg.frozen_frag_coords = header.at("frozen_frag_coords").get<bool>();

    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.extra = header.value("extra", nlohmann::json::object());
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    for (std::uint64_t e = 0; e < count; ++e) {
        std::uint64_t nlen = 0;
        in.read(reinterpret_cast<char*>(&nlen), 8);
        std::string name(nlen, '\0');
        in.read(name.data(), static_cast<std::streamsize>(nlen));
        std::uint64_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), 8);
        in.read(reinterpret_cast<char*>(&cols), 8);
        Tensor t(static_cast<int>(rows), static_cast<int>(cols));
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        ckpt.params.tensors[name] = std::move(t);
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ckpt;
}

} // namespace ebd
