#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebd/coarse.hpp"
#include "ebd/diffusion.hpp"
#include "ebd/geometry.hpp"
#include "ebd/net.hpp"

namespace ebd {

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;   // decoupled
    int batch_size = 4;
    int iterations = 2000;
    int ckpt_every = 500;

    void validate() const {
        if (learning_rate < 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 ||
            epsilon <= 0 || weight_decay < 0 || batch_size < 1 || iterations < 0)
            throw std::invalid_argument("OptimizerConfig: invalid field");
    }
};

struct TrainState {
    NetworkConfig net_config;
    Parameters params;
    Parameters moment1;   // same shapes as params
    Parameters moment2;
    long long step = 0;
    std::uint64_t seed = 0;
};

inline TrainState init_train_state(const NetworkConfig& cfg, std::uint64_t seed) {
    TrainState state;
    state.net_config = cfg;
    state.params = init_parameters(cfg, seed);
    state.seed = seed;
    for (const auto& [name, t] : state.params.tensors) {
        state.moment1.tensors[name] = Tensor(t.rows, t.cols);
        state.moment2.tensors[name] = Tensor(t.rows, t.cols);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Kabsch-aligned mean squared error: R from aligning the prediction onto the
/// ground truth, mean over the 3n entries of ||x0 - pred R^T||^2.
inline double loss_value(const Coords& x0, const Coords& prediction) {
    if (x0.size() != prediction.size()) throw std::invalid_argument("loss: shape mismatch");
    const Coords gt = remove_mean(x0);
    const Coords pred = remove_mean(prediction);
    double s = 0;
    if (gt.size() >= 2) {
        const Mat3 r = kabsch(pred, gt);
        for (std::size_t i = 0; i < gt.size(); ++i) {
            const Vec3 d = gt[i] - mat3_apply(r, pred[i]);
            s += dot(d, d);
        }
    } else {
        for (std::size_t i = 0; i < gt.size(); ++i) {
            const Vec3 d = gt[i] - pred[i];
            s += dot(d, d);
        }
    }
    return s / (3.0 * static_cast<double>(gt.size()));
}

/// Appends the loss to a forward run's tape. The alignment rotation is a
/// constant of the graph (stop-gradient through Kabsch).
inline Var append_loss(ForwardRun& run, const Coords& x0) {
    Tape& tape = run.tape;
    const Tensor& pred_t = tape.value(run.output);
    const int n = pred_t.rows;
    if (static_cast<int>(x0.size()) != n) throw std::invalid_argument("append_loss: shape mismatch");

    const Coords gt = remove_mean(x0);
    Coords pred(n);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) pred[i][c] = pred_t.at(i, c);

    Var aligned = run.output;
    if (n >= 2) {
        const Mat3 r = kabsch(pred, gt);
        Tensor rt(3, 3);   // pred * R^T applies R to each row
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) rt.at(a, b) = r[b][a];
        aligned = tape.matmul(run.output, tape.constant(std::move(rt)));
    }
    Tensor gt_t(n, 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) gt_t.at(i, c) = gt[i][c];
    const Var diff = tape.sub(tape.constant(std::move(gt_t)), aligned);
    return tape.mean_all(tape.mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainExample {
    const MoleculeRecord* molecule = nullptr;
    Conformer x0;             // centered, aligned to its matched reference
    CoarseStructure coarse;   // carries the partition
};

struct GradientResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};

/// One example's loss and parameter gradients at a sampled time step.
inline GradientResult example_gradient(const Parameters& params, const NetworkConfig& cfg,
                                       const TrainExample& ex, const DiffusionSchedule& schedule,
                                       Rng& rng) {
    schedule.validate();
    const MappingMatrix map(ex.coarse.partition);
    const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(schedule.T)));
    const Coords x_t = forward_sample(ex.x0, ex.coarse, map, t, schedule, rng);

    ForwardRun run = forward_run(params, cfg, *ex.molecule, ex.coarse.partition, x_t,
                                 static_cast<double>(t) / schedule.T);
    const Var loss_var = append_loss(run, ex.x0);

    GradientResult res;
    res.loss = run.tape.value(loss_var).at(0, 0);
    if (!std::isfinite(res.loss))
        throw std::runtime_error("non-finite loss for molecule " + ex.molecule->id);
    run.tape.backward(loss_var);
    for (const auto& [name, var] : run.param_vars) res.grads[name] = run.tape.grad(var);
    return res;
}

/// AdamW update with bias correction and decoupled weight decay.
inline void apply_adamw(TrainState& state, const std::map<std::string, Tensor>& grads,
                        const OptimizerConfig& opt) {
    opt.validate();
    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (auto& [name, theta] : state.params.tensors) {
        const Tensor& g = grads.at(name);
        Tensor& m = state.moment1.at(name);
        Tensor& v = state.moment2.at(name);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m.v[i] = opt.beta1 * m.v[i] + (1.0 - opt.beta1) * g.v[i];
            v.v[i] = opt.beta2 * v.v[i] + (1.0 - opt.beta2) * g.v[i] * g.v[i];
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            theta.v[i] -= opt.learning_rate *
                          (mhat / (std::sqrt(vhat) + opt.epsilon) + opt.weight_decay * theta.v[i]);
        }
    }
}

/// Single-pair training step (Algorithm: sample t, blur+noise, predict,
/// aligned MSE, AdamW). Returns the loss.
inline double train_step(TrainState& state, const TrainExample& ex, const DiffusionSchedule& schedule,
                         const OptimizerConfig& opt) {
    Rng rng(derive_seed(state.seed, "train", static_cast<std::uint64_t>(state.step)));
    const GradientResult res = example_gradient(state.params, state.net_config, ex, schedule, rng);
    apply_adamw(state, res.grads, opt);
    return res.loss;
}

struct TrainCallbacks {
    std::function<void(long long step, double loss, double seconds)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
};

/// Mini-batch training loop: per step, examples drawn uniformly; gradients
/// averaged over the batch; deterministic per (seed, step).
inline void train(TrainState& state, const std::vector<TrainExample>& examples,
                  const DiffusionSchedule& schedule, const OptimizerConfig& opt,
                  const TrainCallbacks& callbacks = {}) {
    opt.validate();
    if (examples.empty()) throw std::invalid_argument("train: empty example set");
    const auto start = std::chrono::steady_clock::now();
    while (state.step < opt.iterations) {
        Rng rng(derive_seed(state.seed, "train", static_cast<std::uint64_t>(state.step)));
        std::map<std::string, Tensor> acc;
        for (const auto& [name, t] : state.params.tensors) acc[name] = Tensor(t.rows, t.cols);
        double loss_sum = 0;
        for (int b = 0; b < opt.batch_size; ++b) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(examples.size())));
            const GradientResult res =
                example_gradient(state.params, state.net_config, examples[idx], schedule, rng);
            loss_sum += res.loss;
            for (auto& [name, g] : acc) {
                const Tensor& eg = res.grads.at(name);
                for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += eg.v[i];
            }
        }
        const double inv = 1.0 / opt.batch_size;
        for (auto& [name, g] : acc)
            for (double& x : g.v) x *= inv;
        apply_adamw(state, acc, opt);

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (callbacks.on_step) callbacks.on_step(state.step, loss_sum * inv, seconds);
        if (callbacks.on_checkpoint && opt.ckpt_every > 0 && state.step % opt.ckpt_every == 0)
            callbacks.on_checkpoint(state);
    }
}

// ---------------------------------------------------------------------------
// Train-state checkpointing (params + moments + step in one container)
// ---------------------------------------------------------------------------

inline void save_train_state(const std::string& path, const TrainState& state) {
    Parameters combined;
    for (const auto& [name, t] : state.params.tensors) combined.tensors["param." + name] = t;
    for (const auto& [name, t] : state.moment1.tensors) combined.tensors["m1." + name] = t;
    for (const auto& [name, t] : state.moment2.tensors) combined.tensors["m2." + name] = t;
    nlohmann::json extra;
    extra["step"] = state.step;
    extra["seed_hi"] = static_cast<std::uint32_t>(state.seed >> 32);
    extra["seed_lo"] = static_cast<std::uint32_t>(state.seed & 0xffffffffULL);
    save_checkpoint(path, state.net_config, combined, extra);
}

inline TrainState load_train_state(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    TrainState state;
    state.net_config = ckpt.config;
    if (!ckpt.extra.contains("step")) throw std::runtime_error("not a train-state checkpoint: " + path);
    state.step = ckpt.extra.at("step").get<long long>();
    state.seed = (static_cast<std::uint64_t>(ckpt.extra.at("seed_hi").get<std::uint32_t>()) << 32) |
                 ckpt.extra.at("seed_lo").get<std::uint32_t>();
    for (const auto& [name, t] : ckpt.params.tensors) {
        if (name.rfind("param.", 0) == 0) state.params.tensors[name.substr(6)] = t;
        else if (name.rfind("m1.", 0) == 0) state.moment1.tensors[name.substr(3)] = t;
        else if (name.rfind("m2.", 0) == 0) state.moment2.tensors[name.substr(3)] = t;
    }
    return state;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

using Predictor = std::function<Coords(const Coords& x_t, double t_norm)>;

/// Reverse process with an arbitrary ground-truth estimator (the network, or
/// a stub in tests): noise the state, predict x0, center, Kabsch-align onto
/// the initial fragment structure, re-blur at t-1.
inline Conformer sample_one(const Predictor& predict, const CoarseStructure& coarse,
                            const MappingMatrix& map, const DiffusionSchedule& schedule, Rng& rng) {
    schedule.validate();
    const Coords x_init = remove_mean(map.lift(coarse.frag_coords));
    Coords x = x_init;
    for (int t = schedule.T; t >= 1; --t) {
        if (schedule.delta > 0) {
            const Coords eps = centered_noise(x.size(), schedule.delta, rng);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + eps[i];
        }
        Coords pred = remove_mean(predict(x, static_cast<double>(t) / schedule.T));
        for (const auto& r : pred)
            for (double c : r)
                if (!std::isfinite(c))
                    throw std::runtime_error("sample: non-finite state at t=" + std::to_string(t));
        if (pred.size() >= 2) {
            const Mat3 rot = kabsch(pred, x_init);
            for (auto& r : pred) r = mat3_apply(rot, r);
        }
        x = blur(pred, coarse, map, t - 1, schedule.T);
    }
    return x;
}

/// Draws num_samples conformers for one molecule from trained parameters.
inline std::vector<Conformer> sample(const Parameters& params, const NetworkConfig& cfg,
                                     const MoleculeRecord& mol, const CoarseStructure& coarse,
                                     const DiffusionSchedule& schedule, int num_samples,
                                     std::uint64_t seed) {
    const MappingMatrix map(coarse.partition);
    const Predictor predict = [&](const Coords& x_t, double t_norm) {
        return forward(params, cfg, mol, coarse.partition, x_t, t_norm);
    };
    std::vector<Conformer> out;
    for (int s = 0; s < num_samples; ++s) {
        Rng rng(derive_seed(seed, "sample:" + mol.id, static_cast<std::uint64_t>(s)));
        out.push_back(sample_one(predict, coarse, map, schedule, rng));
    }
    return out;
}

} // namespace ebd
