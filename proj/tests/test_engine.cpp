#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "ebd/engine.hpp"

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

// One toy molecule with a 2-fragment partition and its embedded reference.
struct Fixture {
    MoleculeRecord mol;
    TrainExample ex;
};

Fixture make_fixture(std::uint64_t seed) {
    Fixture f;
    ToyCorpusSpec spec;
    spec.count = 1;
    spec.min_atoms = 6;
    spec.max_atoms = 6;
    spec.conformers_per_molecule = 1;
    f.mol = generate_toy_corpus(spec, seed)[0];

    Partition part;
    part.m = static_cast<int>(f.mol.atom_count());
    part.assignment.resize(f.mol.atom_count());
    for (std::size_t i = 0; i < f.mol.atom_count(); ++i) part.assignment[i] = static_cast<int>(i);

    const Conformer ref = embed_reference(f.mol, derive_seed(seed, "ref")).coords;
    const Conformer refc = remove_mean(ref);
    Conformer gt = remove_mean(f.mol.conformers[0]);
    gt = apply_rotation(kabsch(gt, refc), gt);
    f.mol.conformers[0] = gt;

    f.ex.molecule = nullptr;   // bound after the struct is in place
    f.ex.x0 = gt;
    f.ex.coarse = coarse_from_reference(f.mol, part, refc);
    return f;
}

} // namespace

TEST_CASE("loss is zero for exact and rotated predictions") {
    Rng rng(12);
    Coords x0(5);
    for (auto& r : x0)
        for (int c = 0; c < 3; ++c) r[c] = rng.gaussian();
    x0 = remove_mean(x0);
    REQUIRE(loss_value(x0, x0) == Catch::Approx(0.0).margin(1e-15));
    const Coords rotated = apply_rotation(random_rotation(13), x0);
    REQUIRE(loss_value(x0, rotated) == Catch::Approx(0.0).margin(1e-9));
    REQUIRE_THROWS_AS(loss_value(x0, Coords(4)), std::invalid_argument);
}

TEST_CASE("loss hand case: collinear perturbation") {
    // Collinear points stay collinear under the centered perturbation, so the
    // optimal alignment is the identity and the value is the plain residual:
    // displacement (-a/3, -a/3, 2a/3) on the x axis -> mean square = 2a^2/27.
    const Coords x0{{-1, 0, 0}, {0, 0, 0}, {1, 0, 0}};
    const double a = 0.3;
    const Coords pred{{-1 - a / 3, 0, 0}, {0 - a / 3, 0, 0}, {1 + 2 * a / 3, 0, 0}};
    REQUIRE(loss_value(x0, pred) == Catch::Approx(2.0 * a * a / 27.0).margin(1e-12));
}

TEST_CASE("tape loss agrees with the scalar loss") {
    Fixture f = make_fixture(21);
    f.ex.molecule = &f.mol;
    const NetworkConfig cfg = small_config();
    const Parameters params = init_parameters(cfg, 22);
    const DiffusionSchedule sched;
    const MappingMatrix map(f.ex.coarse.partition);
    Rng rng(23);
    const Coords xt = forward_sample(f.ex.x0, f.ex.coarse, map, 30, sched, rng);
    ForwardRun run = forward_run(params, cfg, f.mol, f.ex.coarse.partition, xt, 0.6);
    const Var lv = append_loss(run, f.ex.x0);
    Coords out(xt.size());
    const Tensor& ot = run.tape.value(run.output);
    for (std::size_t i = 0; i < out.size(); ++i)
        for (int c = 0; c < 3; ++c) out[i][c] = ot.at(static_cast<int>(i), c);
    REQUIRE(run.tape.value(lv).at(0, 0) == Catch::Approx(loss_value(f.ex.x0, out)).margin(1e-12));
}

TEST_CASE("training is deterministic and zero learning rate freezes parameters") {
    Fixture f = make_fixture(31);
    f.ex.molecule = &f.mol;
    const NetworkConfig cfg = small_config();
    const DiffusionSchedule sched;
    OptimizerConfig opt;
    opt.batch_size = 1;
    opt.iterations = 5;
    opt.ckpt_every = 0;

    std::vector<double> losses_a, losses_b;
    TrainState sa = init_train_state(cfg, 32);
    TrainState sb = init_train_state(cfg, 32);
    TrainCallbacks cba, cbb;
    cba.on_step = [&](long long, double l, double) { losses_a.push_back(l); };
    cbb.on_step = [&](long long, double l, double) { losses_b.push_back(l); };
    train(sa, {f.ex}, sched, opt, cba);
    train(sb, {f.ex}, sched, opt, cbb);
    REQUIRE(losses_a == losses_b);
    for (const auto& [name, t] : sa.params.tensors) REQUIRE(t.v == sb.params.tensors.at(name).v);

    TrainState frozen = init_train_state(cfg, 33);
    const Parameters before = frozen.params;
    OptimizerConfig zero = opt;
    zero.learning_rate = 0.0;
    zero.weight_decay = 0.0;
    train(frozen, {f.ex}, sched, zero);
    for (const auto& [name, t] : frozen.params.tensors) REQUIRE(t.v == before.tensors.at(name).v);

    REQUIRE_THROWS_AS(train(sa, {}, sched, opt), std::invalid_argument);
}

TEST_CASE("short single-molecule overfit drops the loss by 10x") {
    Fixture f = make_fixture(41);
    f.ex.molecule = &f.mol;
    const NetworkConfig cfg = small_config();
    const DiffusionSchedule sched;
    OptimizerConfig opt;
    opt.learning_rate = 3e-3;   // smoke-train rate for the short budget
    opt.batch_size = 4;
    opt.iterations = 800;
    opt.ckpt_every = 0;

    std::vector<double> losses;
    TrainState state = init_train_state(cfg, 42);
    TrainCallbacks cb;
    cb.on_step = [&](long long, double l, double) { losses.push_back(l); };
    train(state, {f.ex}, sched, opt, cb);
    REQUIRE(losses.size() == 800);
    // average windows near the start and the end to damp the per-step noise
    double early = 0, late = 0;
    for (int i = 5; i < 15; ++i) early += losses[i] / 10;
    for (int i = 790; i < 800; ++i) late += losses[i] / 10;
    REQUIRE(late * 10.0 <= early);
}

TEST_CASE("resume from a saved train state is bit-exact") {
    Fixture f = make_fixture(51);
    f.ex.molecule = &f.mol;
    const NetworkConfig cfg = small_config();
    const DiffusionSchedule sched;
    OptimizerConfig opt;
    opt.batch_size = 2;
    opt.iterations = 6;
    opt.ckpt_every = 0;

    TrainState straight = init_train_state(cfg, 52);
    train(straight, {f.ex}, sched, opt);

    TrainState half = init_train_state(cfg, 52);
    OptimizerConfig first = opt;
    first.iterations = 3;
    train(half, {f.ex}, sched, first);
    const std::string path = "/tmp/ebd_test_trainstate.bin";
    save_train_state(path, half);
    TrainState resumed = load_train_state(path);
    std::remove(path.c_str());
    REQUIRE(resumed.step == 3);
    REQUIRE(resumed.seed == 52);
    train(resumed, {f.ex}, sched, opt);

    for (const auto& [name, t] : straight.params.tensors) {
        REQUIRE(t.v == resumed.params.tensors.at(name).v);
        REQUIRE(straight.moment1.at(name).v == resumed.moment1.at(name).v);
        REQUIRE(straight.moment2.at(name).v == resumed.moment2.at(name).v);
    }
}

TEST_CASE("an oracle predictor makes the sampler reproduce the target exactly") {
    Fixture f = make_fixture(61);
    const MappingMatrix map(f.ex.coarse.partition);
    const Coords target = f.ex.x0;
    const Predictor oracle = [&](const Coords&, double) { return target; };

    for (int T : {1, 7, 50}) {
        DiffusionSchedule sched;
        sched.T = T;
        sched.delta = 0.0;
        Rng rng(62);
        const Conformer out = sample_one(oracle, f.ex.coarse, map, sched, rng);
        REQUIRE(aligned_rmsd(out, target) < 1e-6);
    }
    // with noise on, the alignment still pins the final structure
    DiffusionSchedule sched;
    Rng rng(63);
    const Conformer out = sample_one(oracle, f.ex.coarse, map, sched, rng);
    REQUIRE(aligned_rmsd(out, target) < 1e-6);
}

TEST_CASE("single-step sampling with zero noise is the aligned prediction from the prior") {
    Fixture f = make_fixture(71);
    const MappingMatrix map(f.ex.coarse.partition);
    DiffusionSchedule sched;
    sched.T = 1;
    sched.delta = 0.0;

    const Coords x_init = remove_mean(map.lift(f.ex.coarse.frag_coords));
    const NetworkConfig cfg = small_config();
    const Parameters params = init_parameters(cfg, 72);
    const Predictor net = [&](const Coords& x, double t) {
        return forward(params, cfg, f.mol, f.ex.coarse.partition, x, t);
    };
    Rng rng(73);
    const Conformer got = sample_one(net, f.ex.coarse, map, sched, rng);

    Coords want = remove_mean(net(x_init, 1.0));
    const Mat3 rot = kabsch(want, x_init);
    for (auto& r : want) r = mat3_apply(rot, r);
    for (std::size_t i = 0; i < got.size(); ++i)
        for (int c = 0; c < 3; ++c) REQUIRE(got[i][c] == Catch::Approx(want[i][c]).margin(1e-12));
}

TEST_CASE("sampling is reproducible per seed") {
    Fixture f = make_fixture(81);
    f.ex.molecule = &f.mol;
    const NetworkConfig cfg = small_config();
    const Parameters params = init_parameters(cfg, 82);
    const DiffusionSchedule sched;
    const auto a = sample(params, cfg, f.mol, f.ex.coarse, sched, 2, 83);
    const auto b = sample(params, cfg, f.mol, f.ex.coarse, sched, 2, 83);
    REQUIRE(a.size() == 2);
    REQUIRE(a == b);
    REQUIRE(aligned_rmsd(a[0], a[1]) > 0.0);   // distinct draws differ
}

TEST_CASE("optimizer configuration validation") {
    OptimizerConfig opt;
    REQUIRE_NOTHROW(opt.validate());
    opt.beta1 = 1.0;
    REQUIRE_THROWS_AS(opt.validate(), std::invalid_argument);
    OptimizerConfig opt2;
    opt2.batch_size = 0;
    REQUIRE_THROWS_AS(opt2.validate(), std::invalid_argument);
}
