// Operator CLI: vocabulary mining, toy-corpus generation, preprocessing,
// training, sampling, evaluation, spectral diagnostics, and self-checks.
//
// Exit codes: 0 success, 1 failed checks, 2 config/schema errors,
// 3 numerical failures.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebd/coarse.hpp"
#include "ebd/config.hpp"
#include "ebd/diffusion.hpp"
#include "ebd/engine.hpp"
#include "ebd/eval.hpp"
#include "ebd/fragmenting.hpp"
#include "ebd/molio.hpp"
#include "ebd/net.hpp"
#include "ebd/selfcheck.hpp"
#include "ebd/spectral.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

// Effective run configuration: the config file merged with CLI overrides.
struct Ctx {
    ebd::RunConfig cfg;
};

void note_override(Ctx& ctx, const std::string& key, const std::string& value) {
    ctx.cfg.set(key, value);
}

void print_repro_line(const Ctx& ctx, std::uint64_t seed) {
    std::cout << "ebd " << kVersion << " seed=" << seed << " config=" << ctx.cfg.hash_hex() << "\n";
}

ebd::NetworkConfig net_config_from(const ebd::RunConfig& cfg) {
    ebd::NetworkConfig net;
    net.layers = static_cast<int>(cfg.get_int("layers", net.layers));
    net.width = static_cast<int>(cfg.get_int("width", net.width));
    net.hops = static_cast<int>(cfg.get_int("hops", net.hops));
    net.cutoff = cfg.get_double("cutoff", net.cutoff);
    net.atom_types = static_cast<int>(cfg.get_int("atom_types", net.atom_types));
    net.time_dim = static_cast<int>(cfg.get_int("time_dim", net.time_dim));
    net.frozen_frag_coords = cfg.get_bool("frozen_frag_coords", net.frozen_frag_coords);
    net.validate();
    return net;
}

ebd::DiffusionSchedule schedule_from(const ebd::RunConfig& cfg) {
    ebd::DiffusionSchedule s;
    s.T = static_cast<int>(cfg.get_int("T", s.T));
    s.sigma = cfg.get_double("sigma", s.sigma);
    s.delta = cfg.get_double("delta", s.delta);
    s.validate();
    return s;
}

// Training pairs for one molecule: conformer j against reference j, assuming
// the corpus went through `data preprocess` (which aligns and reorders).
std::vector<ebd::TrainExample> build_examples(const std::vector<ebd::MoleculeRecord>& corpus,
                                              const ebd::FragmentVocabulary& vocab) {
    std::vector<ebd::TrainExample> out;
    for (const auto& mol : corpus) {
        if (mol.reference_conformers.size() != mol.conformers.size() || mol.conformers.empty())
            throw std::invalid_argument("train: molecule " + mol.id +
                                        " has no matched references; run `data preprocess` first");
        const ebd::Partition partition = ebd::decompose(mol, vocab);
        for (std::size_t j = 0; j < mol.conformers.size(); ++j) {
            ebd::TrainExample ex;
            ex.molecule = &mol;
            ex.x0 = ebd::remove_mean(mol.conformers[j]);
            ex.coarse = ebd::coarse_from_reference(mol, partition, mol.reference_conformers[j]);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

int cmd_vocab_build(Ctx& ctx) {
    const std::string corpus_path = ctx.cfg.require_string("corpus");
    const std::string out_path = ctx.cfg.require_string("out");
    const int size = static_cast<int>(ctx.cfg.get_int("vocab_size", 12));
    print_repro_line(ctx, ctx.cfg.get_seed("seed", 0));
    const auto corpus = ebd::parse_molecules(corpus_path);
    const ebd::FragmentVocabulary vocab = ebd::build_vocabulary(corpus, size);
    ebd::write_vocabulary(out_path, vocab);
    std::cout << "vocabulary: " << vocab.size() << " entries"
              << (vocab.reached_target ? "" : " (merges exhausted before target)") << "\n";
    return 0;
}

int cmd_gen_toy(Ctx& ctx) {
    const std::string out_path = ctx.cfg.require_string("out");
    const std::uint64_t seed = ctx.cfg.get_seed("seed", 0);
    ebd::ToyCorpusSpec spec;
    spec.count = static_cast<int>(ctx.cfg.get_int("count", spec.count));
    spec.min_atoms = static_cast<int>(ctx.cfg.get_int("min_atoms", spec.min_atoms));
    spec.max_atoms = static_cast<int>(ctx.cfg.get_int("max_atoms", spec.max_atoms));
    spec.conformers_per_molecule =
        static_cast<int>(ctx.cfg.get_int("conformers", spec.conformers_per_molecule));
    spec.add_hydrogens = ctx.cfg.get_bool("add_hydrogens", spec.add_hydrogens);
    print_repro_line(ctx, seed);
    const auto corpus = ebd::generate_toy_corpus(spec, seed);
    ebd::write_molecules(out_path, corpus);
    std::cout << "generated " << corpus.size() << " molecules\n";
    return 0;
}

int cmd_preprocess(Ctx& ctx) {
    const std::string corpus_path = ctx.cfg.require_string("corpus");
    const std::string vocab_path = ctx.cfg.require_string("vocab");
    const std::string out_path = ctx.cfg.require_string("out");
    const std::uint64_t seed = ctx.cfg.get_seed("seed", 0);
    print_repro_line(ctx, seed);

    auto corpus = ebd::parse_molecules(corpus_path);
    const ebd::FragmentVocabulary vocab = ebd::read_vocabulary(vocab_path);

    for (auto& mol : corpus) {
        ebd::decompose(mol, vocab);   // fails early if the vocabulary cannot cover the molecule
        const std::size_t k = mol.conformers.size();
        if (k == 0) throw std::invalid_argument("preprocess: molecule " + mol.id + " has no conformers");
        std::vector<ebd::Conformer> references;
        for (std::size_t j = 0; j < k; ++j)
            references.push_back(
                ebd::embed_reference(mol, ebd::derive_seed(seed, "embed:" + mol.id, j)).coords);

        // optimal matching of references to ground truths, then alignment of
        // each ground truth onto its matched reference
        std::vector<std::vector<double>> cost(k, std::vector<double>(k));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                cost[i][j] = ebd::aligned_rmsd(references[i], mol.conformers[j]);
        const std::vector<int> ref_to_gt = ebd::linear_sum_assignment(cost);
        std::vector<int> gt_to_ref(k, -1);
        for (std::size_t i = 0; i < k; ++i) gt_to_ref[ref_to_gt[i]] = static_cast<int>(i);

        std::vector<ebd::Conformer> aligned_gt(k), matched_ref(k);
        for (std::size_t j = 0; j < k; ++j) {
            const ebd::Conformer ref = ebd::remove_mean(references[gt_to_ref[j]]);
            ebd::Conformer gt = ebd::remove_mean(mol.conformers[j]);
            if (gt.size() >= 2) gt = ebd::apply_rotation(ebd::kabsch(gt, ref), gt);
            aligned_gt[j] = std::move(gt);
            matched_ref[j] = ref;
        }
        mol.conformers = std::move(aligned_gt);
        mol.reference_conformers = std::move(matched_ref);
    }
    ebd::write_molecules(out_path, corpus);
    std::cout << "preprocessed " << corpus.size() << " molecules\n";
    return 0;
}

int cmd_train(Ctx& ctx) {
    const std::string corpus_path = ctx.cfg.require_string("corpus");
    const std::string vocab_path = ctx.cfg.require_string("vocab");
    const std::string out_path = ctx.cfg.require_string("out");
    const std::string log_path = ctx.cfg.get_string("log");
    const std::string resume_path = ctx.cfg.get_string("resume");
    const std::uint64_t seed = ctx.cfg.get_seed("seed", 0);
    print_repro_line(ctx, seed);

    const auto corpus = ebd::parse_molecules(corpus_path);
    const ebd::FragmentVocabulary vocab = ebd::read_vocabulary(vocab_path);
    const auto examples = build_examples(corpus, vocab);

    const ebd::DiffusionSchedule schedule = schedule_from(ctx.cfg);
    ebd::OptimizerConfig opt;
    opt.learning_rate = ctx.cfg.get_double("lr", opt.learning_rate);
    opt.weight_decay = ctx.cfg.get_double("weight_decay", opt.weight_decay);
    opt.batch_size = static_cast<int>(ctx.cfg.get_int("batch_size", opt.batch_size));
    opt.iterations = static_cast<int>(ctx.cfg.get_int("steps", opt.iterations));
    opt.ckpt_every = static_cast<int>(ctx.cfg.get_int("ckpt_every", opt.ckpt_every));
    opt.validate();

    ebd::TrainState state;
    if (!resume_path.empty()) {
        state = ebd::load_train_state(resume_path);
        const ebd::NetworkConfig want = net_config_from(ctx.cfg);
        if (state.net_config.layers != want.layers || state.net_config.width != want.width ||
            state.net_config.hops != want.hops || state.net_config.time_dim != want.time_dim)
            throw std::invalid_argument("train: checkpoint network config differs from the run config");
        std::cout << "resuming from step " << state.step << "\n";
    } else {
        state = ebd::init_train_state(net_config_from(ctx.cfg), seed);
    }

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
        if (!log) throw std::runtime_error("cannot open loss log: " + log_path);
        if (resume_path.empty()) log << "step,loss,seconds\n";
    }

    ebd::TrainCallbacks callbacks;
    callbacks.on_step = [&](long long step, double loss, double seconds) {
        if (log) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.3f", step, loss, seconds);
            log << buf << '\n';
        }
        if (step % 100 == 0 || step == 1)
            std::cout << "step " << step << " loss " << loss << "\n";
    };
    callbacks.on_checkpoint = [&](const ebd::TrainState& s) { ebd::save_train_state(out_path, s); };

    ebd::train(state, examples, schedule, opt, callbacks);
    ebd::save_train_state(out_path, state);
    std::cout << "trained to step " << state.step << ", checkpoint " << out_path << "\n";
    return 0;
}

int cmd_sample(Ctx& ctx) {
    const std::string corpus_path = ctx.cfg.require_string("corpus");
    const std::string vocab_path = ctx.cfg.require_string("vocab");
    const std::string ckpt_path = ctx.cfg.require_string("ckpt");
    const std::string out_path = ctx.cfg.require_string("out");
    const int per_reference = static_cast<int>(ctx.cfg.get_int("per_reference", 2));
    const std::uint64_t seed = ctx.cfg.get_seed("seed", 0);
    print_repro_line(ctx, seed);

    auto corpus = ebd::parse_molecules(corpus_path);
    const ebd::FragmentVocabulary vocab = ebd::read_vocabulary(vocab_path);
    const ebd::TrainState state = ebd::load_train_state(ckpt_path);
    const ebd::DiffusionSchedule schedule = schedule_from(ctx.cfg);

    for (auto& mol : corpus) {
        if (mol.reference_conformers.empty())
            throw std::invalid_argument("sample: molecule " + mol.id +
                                        " has no references; run `data preprocess` first");
        const ebd::Partition partition = ebd::decompose(mol, vocab);
        mol.generated_conformers.clear();
        for (std::size_t j = 0; j < mol.reference_conformers.size(); ++j) {
            const ebd::CoarseStructure coarse =
                ebd::coarse_from_reference(mol, partition, mol.reference_conformers[j]);
            const auto samples =
                ebd::sample(state.params, state.net_config, mol, coarse, schedule, per_reference,
                            ebd::derive_seed(seed, "ref", j));
            for (const auto& s : samples) mol.generated_conformers.push_back(s);
        }
    }
    ebd::write_molecules(out_path, corpus);
    std::cout << "sampled " << corpus.size() << " molecules\n";
    return 0;
}

int cmd_eval(Ctx& ctx) {
    const std::string gt_path = ctx.cfg.require_string("gt");
    const std::string gen_path = ctx.cfg.get_string("gen");
    const std::string out_path = ctx.cfg.require_string("out");
    const double delta = ctx.cfg.get_double("delta_cov", 1.25);
    const bool heavy_only = ctx.cfg.get_bool("heavy_only", false);
    print_repro_line(ctx, ctx.cfg.get_seed("seed", 0));

    auto corpus = ebd::parse_molecules(gt_path);
    if (!gen_path.empty() && gen_path != gt_path) {
        const auto gen = ebd::parse_molecules(gen_path);
        std::map<std::string, const ebd::MoleculeRecord*> by_id;
        for (const auto& mol : gen) by_id[mol.id] = &mol;
        for (auto& mol : corpus) {
            const auto it = by_id.find(mol.id);
            if (it == by_id.end())
                throw std::invalid_argument("eval: molecule " + mol.id + " missing from " + gen_path);
            mol.generated_conformers = it->second->generated_conformers;
        }
    }
    const ebd::EnsembleReport report = ebd::corpus_report(corpus, delta, heavy_only);
    ebd::write_report_csv(out_path, report);
    std::cout << "cov_r mean " << report.mean.cov_r << ", mat_r mean " << report.mean.mat_r
              << ", cov_p mean " << report.mean.cov_p << ", mat_p mean " << report.mean.mat_p << "\n";
    return 0;
}

int cmd_psd(Ctx& ctx) {
    const std::string corpus_path = ctx.cfg.require_string("corpus");
    const std::string mol_id = ctx.cfg.require_string("mol");
    const std::string out_path = ctx.cfg.require_string("out");
    const std::string process_tag = ctx.cfg.get_string("process", "blurring");
    const std::string vocab_path = ctx.cfg.get_string("vocab");
    const std::uint64_t seed = ctx.cfg.get_seed("seed", 0);
    print_repro_line(ctx, seed);

    const auto corpus = ebd::parse_molecules(corpus_path);
    const ebd::MoleculeRecord* mol = nullptr;
    for (const auto& m : corpus)
        if (m.id == mol_id) mol = &m;
    if (!mol) throw std::invalid_argument("psd: molecule " + mol_id + " not found");
    if (mol->conformers.empty()) throw std::invalid_argument("psd: molecule has no conformers");

    ebd::Partition partition;
    if (!vocab_path.empty()) {
        partition = ebd::decompose(*mol, ebd::read_vocabulary(vocab_path));
    } else {
        // without a vocabulary, every atom is its own fragment
        partition.assignment.resize(mol->atom_count());
        for (std::size_t i = 0; i < partition.assignment.size(); ++i)
            partition.assignment[i] = static_cast<int>(i);
        partition.m = static_cast<int>(mol->atom_count());
    }
    const ebd::Coords x0 = ebd::remove_mean(mol->conformers[0]);
    const ebd::CoarseStructure coarse = ebd::coarse_from_reference(*mol, partition, x0);
    const ebd::MappingMatrix map(partition);
    const ebd::DiffusionSchedule schedule = schedule_from(ctx.cfg);
    ebd::Rng rng(ebd::derive_seed(seed, "psd"));
    const auto rows = ebd::trajectory_psd(ebd::parse_process(process_tag), *mol, x0, coarse, map,
                                          schedule, rng);
    ebd::write_psd_csv(out_path, rows);
    std::cout << "wrote " << rows.size() << " PSD rows\n";
    return 0;
}

int cmd_check(Ctx& ctx) {
    print_repro_line(ctx, ctx.cfg.get_seed("seed", 0));
    const auto results = ebd::run_selfchecks();
    int failures = 0;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
        if (!r.pass) {
            std::cout << ": " << r.detail;
            ++failures;
        }
        std::cout << "\n";
    }
    std::cout << results.size() - failures << "/" << results.size() << " checks passed\n";
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical coarse-to-fine conformer generation toolkit"};
    app.set_version_flag("--version", std::string("ebd ") + kVersion);
    app.require_subcommand(1);

    Ctx ctx;
    std::string config_path;
    app.add_option("--config", config_path, "flat key=value configuration file")
        ->envname("EBD_CONFIG");

    // Every flag writes through to the effective config so overrides and the
    // config hash stay consistent.
    const auto add_str = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                             const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&ctx, key](const std::string& v) { note_override(ctx, key, v); }, help);
    };
    const auto add_flag = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                              const std::string& help) {
        cmd->add_flag_callback(
            flag, [&ctx, key] { note_override(ctx, key, "true"); }, help);
    };

    CLI::App* vocab = app.add_subcommand("vocab", "fragment vocabulary operations");
    CLI::App* vocab_build = vocab->add_subcommand("build", "mine a fragment vocabulary");
    add_str(vocab_build, "--corpus", "corpus", "input corpus (JSONL)");
    add_str(vocab_build, "--size", "vocab_size", "target vocabulary size");
    add_str(vocab_build, "--out", "out", "output vocabulary (JSON)");

    CLI::App* data = app.add_subcommand("data", "corpus operations");
    CLI::App* gen_toy = data->add_subcommand("gen-toy", "generate the procedural toy corpus");
    add_str(gen_toy, "--count", "count", "number of molecules");
    add_str(gen_toy, "--min-atoms", "min_atoms", "minimum heavy atoms");
    add_str(gen_toy, "--max-atoms", "max_atoms", "maximum heavy atoms");
    add_str(gen_toy, "--conformers", "conformers", "conformers per molecule");
    add_str(gen_toy, "--seed", "seed", "root seed");
    add_str(gen_toy, "--out", "out", "output corpus (JSONL)");
    add_flag(gen_toy, "--add-hydrogens", "add_hydrogens", "fill valences with hydrogens");

    CLI::App* preprocess = data->add_subcommand("preprocess", "embed references and align conformers");
    add_str(preprocess, "--corpus", "corpus", "input corpus (JSONL)");
    add_str(preprocess, "--vocab", "vocab", "fragment vocabulary (JSON)");
    add_str(preprocess, "--seed", "seed", "root seed");
    add_str(preprocess, "--out", "out", "output corpus (JSONL)");

    CLI::App* train = app.add_subcommand("train", "train the deblurring network");
    add_str(train, "--corpus", "corpus", "preprocessed corpus (JSONL)");
    add_str(train, "--vocab", "vocab", "fragment vocabulary (JSON)");
    add_str(train, "--out", "out", "output checkpoint");
    add_str(train, "--log", "log", "loss log CSV");
    add_str(train, "--resume", "resume", "checkpoint to resume from");
    add_str(train, "--steps", "steps", "training iterations");
    add_str(train, "--lr", "lr", "learning rate");
    add_str(train, "--batch-size", "batch_size", "examples per step");
    add_str(train, "--seed", "seed", "root seed");
    add_str(train, "--layers", "layers", "message-passing layers");
    add_str(train, "--width", "width", "hidden width");

    CLI::App* sample = app.add_subcommand("sample", "draw conformers from a checkpoint");
    add_str(sample, "--corpus", "corpus", "preprocessed corpus (JSONL)");
    add_str(sample, "--vocab", "vocab", "fragment vocabulary (JSON)");
    add_str(sample, "--ckpt", "ckpt", "trained checkpoint");
    add_str(sample, "--out", "out", "output corpus with generated conformers");
    add_str(sample, "--per-reference", "per_reference", "samples per reference conformer");
    add_str(sample, "--seed", "seed", "root seed");

    CLI::App* eval = app.add_subcommand("eval", "coverage / matching evaluation");
    add_str(eval, "--gt", "gt", "corpus with ground-truth conformers");
    add_str(eval, "--gen", "gen", "corpus with generated conformers (defaults to --gt)");
    add_str(eval, "--delta", "delta_cov", "coverage threshold in Angstrom");
    add_str(eval, "--out", "out", "report CSV");
    add_flag(eval, "--heavy-only", "heavy_only", "skip hydrogens in RMSD");

    CLI::App* psd = app.add_subcommand("psd", "graph-spectral trajectory diagnostic");
    add_str(psd, "--corpus", "corpus", "input corpus (JSONL)");
    add_str(psd, "--mol", "mol", "molecule id");
    add_str(psd, "--process", "process", "blurring | gaussian | heat");
    add_str(psd, "--vocab", "vocab", "fragment vocabulary (optional)");
    add_str(psd, "--seed", "seed", "root seed");
    add_str(psd, "--out", "out", "PSD CSV");

    CLI::App* chk = app.add_subcommand("check", "run the invariant self-check suite");
    (void)chk;

    try {
        // config file first so that flag callbacks (which fire during parse)
        // override file keys
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
        if (!config_path.empty()) ctx.cfg = ebd::RunConfig::load(config_path);

        app.parse(argc, argv);

        if (vocab_build->parsed()) return cmd_vocab_build(ctx);
        if (gen_toy->parsed()) return cmd_gen_toy(ctx);
        if (preprocess->parsed()) return cmd_preprocess(ctx);
        if (train->parsed()) return cmd_train(ctx);
        if (sample->parsed()) return cmd_sample(ctx);
        if (eval->parsed()) return cmd_eval(ctx);
        if (psd->parsed()) return cmd_psd(ctx);
        if (chk->parsed()) return cmd_check(ctx);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
