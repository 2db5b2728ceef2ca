#include "dynmask/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "dynmask/attention.hpp"
#include "dynmask/core.hpp"
#include "dynmask/decoding.hpp"
#include "dynmask/io.hpp"
#include "dynmask/masking.hpp"
#include "dynmask/spectral.hpp"
#include "dynmask/tokenizer.hpp"

namespace fs = std::filesystem;

namespace dynmask::cli {

namespace {

constexpr const char* kDefaultTrainRecipe = "composite(static:8|sine(2):8|noise:8),D=8";
constexpr const char* kDefaultCompareRecipe = "composite(static:32|sine(2):32|noise:32),D=3";

int exit_code_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::RangeError:
        case ErrorCode::UnknownKey:
        case ErrorCode::DimMismatch:
        case ErrorCode::OutOfRange:
            return 2;
        default:
            return 3;
    }
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "config file (key=value lines)");
    cmd->add_option("--out", c.out_dir, "output directory");
    auto cfg_opt = [cmd, &c](const std::string& flag, const std::string& key,
                             const std::string& desc) {
        cmd->add_option_function<std::string>(
            flag, [&c, key](const std::string& v) { c.overrides[key] = v; }, desc);
    };
    cfg_opt("--seed", "seed", "RNG seed");
    cfg_opt("--window", "W", "spectral window length");
    cfg_opt("--epsilon", "epsilon", "normalization guard");
    cfg_opt("--tau", "tau", "spectral similarity scale");
    cfg_opt("--alpha0", "alpha0", "attention fusion base weight");
    cfg_opt("--lambda-sem", "lambda_sem", "semantic quota fraction");
    cfg_opt("--r-exp", "r_exp", "temporal expansion radius");
    cfg_opt("--lambda-d", "lambda_d", "decode complexity/uncertainty blend");
    cfg_opt("--beta", "beta", "temperature adaptation strength");
    cfg_opt("--sigma-max", "sigma_max", "maximum decode noise scale");
    cfg_opt("--steps", "steps", "decode steps");
    cfg_opt("--t-global", "t_global", "base sampling temperature");
    cfg_opt("--layers", "layers", "model layers");
    cfg_opt("--heads", "heads", "attention heads");
    cfg_opt("--dim", "dim", "model width");
}

Config resolve_config(const CommonOpts& c) {
    std::map<std::string, std::string> raw;
    if (!c.config_path.empty()) raw = io::read_config_file(c.config_path);
    for (const auto& [k, v] : c.overrides) raw[k] = v;
    return validate_config(raw);
}

fs::path out_path(const CommonOpts& c, const std::string& name) {
    fs::create_directories(c.out_dir);
    return fs::path(c.out_dir) / name;
}

SynthSpec make_synth(const std::string& recipe, const Config& cfg) {
    SynthSpec spec = parse_synth_spec(recipe, cfg.window);
    if (recipe.find("seed=") == std::string::npos) spec.seed = cfg.seed;
    return spec;
}

struct LoadedInput {
    MotionSequence motion;
    std::map<std::string, std::string> manifest_inputs;  // name -> path
};

LoadedInput load_input(const std::string& motion_path, const std::string& synth_recipe,
                       const Config& cfg) {
    if (motion_path.empty() == synth_recipe.empty()) {
        throw Error(ErrorCode::RangeError, "provide exactly one of --motion or --synth");
    }
    LoadedInput in;
    if (!motion_path.empty()) {
        in.motion = io::load_motion(motion_path);
        in.manifest_inputs["motion"] = motion_path;
    } else {
        in.motion = synth_motion(make_synth(synth_recipe, cfg)).motion;
    }
    return in;
}

// quantize-then-embed when a codebook is supplied, raw features otherwise
Mat analysis_embeddings(const MotionSequence& motion, const std::optional<Codebook>& cb) {
    if (!cb.has_value()) return motion.frames;
    std::vector<int> tokens = quantize(motion.frames, *cb);
    TokenState state(std::move(tokens), BoolVec(motion.length(), 0), motion.valid);
    return lookup_embeddings(state, *cb, codebook_centroid(*cb));
}

// ---------------------------------------------------------------------------

int cmd_analyze(const CommonOpts& common, const std::string& motion_path,
                const std::string& synth_recipe, const std::string& codebook_path,
                bool with_similarity) {
    Config cfg = resolve_config(common);
    LoadedInput in = load_input(motion_path, synth_recipe, cfg);

    std::optional<Codebook> cb;
    if (!codebook_path.empty()) {
        cb = io::load_codebook(codebook_path);
        in.manifest_inputs["codebook"] = codebook_path;
    }
    Mat emb = analysis_embeddings(in.motion, cb);
    SpectralProfile profile = msd_sequence(emb, in.motion.valid, cfg);

    std::ofstream msd(out_path(common, "msd.csv"));
    msd << "t,omega";
    for (int k = 0; k < cfg.window; ++k) msd << ",phi_" << k;
    msd << '\n';
    for (int t = 0; t < profile.length(); ++t) {
        msd << t << ',' << io::fmt_double(profile.omega[t]);
        for (int k = 0; k < cfg.window; ++k) msd << ',' << io::fmt_double(profile.phi(t, k));
        msd << '\n';
    }

    if (with_similarity) {
        SimilarityMatrix sim = similarity_matrix(profile, cfg);
        io::write_csv_matrix(out_path(common, "similarity.csv").string(), sim.s);
    }
    io::write_manifest(out_path(common, "manifest.json").string(), "analyze", cfg,
                       in.manifest_inputs);
    return 0;
}

int cmd_maskplan(const CommonOpts& common, const std::string& motion_path,
                 const std::string& synth_recipe, const std::string& condition_path,
                 const std::string& codebook_path, std::optional<int> K_opt,
                 std::optional<double> r_opt) {
    Config cfg = resolve_config(common);
    if (K_opt.has_value() == r_opt.has_value()) {
        throw Error(ErrorCode::RangeError, "provide exactly one of --K or --r");
    }
    LoadedInput in = load_input(motion_path, synth_recipe, cfg);
    TextCondition condition = io::load_condition(condition_path);
    in.manifest_inputs["condition"] = condition_path;

    std::optional<Codebook> cb;
    if (!codebook_path.empty()) {
        cb = io::load_codebook(codebook_path);
        in.manifest_inputs["codebook"] = codebook_path;
    }
    Mat emb = analysis_embeddings(in.motion, cb);
    SpectralProfile profile = msd_sequence(emb, in.motion.valid, cfg);

    std::vector<double> s_dyn = dynamic_scores(profile, in.motion.valid);
    std::vector<double> s_sem = semantic_scores(emb, condition, in.motion.valid);

    const int n_valid = count_true(in.motion.valid);
    const int K = K_opt.has_value()
                      ? *K_opt
                      : static_cast<int>(std::ceil(cosine_ratio(*r_opt) * n_valid));
    MaskPlan plan = cfs_select(s_dyn, s_sem, K, cfg, in.motion.valid);

    std::vector<const char*> tag(in.motion.length(), nullptr);
    for (size_t i = 0; i < plan.positions.size(); ++i) {
        tag[plan.positions[i]] = provenance_name(plan.provenance[i]);
    }
    std::ofstream out(out_path(common, "maskplan.csv"));
    out << "t,selected,provenance,s_dyn,s_sem\n";
    for (int t = 0; t < in.motion.length(); ++t) {
        out << t << ',' << (tag[t] ? 1 : 0) << ',' << (tag[t] ? tag[t] : "-") << ','
            << io::fmt_double(s_dyn[t]) << ',' << io::fmt_double(s_sem[t]) << '\n';
    }
    std::cout << "selected " << plan.positions.size() << "\n";

    io::write_manifest(out_path(common, "manifest.json").string(), "maskplan", cfg,
                       in.manifest_inputs);
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& corpus_dir,
              const std::string& synth_recipe, int count, const std::string& codebook_path,
              int vocab, int epochs, double lr) {
    Config cfg = resolve_config(common);
    if (epochs < 0) throw Error(ErrorCode::RangeError, "--epochs must be >= 0");
    if (!(lr >= 0.0)) throw Error(ErrorCode::RangeError, "--lr must be >= 0");

    std::map<std::string, std::string> manifest_inputs;
    std::vector<MotionSequence> sequences;
    std::vector<std::vector<double>> conditions;
    if (!corpus_dir.empty()) {
        auto entries = io::load_corpus_dir(corpus_dir);
        for (auto& e : entries) {
            sequences.push_back(std::move(e.motion));
            conditions.push_back(std::move(e.condition));
        }
        manifest_inputs["corpus"] = corpus_dir;
    } else {
        const std::string recipe = synth_recipe.empty() ? kDefaultTrainRecipe : synth_recipe;
        LabeledCorpus corpus = make_corpus(recipe, count, cfg.window, cfg.seed);
        for (auto& s : corpus.sequences) sequences.push_back(std::move(s));
        for (auto& c : corpus.text_conditions) conditions.push_back(c.vec);
    }

    const int feat_dim = sequences.front().feature_dim();
    int total_frames = 0;
    // positional table floor of 64 so checkpoints can decode sequences longer
    // than anything in the training corpus
    int t_max = 64;
    for (const auto& s : sequences) {
        if (s.feature_dim() != feat_dim) {
            throw Error(ErrorCode::DimMismatch, "train: corpus feature dims differ");
        }
        total_frames += s.length();
        t_max = std::max(t_max, s.length());
    }

    Codebook cb = [&] {
        if (!codebook_path.empty()) {
            manifest_inputs["codebook"] = codebook_path;
            return io::load_codebook(codebook_path);
        }
        Mat all(total_frames, feat_dim);
        int row = 0;
        for (const auto& s : sequences) {
            for (int t = 0; t < s.length(); ++t, ++row) {
                for (int d = 0; d < feat_dim; ++d) all(row, d) = s.frames(t, d);
            }
        }
        return fit_codebook(all, vocab, 25, cfg.seed);
    }();

    std::vector<TrainItem> items;
    for (size_t i = 0; i < sequences.size(); ++i) {
        TrainItem item;
        item.tokens = quantize(sequences[i].frames, cb);
        item.valid = sequences[i].valid;
        TokenState st(item.tokens, BoolVec(sequences[i].length(), 0), item.valid);
        item.embeddings = lookup_embeddings(st, cb, codebook_centroid(cb));
        if (conditions[i].empty()) {
            Rng crng = Rng::derive(cfg.seed, "condition", i);
            conditions[i].resize(cb.dim());
            for (double& x : conditions[i]) x = crng.normal();
        }
        item.condition = TextCondition(conditions[i]);
        items.push_back(std::move(item));
    }

    Rng init_rng = Rng::derive(cfg.seed, "init");
    ToyModel model =
        ToyModel::init(cb.size(), cfg.dim, cfg.heads, cfg.layers, t_max, cb.dim(), init_rng);

    TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = lr;
    std::vector<double> curve = train(model, items, cfg, opt);

    io::save_checkpoint(out_path(common, "checkpoint.json").string(), model, cb);
    io::save_codebook(out_path(common, "codebook.csv").string(), cb);
    std::ofstream loss(out_path(common, "loss.csv"));
    loss << "epoch,mean_loss\n";
    for (size_t e = 0; e < curve.size(); ++e) {
        loss << e << ',' << io::fmt_double(curve[e]) << '\n';
    }
    io::write_manifest(out_path(common, "manifest.json").string(), "train", cfg, manifest_inputs);
    return 0;
}

int cmd_generate(const CommonOpts& common, const std::string& checkpoint_path,
                 const std::string& condition_path, int length) {
    Config cfg = resolve_config(common);
    if (length < 1) throw Error(ErrorCode::RangeError, "--length must be >= 1");

    io::Checkpoint ckpt = io::load_checkpoint(checkpoint_path);
    TextCondition condition = io::load_condition(condition_path);

    Rng rng = Rng::derive(cfg.seed, "decoding");
    DecodeTrace trace = decode(ckpt.model, ckpt.codebook, condition, length, cfg, rng);

    std::ofstream tok(out_path(common, "tokens.csv"));
    tok << "t,token\n";
    for (int t = 0; t < length; ++t) {
        tok << t << ',' << trace.final_state.tokens[t] << '\n';
    }

    Mat emb = lookup_embeddings(trace.final_state, ckpt.codebook, codebook_centroid(ckpt.codebook));
    io::write_csv_matrix(out_path(common, "embeddings.csv").string(), emb);
    io::write_trace_jsonl(out_path(common, "trace.jsonl").string(), trace);

    std::map<std::string, std::string> manifest_inputs = {{"checkpoint", checkpoint_path},
                                                          {"condition", condition_path}};
    io::write_manifest(out_path(common, "manifest.json").string(), "generate", cfg,
                       manifest_inputs);
    return 0;
}

int cmd_compare_signals(const CommonOpts& common, const std::string& synth_recipe, int count) {
    Config cfg = resolve_config(common);
    const std::string recipe = synth_recipe.empty() ? kDefaultCompareRecipe : synth_recipe;
    LabeledCorpus corpus = make_corpus(recipe, count, cfg.window, cfg.seed);

    const int n = static_cast<int>(corpus.sequences.size());
    for (int i = 0; i < n; ++i) {
        const auto& labels = corpus.complexity_labels[i];
        bool mixed = false;
        for (size_t t = 1; t < labels.size(); ++t) {
            if (labels[t] != labels[0]) {
                mixed = true;
                break;
            }
        }
        if (!mixed) {
            throw Error(ErrorCode::BadSpec,
                        "compare-signals: sequence " + std::to_string(i) +
                            " has a single complexity label");
        }
    }

    std::vector<double> rho_msd(n), rho_vel(n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const MotionSequence& seq = corpus.sequences[i];
        SpectralProfile profile = msd_sequence(seq.frames, seq.valid, cfg);
        std::vector<double> velmag = velocity_magnitude_signal(seq.frames, seq.valid, cfg);
        std::vector<double> labels_d;
        std::vector<double> omega_v, vel_v;
        for (int t = 0; t < seq.length(); ++t) {
            if (!seq.valid[t]) continue;
            labels_d.push_back(static_cast<double>(corpus.complexity_labels[i][t]));
            omega_v.push_back(profile.omega[t]);
            vel_v.push_back(velmag[t]);
        }
        rho_msd[i] = spearman(omega_v, labels_d);
        rho_vel[i] = spearman(vel_v, labels_d);
    }

    std::ofstream out(out_path(common, "signals.csv"));
    out << "signal,sequence,spearman\n";
    double sum_msd = 0.0, sum_vel = 0.0;
    for (int i = 0; i < n; ++i) {
        out << "msd," << i << ',' << io::fmt_double(rho_msd[i]) << '\n';
        out << "velocity," << i << ',' << io::fmt_double(rho_vel[i]) << '\n';
        sum_msd += rho_msd[i];
        sum_vel += rho_vel[i];
    }
    out << "msd,mean," << io::fmt_double(sum_msd / n) << '\n';
    out << "velocity,mean," << io::fmt_double(sum_vel / n) << '\n';

    io::write_manifest(out_path(common, "manifest.json").string(), "compare-signals", cfg, {});
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"complexity-aware masked motion generation toolkit"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* analyze = app.add_subcommand("analyze", "spectral descriptor report for a sequence");
    std::string an_motion, an_synth, an_codebook;
    bool an_similarity = false;
    analyze->add_option("--motion", an_motion, "motion file (.csv or .jsonl)");
    analyze->add_option("--synth", an_synth, "synthetic recipe");
    analyze->add_option("--codebook", an_codebook, "codebook CSV (quantize before analysis)");
    analyze->add_flag("--similarity", an_similarity, "also export the similarity matrix");
    add_common(analyze, common);

    auto* maskplan = app.add_subcommand("maskplan", "content-focused mask selection for a sequence");
    std::string mp_motion, mp_synth, mp_condition, mp_codebook;
    std::optional<int> mp_k;
    std::optional<double> mp_r;
    maskplan->add_option("--motion", mp_motion, "motion file");
    maskplan->add_option("--synth", mp_synth, "synthetic recipe");
    maskplan->add_option("--condition", mp_condition, "condition vector CSV")->required();
    maskplan->add_option("--codebook", mp_codebook, "codebook CSV");
    maskplan->add_option("--K", mp_k, "mask budget");
    maskplan->add_option("--r", mp_r, "schedule position in [0,1], sets K = ceil(gamma(r)*T)");
    add_common(maskplan, common);

    auto* train_cmd = app.add_subcommand("train", "train the masked-token model");
    std::string tr_corpus, tr_synth, tr_codebook;
    int tr_count = 8, tr_vocab = 16, tr_epochs = 30;
    double tr_lr = 0.05;
    train_cmd->add_option("--corpus", tr_corpus, "corpus directory (*.csv, *.jsonl)");
    train_cmd->add_option("--synth", tr_synth, "synthetic recipe (default corpus)");
    train_cmd->add_option("--count", tr_count, "synthetic corpus size");
    train_cmd->add_option("--codebook", tr_codebook, "pre-fit codebook CSV");
    train_cmd->add_option("--vocab", tr_vocab, "codebook size when fitting");
    train_cmd->add_option("--epochs", tr_epochs, "training epochs");
    train_cmd->add_option("--lr", tr_lr, "SGD step size");
    add_common(train_cmd, common);

    auto* generate = app.add_subcommand("generate", "decode a token sequence from a condition");
    std::string ge_checkpoint, ge_condition;
    int ge_length = 0;
    generate->add_option("--checkpoint", ge_checkpoint, "checkpoint JSON")->required();
    generate->add_option("--condition", ge_condition, "condition vector CSV")->required();
    generate->add_option("--length", ge_length, "sequence length")->required();
    add_common(generate, common);

    auto* compare = app.add_subcommand("compare-signals",
                                       "rank-correlate complexity signals against labels");
    std::string cs_synth;
    int cs_count = 4;
    compare->add_option("--synth", cs_synth, "synthetic recipe");
    compare->add_option("--count", cs_count, "number of sequences");
    add_common(compare, common);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help() << std::flush;
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (analyze->parsed()) {
            return cmd_analyze(common, an_motion, an_synth, an_codebook, an_similarity);
        }
        if (maskplan->parsed()) {
            return cmd_maskplan(common, mp_motion, mp_synth, mp_condition, mp_codebook, mp_k,
                                mp_r);
        }
        if (train_cmd->parsed()) {
            return cmd_train(common, tr_corpus, tr_synth, tr_count, tr_codebook, tr_vocab,
                             tr_epochs, tr_lr);
        }
        if (generate->parsed()) {
            return cmd_generate(common, ge_checkpoint, ge_condition, ge_length);
        }
        if (compare->parsed()) {
            return cmd_compare_signals(common, cs_synth, cs_count);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
    return run(args);
}

}  // namespace dynmask::cli
