// polyalign: command-line driver for the multilingual contrastive lab.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime/numeric error,
// 4 assertion failure (bound, momentum check, gradient check, ordering).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <polyalign/config.hpp>
#include <polyalign/corpus.hpp>
#include <polyalign/encoders.hpp>
#include <polyalign/experiment.hpp>
#include <polyalign/losses.hpp>
#include <polyalign/metrics.hpp>
#include <polyalign/report.hpp>
#include <polyalign/theory.hpp>

namespace fs = std::filesystem;
using namespace polyalign;

namespace {

constexpr int kOk = 0, kConfigFail = 2, kRuntimeFail = 3, kAssertFail = 4;

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t jobs = 1;
    bool assert_ordering = false;
    std::optional<std::string> corpus;
    std::optional<std::string> checkpoint;
    std::optional<std::string> output;
    std::optional<std::string> replay;
    std::optional<std::string> audio_csv, text_csv;
    std::vector<std::string> argv;
};

// Shared state of one command invocation: the loaded config, where outputs
// go, and the manifest being assembled.
struct Run {
    Config cfg;
    std::uint64_t seed = 0;
    std::string out_dir;
    RunManifest manifest;

    Run(const Options& o, const std::string& command) {
        if (o.config_path.empty()) throw ConfigError(command + ": --config is required");
        cfg = load_config(o.config_path);
        if (o.seed) cfg.seed = *o.seed;
        seed = cfg.seed;
        out_dir = o.out_dir ? *o.out_dir : cfg.out_dir ? cfg.resolve(*cfg.out_dir) : std::string(".");
        fs::create_directories(out_dir);
        manifest.command = command;
        manifest.config = to_json(cfg);
        manifest.seed = seed;
        manifest.argv = o.argv;
    }

    std::string path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

    void output(const std::string& p, const std::string& text) {
        write_text(p, text);
        manifest.outputs.push_back(p);
    }

    void finish() {
        manifest.finished_at = utc_timestamp();
        const std::string p = path("manifest-" + manifest.command + ".json");
        write_text(p, manifest.to_json().dump(2) + "\n");
    }
};

std::string input_corpus(const Options& o, const Run& r, const std::string& command) {
    if (o.corpus) return *o.corpus;
    if (r.cfg.corpus_path) return r.cfg.resolve(*r.cfg.corpus_path);
    throw ConfigError(command + ": no corpus given (set corpus.path in the config or pass --corpus)");
}

Corpus generated_corpus(const Config& cfg, std::uint64_t seed) {
    CorpusConfig cc = cfg.corpus;
    cc.seed = seed;
    return split_corpus(generate_corpus(cc), cfg.split, seed);
}

std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

int cmd_gen_data(const Options& o) {
    Run r(o, "gen-data");
    if (o.audio_csv.has_value() != o.text_csv.has_value()) throw ConfigError("gen-data: --audio-csv and --text-csv go together");
    const Corpus c = o.audio_csv ? split_corpus(import_csv(*o.audio_csv, *o.text_csv), r.cfg.split, r.seed)
                                 : generated_corpus(r.cfg, r.seed);
    const std::string out = o.output ? *o.output : r.path("corpus.alnc");
    if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_corpus(c, out);
    r.manifest.outputs.push_back(out);
    r.manifest.extra = {{"instances", c.size()},
                        {"languages", c.languages()},
                        {"train", c.instances(Split::train).size()},
                        {"val", c.instances(Split::val).size()},
                        {"test", c.instances(Split::test).size()}};
    r.finish();
    std::cout << "wrote " << out << " (" << c.size() << " instances, " << c.languages() << " languages)\n";
    return kOk;
}

int cmd_train(const Options& o) {
    Run r(o, "train");
    const std::string corpus_path = input_corpus(o, r, "train");
    const Corpus c = load_corpus(corpus_path);
    Arch arch = r.cfg.arch();
    arch.d_audio = c.d_audio();
    arch.d_text = c.d_text();
    arch.validate();
    const EncoderParams init = init_params(r.seed, arch);
    const auto& t = r.cfg.train;
    const auto res = train(t.strategy, c, init, r.cfg.optimizer, r.cfg.loss, t.epochs, t.batch_size, r.seed);

    const std::string ckpt = r.path("checkpoint.alnp");
    save_checkpoint(res.params, ckpt);
    r.manifest.outputs.push_back(ckpt);
    std::string csv = "epoch,loss,texts_encoded\n";
    for (std::size_t e = 0; e < res.log.epoch_loss.size(); ++e)
        csv += std::to_string(e + 1) + "," + csv_number(res.log.epoch_loss[e]) + "," + std::to_string(res.log.texts_encoded[e]) + "\n";
    r.output(r.path("loss.csv"), csv);
    r.manifest.extra = {{"corpus", corpus_path}, {"strategy", strategy_name(t.strategy)}, {"seconds", res.log.seconds}};
    r.finish();
    std::cout << "trained " << strategy_name(t.strategy) << " for " << t.epochs << " epoch(s)";
    if (!res.log.epoch_loss.empty())
        std::cout << ", loss " << res.log.epoch_loss.front() << " -> " << res.log.epoch_loss.back();
    std::cout << "\n";
    return kOk;
}

int cmd_evaluate(const Options& o) {
    Run r(o, "evaluate");
    const std::string corpus_path = input_corpus(o, r, "evaluate");
    const std::string ckpt = o.checkpoint               ? *o.checkpoint
                             : r.cfg.evaluate.checkpoint ? r.cfg.resolve(*r.cfg.evaluate.checkpoint)
                                                         : r.path("checkpoint.alnp");
    const EncoderParams p = load_checkpoint(ckpt);
    const Corpus c = load_corpus(corpus_path);
    if (p.arch().d_audio != c.d_audio() || p.arch().d_text != c.d_text()) {
        throw DimensionError("checkpoint expects d_audio=" + std::to_string(p.arch().d_audio) +
                             ", d_text=" + std::to_string(p.arch().d_text) + " but corpus has d_audio=" +
                             std::to_string(c.d_audio()) + ", d_text=" + std::to_string(c.d_text()));
    }
    const auto ids = c.instances(r.cfg.evaluate.split);
    if (ids.empty()) throw ConfigError(std::string("evaluate: split '") + split_name(r.cfg.evaluate.split) + "' is empty");
    const MetricsReport m = evaluate(p, c, ids);
    auto j = to_json(m);
    j["split"] = split_name(r.cfg.evaluate.split);
    j["instances"] = ids.size();
    r.output(r.path("metrics.json"), j.dump(2) + "\n");
    r.output(r.path("metrics.csv"), to_csv(m));
    r.manifest.extra = {{"corpus", corpus_path}, {"checkpoint", ckpt}};
    r.finish();
    std::cout << "avg R@1 " << m.avg_r_at_1() << ", MRV " << m.mrv << "\n";
    return kOk;
}

void print_trace(const BoundTrace& t) {
    for (const auto& rec : t.records)
        std::printf("epoch %zu: measured %.6e  bound %.6e  %s\n", rec.epoch, rec.measured_error, rec.bound_rhs,
                    rec.holds ? "ok" : "VIOLATED");
}

int cmd_verify_bound(const Options& o) {
    if (o.replay) {
        BoundTrace t = trace_from_jsonl(read_text(*o.replay));
        const bool ok = replay_trace(t);
        print_trace(t);
        std::cout << (ok ? "bound holds at every epoch\n" : "bound violated\n");
        return ok ? kOk : kAssertFail;
    }
    Run r(o, "verify-bound");
    if (r.cfg.optimizer.kind != OptimizerKind::sgd) {
        throw ConfigError("verify-bound: the weight-error bound is stated for SGD only; set optimizer.kind to \"sgd\" "
                          "(use the adam-check command for the Adam first-moment bound)");
    }
    const Corpus c = generated_corpus(r.cfg, r.seed);
    const BoundTrace t = twin_train(c, r.cfg.arch(), r.cfg.optimizer, r.cfg.loss, r.cfg.bound, r.seed);
    r.output(r.path("bound_trace.jsonl"), trace_to_jsonl(t));
    r.manifest.extra = {{"all_hold", t.all_hold()}};
    r.finish();
    print_trace(t);
    std::cout << (t.all_hold() ? "bound holds at every epoch\n" : "bound violated\n");
    return t.all_hold() ? kOk : kAssertFail;
}

int cmd_adam_check(const Options& o) {
    Run r(o, "adam-check");
    OptimizerConfig opt = r.cfg.optimizer;
    opt.kind = OptimizerKind::adam;
    nlohmann::json checks = nlohmann::json::array();
    bool all = true;
    for (std::size_t i = 0; i < r.cfg.adam_check.configs; ++i) {
        const std::uint64_t s = r.seed + i;
        const Corpus c = generated_corpus(r.cfg, s);
        const auto rep = adam_momentum_error_check(c, r.cfg.arch(), opt, r.cfg.loss, s);
        auto j = to_json(rep);
        j["seed"] = s;
        checks.push_back(j);
        all = all && rep.holds;
        std::printf("seed %llu: ||m - m'|| %.6e  rhs %.6e  %s\n", static_cast<unsigned long long>(s), rep.measured, rep.rhs,
                    rep.holds ? "ok" : "VIOLATED");
    }
    r.output(r.path("adam_check.json"), nlohmann::json{{"checks", checks}, {"all_hold", all}}.dump(2) + "\n");
    r.finish();
    return all ? kOk : kAssertFail;
}

int cmd_grad_check(const Options& o) {
    Run r(o, "grad-check");
    const auto& g = r.cfg.grad_check;
    nlohmann::json rows = nlohmann::json::array();
    bool all = true;
    for (Strategy s : g.strategies) {
        if (s == Strategy::cacl && r.cfg.corpus.n_languages < 2) {
            std::cerr << "warning: cacl skipped, it needs at least 2 languages\n";
            continue;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < g.seeds; ++i) {
            const std::uint64_t seed = r.seed + i;
            const Corpus c = generated_corpus(r.cfg, seed);
            std::vector<std::size_t> ids = c.all_instances();
            Rng rng = named_stream(seed, "plan");
            std::shuffle(ids.begin(), ids.end(), rng);
            ids.resize(std::min(g.batch, ids.size()));
            const auto plan = EpochLanguagePlan::draw(plan_mode_for(s), ids.size(), c.languages(), rng);
            const auto p = init_params(seed, r.cfg.arch());
            const auto rep = grad_check(s, p, c, ids, plan, r.cfg.loss, g.epsilon);
            rows.push_back({{"strategy", strategy_name(s)},
                            {"seed", seed},
                            {"max_rel_error", rep.max_rel_error},
                            {"worst_index", rep.worst_index},
                            {"analytic", rep.analytic_at_worst},
                            {"numeric", rep.numeric_at_worst}});
            worst = std::max(worst, rep.max_rel_error);
        }
        const bool ok = worst <= g.tolerance;
        all = all && ok;
        std::printf("%-6s max relative error %.3e over %zu seed(s)  %s\n", strategy_name(s), worst, g.seeds, ok ? "ok" : "FAIL");
    }
    r.output(r.path("grad_check.json"),
             nlohmann::json{{"tolerance", g.tolerance}, {"epsilon", g.epsilon}, {"checks", rows}, {"all_pass", all}}.dump(2) + "\n");
    r.finish();
    return all ? kOk : kAssertFail;
}

int cmd_compare(const Options& o) {
    Run r(o, "compare");
    ExperimentConfig e = r.cfg.experiment();
    if (o.seed)
        for (std::size_t i = 0; i < e.seeds.size(); ++i) e.seeds[i] = *o.seed + i;
    const auto rep = run_comparison(e, std::max<std::size_t>(1, o.jobs));
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";

    r.output(r.path("comparison.json"), to_json(rep).dump(2) + "\n");
    r.output(r.path("summary.csv"), summary_csv(rep));
    r.output(r.path("loss_curves.csv"), loss_curves_csv(rep));

    std::string overhead = "strategy,texts_per_epoch,working_set_bytes\n";
    nlohmann::json timing = nlohmann::json::object();
    const std::size_t n_train = split_counts(e.corpus.n_instances, e.split)[0];
    for (Strategy s : e.strategies) {
        double secs = 0.0;
        std::size_t texts = 0;
        for (const auto& run : rep.runs)
            if (run.strategy == s) {
                secs += run.log.seconds;
                texts = run.log.texts_encoded.empty() ? 0 : run.log.texts_encoded.front();
            }
        if (texts == 0) continue;
        const std::size_t bs = e.batch_size == 0 ? n_train : std::min(n_train, e.batch_size);
        overhead += std::string(strategy_name(s)) + "," + std::to_string(texts) + "," +
                    std::to_string(working_set_estimate(s, bs, e.corpus.n_languages, e.arch())) + "\n";
        timing[strategy_name(s)] = secs;
    }
    r.output(r.path("overhead.csv"), overhead);
    // Wall-clock only lives in the manifest so the reports stay reproducible.
    r.manifest.extra = {{"train_seconds", timing}, {"seeds", e.seeds}};
    r.finish();

    for (const auto& s : summarize(rep))
        std::printf("%-6s median MRV %10.4f  mean avg R@1 %.4f\n", strategy_name(s.strategy), s.median_mrv, s.mean_avg_r1);
    const auto v = compute_verdicts(rep);
    if (!v.applicable) {
        std::cout << "ordering verdicts not applicable (needs K >= 2 and all three strategies)\n";
    } else {
        std::printf("median MRV kcl <= cacl:      %s\n", v.mrv_kcl_le_cacl ? "yes" : "no");
        std::printf("median MRV cacl <= mlclap:   %s\n", v.mrv_cacl_le_mlclap ? "yes" : "no");
        std::printf("mean avg R@1 kcl >= mlclap:  %s\n", v.r1_kcl_ge_mlclap ? "yes" : "no");
        std::printf("mean avg R@1 cacl >= mlclap: %s\n", v.r1_cacl_ge_mlclap ? "yes" : "no");
    }
    if (o.assert_ordering && !v.all_required()) {
        std::cerr << "ordering assertion failed\n";
        return kAssertFail;
    }
    return kOk;
}

std::string defaults_footer() {
    Config c;
    c.corpus.n_instances = 200;
    c.corpus.n_languages = 4;
    auto j = to_json(c);
    return "Config file (JSON). corpus.n_instances and corpus.n_languages are required;\n"
           "every other field defaults as below. Relative paths resolve against the\n"
           "config file's directory.\n\n" +
           j.dump(2) + "\n\nExit codes: 0 ok, 2 config error, 3 runtime/numeric error, 4 assertion failed.";
}

} // namespace

int main(int argc, char** argv) {
    Options o;
    for (int i = 0; i < argc; ++i) o.argv.emplace_back(argv[i]);

    CLI::App app{"Multilingual audio-text contrastive lab: data generation, training, evaluation and bound checks."};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(defaults_footer());
    app.add_option("-c,--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "override the config seed");
    app.add_option("--out-dir", o.out_dir, "output directory (default: config out_dir, else .)");
    app.add_option("-j,--jobs", o.jobs, "parallel seed workers for compare")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus (ALNC)");
    gen->add_option("-o,--output", o.output, "corpus path (default: <out-dir>/corpus.alnc)");
    gen->add_option("--audio-csv", o.audio_csv, "import audio features (rows: instance,v...) instead of generating")
        ->check(CLI::ExistingFile);
    gen->add_option("--text-csv", o.text_csv, "import text features (rows: instance,language,v...; language 0 = English)")
        ->check(CLI::ExistingFile);
    auto* tr = app.add_subcommand("train", "train one strategy; writes checkpoint.alnp and loss.csv");
    tr->add_option("--corpus", o.corpus, "corpus file (default: corpus.path)");
    auto* ev = app.add_subcommand("evaluate", "retrieval and consistency metrics; writes metrics.json/csv");
    ev->add_option("--corpus", o.corpus, "corpus file (default: corpus.path)");
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint (default: evaluate.checkpoint, else <out-dir>/checkpoint.alnp)");
    auto* vb = app.add_subcommand("verify-bound", "twin SGD training against the weight-error bound");
    vb->add_option("--replay", o.replay, "re-check a stored bound_trace.jsonl instead of training");
    app.add_subcommand("adam-check", "one-step Adam first-moment error check");
    app.add_subcommand("grad-check", "finite-difference check of the loss gradients");
    auto* cmp = app.add_subcommand("compare", "train all strategies over seeds and compare");
    cmp->add_flag("--assert-ordering", o.assert_ordering, "exit 4 unless the expected orderings hold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigFail;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*tr) return cmd_train(o);
        if (*ev) return cmd_evaluate(o);
        if (*vb) return cmd_verify_bound(o);
        if (*cmp) return cmd_compare(o);
        if (app.got_subcommand("adam-check")) return cmd_adam_check(o);
        if (app.got_subcommand("grad-check")) return cmd_grad_check(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigFail;
    } catch (const DimensionError& e) {
        std::cerr << "dimension mismatch: " << e.what() << "\n";
        return kConfigFail;
    } catch (const FormatError& e) {
        std::cerr << "file error: " << e.what() << "\n";
        return e.kind() == FormatErrorKind::io ? kConfigFail : kRuntimeFail;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFail;
    }
    return kConfigFail;
}
