#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace polyalign {

struct TrainingLog {
    std::vector<double> epoch_loss;          // mean batch loss before each epoch's updates
    std::vector<std::size_t> texts_encoded;  // per epoch
    double seconds = 0.0;
};

struct TrainResult {
    EncoderParams params;
    TrainingLog log;
};

/// Trains `init` with one strategy on the corpus' training split. A fresh
/// language plan is drawn every epoch from the seed's plan stream. With
/// mini-batches the epoch order comes from a separate stream, so every
/// strategy sees the same batches for a given seed.
inline TrainResult train(Strategy strategy, const Corpus& corpus, const EncoderParams& init, const OptimizerConfig& opt,
                         const LossConfig& loss, std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
    opt.validate();
    loss.validate();
    if (strategy == Strategy::cacl && corpus.languages() < 2) throw ConfigError("cacl training needs at least 2 languages");
    if (init.arch().d_audio != corpus.d_audio() || init.arch().d_text != corpus.d_text()) {
        throw DimensionError("model input dims (" + std::to_string(init.arch().d_audio) + ", " +
                             std::to_string(init.arch().d_text) + ") do not match corpus dims (" +
                             std::to_string(corpus.d_audio()) + ", " + std::to_string(corpus.d_text()) + ")");
    }
    const std::vector<std::size_t> train_ids = corpus.instances(Split::train);
    if (train_ids.empty()) throw ConfigError("corpus has no training instances");
    const std::size_t bs = batch_size == 0 ? train_ids.size() : std::min(batch_size, train_ids.size());

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r{init, {}};
    Optimizer optimizer(opt, init.flat().size());
    Rng plan_rng = named_stream(seed, "plan");
    Rng order_rng = named_stream(seed, "order");
    const PlanMode mode = plan_mode_for(strategy);

    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order = train_ids;
        if (bs < order.size()) std::shuffle(order.begin(), order.end(), order_rng);
        EpochLanguagePlan plan;
        if (strategy != Strategy::kcl) plan = EpochLanguagePlan::draw(mode, order.size(), corpus.languages(), plan_rng);

        double total = 0.0;
        std::size_t texts = 0;
        for (std::size_t off = 0; off < order.size(); off += bs) {
            const std::size_t cnt = std::min(bs, order.size() - off);
            const std::span<const std::size_t> batch(order.data() + off, cnt);
            const auto out = strategy_loss(strategy, r.params, corpus, batch,
                                           strategy == Strategy::kcl ? plan : plan.slice(off, cnt), loss);
            if (!std::isfinite(out.value) || !all_finite(out.grad)) {
                throw NumericError(std::string("non-finite loss in epoch ") + std::to_string(e + 1) + " (" +
                                   strategy_name(strategy) + ")");
            }
            total += out.value * static_cast<double>(cnt);
            texts += out.texts_encoded;
            optimizer.step(r.params.flat(), out.grad);
        }
        r.log.epoch_loss.push_back(total / static_cast<double>(order.size()));
        r.log.texts_encoded.push_back(texts);
    }
    r.log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct ExperimentConfig {
    CorpusConfig corpus;
    // Half the instances held out: MRV medians are too noisy on a 20-item test split.
    std::array<double, 3> split{0.5, 0.0, 0.5};
    std::size_t d_embed = 16;
    std::size_t hidden = 0;
    OptimizerConfig optimizer = OptimizerConfig::of(OptimizerKind::adam, 3e-3);
    LossConfig loss;
    std::vector<Strategy> strategies{Strategy::mlclap, Strategy::cacl, Strategy::kcl};
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    Split eval_split = Split::test;

    Arch arch() const { return {corpus.d_audio, corpus.d_text, d_embed, hidden}; }

    void validate() const {
        corpus.validate();
        arch().validate();
        optimizer.validate();
        loss.validate();
        if (seeds.empty()) throw ConfigError("compare.seeds must list at least one seed");
        if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
        if (strategies.empty()) throw ConfigError("compare.strategies must not be empty");
    }
};

/// Per-seed corpus: generated from the seed, then split with it.
inline Corpus experiment_corpus(const ExperimentConfig& cfg, std::uint64_t seed) {
    CorpusConfig cc = cfg.corpus;
    cc.seed = seed;
    return split_corpus(generate_corpus(cc), cfg.split, seed);
}

struct RunResult {
    Strategy strategy = Strategy::mlclap;
    std::uint64_t seed = 0;
    MetricsReport metrics;
    TrainingLog log;
};

struct StrategySummary {
    Strategy strategy = Strategy::mlclap;
    double median_mrv = 0.0, mean_mrv = 0.0;
    double median_avg_r1 = 0.0, mean_avg_r1 = 0.0;
};

struct OrderingVerdicts {
    bool applicable = false;         // needs K >= 2 and all three strategies
    bool mrv_kcl_le_cacl = false;    // medians
    bool mrv_cacl_le_mlclap = false; // medians
    bool r1_kcl_ge_mlclap = false;   // means of averaged R@1
    bool r1_cacl_ge_mlclap = false;  // means of averaged R@1, informational

    bool all_required() const { return applicable && mrv_kcl_le_cacl && mrv_cacl_le_mlclap && r1_kcl_ge_mlclap; }
};

struct ComparisonReport {
    std::size_t languages = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<RunResult> runs;
    std::vector<std::string> warnings;
};

inline double median(Vec v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const Vec& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline std::vector<StrategySummary> summarize(const ComparisonReport& rep) {
    std::vector<StrategySummary> out;
    for (Strategy s : {Strategy::mlclap, Strategy::cacl, Strategy::kcl}) {
        Vec mrv, r1;
        for (const auto& run : rep.runs)
            if (run.strategy == s) {
                mrv.push_back(run.metrics.mrv);
                r1.push_back(run.metrics.avg_r_at_1());
            }
        if (mrv.empty()) continue;
        out.push_back({s, median(mrv), mean(mrv), median(r1), mean(r1)});
    }
    return out;
}

/// Derived from the stored per-seed numbers every time it is called.
inline OrderingVerdicts compute_verdicts(const ComparisonReport& rep) {
    OrderingVerdicts v;
    const auto sums = summarize(rep);
    auto find = [&](Strategy s) -> const StrategySummary* {
        for (const auto& x : sums)
            if (x.strategy == s) return &x;
        return nullptr;
    };
    const auto *ml = find(Strategy::mlclap), *ca = find(Strategy::cacl), *kc = find(Strategy::kcl);
    v.applicable = rep.languages >= 2 && ml && ca && kc;
    if (!v.applicable) return v;
    v.mrv_kcl_le_cacl = kc->median_mrv <= ca->median_mrv;
    v.mrv_cacl_le_mlclap = ca->median_mrv <= ml->median_mrv;
    v.r1_kcl_ge_mlclap = kc->mean_avg_r1 >= ml->mean_avg_r1;
    v.r1_cacl_ge_mlclap = ca->mean_avg_r1 >= ml->mean_avg_r1;
    return v;
}

/// Trains every strategy on the same per-seed corpus and initialization and
/// evaluates on the held-out split. Seeds run on up to `jobs` threads; the
/// result does not depend on `jobs`.
inline ComparisonReport run_comparison(const ExperimentConfig& cfg, std::size_t jobs = 1) {
    cfg.validate();
    ComparisonReport rep;
    rep.languages = cfg.corpus.n_languages;
    rep.seeds = cfg.seeds;
    if (cfg.seeds.size() < 5) {
        rep.warnings.push_back("only " + std::to_string(cfg.seeds.size()) +
                               " seed(s); at least 5 are recommended for median-based verdicts");
    }
    std::vector<Strategy> strategies;
    for (Strategy s : cfg.strategies) {
        if (s == Strategy::cacl && cfg.corpus.n_languages < 2) {
            rep.warnings.push_back("cacl skipped: it needs at least 2 languages");
            continue;
        }
        strategies.push_back(s);
    }
    if (cfg.corpus.n_languages < 2) rep.warnings.push_back("single language: all strategies collapse to the same objective");

    const std::size_t ns = cfg.seeds.size();
    std::vector<std::vector<RunResult>> per_seed(ns);
    std::vector<std::exception_ptr> errors(ns);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t idx; (idx = next.fetch_add(1)) < ns;) {
            const std::uint64_t seed = cfg.seeds[idx];
            try {
                const Corpus corpus = experiment_corpus(cfg, seed);
                const EncoderParams init = init_params(seed, cfg.arch());
                const auto eval_ids = corpus.instances(cfg.eval_split);
                for (Strategy s : strategies) {
                    try {
                        auto tr = train(s, corpus, init, cfg.optimizer, cfg.loss, cfg.epochs, cfg.batch_size, seed);
                        per_seed[idx].push_back({s, seed, evaluate(tr.params, corpus, eval_ids), std::move(tr.log)});
                    } catch (const Error& e) {
                        throw NumericError(std::string(strategy_name(s)) + ", seed " + std::to_string(seed) + ": " + e.what());
                    }
                }
            } catch (...) {
                errors[idx] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, ns));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (auto& v : per_seed)
        for (auto& r : v) rep.runs.push_back(std::move(r));
    return rep;
}

struct OverheadEntry {
    Strategy strategy = Strategy::mlclap;
    std::size_t texts_per_epoch = 0;
    double seconds = 0.0;
    std::size_t working_set_bytes = 0;
};

/// Texts encoded per epoch: N (mlclap), 2N (cacl), N*K (kcl), counted by
/// the training loop. The working-set figure is an estimate of the
/// activations and similarity matrices alive during one full-batch step.
inline std::size_t working_set_estimate(Strategy s, std::size_t n, std::size_t languages, const Arch& a) {
    const std::size_t texts = s == Strategy::mlclap ? n : s == Strategy::cacl ? 2 * n : n * languages;
    const std::size_t sims = s == Strategy::mlclap ? 1 : s == Strategy::cacl ? 3 : languages;
    const std::size_t per_item = a.hidden + 2 * a.d_embed;
    return sizeof(double) * (n * (a.d_audio + per_item) + texts * (a.d_text + per_item) + 2 * sims * n * n);
}

inline std::vector<OverheadEntry> overhead_report(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Corpus corpus = experiment_corpus(cfg, seed);
    const EncoderParams init = init_params(seed, cfg.arch());
    const std::size_t n = corpus.instances(Split::train).size();
    std::vector<OverheadEntry> out;
    for (Strategy s : cfg.strategies) {
        if (s == Strategy::cacl && corpus.languages() < 2) continue;
        const auto tr = train(s, corpus, init, cfg.optimizer, cfg.loss, cfg.epochs, cfg.batch_size, seed);
        out.push_back({s, tr.log.texts_encoded.front(), tr.log.seconds,
                       working_set_estimate(s, cfg.batch_size == 0 ? n : std::min(n, cfg.batch_size), corpus.languages(),
                                            cfg.arch())});
    }
    return out;
}

inline nlohmann::json to_json(const ComparisonReport& rep) {
    using nlohmann::json;
    json runs = json::array();
    for (const auto& r : rep.runs) {
        runs.push_back({{"strategy", strategy_name(r.strategy)},
                        {"seed", r.seed},
                        {"initial_loss", r.log.epoch_loss.front()},
                        {"final_loss", r.log.epoch_loss.back()},
                        {"texts_per_epoch", r.log.texts_encoded.front()},
                        {"metrics", to_json(r.metrics)}});
    }
    json summary = json::array();
    for (const auto& s : summarize(rep)) {
        summary.push_back({{"strategy", strategy_name(s.strategy)},
                           {"median_mrv", s.median_mrv},
                           {"mean_mrv", s.mean_mrv},
                           {"median_avg_r_at_1", s.median_avg_r1},
                           {"mean_avg_r_at_1", s.mean_avg_r1}});
    }
    const auto v = compute_verdicts(rep);
    return {{"languages", rep.languages},
            {"seeds", rep.seeds},
            {"runs", runs},
            {"summary", summary},
            {"verdicts",
             {{"applicable", v.applicable},
              {"median_mrv_kcl_le_cacl", v.mrv_kcl_le_cacl},
              {"median_mrv_cacl_le_mlclap", v.mrv_cacl_le_mlclap},
              {"mean_avg_r1_kcl_ge_mlclap", v.r1_kcl_ge_mlclap},
              {"mean_avg_r1_cacl_ge_mlclap", v.r1_cacl_ge_mlclap}}},
            {"warnings", rep.warnings}};
}

inline std::string summary_csv(const ComparisonReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "strategy,median_mrv,mean_mrv,median_avg_r_at_1,mean_avg_r_at_1\n";
    for (const auto& s : summarize(rep))
        os << strategy_name(s.strategy) << ',' << s.median_mrv << ',' << s.mean_mrv << ',' << s.median_avg_r1 << ','
           << s.mean_avg_r1 << '\n';
    return os.str();
}

inline std::string loss_curves_csv(const ComparisonReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "strategy,seed,epoch,loss\n";
    for (const auto& r : rep.runs)
        for (std::size_t e = 0; e < r.log.epoch_loss.size(); ++e)
            os << strategy_name(r.strategy) << ',' << r.seed << ',' << e + 1 << ',' << r.log.epoch_loss[e] << '\n';
    return os.str();
}

} // namespace polyalign
