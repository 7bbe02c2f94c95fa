// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <polyalign/experiment.hpp>
#include <polyalign/report.hpp>
#include <polyalign/theory.hpp>

using namespace polyalign;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

Corpus corpus_of(std::size_t n, std::size_t k, std::uint64_t seed, std::size_t da = 6, std::size_t dt = 5) {
    CorpusConfig c;
    c.n_instances = n;
    c.n_languages = k;
    c.d_latent = 4;
    c.d_audio = da;
    c.d_text = dt;
    c.seed = seed;
    return generate_corpus(c);
}

Arch arch_of(const Corpus& c, std::size_t d_embed, std::size_t hidden = 0) { return {c.d_audio(), c.d_text(), d_embed, hidden}; }

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t checks = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 2 + seed % 7, k = 1 + seed % 4, d = 2 + seed % 7;
        const Corpus c = corpus_of(n, k, seed);
        const auto p = init_params(seed, arch_of(c, d, seed % 3 == 0 ? 3 : 0));
        const auto batch = iota(n);
        for (Strategy s : {Strategy::mlclap, Strategy::kcl, Strategy::cacl}) {
            const std::size_t kk = s == Strategy::cacl && k < 2 ? 2 : k;
            const Corpus cc = kk == k ? c : corpus_of(n, kk, seed);
            Rng rng = named_stream(seed, "plan");
            const auto plan = EpochLanguagePlan::draw(plan_mode_for(s), n, kk, rng);
            const auto r = grad_check(s, p, cc, batch, plan, LossConfig{}, 1e-6);
            worst = std::max(worst, r.max_rel_error);
            ++checks;
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {worst <= 1e-4 && secs < 30.0,
            fmt("max relative error %.2e over %.0f checks (20 seeds x 3 losses), %.2fs", worst, double(checks), secs)};
}

Outcome uniform_losses() {
    double worst = 0.0;
    for (std::size_t n = 1; n <= 8; ++n)
        for (std::size_t k = 2; k <= 4; ++k) {
            Corpus c = corpus_of(std::max<std::size_t>(n, 2), k, n);
            if (n == 1) c.audio = Matrix(1, c.d_audio()), c.text = Matrix(k, c.d_text()), c.splits.resize(1);
            for (std::size_t i = 0; i < n; ++i) {
                for (double& x : c.audio.row(i)) x = 0.5;
                for (std::size_t l = 0; l < k; ++l)
                    for (double& x : c.text.row(i * k + l)) x = -1.0;
            }
            const auto p = init_params(n, arch_of(c, 4));
            const auto batch = iota(n);
            const auto plan = EpochLanguagePlan::constant(n, 1, PlanMode::cacl);
            const double want = std::log(static_cast<double>(n));
            worst = std::max(worst, std::abs(kcl_loss(p, c, batch, LossConfig{}).value - want));
            worst = std::max(worst, std::abs(cacl_loss(p, c, batch, plan, LossConfig{}).value - want));
            worst = std::max(worst, std::abs(mlclap_loss(p, c, batch, EpochLanguagePlan::constant(n, 0), LossConfig{}).value - want));
        }
    return {worst <= 1e-9, fmt("max |loss - ln N| = %.2e for N = 1..8, K = 2..4", worst)};
}

Outcome kcl_elimination() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> tau(0.03, 1.0);
    std::size_t zero = 0, positive = 0, multi = 0;
    for (std::uint64_t t = 0; t < 60; ++t) {
        const std::size_t k = 1 + t % 4;
        const Corpus c = corpus_of(3 + t % 6, k, t);
        const auto p = init_params(1000 + t, arch_of(c, 2 + t % 5, t % 2 ? 3 : 0));
        const LossConfig cfg{tau(rng)};
        const auto batch = iota(c.size());
        zero += kcl_epoch_distribution_error(p, c, batch, cfg) == 0.0;
        if (k >= 2) {
            ++multi;
            Rng plan_rng = named_stream(t, "plan");
            const auto plan = EpochLanguagePlan::draw(PlanMode::baseline, batch.size(), k, plan_rng);
            positive += distribution_error(joint_distribution(p, c, batch, cfg), epoch_distribution(p, c, batch, plan, cfg)) > 0.0;
        }
    }
    return {zero == 60 && positive == multi,
            fmt("kcl error exactly 0 on %.0f/60 triples; baseline > 0 on %.0f/%.0f with K >= 2", double(zero), double(positive),
                double(multi))};
}

Outcome optimal_alignment_check() {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 2.0);
    double worst = 0.0;
    for (int t = 0; t < 25; ++t) {
        std::vector<Vec> texts(1 + t % 6, Vec(2 + t % 7));
        for (auto& v : texts)
            for (double& x : v) x = g(rng);
        Vec start(texts[0].size());
        for (double& x : start) x = g(rng);
        worst = std::max(worst, distance(optimal_alignment_descent(texts, start).point, optimal_alignment(texts)));
    }
    return {worst <= 1e-6, fmt("max distance of the descent minimizer from the mean %.2e over 25 inputs", worst)};
}

Outcome twin_bound() {
    const auto t0 = std::chrono::steady_clock::now();
    auto sgd = OptimizerConfig::of(OptimizerKind::sgd, 1e-3);
    sgd.clip_norm = 1.0;
    TwinConfig tc;
    tc.epochs = 5;
    tc.lipschitz_samples = 32;
    bool all = true;
    double tightest = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CorpusConfig cc;
        cc.n_instances = 16;
        cc.n_languages = 4;
        cc.seed = seed;
        const Corpus c = generate_corpus(cc);
        const auto t = twin_train(c, arch_of(c, 8), sgd, LossConfig{}, tc, seed);
        all = all && t.all_hold() && t.records.size() == 5;
        for (const auto& r : t.records) tightest = std::max(tightest, r.measured_error / r.bound_rhs);
    }
    CorpusConfig k1;
    k1.n_instances = 16;
    k1.n_languages = 1;
    const Corpus c1 = generate_corpus(k1);
    double control = 0.0;
    for (const auto& r : twin_train(c1, arch_of(c1, 8), sgd, LossConfig{}, tc, 0).records)
        control = std::max(control, r.measured_error);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {all && control == 0.0 && secs < 60.0,
            fmt("5 seeds x 5 epochs hold, max measured/bound %.3f; K=1 control error %.1e; %.2fs", tightest, control, secs)};
}

Outcome adam_bound() {
    std::mt19937_64 rng(13);
    std::size_t held = 0;
    double tightest = 0.0;
    for (std::uint64_t t = 0; t < 12; ++t) {
        const Corpus c = corpus_of(4 + rng() % 13, 2 + rng() % 4, t);
        auto opt = OptimizerConfig::of(OptimizerKind::adam, std::pow(10.0, -1.0 - static_cast<double>(rng() % 4)));
        opt.beta1 = std::array{0.0, 0.5, 0.9, 0.95}[rng() % 4];
        const auto r = adam_momentum_error_check(c, arch_of(c, 2 + rng() % 7), opt, LossConfig{}, t);
        held += r.holds;
        tightest = std::max(tightest, r.measured / r.rhs);
    }
    return {held == 12, fmt("%.0f/12 random configurations hold, max measured/rhs %.3f", double(held), tightest)};
}

long double ref_cos(const Vec& u, const Vec& v) {
    long double d = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d += static_cast<long double>(u[i]) * v[i];
        nu += static_cast<long double>(u[i]) * u[i];
        nv += static_cast<long double>(v[i]) * v[i];
    }
    return d / std::sqrt(nu * nv);
}

std::size_t sort_rank(const std::vector<double>& scores, std::size_t target) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

Outcome metric_oracles() {
    std::size_t matched = 0, cases = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed, ++cases) {
        const Corpus c = corpus_of(2 + seed % 19, 2 + seed % 3, seed);
        const auto p = init_params(seed, arch_of(c, 2 + seed % 4));
        const auto split = c.all_instances();
        const std::size_t n = split.size(), nk = c.languages();
        const auto rep = evaluate(p, c, split);

        std::vector<std::vector<std::size_t>> t2a(n, std::vector<std::size_t>(nk)), a2t = t2a;
        for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t b = 0; b < n; ++b) {
                std::vector<double> st(n), sa(n);
                for (std::size_t j = 0; j < n; ++j) {
                    st[j] = static_cast<double>(ref_cos(encode_text(p, c.text_of(b, k)), encode_audio(p, c.audio_of(j))));
                    sa[j] = static_cast<double>(ref_cos(encode_audio(p, c.audio_of(b)), encode_text(p, c.text_of(j, k))));
                }
                t2a[b][k] = sort_rank(st, b);
                a2t[b][k] = sort_rank(sa, b);
            }
        bool ok = rank_table(p, c, split, Direction::t2a).ranks == t2a && rank_table(p, c, split, Direction::a2t).ranks == a2t;
        auto close = [](double x, double y) { return std::abs(x - y) <= 1e-12; };
        for (const auto* ranks : {&t2a, &a2t}) {
            const auto& d = ranks == &t2a ? rep.t2a : rep.a2t;
            for (std::size_t k = 0; k < nk; ++k) {
                double r1 = 0, r5 = 0, ap = 0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t r = (*ranks)[b][k];
                    r1 += r <= 1;
                    r5 += r <= 5;
                    ap += r <= 10 ? 1.0 / static_cast<double>(r) : 0.0;
                }
                ok = ok && close(d.r_at_1[k], r1 / n) && close(d.r_at_5[k], r5 / n) && close(d.map10[k], ap / n);
            }
        }
        double mrv = 0;
        for (std::size_t b = 0; b < n; ++b) {
            double mean = 0;
            for (std::size_t k = 0; k < nk; ++k) mean += static_cast<double>(t2a[b][k]) / static_cast<double>(nk);
            for (std::size_t k = 0; k < nk; ++k) mrv += std::pow(static_cast<double>(t2a[b][k]) - mean, 2);
        }
        ok = ok && close(rep.mrv, mrv / static_cast<double>(n * nk));
        for (std::size_t k = 1; k < nk; ++k) {
            Vec gap(p.arch().d_embed, 0.0);
            double dis = 0;
            for (std::size_t i : split) {
                const Vec e = encode_text(p, c.text_of(i, 0)), f = encode_text(p, c.text_of(i, k));
                double sq = 0;
                for (std::size_t d = 0; d < e.size(); ++d) gap[d] += (e[d] - f[d]) / n, sq += (e[d] - f[d]) * (e[d] - f[d]);
                dis += std::sqrt(sq) / n;
            }
            ok = ok && close(rep.gap_norm[k], norm(gap)) && close(rep.dis[k], dis);
        }
        matched += ok;
    }
    return {matched == cases, fmt("%.0f/%.0f corpora (N <= 20) match sort and loop oracles", double(matched), double(cases))};
}

Outcome ordering() {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig cfg;
    const auto rep = run_comparison(cfg);
    const auto v = compute_verdicts(rep);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double mrv[3] = {}, r1[3] = {};
    for (const auto& s : summarize(rep)) {
        mrv[static_cast<int>(s.strategy)] = s.median_mrv;
        r1[static_cast<int>(s.strategy)] = s.mean_avg_r1;
    }
    const int ml = static_cast<int>(Strategy::mlclap), kc = static_cast<int>(Strategy::kcl), ca = static_cast<int>(Strategy::cacl);
    return {v.all_required() && secs < 120.0,
            fmt("median MRV kcl %.2f, cacl %.2f, mlclap %.2f; ", mrv[kc], mrv[ca], mrv[ml]) +
                fmt("mean avg R@1 kcl %.3f, mlclap %.3f; %.1fs", r1[kc], r1[ml], secs)};
}

Outcome overhead() {
    ExperimentConfig cfg;
    cfg.corpus.n_instances = 100;
    cfg.corpus.n_languages = 8;
    cfg.corpus.d_latent = 4;
    cfg.corpus.d_audio = 6;
    cfg.corpus.d_text = 6;
    cfg.d_embed = 4;
    cfg.split = {1.0, 0.0, 0.0};
    cfg.epochs = 1;
    cfg.batch_size = 0;
    std::size_t texts[3] = {};
    for (const auto& r : overhead_report(cfg, 0)) texts[static_cast<int>(r.strategy)] = r.texts_per_epoch;
    const std::size_t ml = texts[static_cast<int>(Strategy::mlclap)], ca = texts[static_cast<int>(Strategy::cacl)],
                      kc = texts[static_cast<int>(Strategy::kcl)];
    return {ml == 100 && ca == 200 && kc == 800 && kc == 4 * ca,
            fmt("N=100, K=8: mlclap %.0f, cacl %.0f, kcl %.0f texts per epoch", double(ml), double(ca), double(kc)) +
                fmt(" (kcl/cacl = %.0f)", ca ? double(kc) / double(ca) : 0.0)};
}

int sh(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

std::string slurp(const fs::path& p) {
    try {
        return read_text(p.string());
    } catch (const Error&) {
        return {};
    }
}

// Every non-manifest file in `a` must exist with the same bytes in `b`.
bool same_outputs(const fs::path& a, const fs::path& b, std::size_t& files) {
    bool ok = fs::exists(a);
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename().string().rfind("manifest-", 0) == 0) continue;
        const auto other = b / fs::relative(e.path(), a);
        ok = ok && fs::exists(other) && slurp(e.path()) == slurp(other);
        ++files;
    }
    return ok;
}

Outcome cli_determinism() {
    const std::string cli = POLYALIGN_CLI, cfg = POLYALIGN_CONFIGS;
    const fs::path root = fs::temp_directory_path() / "polyalign_acceptance";
    fs::remove_all(root);
    bool ok = true;
    std::size_t files = 0;
    std::vector<std::string> failed;
    for (int run = 0; run < 2; ++run) {
        const fs::path d = root / std::to_string(run);
        const std::string corpus = (d / "data/corpus.alnc").string(), ckpt = (d / "train/checkpoint.alnp").string();
        const std::vector<std::pair<std::string, std::string>> cmds = {
            {"gen-data", "-c " + cfg + "/gen-data.json --out-dir " + (d / "data").string() + " gen-data"},
            {"train", "-c " + cfg + "/train.json --out-dir " + (d / "train").string() + " train --corpus " + corpus},
            {"evaluate", "-c " + cfg + "/evaluate.json --out-dir " + (d / "eval").string() + " evaluate --corpus " + corpus +
                             " --checkpoint " + ckpt},
            {"verify-bound", "-c " + cfg + "/verify-bound.json --out-dir " + (d / "bound").string() + " verify-bound"},
            {"adam-check", "-c " + cfg + "/adam-check.json --out-dir " + (d / "adam").string() + " adam-check"},
            {"grad-check", "-c " + cfg + "/grad-check.json --out-dir " + (d / "grad").string() + " grad-check"},
            {"compare", "-c " + cfg + "/compare.json --out-dir " + (d / "compare").string() + " -j 2 compare"},
        };
        for (const auto& [name, args] : cmds)
            if (sh(cli + " " + args) != 0) {
                ok = false;
                failed.push_back(name);
            }
    }
    ok = ok && same_outputs(root / "0", root / "1", files);
    std::string detail = fmt("7 commands run twice, %.0f output files byte-identical", double(files));
    for (const auto& f : failed) detail += "; " + f + " exited nonzero";
    if (ok) fs::remove_all(root);
    return {ok, detail};
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradients},
        {"uniform-case loss values", uniform_losses},
        {"kcl distribution-error elimination", kcl_elimination},
        {"optimal alignment", optimal_alignment_check},
        {"weight-error bound", twin_bound},
        {"adam momentum bound", adam_bound},
        {"metric-oracle equivalence", metric_oracles},
        {"qualitative ordering", ordering},
        {"overhead accounting", overhead},
        {"cli determinism", cli_determinism},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
