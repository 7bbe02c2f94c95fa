#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "rng.hpp"

// Sign convention: the weight-error recursion is usually stated as ascent on
// log p(a, t). Everything here descends the per-pair negative
// log-probability instead; every norm used by the bound is unaffected.

namespace polyalign {

struct PairIndex {
    std::size_t instance = 0;  // corpus instance id
    std::size_t language = 0;

    bool operator==(const PairIndex&) const = default;
    auto operator<=>(const PairIndex&) const = default;
};

/// Probability mass over (audio, text) pairs.
struct DistributionSnapshot {
    std::vector<PairIndex> support;
    Vec mass;

    void validate() const {
        if (support.size() != mass.size() || support.empty()) throw ConfigError("distribution: support/mass size mismatch");
        double s = 0.0;
        for (double m : mass) {
            if (!(m >= 0.0)) throw NumericError("distribution: negative or non-finite mass");
            s += m;
        }
        if (std::abs(s - 1.0) > 1e-10) throw NumericError("distribution: mass does not sum to 1");
    }
};

/// Softmax of similarity/tau over the given support.
inline DistributionSnapshot distribution_from_similarities(std::vector<PairIndex> support, std::span<const double> sims,
                                                           double tau) {
    if (support.size() != sims.size() || support.empty()) throw DimensionError("distribution: support/similarity size mismatch");
    return {std::move(support), softmax_row(sims, tau)};
}

namespace detail {

inline DistributionSnapshot distribution_over(const EncoderParams& p, const Corpus& c, std::vector<PairIndex> support,
                                              const LossConfig& cfg) {
    cfg.validate();
    Vec sims(support.size());
    for (std::size_t q = 0; q < support.size(); ++q) {
        const Vec a = encode_audio(p, c.audio_of(support[q].instance));
        const Vec t = encode_text(p, c.text_of(support[q].instance, support[q].language));
        if (!(norm(a) > 0.0)) throw DegenerateInputError("zero-norm audio embedding", support[q].instance);
        if (!(norm(t) > 0.0)) throw DegenerateInputError("zero-norm text embedding", support[q].instance);
        sims[q] = cosine_sim(a, t);
    }
    return distribution_from_similarities(std::move(support), sims, cfg.tau);
}

inline std::vector<PairIndex> all_pairs(const Corpus& c, std::span<const std::size_t> batch) {
    std::vector<PairIndex> out;
    for (std::size_t i : batch)
        for (std::size_t k = 0; k < c.languages(); ++k) out.push_back({i, k});
    return out;
}

inline std::vector<PairIndex> plan_pairs(std::span<const std::size_t> batch, const EpochLanguagePlan& plan) {
    if (plan.language.size() != batch.size()) throw ConfigError("plan length does not match batch size");
    std::vector<PairIndex> out;
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back({batch[b], plan.language[b]});
    return out;
}

} // namespace detail

/// p(a_i, t_ik): softmax over all N*K matched pairs of the batch.
inline DistributionSnapshot joint_distribution(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                               const LossConfig& cfg) {
    if (batch.empty()) throw ConfigError("joint_distribution: empty batch");
    return detail::distribution_over(p, c, detail::all_pairs(c, batch), cfg);
}

/// p'_e(a_i, t_iq_i): softmax over the N planned pairs only.
inline DistributionSnapshot epoch_distribution(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                               const EpochLanguagePlan& plan, const LossConfig& cfg) {
    if (batch.empty()) throw ConfigError("epoch_distribution: empty batch");
    plan.validate(c.languages());
    return detail::distribution_over(p, c, detail::plan_pairs(batch, plan), cfg);
}

/// The distribution a 1-to-K epoch trains on: every language of every
/// instance, so the same support and masses as the joint distribution.
inline DistributionSnapshot kcl_epoch_distribution(const EncoderParams& p, const Corpus& c,
                                                   std::span<const std::size_t> batch, const LossConfig& cfg) {
    return detail::distribution_over(p, c, detail::all_pairs(c, batch), cfg);
}

/// Sum over p's support of |p - pe|, with pe zero-extended onto that
/// support. Lies in [0, 2].
inline double distribution_error(const DistributionSnapshot& p, const DistributionSnapshot& pe) {
    if (p.support.size() != p.mass.size() || pe.support.size() != pe.mass.size()) {
        throw DimensionError("distribution_error: malformed snapshot");
    }
    std::map<PairIndex, double> extended;
    for (const auto& s : p.support) extended.emplace(s, 0.0);
    for (std::size_t q = 0; q < pe.support.size(); ++q) {
        auto it = extended.find(pe.support[q]);
        if (it == extended.end()) {
            throw ConfigError("distribution_error: pair (" + std::to_string(pe.support[q].instance) + ", " +
                              std::to_string(pe.support[q].language) + ") is outside the reference support");
        }
        it->second += pe.mass[q];
    }
    double err = 0.0;
    for (std::size_t q = 0; q < p.support.size(); ++q) err += std::abs(p.mass[q] - extended[p.support[q]]);
    return err;
}

inline double kcl_epoch_distribution_error(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                           const LossConfig& cfg) {
    return distribution_error(joint_distribution(p, c, batch, cfg), kcl_epoch_distribution(p, c, batch, cfg));
}

/// Per-pair contrastive term for pair (i, k) within a batch:
///   -log softmax_j(s(f(a_i), g(t_jk))/tau)[i] - log softmax_j(s(g(t_ik), f(a_j))/tau)[i]
/// i.e. the pair's own share of the 1-to-K objective (negatives within
/// language k). Summing these over all pairs gives 2NK times kcl_loss.
struct PairTerm {
    PairIndex pair;
    double value = 0.0;
    WeightVector grad;
};

inline std::vector<PairTerm> pair_terms(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                        const std::vector<PairIndex>& pairs, const LossConfig& cfg) {
    cfg.validate();
    detail::check_batch(c, batch);
    std::map<std::size_t, std::size_t> position;
    for (std::size_t b = 0; b < batch.size(); ++b) position[batch[b]] = b;

    std::vector<PairTerm> out(pairs.size());
    std::map<std::size_t, std::vector<std::size_t>> by_language;
    for (std::size_t q = 0; q < pairs.size(); ++q) {
        if (!position.count(pairs[q].instance)) throw ConfigError("pair_terms: pair instance not in batch");
        if (pairs[q].language >= c.languages()) throw ConfigError("pair_terms: language out of range");
        by_language[pairs[q].language].push_back(q);
    }

    const std::size_t n = batch.size();
    const auto audio = detail::encode_audio_batch(p, c, batch);
    const auto a_emb = audio.embeddings();
    Vec scores(n);
    for (const auto& [k, queries] : by_language) {
        const auto text = detail::encode_text_language(p, c, batch, k);
        const auto block = detail::similarity_block(a_emb, text.embeddings());
        for (std::size_t q : queries) {
            const std::size_t b = position[pairs[q].instance];
            Matrix ds(n, n);
            double value = 0.0;
            for (std::size_t j = 0; j < n; ++j) scores[j] = block.s(b, j);
            Vec lsm = log_softmax_row(scores, cfg.tau);
            value -= lsm[b];
            for (std::size_t j = 0; j < n; ++j) ds(b, j) += (std::exp(lsm[j]) - (j == b ? 1.0 : 0.0)) / cfg.tau;
            for (std::size_t j = 0; j < n; ++j) scores[j] = block.s(j, b);
            lsm = log_softmax_row(scores, cfg.tau);
            value -= lsm[b];
            for (std::size_t j = 0; j < n; ++j) ds(j, b) += (std::exp(lsm[j]) - (j == b ? 1.0 : 0.0)) / cfg.tau;

            std::vector<Vec> da, dt;
            detail::similarity_backward(block, ds, da, dt);
            PairTerm term{pairs[q], value, WeightVector(p.flat().size(), 0.0)};
            detail::backprop_set(p, audio, da, 1.0, term.grad);
            detail::backprop_set(p, text, dt, 1.0, term.grad);
            out[q] = std::move(term);
        }
    }
    return out;
}

/// sum_q mass_q * grad_q over a snapshot's support, given terms aligned
/// with that support.
inline Vec mixture_gradient(const DistributionSnapshot& d, const std::vector<PairTerm>& terms) {
    if (terms.size() != d.mass.size() || terms.empty()) throw DimensionError("mixture_gradient: size mismatch");
    Vec g(terms.front().grad.size(), 0.0);
    for (std::size_t q = 0; q < terms.size(); ++q) axpy(d.mass[q], terms[q].grad, g);
    return g;
}

/// Max over pairs of the per-pair gradient norm.
inline double g_max_of(const std::vector<PairTerm>& terms) {
    double m = 0.0;
    for (const auto& t : terms) m = std::max(m, norm(t.grad));
    return m;
}

inline double g_max(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch, const LossConfig& cfg) {
    return g_max_of(pair_terms(p, c, batch, detail::all_pairs(c, batch), cfg));
}

struct LipschitzEstimate {
    double lambda_max = 0.0;
    Vec per_term;  // max ratio for each gradient term
    std::size_t n_samples = 0;
    double perturbation_scale = 0.0;
};

/// Empirical Lipschitz constant of a family of gradient maps. For every
/// sample a random direction delta with ||delta|| = scale is drawn and
/// ||G_q(w + delta) - G_q(w)|| / ||delta|| is recorded per term q; the
/// estimate is the maximum. This is a sampled lower estimate of the true
/// constant, not a certificate.
template <typename TermGrads>
LipschitzEstimate estimate_lipschitz(TermGrads&& term_grads, const Vec& w, std::size_t n_samples, double scale, Rng& rng) {
    if (n_samples < 1) throw ConfigError("estimate_lipschitz: need at least one sample");
    if (!(scale > 0.0)) throw ConfigError("estimate_lipschitz: perturbation scale must be positive");
    const std::vector<Vec> base = term_grads(w);
    LipschitzEstimate est{0.0, Vec(base.size(), 0.0), n_samples, scale};
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec delta(w.size()), probe(w.size());
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (double& d : delta) d = gauss(rng);
        const double dn = norm(delta);
        for (std::size_t i = 0; i < w.size(); ++i) probe[i] = w[i] + delta[i] * (scale / dn);
        const double step = distance(probe, w);
        const std::vector<Vec> moved = term_grads(probe);
        for (std::size_t q = 0; q < base.size(); ++q) {
            const double ratio = distance(moved[q], base[q]) / step;
            est.per_term[q] = std::max(est.per_term[q], ratio);
            est.lambda_max = std::max(est.lambda_max, ratio);
        }
    }
    return est;
}

inline LipschitzEstimate estimate_lipschitz(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                            const LossConfig& cfg, std::size_t n_samples, double scale, std::uint64_t seed) {
    const auto pairs = detail::all_pairs(c, batch);
    auto grads = [&](const Vec& w) {
        std::vector<Vec> out;
        for (auto& t : pair_terms(EncoderParams(p.arch(), w), c, batch, pairs, cfg)) out.push_back(std::move(t.grad));
        return out;
    };
    Rng rng = named_stream(seed, "lipschitz");
    return estimate_lipschitz(grads, p.flat(), n_samples, scale, rng);
}

/// Inputs of one epoch of the weight-error recursion. `g_max` holds
/// g_max(w) before each of the T steps, oldest first.
struct BoundInputs {
    double prev_error = 0.0;
    double eta = 0.0;
    double a = 1.0;
    Vec g_max;
    double dist_error = 0.0;
};

/// a^T * prev_error + eta * dist_error * sum_{j=0}^{T-1} a^j g_max(w_{eT-1-j}).
inline double bound_rhs(const BoundInputs& in) {
    if (!(in.a >= 1.0)) throw NumericError("bound_rhs: coefficient a must be at least 1");
    if (in.g_max.empty()) throw ConfigError("bound_rhs: need at least one step");
    if (in.prev_error < 0.0 || in.eta < 0.0 || in.dist_error < 0.0) throw ConfigError("bound_rhs: inputs must be nonnegative");
    const std::size_t steps = in.g_max.size();
    double sum = 0.0;
    double aj = 1.0;
    for (std::size_t j = 0; j < steps; ++j) {
        const double g = in.g_max[steps - 1 - j];
        if (g < 0.0) throw ConfigError("bound_rhs: g_max must be nonnegative");
        sum += aj * g;
        aj *= in.a;
    }
    return std::pow(in.a, static_cast<double>(steps)) * in.prev_error + in.eta * in.dist_error * sum;
}

struct TwinConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 0;  // 0: full training split per step
    std::size_t lipschitz_samples = 32;
    double perturbation_scale = 1e-3;
};

struct EpochBoundRecord {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    double prev_error = 0.0;
    double measured_error = 0.0;
    Vec g_max;
    double lambda_hat = 0.0;
    double a = 1.0;
    double distribution_error = 0.0;
    double bound_rhs = 0.0;
    bool holds = true;
    std::vector<std::size_t> plan;  // language per training instance, in split order
};

struct BoundTrace {
    std::uint64_t seed = 0;
    std::uint64_t plan_seed = 0;
    double eta = 0.0;
    std::size_t lipschitz_samples = 0;
    double perturbation_scale = 0.0;
    std::vector<EpochBoundRecord> records;

    bool all_hold() const {
        return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.holds; });
    }
};

/// Re-derives every verdict from the stored numbers.
inline bool recheck_trace(BoundTrace& trace) {
    for (auto& r : trace.records) r.holds = r.measured_error <= r.bound_rhs;
    return trace.all_hold();
}

/// Trains two identically initialized models with shared batches and plan
/// randomness. Model A follows the full distribution p (every language of
/// every instance, each pair term weighted by its joint mass); model B
/// follows the sampled epoch distribution p'_e (one random language per
/// instance). Both use the same per-pair term family, so the triangle
/// inequality argument behind the bound applies step by step. After every
/// epoch the measured ||w - w'|| is compared with the recursion's
/// right-hand side, where a and the distribution error are the largest
/// per-step values seen in the epoch.
inline BoundTrace twin_train(const Corpus& corpus, const Arch& arch, const OptimizerConfig& opt, const LossConfig& loss,
                             const TwinConfig& tc, std::uint64_t seed) {
    opt.validate();
    loss.validate();
    if (opt.kind != OptimizerKind::sgd) throw ConfigError("twin_train: the weight-error bound holds for SGD only");
    if (tc.epochs < 1) throw ConfigError("twin_train: epochs must be at least 1");
    std::vector<std::size_t> train = corpus.instances(Split::train);
    if (train.empty()) throw ConfigError("twin_train: corpus has no training instances");
    const std::size_t bs = tc.batch_size == 0 ? train.size() : std::min(tc.batch_size, train.size());

    EncoderParams wa = init_params(seed, arch);
    EncoderParams wb = wa;
    Optimizer opt_a(opt, wa.flat().size()), opt_b(opt, wb.flat().size());

    BoundTrace trace;
    trace.seed = seed;
    trace.plan_seed = splitmix64(seed ^ splitmix64(fnv1a64("plan")));
    trace.eta = opt.eta;
    trace.lipschitz_samples = tc.lipschitz_samples;
    trace.perturbation_scale = tc.perturbation_scale;
    Rng plan_rng = named_stream(seed, "plan");
    Rng lip_rng = named_stream(seed, "lipschitz");

    for (std::size_t e = 0; e < tc.epochs; ++e) {
        EpochBoundRecord rec;
        rec.epoch = e + 1;
        rec.prev_error = weight_distance(wa, wb);
        std::vector<std::size_t> order = train;
        std::shuffle(order.begin(), order.end(), plan_rng);
        const auto plan = EpochLanguagePlan::draw(PlanMode::baseline, order.size(), corpus.languages(), plan_rng);
        rec.plan.resize(train.size());
        for (std::size_t b = 0; b < order.size(); ++b) {
            const auto pos = std::lower_bound(train.begin(), train.end(), order[b]) - train.begin();
            rec.plan[static_cast<std::size_t>(pos)] = plan.language[b];
        }

        for (std::size_t off = 0; off < order.size(); off += bs) {
            const std::size_t cnt = std::min(bs, order.size() - off);
            const std::span<const std::size_t> batch(order.data() + off, cnt);
            const auto step_plan = plan.slice(off, cnt);

            const auto p = joint_distribution(wa, corpus, batch, loss);
            const auto pe = epoch_distribution(wb, corpus, batch, step_plan, loss);
            const auto terms_a = pair_terms(wa, corpus, batch, p.support, loss);
            const auto terms_b = pair_terms(wb, corpus, batch, pe.support, loss);

            auto grads_at = [&](const Vec& w) {
                std::vector<Vec> out;
                for (auto& t : pair_terms(EncoderParams(arch, w), corpus, batch, p.support, loss)) out.push_back(std::move(t.grad));
                return out;
            };
            const auto lip = estimate_lipschitz(grads_at, wa.flat(), tc.lipschitz_samples, tc.perturbation_scale, lip_rng);
            std::map<PairIndex, double> lambda_of;
            for (std::size_t q = 0; q < p.support.size(); ++q) lambda_of[p.support[q]] = lip.per_term[q];
            double weighted = 0.0;
            for (std::size_t q = 0; q < pe.support.size(); ++q) weighted += pe.mass[q] * lambda_of.at(pe.support[q]);

            rec.g_max.push_back(g_max_of(terms_a));
            rec.lambda_hat = std::max(rec.lambda_hat, lip.lambda_max);
            rec.a = std::max(rec.a, 1.0 + opt.eta * weighted);
            rec.distribution_error = std::max(rec.distribution_error, distribution_error(p, pe));

            opt_a.step(wa.flat(), mixture_gradient(p, terms_a));
            opt_b.step(wb.flat(), mixture_gradient(pe, terms_b));
            if (!all_finite(wa.flat()) || !all_finite(wb.flat())) {
                throw NumericError("twin_train: weights diverged in epoch " + std::to_string(e + 1));
            }
            ++rec.steps;
        }
        rec.measured_error = weight_distance(wa, wb);
        rec.bound_rhs = bound_rhs({rec.prev_error, opt.eta, rec.a, rec.g_max, rec.distribution_error});
        rec.holds = rec.measured_error <= rec.bound_rhs;
        trace.records.push_back(std::move(rec));
    }
    return trace;
}

struct MomentumCheckReport {
    double measured = 0.0;  // ||m_1 - m_1'||
    double rhs = 0.0;       // (1 - beta1) * g_max * sum |p - p'_e|
    double g_max = 0.0;
    double distribution_error = 0.0;
    double beta1 = 0.0;
    bool holds = true;
};

/// One Adam step for twin models from the same weights and fresh state:
/// model A on the joint distribution, model B on the sampled epoch
/// distribution. With equal weights the weight term of the first-moment
/// bound vanishes, leaving (1 - beta1) * g_max * distribution error.
/// `force_identical` hands model B the joint distribution as well.
inline MomentumCheckReport adam_momentum_error_check(const Corpus& corpus, const Arch& arch, const OptimizerConfig& opt,
                                                     const LossConfig& loss, std::uint64_t seed,
                                                     bool force_identical = false) {
    opt.validate();
    loss.validate();
    if (opt.kind != OptimizerKind::adam) throw ConfigError("adam_momentum_error_check: needs an Adam optimizer config");
    std::vector<std::size_t> batch = corpus.instances(Split::train);
    if (batch.empty()) throw ConfigError("adam_momentum_error_check: corpus has no training instances");

    const EncoderParams w = init_params(seed, arch);
    Rng plan_rng = named_stream(seed, "plan");
    const auto plan = EpochLanguagePlan::draw(PlanMode::baseline, batch.size(), corpus.languages(), plan_rng);

    const auto p = joint_distribution(w, corpus, batch, loss);
    const auto pe = force_identical ? p : epoch_distribution(w, corpus, batch, plan, loss);
    const auto terms_a = pair_terms(w, corpus, batch, p.support, loss);
    const auto terms_b = force_identical ? terms_a : pair_terms(w, corpus, batch, pe.support, loss);

    const auto [wa, sa] = adam_step(w.flat(), mixture_gradient(p, terms_a), AdamState::fresh(w.flat().size()), opt);
    const auto [wb, sb] = adam_step(w.flat(), mixture_gradient(pe, terms_b), AdamState::fresh(w.flat().size()), opt);

    MomentumCheckReport r;
    r.measured = distance(sa.m, sb.m);
    r.g_max = g_max_of(terms_a);
    r.distribution_error = distribution_error(p, pe);
    r.beta1 = opt.beta1;
    r.rhs = (1.0 - opt.beta1) * r.g_max * r.distribution_error;
    r.holds = r.measured <= r.rhs;
    return r;
}

/// Minimizer of sum_k ||a - t_k||^2: the arithmetic mean of the t_k.
inline Vec optimal_alignment(const std::vector<Vec>& texts) {
    if (texts.empty()) throw ConfigError("optimal_alignment: need at least one embedding");
    Vec mean(texts.front().size(), 0.0);
    for (const auto& t : texts) {
        if (t.size() != mean.size()) throw DimensionError("optimal_alignment: embeddings differ in dimension");
        axpy(1.0, t, mean);
    }
    for (double& v : mean) v /= static_cast<double>(texts.size());
    return mean;
}

struct AlignmentDescentResult {
    Vec point;
    std::size_t iterations = 0;
    double grad_norm = 0.0;
};

/// Gradient descent on sum_k ||a - t_k||^2 from `start`.
inline AlignmentDescentResult optimal_alignment_descent(const std::vector<Vec>& texts, Vec start, double step = 0.05,
                                                        double tol = 1e-12, std::size_t max_iter = 100000) {
    if (texts.empty()) throw ConfigError("optimal_alignment_descent: need at least one embedding");
    if (start.size() != texts.front().size()) throw DimensionError("optimal_alignment_descent: start has wrong dimension");
    const double k = static_cast<double>(texts.size());
    AlignmentDescentResult r{std::move(start), 0, 0.0};
    Vec g(r.point.size());
    for (; r.iterations < max_iter; ++r.iterations) {
        std::fill(g.begin(), g.end(), 0.0);
        for (const auto& t : texts) {
            if (t.size() != g.size()) throw DimensionError("optimal_alignment_descent: embeddings differ in dimension");
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * (r.point[i] - t[i]);
        }
        r.grad_norm = norm(g);
        if (r.grad_norm < tol) break;
        axpy(-step / k, g, r.point);
    }
    return r;
}

} // namespace polyalign
