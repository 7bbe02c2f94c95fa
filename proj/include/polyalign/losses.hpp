#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace polyalign {

struct LossConfig {
    double tau = kDefaultTau;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss.tau must be positive");
    }
};

enum class Strategy { mlclap, kcl, cacl };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::mlclap: return "mlclap";
        case Strategy::kcl: return "kcl";
        case Strategy::cacl: return "cacl";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "mlclap") return Strategy::mlclap;
    if (s == "kcl") return Strategy::kcl;
    if (s == "cacl") return Strategy::cacl;
    throw ConfigError("unknown strategy '" + s + "' (expected mlclap, kcl or cacl)");
}

// baseline: one language drawn from all K per instance.
// cacl: one non-English language per instance (English is always used).
enum class PlanMode { baseline, cacl };

/// Per-epoch language choice for every instance of a batch, aligned with
/// batch positions.
struct EpochLanguagePlan {
    PlanMode mode = PlanMode::baseline;
    std::vector<std::size_t> language;

    static EpochLanguagePlan draw(PlanMode mode, std::size_t n, std::size_t languages, Rng& rng) {
        if (mode == PlanMode::cacl && languages < 2) throw ConfigError("co-anchor plan needs at least 2 languages");
        if (languages < 1) throw ConfigError("plan needs at least 1 language");
        std::uniform_int_distribution<std::size_t> pick(mode == PlanMode::cacl ? 1 : 0, languages - 1);
        EpochLanguagePlan plan{mode, std::vector<std::size_t>(n)};
        for (auto& q : plan.language) q = pick(rng);
        return plan;
    }

    static EpochLanguagePlan constant(std::size_t n, std::size_t k, PlanMode mode = PlanMode::baseline) {
        return {mode, std::vector<std::size_t>(n, k)};
    }

    void validate(std::size_t languages) const {
        const std::size_t lo = mode == PlanMode::cacl ? 1 : 0;
        if (mode == PlanMode::cacl && languages < 2) throw ConfigError("co-anchor plan needs at least 2 languages");
        for (std::size_t q : language)
            if (q < lo || q >= languages) throw ConfigError("plan language index " + std::to_string(q) + " out of range");
    }

    EpochLanguagePlan slice(std::size_t offset, std::size_t count) const {
        return {mode, std::vector<std::size_t>(language.begin() + offset, language.begin() + offset + count)};
    }
};

struct LossOutput {
    double value = 0.0;
    WeightVector grad;
    std::size_t texts_encoded = 0;
};

namespace detail {

/// A list of encoded inputs with the activations kept for backprop.
struct EncodedSet {
    Tower tower = Tower::audio;
    std::vector<std::span<const double>> inputs;
    std::vector<Activation> acts;

    std::vector<Vec> embeddings() const {
        std::vector<Vec> out;
        out.reserve(acts.size());
        for (const auto& a : acts) out.push_back(a.out);
        return out;
    }
};

inline EncodedSet encode_set(const EncoderParams& p, Tower tower, std::vector<std::span<const double>> inputs) {
    EncodedSet s{tower, std::move(inputs), {}};
    s.acts.resize(s.inputs.size());
    for (std::size_t i = 0; i < s.inputs.size(); ++i) forward(p, tower, s.inputs[i], &s.acts[i]);
    return s;
}

inline void backprop_set(const EncoderParams& p, const EncodedSet& s, const std::vector<Vec>& d_emb, double scale,
                         std::span<double> grad) {
    Vec dy;
    for (std::size_t i = 0; i < s.inputs.size(); ++i) {
        dy = d_emb[i];
        for (double& v : dy) v *= scale;
        backward(p, s.tower, s.inputs[i], s.acts[i], dy, grad);
    }
}

inline EncodedSet encode_audio_batch(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch) {
    std::vector<std::span<const double>> in;
    for (std::size_t i : batch) in.push_back(c.audio_of(i));
    return encode_set(p, Tower::audio, std::move(in));
}

// Texts of the batch in language languages[b] for batch position b.
inline EncodedSet encode_text_batch(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                    std::span<const std::size_t> languages) {
    std::vector<std::span<const double>> in;
    for (std::size_t b = 0; b < batch.size(); ++b) in.push_back(c.text_of(batch[b], languages[b]));
    return encode_set(p, Tower::text, std::move(in));
}

inline EncodedSet encode_text_language(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                       std::size_t k) {
    std::vector<std::span<const double>> in;
    for (std::size_t i : batch) in.push_back(c.text_of(i, k));
    return encode_set(p, Tower::text, std::move(in));
}

struct UnitVectors {
    std::vector<Vec> unit;
    Vec norms;
};

inline UnitVectors to_unit(const std::vector<Vec>& xs) {
    UnitVectors u;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double n = norm(xs[i]);
        if (!(n > 0.0)) throw DegenerateInputError("zero-norm embedding", i);
        Vec v = xs[i];
        for (double& x : v) x /= n;
        u.unit.push_back(std::move(v));
        u.norms.push_back(n);
    }
    return u;
}

// d(loss)/d(x) from d(loss)/d(x/|x|).
inline Vec unit_backward(const Vec& unit, double n, const Vec& d_unit) {
    const double proj = dot(d_unit, unit);
    Vec out(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) out[i] = (d_unit[i] - proj * unit[i]) / n;
    return out;
}

struct SimilarityBlock {
    UnitVectors u, v;
    Matrix s;
};

inline SimilarityBlock similarity_block(const std::vector<Vec>& U, const std::vector<Vec>& V) {
    SimilarityBlock b{to_unit(U), to_unit(V), Matrix(U.size(), V.size())};
    for (std::size_t i = 0; i < U.size(); ++i)
        for (std::size_t j = 0; j < V.size(); ++j) b.s(i, j) = dot(b.u.unit[i], b.v.unit[j]);
    return b;
}

// Chains d(loss)/dS through cosine similarity onto both embedding lists.
inline void similarity_backward(const SimilarityBlock& b, const Matrix& ds, std::vector<Vec>& dU, std::vector<Vec>& dV) {
    const std::size_t n = b.s.rows(), m = b.s.cols();
    const std::size_t d = b.u.unit.empty() ? 0 : b.u.unit.front().size();
    std::vector<Vec> du_hat(n, Vec(d, 0.0)), dv_hat(m, Vec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double g = ds(i, j);
            if (g == 0.0) continue;
            axpy(g, b.v.unit[j], du_hat[i]);
            axpy(g, b.u.unit[i], dv_hat[j]);
        }
    dU.resize(n);
    dV.resize(m);
    for (std::size_t i = 0; i < n; ++i) dU[i] = unit_backward(b.u.unit[i], b.u.norms[i], du_hat[i]);
    for (std::size_t j = 0; j < m; ++j) dV[j] = unit_backward(b.v.unit[j], b.v.norms[j], dv_hat[j]);
}

// Symmetric InfoNCE on a square similarity matrix: rows are u->v queries,
// columns are v->u queries. Adds d(loss)/dS into ds when given.
inline double infonce_from_matrix(const Matrix& s, double tau, Matrix* ds) {
    const std::size_t n = s.rows();
    double value = 0.0;
    Vec scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scores[j] = s(i, j);
        const Vec lsm = log_softmax_row(scores, tau);
        value -= lsm[i];
        if (ds)
            for (std::size_t j = 0; j < n; ++j) (*ds)(i, j) += (std::exp(lsm[j]) - (i == j ? 1.0 : 0.0)) / tau;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scores[j] = s(j, i);
        const Vec lsm = log_softmax_row(scores, tau);
        value -= lsm[i];
        if (ds)
            for (std::size_t j = 0; j < n; ++j) (*ds)(j, i) += (std::exp(lsm[j]) - (i == j ? 1.0 : 0.0)) / tau;
    }
    return value;
}

struct PairLoss {
    double value = 0.0;
    std::vector<Vec> dU, dV;
};

inline PairLoss infonce_with_grad(const std::vector<Vec>& U, const std::vector<Vec>& V, double tau) {
    if (U.size() != V.size() || U.empty()) {
        throw DimensionError("infonce: embedding lists must be nonempty and equally long (" + std::to_string(U.size()) +
                             " vs " + std::to_string(V.size()) + ")");
    }
    const SimilarityBlock b = similarity_block(U, V);
    Matrix ds(U.size(), V.size());
    PairLoss out;
    out.value = infonce_from_matrix(b.s, tau, &ds);
    similarity_backward(b, ds, out.dU, out.dV);
    return out;
}

inline void check_batch(const Corpus& c, std::span<const std::size_t> batch) {
    if (batch.empty()) throw ConfigError("loss: empty batch");
    for (std::size_t i : batch)
        if (i >= c.size()) throw DimensionError("loss: batch index " + std::to_string(i) + " out of range");
}

} // namespace detail

/// Symmetric, unnormalized InfoNCE between paired embedding lists:
/// -sum_i log softmax_i(s(u_i, v.)/tau) - sum_i log softmax_i(s(v_i, u.)/tau).
inline double infonce_pair_loss(const std::vector<Vec>& U, const std::vector<Vec>& V, const LossConfig& cfg) {
    cfg.validate();
    if (U.size() != V.size() || U.empty()) throw DimensionError("infonce_pair_loss: size mismatch");
    return detail::infonce_from_matrix(detail::similarity_block(U, V).s, cfg.tau, nullptr);
}

/// Same loss for an already computed square similarity matrix.
inline double infonce_from_similarity(const Matrix& s, const LossConfig& cfg) {
    cfg.validate();
    if (s.rows() != s.cols() || s.rows() == 0) throw DimensionError("infonce_from_similarity: matrix must be square");
    return detail::infonce_from_matrix(s, cfg.tau, nullptr);
}

/// Random-language baseline: symmetric InfoNCE between audio and the one
/// planned text per instance, scaled by 1/(2N).
inline LossOutput mlclap_loss(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                              const EpochLanguagePlan& plan, const LossConfig& cfg) {
    cfg.validate();
    detail::check_batch(c, batch);
    if (plan.mode != PlanMode::baseline) throw ConfigError("mlclap_loss needs a baseline-mode plan");
    if (plan.language.size() != batch.size()) throw ConfigError("mlclap_loss: plan length does not match batch size");
    plan.validate(c.languages());

    const auto audio = detail::encode_audio_batch(p, c, batch);
    const auto text = detail::encode_text_batch(p, c, batch, plan.language);
    const auto pl = detail::infonce_with_grad(audio.embeddings(), text.embeddings(), cfg.tau);
    const double scale = 1.0 / (2.0 * static_cast<double>(batch.size()));

    LossOutput out{pl.value * scale, WeightVector(p.flat().size(), 0.0), batch.size()};
    detail::backprop_set(p, audio, pl.dU, scale, out.grad);
    detail::backprop_set(p, text, pl.dV, scale, out.grad);
    return out;
}

/// 1-to-K objective: for every language k, symmetric InfoNCE between audio
/// and the language-k texts (negatives drawn within language k), scaled by
/// 1/(2NK).
inline LossOutput kcl_loss(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                           const LossConfig& cfg) {
    cfg.validate();
    detail::check_batch(c, batch);
    const std::size_t nk = c.languages();
    const auto audio = detail::encode_audio_batch(p, c, batch);
    const auto a_emb = audio.embeddings();
    const double scale = 1.0 / (2.0 * static_cast<double>(batch.size() * nk));

    LossOutput out{0.0, WeightVector(p.flat().size(), 0.0), batch.size() * nk};
    std::vector<Vec> d_audio(batch.size(), Vec(p.arch().d_embed, 0.0));
    double total = 0.0;
    for (std::size_t k = 0; k < nk; ++k) {
        const auto text = detail::encode_text_language(p, c, batch, k);
        const auto pl = detail::infonce_with_grad(a_emb, text.embeddings(), cfg.tau);
        total += pl.value;
        for (std::size_t b = 0; b < batch.size(); ++b) axpy(1.0, pl.dU[b], d_audio[b]);
        detail::backprop_set(p, text, pl.dV, scale, out.grad);
    }
    detail::backprop_set(p, audio, d_audio, scale, out.grad);
    out.value = total * scale;
    return out;
}

/// Audio-English co-anchor objective over triplets (audio, English,
/// planned language): three symmetric InfoNCE terms scaled by 1/(6N).
inline LossOutput cacl_loss(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                            const EpochLanguagePlan& plan, const LossConfig& cfg) {
    cfg.validate();
    detail::check_batch(c, batch);
    if (c.languages() < 2) throw ConfigError("cacl_loss needs at least 2 languages");
    if (plan.mode != PlanMode::cacl) throw ConfigError("cacl_loss needs a cacl-mode plan");
    if (plan.language.size() != batch.size()) throw ConfigError("cacl_loss: plan length does not match batch size");
    plan.validate(c.languages());

    const auto audio = detail::encode_audio_batch(p, c, batch);
    const auto eng = detail::encode_text_language(p, c, batch, 0);
    const auto other = detail::encode_text_batch(p, c, batch, plan.language);
    const auto a = audio.embeddings(), e = eng.embeddings(), t = other.embeddings();

    const auto ae = detail::infonce_with_grad(a, e, cfg.tau);
    const auto at = detail::infonce_with_grad(a, t, cfg.tau);
    const auto et = detail::infonce_with_grad(e, t, cfg.tau);
    const double scale = 1.0 / (6.0 * static_cast<double>(batch.size()));

    std::vector<Vec> da = ae.dU, de = ae.dV, dt = at.dV;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        axpy(1.0, at.dU[b], da[b]);
        axpy(1.0, et.dU[b], de[b]);
        axpy(1.0, et.dV[b], dt[b]);
    }
    LossOutput out{(ae.value + at.value + et.value) * scale, WeightVector(p.flat().size(), 0.0), 2 * batch.size()};
    detail::backprop_set(p, audio, da, scale, out.grad);
    detail::backprop_set(p, eng, de, scale, out.grad);
    detail::backprop_set(p, other, dt, scale, out.grad);
    return out;
}

/// Dispatch on strategy. `plan` is ignored for kcl.
inline LossOutput strategy_loss(Strategy s, const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                const EpochLanguagePlan& plan, const LossConfig& cfg) {
    switch (s) {
        case Strategy::mlclap: return mlclap_loss(p, c, batch, plan, cfg);
        case Strategy::kcl: return kcl_loss(p, c, batch, cfg);
        case Strategy::cacl: return cacl_loss(p, c, batch, plan, cfg);
    }
    throw ConfigError("unknown strategy");
}

inline PlanMode plan_mode_for(Strategy s) { return s == Strategy::cacl ? PlanMode::cacl : PlanMode::baseline; }

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

/// Central differences of `f` at `w`, coordinate by coordinate, against the
/// analytic gradient. Relative error uses max(|analytic|, |numeric|, 1e-8).
template <typename Fn>
GradCheckReport check_gradient(Fn&& f, const Vec& w, const Vec& analytic, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be positive");
    if (analytic.size() != w.size()) throw DimensionError("grad_check: gradient length mismatch");
    GradCheckReport r;
    Vec probe = w;
    for (std::size_t j = 0; j < w.size(); ++j) {
        probe[j] = w[j] + epsilon;
        const double up = f(probe);
        probe[j] = w[j] - epsilon;
        const double down = f(probe);
        probe[j] = w[j];
        const double numeric = (up - down) / (2.0 * epsilon);
        const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic[j] - numeric) / denom;
        if (j == 0 || rel > r.max_rel_error) r = {rel, j, analytic[j], numeric};
    }
    return r;
}

inline GradCheckReport grad_check(Strategy s, const EncoderParams& p, const Corpus& c, std::span<const std::size_t> batch,
                                  const EpochLanguagePlan& plan, const LossConfig& cfg, double epsilon) {
    const LossOutput analytic = strategy_loss(s, p, c, batch, plan, cfg);
    auto f = [&](const Vec& w) { return strategy_loss(s, EncoderParams(p.arch(), w), c, batch, plan, cfg).value; };
    return check_gradient(f, p.flat(), analytic.grad, epsilon);
}

} // namespace polyalign
