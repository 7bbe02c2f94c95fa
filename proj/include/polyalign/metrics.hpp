#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "numerics.hpp"

namespace polyalign {

enum class Direction { t2a, a2t };

inline const char* direction_name(Direction d) { return d == Direction::t2a ? "T2A" : "A2T"; }

/// ranks[i][k]: 1-based position of the true item for query (i, k).
struct RankTable {
    std::size_t candidates = 0;
    std::vector<std::vector<std::size_t>> ranks;

    std::size_t instances() const noexcept { return ranks.size(); }
    std::size_t languages() const noexcept { return ranks.empty() ? 0 : ranks.front().size(); }
};

/// 1-based rank of `target` among `scores` sorted descending, ties broken by
/// ascending candidate index.
inline std::size_t rank_of(std::span<const double> scores, std::size_t target) {
    std::size_t r = 1;
    const double s = scores[target];
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > s || (scores[j] == s && j < target)) ++r;
    return r;
}

/// T2A: query text (i, k) against every audio of the split, rank of audio i.
/// A2T: query audio i against the language-k texts of the split, rank of
/// text (i, k).
inline RankTable rank_table(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> split,
                            Direction dir) {
    if (split.empty()) throw ConfigError("rank_table: evaluation split is empty");
    const std::size_t n = split.size(), nk = c.languages();
    std::vector<Vec> audio;
    for (std::size_t b = 0; b < n; ++b) audio.push_back(normalized(encode_audio(p, c.audio_of(split[b])), split[b]));
    std::vector<std::vector<Vec>> text(nk);
    for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t b = 0; b < n; ++b) text[k].push_back(normalized(encode_text(p, c.text_of(split[b], k)), split[b]));

    RankTable t{n, std::vector<std::vector<std::size_t>>(n, std::vector<std::size_t>(nk))};
    Vec scores(n);
    for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t j = 0; j < n; ++j)
                scores[j] = dir == Direction::t2a ? dot(text[k][b], audio[j]) : dot(audio[b], text[k][j]);
            t.ranks[b][k] = rank_of(scores, b);
        }
    return t;
}

/// Per-language fraction of queries with rank <= k; last entry is the
/// average over languages.
inline Vec recall_at_k(const RankTable& t, std::size_t k) {
    if (k < 1) throw ConfigError("recall_at_k: k must be at least 1");
    const std::size_t nk = t.languages();
    Vec out(nk + 1, 0.0);
    for (std::size_t l = 0; l < nk; ++l) {
        std::size_t hits = 0;
        for (const auto& row : t.ranks) hits += row[l] <= k ? 1 : 0;
        out[l] = static_cast<double>(hits) / static_cast<double>(t.instances());
        out[nk] += out[l] / static_cast<double>(nk);
    }
    return out;
}

/// Mean over queries of 1/rank when rank <= 10, else 0 (single relevant
/// item per query). Last entry is the average over languages.
inline Vec map10(const RankTable& t) {
    const std::size_t nk = t.languages();
    Vec out(nk + 1, 0.0);
    for (std::size_t l = 0; l < nk; ++l) {
        double s = 0.0;
        for (const auto& row : t.ranks) s += row[l] <= 10 ? 1.0 / static_cast<double>(row[l]) : 0.0;
        out[l] = s / static_cast<double>(t.instances());
        out[nk] += out[l] / static_cast<double>(nk);
    }
    return out;
}

/// (1/NK) sum_i sum_k (rank_ik - mean_k rank_ik)^2.
inline double mean_rank_variance(const RankTable& t) {
    const std::size_t nk = t.languages();
    if (nk == 0) return 0.0;
    double total = 0.0;
    for (const auto& row : t.ranks) {
        double mean = 0.0;
        for (std::size_t r : row) mean += static_cast<double>(r);
        mean /= static_cast<double>(nk);
        for (std::size_t r : row) total += (static_cast<double>(r) - mean) * (static_cast<double>(r) - mean);
    }
    return total / static_cast<double>(t.instances() * nk);
}

struct GapResult {
    Vec vector;
    double norm = 0.0;
};

namespace detail {

inline void check_language(const Corpus& c, std::span<const std::size_t> split, std::size_t k) {
    if (c.languages() < 2) throw ConfigError("embedding gap needs at least 2 languages");
    if (k == 0 || k >= c.languages()) throw ConfigError("embedding gap: language index must be in [1, K)");
    if (split.empty()) throw ConfigError("embedding gap: evaluation split is empty");
}

} // namespace detail

/// Mean English text embedding minus mean language-k text embedding.
inline GapResult embedding_gap(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> split, std::size_t k) {
    detail::check_language(c, split, k);
    Vec gap(p.arch().d_embed, 0.0);
    for (std::size_t i : split) {
        axpy(1.0, encode_text(p, c.text_of(i, 0)), gap);
        axpy(-1.0, encode_text(p, c.text_of(i, k)), gap);
    }
    for (double& v : gap) v /= static_cast<double>(split.size());
    const double n = norm(gap);
    return {std::move(gap), n};
}

/// Mean over instances of ||g(t_i0) - g(t_ik)||.
inline double embedding_distance(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> split, std::size_t k) {
    detail::check_language(c, split, k);
    double s = 0.0;
    for (std::size_t i : split) s += distance(encode_text(p, c.text_of(i, 0)), encode_text(p, c.text_of(i, k)));
    return s / static_cast<double>(split.size());
}

struct DirectionMetrics {
    Vec r_at_1, r_at_5, map10;  // per language, then the average
};

struct MetricsReport {
    std::vector<std::string> languages;
    DirectionMetrics t2a, a2t;
    Vec gap_norm;  // per language; entry 0 (English) is 0
    Vec dis;
    double mrv = 0.0;  // from the T2A rank table

    // Average R@1 over languages and both directions.
    double avg_r_at_1() const {
        const std::size_t nk = languages.size();
        return 0.5 * (t2a.r_at_1[nk] + a2t.r_at_1[nk]);
    }
};

inline MetricsReport evaluate(const EncoderParams& p, const Corpus& c, std::span<const std::size_t> split) {
    MetricsReport r;
    r.languages = c.language_names;
    const auto t2a = rank_table(p, c, split, Direction::t2a);
    const auto a2t = rank_table(p, c, split, Direction::a2t);
    r.t2a = {recall_at_k(t2a, 1), recall_at_k(t2a, 5), map10(t2a)};
    r.a2t = {recall_at_k(a2t, 1), recall_at_k(a2t, 5), map10(a2t)};
    r.mrv = mean_rank_variance(t2a);
    r.gap_norm.assign(c.languages(), 0.0);
    r.dis.assign(c.languages(), 0.0);
    for (std::size_t k = 1; k < c.languages(); ++k) {
        r.gap_norm[k] = embedding_gap(p, c, split, k).norm;
        r.dis[k] = embedding_distance(p, c, split, k);
    }
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    using nlohmann::json;
    auto dir = [&](const DirectionMetrics& d) {
        json j = json::object();
        for (std::size_t k = 0; k <= r.languages.size(); ++k) {
            const std::string name = k < r.languages.size() ? r.languages[k] : "avg";
            j[name] = {{"r_at_1", d.r_at_1[k]}, {"r_at_5", d.r_at_5[k]}, {"map10", d.map10[k]}};
        }
        return j;
    };
    json consistency = json::object();
    for (std::size_t k = 1; k < r.languages.size(); ++k) consistency[r.languages[k]] = {{"gap", r.gap_norm[k]}, {"dis", r.dis[k]}};
    return {{"languages", r.languages}, {"T2A", dir(r.t2a)}, {"A2T", dir(r.a2t)},
            {"consistency", consistency}, {"mrv", r.mrv}, {"avg_r_at_1", r.avg_r_at_1()}};
}

/// One row per (language, direction, metric).
inline std::string to_csv(const MetricsReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "language,direction,metric,value\n";
    const std::size_t nk = r.languages.size();
    for (Direction d : {Direction::t2a, Direction::a2t}) {
        const auto& m = d == Direction::t2a ? r.t2a : r.a2t;
        for (std::size_t k = 0; k <= nk; ++k) {
            const std::string name = k < nk ? r.languages[k] : "avg";
            os << name << ',' << direction_name(d) << ",r_at_1," << m.r_at_1[k] << '\n';
            os << name << ',' << direction_name(d) << ",r_at_5," << m.r_at_5[k] << '\n';
            os << name << ',' << direction_name(d) << ",map10," << m.map10[k] << '\n';
        }
    }
    for (std::size_t k = 1; k < nk; ++k) {
        os << r.languages[k] << ",E2T,gap," << r.gap_norm[k] << '\n';
        os << r.languages[k] << ",E2T,dis," << r.dis[k] << '\n';
    }
    os << "all,T2A,mrv," << r.mrv << '\n';
    return os.str();
}

} // namespace polyalign
