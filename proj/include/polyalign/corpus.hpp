#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "binio.hpp"
#include "error.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace polyalign {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

struct CorpusConfig {
    std::size_t n_instances = 200;
    std::size_t n_languages = 4;
    std::size_t d_latent = 16;
    std::size_t d_audio = 24;
    std::size_t d_text = 24;
    double audio_noise_sigma = 0.3;
    std::vector<double> per_language_noise_sigma;  // empty: 0.5 for every language
    double language_offset_scale = 1.0;
    std::uint64_t seed = 0;

    double language_sigma(std::size_t k) const {
        return per_language_noise_sigma.empty() ? 0.5 : per_language_noise_sigma.at(k);
    }

    void validate() const {
        if (n_instances < 2) throw ConfigError("corpus.n_instances must be at least 2");
        if (n_languages < 1) throw ConfigError("corpus.n_languages must be at least 1");
        if (d_latent < 1 || d_audio < 1 || d_text < 1) throw ConfigError("corpus dims must be at least 1");
        if (!(audio_noise_sigma >= 0.0)) throw ConfigError("corpus.audio_noise_sigma must be nonnegative");
        if (!(language_offset_scale >= 0.0)) throw ConfigError("corpus.language_offset_scale must be nonnegative");
        if (!per_language_noise_sigma.empty()) {
            if (per_language_noise_sigma.size() != n_languages) {
                throw ConfigError("corpus.per_language_noise_sigma must have n_languages entries");
            }
            for (double s : per_language_noise_sigma)
                if (!(s >= 0.0)) throw ConfigError("corpus.per_language_noise_sigma entries must be nonnegative");
        }
    }
};

inline std::string default_language_name(std::size_t k) {
    static const char* names[] = {"eng", "fra", "deu", "spa", "nld", "cat", "jpn", "zho"};
    return k < 8 ? names[k] : "lang" + std::to_string(k);
}

/// N instances, each one audio feature vector and one text feature vector
/// per language. Language 0 is the English anchor.
struct Corpus {
    Matrix audio;  // N x d_audio
    Matrix text;   // (N*K) x d_text, row i*K + k
    std::vector<std::string> language_names;
    std::vector<Split> splits;

    std::size_t size() const noexcept { return audio.rows(); }
    std::size_t languages() const noexcept { return language_names.size(); }
    std::size_t d_audio() const noexcept { return audio.cols(); }
    std::size_t d_text() const noexcept { return text.cols(); }

    std::span<const double> audio_of(std::size_t i) const { return audio.row(i); }
    std::span<const double> text_of(std::size_t i, std::size_t k) const { return text.row(i * languages() + k); }

    std::vector<std::size_t> instances(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> all_instances() const {
        std::vector<std::size_t> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
        return out;
    }

    bool operator==(const Corpus&) const = default;
};

/// Latent-factor model: z ~ N(0, I), audio = A z + noise,
/// text_k = T z + scale * o_k + noise_k, with A, T, o_k fixed per seed.
inline Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Rng rng = named_stream(cfg.seed, "corpus");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_latent));

    Matrix amap(cfg.d_audio, cfg.d_latent), tmap(cfg.d_text, cfg.d_latent), offsets(cfg.n_languages, cfg.d_text);
    for (std::size_t r = 0; r < amap.rows(); ++r)
        for (double& v : amap.row(r)) v = gauss(rng) * map_scale;
    for (std::size_t r = 0; r < tmap.rows(); ++r)
        for (double& v : tmap.row(r)) v = gauss(rng) * map_scale;
    for (std::size_t k = 0; k < offsets.rows(); ++k)
        for (double& v : offsets.row(k)) v = gauss(rng);

    const std::size_t n = cfg.n_instances, nk = cfg.n_languages;
    Corpus c;
    c.audio = Matrix(n, cfg.d_audio);
    c.text = Matrix(n * nk, cfg.d_text);
    for (std::size_t k = 0; k < nk; ++k) c.language_names.push_back(default_language_name(k));
    c.splits.assign(n, Split::train);

    Vec z(cfg.d_latent);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : z) v = gauss(rng);
        auto a = c.audio.row(i);
        for (std::size_t r = 0; r < cfg.d_audio; ++r) a[r] = dot(amap.row(r), z) + cfg.audio_noise_sigma * gauss(rng);
        Vec tz(cfg.d_text);
        for (std::size_t r = 0; r < cfg.d_text; ++r) tz[r] = dot(tmap.row(r), z);
        for (std::size_t k = 0; k < nk; ++k) {
            auto t = c.text.row(i * nk + k);
            const double sigma = cfg.language_sigma(k);
            for (std::size_t r = 0; r < cfg.d_text; ++r)
                t[r] = tz[r] + cfg.language_offset_scale * offsets(k, r) + sigma * gauss(rng);
        }
    }
    return c;
}

/// Seeded shuffle, then the first floor(f * N) (plus distributed remainder)
/// go to train, the next to val, the rest to test.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be nonnegative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (!(fractions[0] > 0.0)) throw ConfigError("train fraction must be positive");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = fractions[s] * static_cast<double>(n);
        counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[s] = exact - static_cast<double>(counts[s]);
        assigned += counts[s];
    }
    // remainder to the largest fractional parts, earlier split first on ties
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < 3; ++s)
            if (rem[s] > rem[best]) best = s;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    while (assigned > n) {  // only reachable through the 1e-9 slack
        for (std::size_t s = 3; s-- > 0;)
            if (counts[s] > 0) {
                --counts[s];
                --assigned;
                break;
            }
    }
    return counts;
}

inline Corpus split_corpus(Corpus corpus, const std::array<double, 3>& fractions, std::uint64_t seed) {
    const auto counts = split_counts(corpus.size(), fractions);
    std::vector<std::size_t> order = corpus.all_instances();
    Rng rng = named_stream(seed, "split");
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t c = 0; c < counts[s]; ++c) corpus.splits[order[pos++]] = static_cast<Split>(s);
    return corpus;
}

// Corpus file: "ALNC", u32 version, u64 N, K, d_audio, d_text, K names
// (u32 length + bytes), then per instance audio f64[d_audio] followed by K
// text vectors f64[d_text], then N split tags (u8). Little-endian.
inline constexpr std::uint32_t kCorpusVersion = 1;

inline binio::Writer encode_corpus(const Corpus& c) {
    binio::Writer w;
    w.put_bytes("ALNC", 4);
    w.put<std::uint32_t>(kCorpusVersion);
    w.put<std::uint64_t>(c.size());
    w.put<std::uint64_t>(c.languages());
    w.put<std::uint64_t>(c.d_audio());
    w.put<std::uint64_t>(c.d_text());
    for (const auto& name : c.language_names) w.put_string(name);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (double v : c.audio_of(i)) w.put<double>(v);
        for (std::size_t k = 0; k < c.languages(); ++k)
            for (double v : c.text_of(i, k)) w.put<double>(v);
    }
    for (Split s : c.splits) w.put<std::uint8_t>(static_cast<std::uint8_t>(s));
    return w;
}

inline void save_corpus(const Corpus& c, const std::string& path) { encode_corpus(c).write_file(path); }

inline Corpus decode_corpus(binio::Reader& r) {
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::string(magic, 4) != "ALNC") throw FormatError(FormatErrorKind::bad_magic, "not a corpus file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCorpusVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, "unsupported corpus version " + std::to_string(version));
    }
    const auto n = r.get<std::uint64_t>();
    const auto k = r.get<std::uint64_t>();
    const auto da = r.get<std::uint64_t>();
    const auto dt = r.get<std::uint64_t>();
    if (n == 0 || k == 0 || da == 0 || dt == 0) throw FormatError(FormatErrorKind::malformed, "corpus header has a zero dimension");
    Corpus c;
    for (std::uint64_t l = 0; l < k; ++l) c.language_names.push_back(r.get_string());
    const std::uint64_t payload = n * (da + k * dt) * sizeof(double) + n;
    if (r.remaining() < payload) throw FormatError(FormatErrorKind::truncated, "corpus file truncated");
    c.audio = Matrix(n, da);
    c.text = Matrix(n * k, dt);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : c.audio.row(i)) v = r.get<double>();
        for (std::size_t l = 0; l < k; ++l)
            for (double& v : c.text.row(i * k + l)) v = r.get<double>();
    }
    c.splits.resize(n);
    for (auto& s : c.splits) {
        const auto tag = r.get<std::uint8_t>();
        if (tag > 2) throw FormatError(FormatErrorKind::malformed, "invalid split tag " + std::to_string(tag));
        s = static_cast<Split>(tag);
    }
    return c;
}

inline Corpus load_corpus(const std::string& path) {
    auto r = binio::Reader::from_file(path);
    return decode_corpus(r);
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

// Reads numeric CSV rows; a first row whose leading field is not numeric is
// treated as a header.
inline std::vector<std::vector<double>> read_numeric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_fields(line);
        std::vector<double> row(fields.size());
        bool ok = true;
        for (std::size_t f = 0; f < fields.size() && ok; ++f) ok = parse_double(fields[f], row[f]);
        if (!ok) {
            if (rows.empty() && lineno == 1) continue;
            throw FormatError(FormatErrorKind::malformed, path + ":" + std::to_string(lineno) + ": non-numeric field");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::size_t as_index(double v, const std::string& what) {
    if (!(v >= 0.0) || v != std::floor(v)) throw FormatError(FormatErrorKind::malformed, what + " must be a nonnegative integer");
    return static_cast<std::size_t>(v);
}

} // namespace detail

/// Imports externally computed features. Audio CSV rows are
/// `instance,v1,...,vd`; text CSV rows are `instance,language,v1,...,vd`
/// with language 0 the English anchor. Every (instance, language) must
/// appear exactly once. All instances are tagged train.
inline Corpus import_csv(const std::string& audio_csv, const std::string& text_csv) {
    const auto arows = detail::read_numeric_csv(audio_csv);
    const auto trows = detail::read_numeric_csv(text_csv);
    if (arows.empty() || trows.empty()) throw FormatError(FormatErrorKind::malformed, "empty CSV input");
    if (arows.front().size() < 2 || trows.front().size() < 3) throw FormatError(FormatErrorKind::malformed, "CSV rows too short");
    const std::size_t n = arows.size();
    const std::size_t da = arows.front().size() - 1;
    const std::size_t dt = trows.front().size() - 2;
    std::size_t k = 0;
    for (const auto& r : trows) k = std::max(k, detail::as_index(r.at(1), "language") + 1);
    if (trows.size() != n * k) {
        throw FormatError(FormatErrorKind::malformed, "text CSV must have one row per (instance, language): expected " +
                                                          std::to_string(n * k) + ", got " + std::to_string(trows.size()));
    }
    Corpus c;
    c.audio = Matrix(n, da);
    c.text = Matrix(n * k, dt);
    for (std::size_t l = 0; l < k; ++l) c.language_names.push_back(default_language_name(l));
    c.splits.assign(n, Split::train);
    std::vector<bool> seen_a(n, false), seen_t(n * k, false);
    for (const auto& r : arows) {
        if (r.size() != da + 1) throw FormatError(FormatErrorKind::malformed, "audio CSV rows have inconsistent width");
        const auto i = detail::as_index(r[0], "instance");
        if (i >= n || seen_a[i]) throw FormatError(FormatErrorKind::malformed, "audio CSV instance ids must be 0..N-1, each once");
        seen_a[i] = true;
        std::copy(r.begin() + 1, r.end(), c.audio.row(i).begin());
    }
    for (const auto& r : trows) {
        if (r.size() != dt + 2) throw FormatError(FormatErrorKind::malformed, "text CSV rows have inconsistent width");
        const auto i = detail::as_index(r[0], "instance");
        const auto l = detail::as_index(r[1], "language");
        if (i >= n || seen_t[i * k + l]) throw FormatError(FormatErrorKind::malformed, "duplicate or out-of-range text row");
        seen_t[i * k + l] = true;
        std::copy(r.begin() + 2, r.end(), c.text.row(i * k + l).begin());
    }
    return c;
}

} // namespace polyalign
