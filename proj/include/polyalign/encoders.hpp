#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binio.hpp"
#include "error.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace polyalign {

/// Shape of both projection heads. `hidden == 0` means a single affine map,
/// otherwise affine -> tanh -> affine.
struct Arch {
    std::size_t d_audio = 0;
    std::size_t d_text = 0;
    std::size_t d_embed = 0;
    std::size_t hidden = 0;

    bool operator==(const Arch&) const = default;

    void validate() const {
        if (d_audio == 0 || d_text == 0 || d_embed == 0) {
            throw ConfigError("architecture dims must be positive (d_audio=" + std::to_string(d_audio) +
                              ", d_text=" + std::to_string(d_text) + ", d_embed=" + std::to_string(d_embed) + ")");
        }
    }
};

enum class Tower { audio, text };

namespace detail {

inline std::size_t head_size(std::size_t in, std::size_t hidden, std::size_t out) {
    return hidden == 0 ? out * in + out : hidden * in + hidden + out * hidden + out;
}

} // namespace detail

inline std::size_t audio_param_count(const Arch& a) { return detail::head_size(a.d_audio, a.hidden, a.d_embed); }
inline std::size_t text_param_count(const Arch& a) { return detail::head_size(a.d_text, a.hidden, a.d_embed); }
inline std::size_t param_count(const Arch& a) { return audio_param_count(a) + text_param_count(a); }

using WeightVector = Vec;

/// Parameters of both heads stored as one flat vector: theta (audio head)
/// followed by phi (text head). Within a head the layout is W1 (row-major,
/// out x in), b1 and, with a hidden layer, W2 and b2.
class EncoderParams {
public:
    EncoderParams() = default;
    EncoderParams(Arch arch, WeightVector w) : arch_(arch), w_(std::move(w)) {
        arch_.validate();
        if (w_.size() != param_count(arch_)) {
            throw DimensionError("parameter vector has length " + std::to_string(w_.size()) + ", architecture needs " +
                                 std::to_string(param_count(arch_)));
        }
    }

    static EncoderParams zeros(Arch arch) { return EncoderParams(arch, WeightVector(param_count(arch), 0.0)); }

    const Arch& arch() const noexcept { return arch_; }
    const WeightVector& flat() const noexcept { return w_; }
    WeightVector& flat() noexcept { return w_; }

    std::span<const double> theta() const { return {w_.data(), audio_param_count(arch_)}; }
    std::span<const double> phi() const { return {w_.data() + audio_param_count(arch_), text_param_count(arch_)}; }
    std::span<double> theta() { return {w_.data(), audio_param_count(arch_)}; }
    std::span<double> phi() { return {w_.data() + audio_param_count(arch_), text_param_count(arch_)}; }

    std::span<const double> head(Tower t) const { return t == Tower::audio ? theta() : phi(); }
    std::size_t head_offset(Tower t) const { return t == Tower::audio ? 0 : audio_param_count(arch_); }
    std::size_t input_dim(Tower t) const { return t == Tower::audio ? arch_.d_audio : arch_.d_text; }

    bool operator==(const EncoderParams&) const = default;

private:
    Arch arch_;
    WeightVector w_;
};

inline WeightVector flatten(const EncoderParams& p) { return p.flat(); }
inline EncoderParams unflatten(const Arch& arch, WeightVector w) { return EncoderParams(arch, std::move(w)); }

/// Glorot-uniform weights, zero biases.
inline EncoderParams init_params(std::uint64_t seed, const Arch& arch) {
    arch.validate();
    Rng rng = named_stream(seed, "init");
    EncoderParams p = EncoderParams::zeros(arch);
    auto fill = [&](std::span<double> block, std::size_t in, std::size_t out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (std::size_t i = 0; i < out * in; ++i) block[i] = u(rng);
    };
    for (Tower t : {Tower::audio, Tower::text}) {
        std::span<double> h = t == Tower::audio ? p.theta() : p.phi();
        const std::size_t in = p.input_dim(t);
        if (arch.hidden == 0) {
            fill(h, in, arch.d_embed);
        } else {
            fill(h, in, arch.hidden);
            fill(h.subspan(arch.hidden * in + arch.hidden), arch.hidden, arch.d_embed);
        }
    }
    return p;
}

/// Forward-pass intermediates needed by backward().
struct Activation {
    Vec hidden;  // post-tanh, empty for affine heads
    Vec out;
};

namespace detail {

// y = W x + b with W stored row-major (out x in) at w[0..), b right after.
inline void affine(std::span<const double> w, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<double> y) {
    const double* b = w.data() + out * in;
    for (std::size_t r = 0; r < out; ++r) {
        double s = b[r];
        const double* row = w.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

// Accumulates dW += dy x^T, db += dy into g; returns dx when requested.
inline void affine_backward(std::span<const double> w, std::size_t in, std::size_t out, std::span<const double> x,
                            std::span<const double> dy, std::span<double> g, Vec* dx) {
    for (std::size_t r = 0; r < out; ++r) {
        const double d = dy[r];
        if (d == 0.0) continue;
        double* grow = g.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) grow[c] += d * x[c];
        g[out * in + r] += d;
    }
    if (dx) {
        dx->assign(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double* row = w.data() + r * in;
            for (std::size_t c = 0; c < in; ++c) (*dx)[c] += row[c] * dy[r];
        }
    }
}

} // namespace detail

inline Vec forward(const EncoderParams& p, Tower tower, std::span<const double> x, Activation* cache = nullptr) {
    const std::size_t in = p.input_dim(tower);
    if (x.size() != in) {
        throw DimensionError(std::string(tower == Tower::audio ? "audio" : "text") + " feature has dimension " +
                             std::to_string(x.size()) + ", encoder expects " + std::to_string(in));
    }
    const Arch& a = p.arch();
    const auto h = p.head(tower);
    Vec out(a.d_embed);
    if (a.hidden == 0) {
        detail::affine(h, in, a.d_embed, x, out);
        if (cache) cache->hidden.clear();
    } else {
        Vec hid(a.hidden);
        detail::affine(h, in, a.hidden, x, hid);
        for (double& v : hid) v = std::tanh(v);
        detail::affine(h.subspan(a.hidden * in + a.hidden), a.hidden, a.d_embed, hid, out);
        if (cache) cache->hidden = std::move(hid);
    }
    if (cache) cache->out = out;
    return out;
}

inline Vec encode_audio(const EncoderParams& p, std::span<const double> a) { return forward(p, Tower::audio, a); }
inline Vec encode_text(const EncoderParams& p, std::span<const double> t) { return forward(p, Tower::text, t); }

/// Accumulates d(loss)/d(params) into `grad` (full flat length) given
/// d(loss)/d(embedding) for one encoded input.
inline void backward(const EncoderParams& p, Tower tower, std::span<const double> x, const Activation& act,
                     std::span<const double> dy, std::span<double> grad) {
    const Arch& a = p.arch();
    const std::size_t in = p.input_dim(tower);
    const auto h = p.head(tower);
    auto g = grad.subspan(p.head_offset(tower), h.size());
    if (a.hidden == 0) {
        detail::affine_backward(h, in, a.d_embed, x, dy, g, nullptr);
        return;
    }
    const std::size_t off2 = a.hidden * in + a.hidden;
    Vec dh;
    detail::affine_backward(h.subspan(off2), a.hidden, a.d_embed, act.hidden, dy, g.subspan(off2), &dh);
    for (std::size_t i = 0; i < a.hidden; ++i) dh[i] *= 1.0 - act.hidden[i] * act.hidden[i];
    detail::affine_backward(h, in, a.hidden, x, dh, g, nullptr);
}

inline double weight_distance(const EncoderParams& p1, const EncoderParams& p2) {
    if (!(p1.arch() == p2.arch())) throw DimensionError("weight_distance: architecture mismatch");
    return distance(p1.flat(), p2.flat());
}

// Checkpoint: "ALNP", u32 version, u64 d_audio, d_text, d_embed, hidden,
// u64 parameter count, f64[count]. Little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline binio::Writer encode_checkpoint(const EncoderParams& p) {
    binio::Writer w;
    w.put_bytes("ALNP", 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(p.arch().d_audio);
    w.put<std::uint64_t>(p.arch().d_text);
    w.put<std::uint64_t>(p.arch().d_embed);
    w.put<std::uint64_t>(p.arch().hidden);
    w.put<std::uint64_t>(p.flat().size());
    for (double v : p.flat()) w.put<double>(v);
    return w;
}

inline void save_checkpoint(const EncoderParams& p, const std::string& path) { encode_checkpoint(p).write_file(path); }

inline EncoderParams decode_checkpoint(binio::Reader& r) {
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::string(magic, 4) != "ALNP") throw FormatError(FormatErrorKind::bad_magic, "not a parameter checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, "unsupported checkpoint version " + std::to_string(version));
    }
    Arch arch;
    arch.d_audio = r.get<std::uint64_t>();
    arch.d_text = r.get<std::uint64_t>();
    arch.d_embed = r.get<std::uint64_t>();
    arch.hidden = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (arch.d_audio == 0 || arch.d_text == 0 || arch.d_embed == 0 || n != param_count(arch)) {
        throw FormatError(FormatErrorKind::malformed, "checkpoint header is inconsistent");
    }
    if (r.remaining() < n * sizeof(double)) throw FormatError(FormatErrorKind::truncated, "checkpoint truncated");
    WeightVector w(n);
    for (auto& v : w) v = r.get<double>();
    return EncoderParams(arch, std::move(w));
}

inline EncoderParams load_checkpoint(const std::string& path) {
    auto r = binio::Reader::from_file(path);
    return decode_checkpoint(r);
}

} // namespace polyalign
