#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "encoders.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "theory.hpp"

namespace polyalign {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read as size_t");

struct TrainSection {
    Strategy strategy = Strategy::kcl;
    std::size_t epochs = 30;
    std::size_t batch_size = 0;  // 0: full training split
};

struct EvaluateSection {
    std::optional<std::string> checkpoint;
    Split split = Split::test;
};

struct AdamCheckSection {
    std::size_t configs = 10;
};

struct GradCheckSection {
    std::vector<Strategy> strategies{Strategy::mlclap, Strategy::kcl, Strategy::cacl};
    std::size_t seeds = 20;
    std::size_t batch = 4;
    double epsilon = 1e-6;
    double tolerance = 1e-4;
};

struct CompareSection {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<Strategy> strategies{Strategy::mlclap, Strategy::cacl, Strategy::kcl};
    std::array<double, 3> split{0.5, 0.0, 0.5};
    OptimizerConfig optimizer = OptimizerConfig::of(OptimizerKind::adam, 3e-3);
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    Split eval_split = Split::test;
};

/// Everything a command can read from a config file. Only
/// corpus.n_instances and corpus.n_languages are required.
struct Config {
    std::uint64_t seed = 0;
    CorpusConfig corpus;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    std::optional<std::string> corpus_path;  // resolved against base_dir
    std::size_t d_embed = 16;
    std::size_t hidden = 0;
    OptimizerConfig optimizer;
    LossConfig loss;
    TrainSection train;
    EvaluateSection evaluate;
    TwinConfig bound;
    AdamCheckSection adam_check;
    GradCheckSection grad_check;
    CompareSection compare;
    std::optional<std::string> out_dir;
    std::string base_dir = ".";

    Arch arch() const { return {corpus.d_audio, corpus.d_text, d_embed, hidden}; }

    std::string resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? p : (std::filesystem::path(base_dir) / path).lexically_normal().string();
    }

    ExperimentConfig experiment() const {
        ExperimentConfig e;
        e.corpus = corpus;
        e.split = compare.split;
        e.d_embed = d_embed;
        e.hidden = hidden;
        e.optimizer = compare.optimizer;
        e.loss = loss;
        e.strategies = compare.strategies;
        e.epochs = compare.epochs;
        e.batch_size = compare.batch_size;
        e.seeds = compare.seeds;
        e.eval_split = compare.eval_split;
        return e;
    }

    void validate() const {
        corpus.validate();
        arch().validate();
        optimizer.validate();
        loss.validate();
        compare.optimizer.validate();
        if (grad_check.batch < 1) throw ConfigError("grad_check.batch must be at least 1");
        if (!(grad_check.epsilon > 0.0)) throw ConfigError("grad_check.epsilon must be positive");
        if (bound.lipschitz_samples < 1) throw ConfigError("bound.lipschitz_samples must be at least 1");
        if (!(bound.perturbation_scale > 0.0)) throw ConfigError("bound.perturbation_scale must be positive");
    }
};

namespace detail {

inline std::string kind_of(const nlohmann::json& j) {
    return j.type_name();
}

/// 1-based line of the first `"key"` at or after `from`; 0 when absent.
inline std::size_t line_of_key(const std::string& text, const std::string& key, std::size_t& from) {
    const std::string needle = "\"" + key + "\"";
    const auto pos = text.find(needle, from);
    if (pos == std::string::npos) return 0;
    from = pos;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

/// Typed access to one JSON object; remembers which keys were read so that
/// misspelled fields are reported instead of silently ignored.
class Section {
public:
    Section(const nlohmann::json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
        if (!j_.is_object()) fail("", "expected an object, got " + kind_of(j_));
    }

    bool has(const char* key) const { return j_.contains(key); }

    Section child(const char* key) {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, name(key), text_);
    }

    void get(const char* key, double& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number()) fail(key, "expected a number, got " + kind_of(*v));
            out = v->get<double>();
        }
    }

    void get(const char* key, std::size_t& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number_unsigned()) fail(key, "expected a nonnegative integer, got " + describe(*v));
            out = v->get<std::size_t>();
        }
    }

    void get(const char* key, std::string& out) {
        if (const auto* v = find(key)) {
            if (!v->is_string()) fail(key, "expected a string, got " + kind_of(*v));
            out = v->get<std::string>();
        }
    }

    void get(const char* key, std::optional<std::string>& out) {
        std::string s;
        if (find(key)) {
            get(key, s);
            out = s;
        }
    }

    void get(const char* key, std::optional<double>& out) {
        if (const auto* v = find(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            double d = 0.0;
            get(key, d);
            out = d;
        }
    }

    void get(const char* key, std::vector<double>& out) {
        if (const auto* v = find(key)) {
            if (!v->is_array()) fail(key, "expected an array of numbers, got " + kind_of(*v));
            out.clear();
            for (const auto& x : *v) {
                if (!x.is_number()) fail(key, "expected an array of numbers, found " + kind_of(x));
                out.push_back(x.get<double>());
            }
        }
    }

    void get(const char* key, std::vector<std::uint64_t>& out) {
        if (const auto* v = find(key)) {
            if (!v->is_array()) fail(key, "expected an array of integers, got " + kind_of(*v));
            out.clear();
            for (const auto& x : *v) {
                if (!x.is_number_unsigned()) fail(key, "expected an array of nonnegative integers, found " + describe(x));
                out.push_back(x.get<std::uint64_t>());
            }
        }
    }

    void get(const char* key, std::array<double, 3>& out) {
        std::vector<double> v;
        if (!find(key)) return;
        get(key, v);
        if (v.size() != 3) fail(key, "expected [train, val, test] fractions");
        out = {v[0], v[1], v[2]};
    }

    template <typename Enum, typename Parse>
    void get_enum(const char* key, Enum& out, Parse parse) {
        std::string s;
        if (!find(key)) return;
        get(key, s);
        try {
            out = parse(s);
        } catch (const ConfigError& e) {
            fail(key, e.what());
        }
    }

    template <typename Enum, typename Parse>
    void get_enum_list(const char* key, std::vector<Enum>& out, Parse parse) {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_array()) fail(key, "expected an array of strings, got " + kind_of(*v));
        out.clear();
        for (const auto& x : *v) {
            if (!x.is_string()) fail(key, "expected an array of strings, found " + kind_of(x));
            try {
                out.push_back(parse(x.get<std::string>()));
            } catch (const ConfigError& e) {
                fail(key, e.what());
            }
        }
    }

    void require(const char* key) const {
        if (!j_.contains(key)) fail(key, "required field is missing");
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail(k, "unknown field");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        std::string where = "field '" + name(key) + "'";
        std::size_t from = 0, line = 0;
        std::stringstream ss(name(key));
        for (std::string part; std::getline(ss, part, '.');) line = line_of_key(text_, part, from);
        if (line > 0) where += " (line " + std::to_string(line) + ")";
        throw ConfigError(where + ": " + msg);
    }

private:
    const nlohmann::json* find(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    static std::string describe(const nlohmann::json& v) {
        return v.is_number() ? v.dump() : kind_of(v);
    }

    std::string name(const std::string& key) const {
        if (path_.empty()) return key;
        return key.empty() ? path_ : path_ + "." + key;
    }

    const nlohmann::json& j_;
    std::string path_;
    const std::string& text_;
    std::set<std::string> seen_;
};

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline void read_optimizer(Section s, OptimizerConfig& o) {
    s.get_enum("kind", o.kind, parse_optimizer_kind);
    s.get("eta", o.eta);
    s.get("beta1", o.beta1);
    s.get("beta2", o.beta2);
    s.get("eps", o.eps_adam);
    s.get("clip_norm", o.clip_norm);
    s.finish();
}

} // namespace detail

inline const char* optimizer_kind_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Parses a config document. `origin` names the source in messages; relative
/// paths inside the document resolve against `base_dir`.
inline Config parse_config(const std::string& text, const std::string& origin = "config", const std::string& base_dir = ".") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // e.what() already carries "at line L, column C".
        std::string msg = e.what();
        const auto p = msg.find("parse error");
        throw ConfigError(origin + ": " + (p == std::string::npos ? msg : msg.substr(p)));
    }
    Config c;
    c.base_dir = base_dir;
    try {
        detail::Section root(j, "", text);
        root.get("seed", c.seed);
        root.get("out_dir", c.out_dir);

        auto corpus = root.child("corpus");
        corpus.require("n_instances");
        corpus.require("n_languages");
        corpus.get("n_instances", c.corpus.n_instances);
        corpus.get("n_languages", c.corpus.n_languages);
        corpus.get("d_latent", c.corpus.d_latent);
        corpus.get("d_audio", c.corpus.d_audio);
        corpus.get("d_text", c.corpus.d_text);
        corpus.get("audio_noise_sigma", c.corpus.audio_noise_sigma);
        corpus.get("per_language_noise_sigma", c.corpus.per_language_noise_sigma);
        corpus.get("language_offset_scale", c.corpus.language_offset_scale);
        corpus.get("split", c.split);
        corpus.get("path", c.corpus_path);
        corpus.finish();

        auto model = root.child("model");
        model.get("d_embed", c.d_embed);
        model.get("hidden", c.hidden);
        model.finish();

        detail::read_optimizer(root.child("optimizer"), c.optimizer);

        auto loss = root.child("loss");
        loss.get("tau", c.loss.tau);
        loss.finish();

        auto train = root.child("train");
        train.get_enum("strategy", c.train.strategy, parse_strategy);
        train.get("epochs", c.train.epochs);
        train.get("batch_size", c.train.batch_size);
        train.finish();

        auto eval = root.child("evaluate");
        eval.get("checkpoint", c.evaluate.checkpoint);
        eval.get_enum("split", c.evaluate.split, parse_split);
        eval.finish();

        auto bound = root.child("bound");
        bound.get("epochs", c.bound.epochs);
        bound.get("batch_size", c.bound.batch_size);
        bound.get("lipschitz_samples", c.bound.lipschitz_samples);
        bound.get("perturbation_scale", c.bound.perturbation_scale);
        bound.finish();

        auto adam = root.child("adam_check");
        adam.get("configs", c.adam_check.configs);
        adam.finish();

        auto gc = root.child("grad_check");
        gc.get_enum_list("strategies", c.grad_check.strategies, parse_strategy);
        gc.get("seeds", c.grad_check.seeds);
        gc.get("batch", c.grad_check.batch);
        gc.get("epsilon", c.grad_check.epsilon);
        gc.get("tolerance", c.grad_check.tolerance);
        gc.finish();

        auto cmp = root.child("compare");
        cmp.get("seeds", c.compare.seeds);
        cmp.get_enum_list("strategies", c.compare.strategies, parse_strategy);
        cmp.get("split", c.compare.split);
        detail::read_optimizer(cmp.child("optimizer"), c.compare.optimizer);
        cmp.get("epochs", c.compare.epochs);
        cmp.get("batch_size", c.compare.batch_size);
        cmp.get_enum("eval_split", c.compare.eval_split, parse_split);
        cmp.finish();

        root.finish();
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(ss.str(), path, dir.empty() ? "." : dir.string());
}

namespace detail {

inline nlohmann::json optimizer_json(const OptimizerConfig& o) {
    nlohmann::json j = {{"kind", optimizer_kind_name(o.kind)},
                        {"eta", o.eta},
                        {"beta1", o.beta1},
                        {"beta2", o.beta2},
                        {"eps", o.eps_adam}};
    j["clip_norm"] = o.clip_norm ? nlohmann::json(*o.clip_norm) : nlohmann::json(nullptr);
    return j;
}

template <typename E, typename Name>
nlohmann::json names(const std::vector<E>& v, Name name) {
    nlohmann::json out = nlohmann::json::array();
    for (E e : v) out.push_back(name(e));
    return out;
}

} // namespace detail

/// Effective configuration with every default filled in. Parsing the dump
/// yields the same Config (paths already resolved).
inline nlohmann::json to_json(const Config& c) {
    using nlohmann::json;
    json corpus = {{"n_instances", c.corpus.n_instances},
                   {"n_languages", c.corpus.n_languages},
                   {"d_latent", c.corpus.d_latent},
                   {"d_audio", c.corpus.d_audio},
                   {"d_text", c.corpus.d_text},
                   {"audio_noise_sigma", c.corpus.audio_noise_sigma},
                   {"language_offset_scale", c.corpus.language_offset_scale},
                   {"split", c.split}};
    Vec sig(c.corpus.n_languages);
    for (std::size_t k = 0; k < sig.size(); ++k) sig[k] = c.corpus.language_sigma(k);
    corpus["per_language_noise_sigma"] = sig;
    if (c.corpus_path) corpus["path"] = c.resolve(*c.corpus_path);

    json eval = {{"split", split_name(c.evaluate.split)}};
    if (c.evaluate.checkpoint) eval["checkpoint"] = c.resolve(*c.evaluate.checkpoint);

    json out = {
        {"seed", c.seed},
        {"corpus", corpus},
        {"model", {{"d_embed", c.d_embed}, {"hidden", c.hidden}}},
        {"optimizer", detail::optimizer_json(c.optimizer)},
        {"loss", {{"tau", c.loss.tau}}},
        {"train", {{"strategy", strategy_name(c.train.strategy)}, {"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}}},
        {"evaluate", eval},
        {"bound",
         {{"epochs", c.bound.epochs},
          {"batch_size", c.bound.batch_size},
          {"lipschitz_samples", c.bound.lipschitz_samples},
          {"perturbation_scale", c.bound.perturbation_scale}}},
        {"adam_check", {{"configs", c.adam_check.configs}}},
        {"grad_check",
         {{"strategies", detail::names(c.grad_check.strategies, strategy_name)},
          {"seeds", c.grad_check.seeds},
          {"batch", c.grad_check.batch},
          {"epsilon", c.grad_check.epsilon},
          {"tolerance", c.grad_check.tolerance}}},
        {"compare",
         {{"seeds", c.compare.seeds},
          {"strategies", detail::names(c.compare.strategies, strategy_name)},
          {"split", c.compare.split},
          {"optimizer", detail::optimizer_json(c.compare.optimizer)},
          {"epochs", c.compare.epochs},
          {"batch_size", c.compare.batch_size},
          {"eval_split", split_name(c.compare.eval_split)}}},
    };
    if (c.out_dir) out["out_dir"] = c.resolve(*c.out_dir);
    return out;
}

} // namespace polyalign
