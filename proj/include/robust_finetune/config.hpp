#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trainer.hpp"

namespace rft {

/// Unknown key or unparsable value; the CLI maps it to exit code 2.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what) : Error(what), key_(std::move(key)) {}
    [[nodiscard]] const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct ConfigKey {
    std::string_view name;
    std::string_view default_value;
    std::string_view help;
};

inline const std::vector<ConfigKey>& config_keys()
{
    static const std::vector<ConfigKey> keys = {
        {"seed", "0", "master seed; fans out to init, dropout, masks, shuffling, bootstrap"},
        {"data.train", "", "training corpus (id,text,label)"},
        {"data.valid", "", "validation corpus (id,text,label)"},
        {"data.delimiter", ",", "corpus field delimiter (one character, or 'tab')"},
        {"data.id_column", "id", "id column name"},
        {"data.text_column", "text", "text column name"},
        {"data.label_column", "label", "label column name"},
        {"data.labels", "", "class-name file, one per line; empty = 14-class default set"},
        {"data.max_vocab", "30000", "vocabulary cap including <pad> and <unk>"},
        {"output.dir", "run", "directory receiving checkpoint, vocabulary, metrics, manifest"},
        {"model.num_layers", "2", "encoder layers"},
        {"model.num_heads", "4", "attention heads"},
        {"model.hidden_dim", "64", "hidden size"},
        {"model.ff_dim", "128", "feed-forward inner size"},
        {"model.max_positions", "280", "learned position embeddings"},
        {"model.num_classes", "14", "output classes"},
        {"model.dropout", "0.1", "dropout rate"},
        {"train.batch_size", "32", "examples per step"},
        {"train.epochs", "3", "passes over the training split"},
        {"train.max_length", "280", "tokens kept per text; the excess is dropped"},
        {"train.shuffle", "true", "shuffle each epoch"},
        {"train.clip_threshold", "1.0", "global gradient-norm clip (1e-4 reproduces the full-scale setting)"},
        {"train.weight_decay", "0.01", "AdamW decoupled weight decay"},
        {"train.adam_eps", "1e-8", "AdamW epsilon"},
        {"train.beta1", "0.9", "AdamW beta1"},
        {"train.beta2", "0.99", "AdamW beta2"},
        {"schedule.peak_lr", "1e-5", "learning rate at the end of warm-up"},
        {"schedule.warmup_ratio", "0.1", "fraction of steps spent warming up"},
        {"loss.kind", "ce", "ce | in_trust"},
        {"loss.alpha", "1", "in-trust weight of cross-entropy"},
        {"loss.beta", "1", "in-trust weight of the DCE term"},
        {"loss.delta", "0.5", "in-trust mixing of model belief and label"},
        {"loss.clamp_eps", "1e-12", "floor inside every log"},
        {"fgm.enabled", "false", "adversarial training on embeddings"},
        {"fgm.epsilon", "1.0", "perturbation radius"},
        {"fgm.target", "embeddings.token", "parameter-name globs to perturb"},
        {"childtune.enabled", "false", "Bernoulli gradient masks"},
        {"childtune.p_f", "0.3", "mask keep probability"},
        {"childtune.target", "*", "parameter-name globs to mask"},
    };
    return keys;
}

inline constexpr const char* seed_env_var = "ROBUST_FINETUNE_SEED";

/// Flat `key = value` settings; `#` starts a comment.
class Config {
public:
    static Config parse(std::istream& in, const std::string& source = "config")
    {
        Config cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected key = value");
            cfg.set(std::string(trim(trimmed.substr(0, eq))), std::string(trim(trimmed.substr(eq + 1))));
        }
        return cfg;
    }

    static Config load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
        return parse(in, path);
    }

    void set(const std::string& key, std::string value)
    {
        if (!find_key(key)) throw ConfigError(key, "unknown config key '" + key + "'");
        values_[key] = std::move(value);
    }

    /// `key=value`
    void apply_override(std::string_view assignment)
    {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(assignment), "override '" + std::string(assignment) + "' is not key=value");
        set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
    }

    [[nodiscard]] bool is_set(const std::string& key) const { return values_.count(key) != 0; }

    [[nodiscard]] std::string get(const std::string& key) const
    {
        const auto* k = find_key(key);
        if (!k) throw ConfigError(key, "unknown config key '" + key + "'");
        auto it = values_.find(key);
        return it != values_.end() ? it->second : std::string(k->default_value);
    }

    /// Every key with its effective value, defaults materialized.
    [[nodiscard]] std::map<std::string, std::string> resolved() const
    {
        std::map<std::string, std::string> out;
        for (const auto& k : config_keys()) out.emplace(std::string(k.name), get(std::string(k.name)));
        return out;
    }

    [[nodiscard]] double get_double(const std::string& key) const
    {
        const auto v = get(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } catch (const std::logic_error&) {
        }
        throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a number");
    }

    [[nodiscard]] std::uint64_t get_u64(const std::string& key) const
    {
        const auto v = get(key);
        std::uint64_t out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
            throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a non-negative integer");
        return out;
    }

    [[nodiscard]] std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

    [[nodiscard]] bool get_bool(const std::string& key) const
    {
        const auto v = get(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a boolean");
    }

private:
    static const ConfigKey* find_key(std::string_view key)
    {
        const auto& keys = config_keys();
        auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
        return it == keys.end() ? nullptr : &*it;
    }

    static std::string_view trim(std::string_view s)
    {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    }

    std::map<std::string, std::string> values_;
};

struct DataSettings {
    std::string train_path;
    std::string valid_path;
    std::string labels_path;
    CorpusSchema schema;
    std::size_t max_vocab = 30000;
};

/// Typed view of a Config.
struct RunSettings {
    std::uint64_t seed = 0;
    DataSettings data;
    std::string output_dir;
    EncoderConfig model;
    TrainConfig train;
};

/// The seed comes from the `seed` key when set, else from ROBUST_FINETUNE_SEED, else 0.
inline std::uint64_t resolve_seed(const Config& cfg, const char* env_value)
{
    if (cfg.is_set("seed") || !env_value || !*env_value) return cfg.get_u64("seed");
    Config probe;
    probe.set("seed", env_value);
    try {
        return probe.get_u64("seed");
    } catch (const ConfigError&) {
        throw ConfigError("seed", std::string(seed_env_var) + "='" + env_value + "' is not a non-negative integer");
    }
}

inline RunSettings resolve_settings(const Config& cfg, const char* env_seed = std::getenv(seed_env_var))
{
    RunSettings s;
    s.seed = resolve_seed(cfg, env_seed);
    s.data.train_path = cfg.get("data.train");
    s.data.valid_path = cfg.get("data.valid");
    s.data.labels_path = cfg.get("data.labels");
    const auto delim = cfg.get("data.delimiter");
    if (delim == "tab" || delim == "\\t") s.data.schema.delimiter = '\t';
    else if (delim.size() == 1) s.data.schema.delimiter = delim[0];
    else throw ConfigError("data.delimiter", "config key 'data.delimiter' must be one character or 'tab'");
    s.data.schema.id_column = cfg.get("data.id_column");
    s.data.schema.text_column = cfg.get("data.text_column");
    s.data.schema.label_column = cfg.get("data.label_column");
    s.data.max_vocab = cfg.get_size("data.max_vocab");
    s.output_dir = cfg.get("output.dir");

    s.model.num_layers = cfg.get_size("model.num_layers");
    s.model.num_heads = cfg.get_size("model.num_heads");
    s.model.hidden_dim = cfg.get_size("model.hidden_dim");
    s.model.ff_dim = cfg.get_size("model.ff_dim");
    s.model.max_positions = cfg.get_size("model.max_positions");
    s.model.num_classes = cfg.get_size("model.num_classes");
    s.model.dropout_rate = cfg.get_double("model.dropout");
    s.model.seed = s.seed;

    auto& t = s.train;
    t.seed = s.seed;
    t.batch_size = cfg.get_size("train.batch_size");
    t.epochs = cfg.get_size("train.epochs");
    t.max_length = cfg.get_size("train.max_length");
    t.shuffle = cfg.get_bool("train.shuffle");
    t.clip_threshold = cfg.get_double("train.clip_threshold");
    t.weight_decay = cfg.get_double("train.weight_decay");
    t.adam_eps = cfg.get_double("train.adam_eps");
    t.beta1 = cfg.get_double("train.beta1");
    t.beta2 = cfg.get_double("train.beta2");
    t.peak_lr = cfg.get_double("schedule.peak_lr");
    t.warmup_ratio = cfg.get_double("schedule.warmup_ratio");
    try {
        t.loss.kind = parse_loss_kind(cfg.get("loss.kind"));
    } catch (const Error& e) {
        throw ConfigError("loss.kind", std::string("config key 'loss.kind': ") + e.what());
    }
    t.loss.in_trust.alpha = cfg.get_double("loss.alpha");
    t.loss.in_trust.beta = cfg.get_double("loss.beta");
    t.loss.in_trust.delta = cfg.get_double("loss.delta");
    t.loss.in_trust.clamp_eps = cfg.get_double("loss.clamp_eps");
    t.fgm_enabled = cfg.get_bool("fgm.enabled");
    t.fgm.epsilon = cfg.get_double("fgm.epsilon");
    t.fgm.target = cfg.get("fgm.target");
    t.childtune_enabled = cfg.get_bool("childtune.enabled");
    t.childtune.p_f = cfg.get_double("childtune.p_f");
    t.childtune.target = cfg.get("childtune.target");

    // range checks up front, so a bad value is a configuration error rather than a failed run
    try {
        t.validate();
        EncoderConfig probe = s.model;
        probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 3);
        probe.validate();
    } catch (const Error& e) {
        throw ConfigError("", e.what());
    }
    return s;
}

} // namespace rft
