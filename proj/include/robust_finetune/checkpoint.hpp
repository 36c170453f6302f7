#pragma once

// Checkpoint container, see docs/checkpoint_format.md:
//
//   offset 0   8 bytes   magic "RFTCKPT1"
//   offset 8   8 bytes   header length N, unsigned little-endian
//   offset 16  N bytes   UTF-8 JSON header (configs, labels, metrics history, tensor manifest)
//   offset 16+N          tensor data, little-endian IEEE-754 binary32, in manifest order

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trainer.hpp"

namespace rft {

inline void to_json(nlohmann::ordered_json& j, const EncoderConfig& c)
{
    j = {{"num_layers", c.num_layers},     {"num_heads", c.num_heads},         {"hidden_dim", c.hidden_dim},
         {"ff_dim", c.ff_dim},             {"vocab_size", c.vocab_size},       {"max_positions", c.max_positions},
         {"num_classes", c.num_classes},   {"dropout_rate", c.dropout_rate},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::ordered_json& j, EncoderConfig& c)
{
    j.at("num_layers").get_to(c.num_layers);
    j.at("num_heads").get_to(c.num_heads);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("ff_dim").get_to(c.ff_dim);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_positions").get_to(c.max_positions);
    j.at("num_classes").get_to(c.num_classes);
    j.at("dropout_rate").get_to(c.dropout_rate);
    j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c)
{
    j = {{"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"max_length", c.max_length},
         {"shuffle", c.shuffle},
         {"clip_threshold", c.clip_threshold},
         {"seed", c.seed},
         {"peak_lr", c.peak_lr},
         {"warmup_ratio", c.warmup_ratio},
         {"weight_decay", c.weight_decay},
         {"adam_eps", c.adam_eps},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"loss",
          {{"kind", std::string(to_string(c.loss.kind))},
           {"alpha", c.loss.in_trust.alpha},
           {"beta", c.loss.in_trust.beta},
           {"delta", c.loss.in_trust.delta},
           {"clamp_eps", c.loss.in_trust.clamp_eps}}},
         {"fgm", {{"enabled", c.fgm_enabled}, {"epsilon", c.fgm.epsilon}, {"target", c.fgm.target},
                  {"norm_floor", c.fgm.norm_floor}}},
         {"childtune", {{"enabled", c.childtune_enabled}, {"p_f", c.childtune.p_f}, {"target", c.childtune.target}}}};
}

inline void from_json(const nlohmann::ordered_json& j, TrainConfig& c)
{
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("max_length").get_to(c.max_length);
    j.at("shuffle").get_to(c.shuffle);
    j.at("clip_threshold").get_to(c.clip_threshold);
    j.at("seed").get_to(c.seed);
    j.at("peak_lr").get_to(c.peak_lr);
    j.at("warmup_ratio").get_to(c.warmup_ratio);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    const auto& l = j.at("loss");
    c.loss.kind = parse_loss_kind(l.at("kind").get<std::string>());
    l.at("alpha").get_to(c.loss.in_trust.alpha);
    l.at("beta").get_to(c.loss.in_trust.beta);
    l.at("delta").get_to(c.loss.in_trust.delta);
    l.at("clamp_eps").get_to(c.loss.in_trust.clamp_eps);
    const auto& f = j.at("fgm");
    f.at("enabled").get_to(c.fgm_enabled);
    f.at("epsilon").get_to(c.fgm.epsilon);
    f.at("target").get_to(c.fgm.target);
    f.at("norm_floor").get_to(c.fgm.norm_floor);
    const auto& m = j.at("childtune");
    m.at("enabled").get_to(c.childtune_enabled);
    m.at("p_f").get_to(c.childtune.p_f);
    m.at("target").get_to(c.childtune.target);
}

inline constexpr char checkpoint_magic[8] = {'R', 'F', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& in)
{
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

} // namespace detail

inline nlohmann::ordered_json checkpoint_header(const Checkpoint& ckpt)
{
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.params) {
        tensors.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}});
        offset += t.size() * 4;
    }
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    for (const auto& m : ckpt.history)
        history.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"valid_acc", m.valid_acc}});
    return {{"format_version", 1}, {"encoder", ckpt.model},       {"train", ckpt.train},
            {"labels", ckpt.label_names}, {"history", history}, {"best_epoch", ckpt.best_epoch},
            {"best_step", ckpt.best_step}, {"tensors", tensors}};
}

/// Values are stored as binary32; anything not exactly representable is rounded.
inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt)
{
    const std::string header = checkpoint_header(ckpt).dump();
    out.write(checkpoint_magic, sizeof checkpoint_magic);
    detail::put_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::string buf;
    for (const auto& [name, t] : ckpt.params) {
        buf.resize(t.size() * 4);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.values[i]));
            for (int k = 0; k < 4; ++k) buf[i * 4 + static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xFF);
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw Error("failed writing checkpoint");
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(std::istream& in)
{
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, checkpoint_magic, 8) != 0) throw Error("not a checkpoint file");
    const auto header_len = detail::get_u64(in);
    if (header_len > (std::uint64_t{1} << 32)) throw Error("checkpoint header length is implausible");
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw Error("checkpoint truncated");
    Checkpoint ckpt;
    try {
        const auto j = nlohmann::ordered_json::parse(header);
        if (j.at("format_version").get<int>() != 1) throw Error("unsupported checkpoint format version");
        j.at("encoder").get_to(ckpt.model);
        j.at("train").get_to(ckpt.train);
        j.at("labels").get_to(ckpt.label_names);
        for (const auto& m : j.at("history"))
            ckpt.history.push_back({m.at("epoch").get<std::size_t>(), m.at("train_loss").get<double>(),
                                    m.at("valid_acc").get<double>()});
        j.at("best_epoch").get_to(ckpt.best_epoch);
        j.at("best_step").get_to(ckpt.best_step);
        std::uint64_t expected_offset = 0;
        std::string buf;
        for (const auto& tj : j.at("tensors")) {
            if (tj.at("dtype").get<std::string>() != "f32") throw Error("unsupported tensor dtype");
            if (tj.at("offset").get<std::uint64_t>() != expected_offset) throw Error("tensor offsets out of order");
            Tensor t = Tensor::zeros(tj.at("shape").get<Shape>());
            buf.resize(t.size() * 4);
            if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size()))) throw Error("checkpoint truncated");
            for (std::size_t i = 0; i < t.size(); ++i) {
                std::uint32_t bits = 0;
                for (int k = 3; k >= 0; --k)
                    bits = (bits << 8) | static_cast<unsigned char>(buf[i * 4 + static_cast<std::size_t>(k)]);
                t.values[i] = static_cast<double>(std::bit_cast<float>(bits));
            }
            expected_offset += buf.size();
            const auto name = tj.at("name").get<std::string>();
            if (!ckpt.params.emplace(name, std::move(t)).second) throw Error("duplicate tensor '" + name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed checkpoint header: ") + e.what());
    }
    Classifier(ckpt.model).check_parameters(ckpt.params);
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    try {
        return load_checkpoint(in);
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

} // namespace rft
