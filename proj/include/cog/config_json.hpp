#pragma once

// JSON (de)serialization for configs, with strict unknown-key rejection and
// dotted-path overrides. Field names are the stable external contract.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "cog/errors.hpp"
#include "cog/model.hpp"
#include "cog/optimizer.hpp"

namespace cog {

inline std::string to_string(ActivationPolicy p) {
    switch (p) {
        case ActivationPolicy::AllSoftmax: return "all_softmax";
        case ActivationPolicy::AllCog: return "all_cog";
        case ActivationPolicy::CogExceptFirst: return "cog_except_first";
        case ActivationPolicy::CogExceptFirstAndLast: return "cog_except_first_and_last";
    }
    throw std::invalid_argument("unknown activation policy value");
}

inline ActivationPolicy activation_policy_from_string(const std::string& s) {
    if (s == "all_softmax") return ActivationPolicy::AllSoftmax;
    if (s == "all_cog") return ActivationPolicy::AllCog;
    if (s == "cog_except_first") return ActivationPolicy::CogExceptFirst;
    if (s == "cog_except_first_and_last") return ActivationPolicy::CogExceptFirstAndLast;
    throw config_error("unknown activation_policy '" + s +
                       "' (expected all_softmax, all_cog, cog_except_first, "
                       "cog_except_first_and_last)");
}

inline std::string to_string(Precision p) {
    switch (p) {
        case Precision::Single: return "single";
        case Precision::Double: return "double";
    }
    throw std::invalid_argument("unknown precision value");
}

inline Precision precision_from_string(const std::string& s) {
    if (s == "single") return Precision::Single;
    if (s == "double") return Precision::Double;
    throw config_error("unknown precision '" + s + "' (expected single or double)");
}

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* scope) {
    if (!j.is_object()) throw config_error(std::string(scope) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw config_error(std::string(scope) + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const char* scope) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string(scope) + "." + key + ": " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"d_model", c.d_model},
        {"d_ff", c.d_ff},
        {"vocab_size", c.vocab_size},
        {"context_len", c.context_len},
        {"rope_base", c.rope_base},
        {"norm_eps", c.norm_eps},
        {"activation_policy", to_string(c.activation_policy)},
        {"qk_scale_enabled", c.qk_scale_enabled},
        {"precision", to_string(c.precision)},
        {"seed", c.seed},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    static constexpr const char* scope = "model config";
    detail::check_keys(j,
                       {"n_layers", "n_heads", "d_model", "d_ff", "vocab_size", "context_len",
                        "rope_base", "norm_eps", "activation_policy", "qk_scale_enabled",
                        "precision", "seed"},
                       scope);
    ModelConfig c;
    detail::read_field(j, "n_layers", c.n_layers, scope);
    detail::read_field(j, "n_heads", c.n_heads, scope);
    detail::read_field(j, "d_model", c.d_model, scope);
    detail::read_field(j, "d_ff", c.d_ff, scope);
    detail::read_field(j, "vocab_size", c.vocab_size, scope);
    detail::read_field(j, "context_len", c.context_len, scope);
    detail::read_field(j, "rope_base", c.rope_base, scope);
    detail::read_field(j, "norm_eps", c.norm_eps, scope);
    std::string policy = to_string(c.activation_policy);
    detail::read_field(j, "activation_policy", policy, scope);
    c.activation_policy = activation_policy_from_string(policy);
    detail::read_field(j, "qk_scale_enabled", c.qk_scale_enabled, scope);
    std::string prec = to_string(c.precision);
    detail::read_field(j, "precision", prec, scope);
    c.precision = precision_from_string(prec);
    detail::read_field(j, "seed", c.seed, scope);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{
        {"batch_tokens", c.batch_tokens},
        {"lr_peak", c.lr_peak},
        {"warmup_steps", c.warmup_steps},
        {"total_steps", c.total_steps},
        {"final_lr_fraction", c.final_lr_fraction},
        {"betas", std::array<double, 2>{c.beta1, c.beta2}},
        {"weight_decay", c.weight_decay},
        {"clip_norm", c.clip_norm},
        {"seed", c.seed},
        {"log_every", c.log_every},
        {"ckpt_every", c.ckpt_every},
    };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    static constexpr const char* scope = "train config";
    detail::check_keys(j,
                       {"batch_tokens", "lr_peak", "warmup_steps", "total_steps",
                        "final_lr_fraction", "betas", "weight_decay", "clip_norm", "seed",
                        "log_every", "ckpt_every"},
                       scope);
    TrainConfig c;
    detail::read_field(j, "batch_tokens", c.batch_tokens, scope);
    detail::read_field(j, "lr_peak", c.lr_peak, scope);
    detail::read_field(j, "warmup_steps", c.warmup_steps, scope);
    detail::read_field(j, "total_steps", c.total_steps, scope);
    detail::read_field(j, "final_lr_fraction", c.final_lr_fraction, scope);
    std::array<double, 2> betas{c.beta1, c.beta2};
    detail::read_field(j, "betas", betas, scope);
    c.beta1 = betas[0];
    c.beta2 = betas[1];
    detail::read_field(j, "weight_decay", c.weight_decay, scope);
    detail::read_field(j, "clip_norm", c.clip_norm, scope);
    detail::read_field(j, "seed", c.seed, scope);
    detail::read_field(j, "log_every", c.log_every, scope);
    detail::read_field(j, "ckpt_every", c.ckpt_every, scope);
    c.validate();
    return c;
}

struct RunPaths {
    std::string corpus;
    std::string out_dir = "out";
    std::string checkpoint;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    RunPaths paths;
};

inline nlohmann::json to_json(const RunPaths& p) {
    return nlohmann::json{
        {"corpus", p.corpus}, {"out_dir", p.out_dir}, {"checkpoint", p.checkpoint}};
}

inline RunPaths run_paths_from_json(const nlohmann::json& j) {
    static constexpr const char* scope = "paths";
    detail::check_keys(j, {"corpus", "out_dir", "checkpoint"}, scope);
    RunPaths p;
    detail::read_field(j, "corpus", p.corpus, scope);
    detail::read_field(j, "out_dir", p.out_dir, scope);
    detail::read_field(j, "checkpoint", p.checkpoint, scope);
    return p;
}

inline nlohmann::json to_json(const RunConfig& c) {
    return nlohmann::json{
        {"model", to_json(c.model)}, {"train", to_json(c.train)}, {"paths", to_json(c.paths)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"model", "train", "paths"}, "run config");
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("paths")) c.paths = run_paths_from_json(j.at("paths"));
    return c;
}

/// Applies one "dotted.path=value" override to a JSON tree. The value is
/// parsed as JSON when possible (numbers, booleans, arrays) and treated as a
/// bare string otherwise, so both total_steps=100 and precision=double work.
inline void apply_override(nlohmann::json& root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("--set expects dotted.path=value, got '" + spec + "'");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key =
            path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty())
            throw config_error("--set path has an empty segment: '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = nlohmann::json::object();
        if (!node->is_object())
            throw config_error("--set path segment '" + key + "' is not an object in '" + path +
                               "'");
        start = dot + 1;
    }
}

}  // namespace cog
