#pragma once

// Experiment configuration: one JSON document composing the corpus spec,
// model architecture, both training stages, fold selection, zoom-in mode
// and attention-dump options. Validation is structural: unknown keys are
// rejected and type errors carry a JSON pointer.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsnav/clsclip.hpp"
#include "clsnav/data_synth.hpp"
#include "clsnav/training.hpp"
#include "clsnav/zoomin.hpp"

namespace clsnav {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "runs/out";

    // data
    SynthSpec data;
    std::size_t train_count = 2000;
    std::size_t eval_count = 400;
    std::size_t tiny_count = 200;

    // model
    ModelConfig model;

    // training stages
    TrainConfig pretrain;
    TrainConfig segment;

    // protocol
    std::size_t n_folds = 4;
    int fold_id = 0;

    // zoom-in + attention dump
    ProposalSource zoomin_mode = ProposalSource::oracle;
    int attention_layer = -1;  // -1: last replacement layer
    std::size_t attention_images = 4;

    nlohmann::json raw;  // the validated document (config snapshot source)

    std::size_t default_attention_layer() const {
        if (attention_layer >= 0) return static_cast<std::size_t>(attention_layer);
        if (!model.visual.replace_layers.empty()) return *model.visual.replace_layers.rbegin();
        return model.visual.n_layers - 1;
    }
};

namespace detail {

enum class FieldType { u64, i64, f64, boolean, string, string_array, u64_array };

struct FieldSpec {
    const char* key;
    FieldType type;
};

inline void type_check(const nlohmann::json& v, FieldType t, const std::string& pointer) {
    auto fail = [&](const char* want) {
        throw ConfigError("config error at " + pointer + ": expected " + want + ", got " + std::string(v.type_name()));
    };
    auto is_u64 = [](const nlohmann::json& x) {
        return x.is_number_unsigned() || (x.is_number_integer() && x.get<long long>() >= 0);
    };
    switch (t) {
        case FieldType::u64:
            if (!is_u64(v)) fail("an unsigned integer");
            break;
        case FieldType::i64:
            if (!v.is_number_integer()) fail("an integer");
            break;
        case FieldType::f64:
            if (!v.is_number()) fail("a number");
            break;
        case FieldType::boolean:
            if (!v.is_boolean()) fail("a boolean");
            break;
        case FieldType::string:
            if (!v.is_string()) fail("a string");
            break;
        case FieldType::string_array:
            if (!v.is_array()) fail("an array of strings");
            for (const auto& e : v) {
                if (!e.is_string()) fail("an array of strings");
            }
            break;
        case FieldType::u64_array:
            if (!v.is_array()) fail("an array of unsigned integers");
            for (const auto& e : v) {
                if (!is_u64(e)) fail("an array of unsigned integers");
            }
            break;
    }
}

inline void check_section(const nlohmann::json& obj, const std::string& pointer,
                          const std::vector<FieldSpec>& fields) {
    if (!obj.is_object()) throw ConfigError("config error at " + pointer + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        const FieldSpec* found = nullptr;
        for (const auto& f : fields) {
            if (key == f.key) {
                found = &f;
                break;
            }
        }
        if (!found) throw ConfigError("config error at " + pointer + "/" + key + ": unknown key");
        type_check(value, found->type, pointer + "/" + key);
    }
}

inline const std::vector<FieldSpec>& data_fields() {
    static const std::vector<FieldSpec> f = {{"image_size", FieldType::u64},
                                             {"categories", FieldType::string_array},
                                             {"min_objects", FieldType::u64},
                                             {"max_objects", FieldType::u64},
                                             {"background_noise", FieldType::f64},
                                             {"train_count", FieldType::u64},
                                             {"eval_count", FieldType::u64},
                                             {"tiny_count", FieldType::u64}};
    return f;
}

inline const std::vector<FieldSpec>& model_fields() {
    static const std::vector<FieldSpec> f = {{"patch_size", FieldType::u64},
                                             {"n_layers", FieldType::u64},
                                             {"d", FieldType::u64},
                                             {"n_heads", FieldType::u64},
                                             {"replace_window", FieldType::u64_array},
                                             {"replace_layers", FieldType::u64_array},
                                             {"mechanism", FieldType::string},
                                             {"vpt_prompt_count", FieldType::u64},
                                             {"text_layers", FieldType::u64},
                                             {"text_heads", FieldType::u64},
                                             {"decoder_layers", FieldType::u64},
                                             {"decoder_heads", FieldType::u64},
                                             {"text_post_projection", FieldType::boolean},
                                             {"prompt_template", FieldType::boolean}};
    return f;
}

inline const std::vector<FieldSpec>& train_fields() {
    static const std::vector<FieldSpec> f = {{"epochs", FieldType::u64},
                                             {"batch_size", FieldType::u64},
                                             {"lr", FieldType::f64},
                                             {"weight_decay", FieldType::f64},
                                             {"eta_min", FieldType::f64},
                                             {"restart_period", FieldType::u64},
                                             {"temperature", FieldType::f64},
                                             {"early_stop_retrieval", FieldType::f64}};
    return f;
}

inline const std::vector<FieldSpec>& fold_fields() {
    static const std::vector<FieldSpec> f = {{"n_folds", FieldType::u64}, {"fold_id", FieldType::u64}};
    return f;
}

inline const std::vector<FieldSpec>& zoomin_fields() {
    static const std::vector<FieldSpec> f = {{"mode", FieldType::string}};
    return f;
}

inline const std::vector<FieldSpec>& attention_fields() {
    static const std::vector<FieldSpec> f = {{"layer", FieldType::i64}, {"images", FieldType::u64}};
    return f;
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

inline void fill_train(TrainConfig& cfg, const nlohmann::json& obj) {
    cfg.epochs = get_or<std::size_t>(obj, "epochs", cfg.epochs);
    cfg.batch_size = get_or<std::size_t>(obj, "batch_size", cfg.batch_size);
    cfg.lr = get_or<double>(obj, "lr", cfg.lr);
    cfg.weight_decay = get_or<double>(obj, "weight_decay", cfg.weight_decay);
    cfg.eta_min = get_or<double>(obj, "eta_min", cfg.eta_min);
    cfg.restart_period = get_or<std::size_t>(obj, "restart_period", cfg.restart_period);
    cfg.temperature = get_or<double>(obj, "temperature", cfg.temperature);
    cfg.early_stop_retrieval = get_or<double>(obj, "early_stop_retrieval", cfg.early_stop_retrieval);
}

}  // namespace detail

// The published schema, derivable from the validator tables.
inline nlohmann::json config_schema() {
    using detail::FieldSpec;
    using detail::FieldType;
    auto type_name = [](FieldType t) -> const char* {
        switch (t) {
            case FieldType::u64: return "integer";
            case FieldType::i64: return "integer";
            case FieldType::f64: return "number";
            case FieldType::boolean: return "boolean";
            case FieldType::string: return "string";
            case FieldType::string_array: return "array[string]";
            case FieldType::u64_array: return "array[integer]";
        }
        return "unknown";
    };
    auto section = [&](const std::vector<FieldSpec>& fields) {
        nlohmann::json props;
        for (const auto& f : fields) props[f.key] = type_name(f.type);
        return nlohmann::json{{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
    };
    return nlohmann::json{{"$comment", "clsnav experiment configuration"},
                          {"type", "object"},
                          {"additionalProperties", false},
                          {"properties",
                           {{"seed", "integer"},
                            {"out_dir", "string"},
                            {"data", section(detail::data_fields())},
                            {"model", section(detail::model_fields())},
                            {"pretrain", section(detail::train_fields())},
                            {"segment", section(detail::train_fields())},
                            {"fold", section(detail::fold_fields())},
                            {"zoomin", section(detail::zoomin_fields())},
                            {"attention", section(detail::attention_fields())}}}};
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config error at /: expected an object");
    static const std::set<std::string> top_keys = {"seed",    "out_dir", "data", "model", "pretrain",
                                                   "segment", "fold",    "zoomin", "attention"};
    for (const auto& [key, value] : j.items()) {
        if (!top_keys.count(key)) throw ConfigError("config error at /" + key + ": unknown key");
    }
    if (j.contains("seed")) detail::type_check(j.at("seed"), detail::FieldType::u64, "/seed");
    if (j.contains("out_dir")) detail::type_check(j.at("out_dir"), detail::FieldType::string, "/out_dir");
    if (j.contains("data")) detail::check_section(j.at("data"), "/data", detail::data_fields());
    if (j.contains("model")) detail::check_section(j.at("model"), "/model", detail::model_fields());
    if (j.contains("pretrain")) detail::check_section(j.at("pretrain"), "/pretrain", detail::train_fields());
    if (j.contains("segment")) detail::check_section(j.at("segment"), "/segment", detail::train_fields());
    if (j.contains("fold")) detail::check_section(j.at("fold"), "/fold", detail::fold_fields());
    if (j.contains("zoomin")) detail::check_section(j.at("zoomin"), "/zoomin", detail::zoomin_fields());
    if (j.contains("attention")) detail::check_section(j.at("attention"), "/attention", detail::attention_fields());

    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    cfg.out_dir = detail::get_or<std::string>(j, "out_dir", "runs/out");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.image_size = detail::get_or<std::size_t>(d, "image_size", cfg.data.image_size);
        cfg.data.categories = detail::get_or<std::vector<std::string>>(d, "categories", cfg.data.categories);
        cfg.data.min_objects = detail::get_or<std::size_t>(d, "min_objects", cfg.data.min_objects);
        cfg.data.max_objects = detail::get_or<std::size_t>(d, "max_objects", cfg.data.max_objects);
        cfg.data.background_noise = detail::get_or<double>(d, "background_noise", cfg.data.background_noise);
        cfg.train_count = detail::get_or<std::size_t>(d, "train_count", cfg.train_count);
        cfg.eval_count = detail::get_or<std::size_t>(d, "eval_count", cfg.eval_count);
        cfg.tiny_count = detail::get_or<std::size_t>(d, "tiny_count", cfg.tiny_count);
    }
    cfg.data.seed = derive_seed(cfg.seed, "data");

    cfg.model.visual.image_size = cfg.data.image_size;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        auto& v = cfg.model.visual;
        v.patch_size = detail::get_or<std::size_t>(m, "patch_size", v.patch_size);
        v.n_layers = detail::get_or<std::size_t>(m, "n_layers", v.n_layers);
        v.d = detail::get_or<std::size_t>(m, "d", v.d);
        v.n_heads = detail::get_or<std::size_t>(m, "n_heads", v.n_heads);
        if (m.contains("replace_window") && m.contains("replace_layers")) {
            throw ConfigError("config error at /model: give replace_window or replace_layers, not both");
        }
        if (m.contains("replace_window")) {
            auto w = m.at("replace_window").get<std::vector<std::size_t>>();
            if (w.size() != 2) throw ConfigError("config error at /model/replace_window: expected [n1, n2]");
            v.replace_layers = VisualConfig::window(w[0], w[1], v.n_layers);
        }
        if (m.contains("replace_layers")) {
            auto layers = m.at("replace_layers").get<std::vector<std::size_t>>();
            v.replace_layers = std::set<std::size_t>(layers.begin(), layers.end());
        }
        if (m.contains("mechanism")) v.mechanism = mechanism_from_name(m.at("mechanism").get<std::string>());
        v.vpt_prompt_count = detail::get_or<std::size_t>(m, "vpt_prompt_count", v.vpt_prompt_count);
        cfg.model.text_layers = detail::get_or<std::size_t>(m, "text_layers", cfg.model.text_layers);
        cfg.model.text_heads = detail::get_or<std::size_t>(m, "text_heads", cfg.model.text_heads);
        cfg.model.decoder_layers = detail::get_or<std::size_t>(m, "decoder_layers", cfg.model.decoder_layers);
        cfg.model.decoder_heads = detail::get_or<std::size_t>(m, "decoder_heads", cfg.model.decoder_heads);
        cfg.model.text_post_projection =
            detail::get_or<bool>(m, "text_post_projection", cfg.model.text_post_projection);
        cfg.model.prompt_template = detail::get_or<bool>(m, "prompt_template", cfg.model.prompt_template);
    }
    cfg.model.visual.validate();

    cfg.pretrain.stage = "pretrain";
    cfg.pretrain.epochs = 50;
    cfg.pretrain.restart_period = 50;
    if (j.contains("pretrain")) detail::fill_train(cfg.pretrain, j.at("pretrain"));
    cfg.pretrain.seed = derive_seed(cfg.seed, "train.pretrain");
    cfg.pretrain.validate();

    cfg.segment.stage = "segment";
    if (j.contains("segment")) detail::fill_train(cfg.segment, j.at("segment"));
    cfg.segment.seed = derive_seed(cfg.seed, "train.segment");
    cfg.segment.validate();

    if (j.contains("fold")) {
        cfg.n_folds = detail::get_or<std::size_t>(j.at("fold"), "n_folds", cfg.n_folds);
        cfg.fold_id = static_cast<int>(detail::get_or<std::size_t>(j.at("fold"), "fold_id", 0));
    }
    if (cfg.data.categories.size() % cfg.n_folds != 0) {
        throw ConfigError("config error at /fold/n_folds: " + std::to_string(cfg.data.categories.size()) +
                          " categories are not divisible into " + std::to_string(cfg.n_folds) + " folds");
    }
    if (cfg.fold_id < 0 || static_cast<std::size_t>(cfg.fold_id) >= cfg.n_folds) {
        throw ConfigError("config error at /fold/fold_id: out of range");
    }

    if (j.contains("zoomin")) {
        cfg.zoomin_mode = proposal_source_from_name(
            detail::get_or<std::string>(j.at("zoomin"), "mode", "oracle"));
    }
    if (j.contains("attention")) {
        cfg.attention_layer = static_cast<int>(detail::get_or<std::int64_t>(j.at("attention"), "layer", -1));
        cfg.attention_images = detail::get_or<std::size_t>(j.at("attention"), "images", cfg.attention_images);
        if (cfg.attention_layer >= static_cast<int>(cfg.model.visual.n_layers)) {
            throw ConfigError("config error at /attention/layer: out of range");
        }
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open config");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace clsnav
