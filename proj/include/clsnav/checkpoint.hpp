#pragma once

// Checkpoint = params.bin (concatenated tensor records) + manifest.json
// mapping parameter names to byte offsets, plus config snapshot, stage
// provenance and final metrics.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clsnav/nn.hpp"
#include "clsnav/tensor.hpp"

namespace clsnav {

struct Checkpoint {
    std::vector<std::pair<std::string, TensorPtr>> tensors;
    nlohmann::json config;
    std::string stage;
    nlohmann::json metrics;

    const TensorPtr& find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return t;
        }
        throw TensorError("checkpoint: no tensor named '" + name + "'");
    }
};

inline Checkpoint checkpoint_from_params(const ParamSet& params, nlohmann::json config, std::string stage,
                                         nlohmann::json metrics) {
    Checkpoint ckpt;
    for (const auto& [name, t] : params.items()) ckpt.tensors.emplace_back(name, t);
    ckpt.config = std::move(config);
    ckpt.stage = std::move(stage);
    ckpt.metrics = std::move(metrics);
    return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::filesystem::create_directories(dir);
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw TensorError((dir / "params.bin").string() + ": cannot open for writing");

    nlohmann::json index = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        index.push_back({{"name", name}, {"offset", offset}, {"shape", t->shape}});
        write_tensor(bin, *t);
        offset += tensor_record_size(*t);
    }
    bin.close();

    nlohmann::json manifest{{"format", "clsnav-checkpoint-v1"},
                            {"stage", ckpt.stage},
                            {"config", ckpt.config},
                            {"metrics", ckpt.metrics},
                            {"tensors", index}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw TensorError((dir / "manifest.json").string() + ": cannot open for writing");
    os << manifest.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw TensorError((dir / "manifest.json").string() + ": missing checkpoint manifest");
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw TensorError((dir / "manifest.json").string() + ": malformed manifest: " + e.what());
    }
    if (manifest.value("format", "") != "clsnav-checkpoint-v1") {
        throw TensorError((dir / "manifest.json").string() + ": unknown checkpoint format");
    }

    Checkpoint ckpt;
    ckpt.stage = manifest.at("stage").get<std::string>();
    ckpt.config = manifest.at("config");
    ckpt.metrics = manifest.at("metrics");

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw TensorError((dir / "params.bin").string() + ": missing checkpoint payload");
    for (const auto& entry : manifest.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
        ckpt.tensors.emplace_back(name, read_tensor(bin));
    }
    return ckpt;
}

// Copies checkpoint values into matching parameters. `prefix_filter`
// restricts both sides to names under the given prefixes; every filtered
// destination parameter must be covered exactly once.
inline void load_state(const ParamSet& dest, const Checkpoint& ckpt,
                       const std::vector<std::string>& prefix_filter = {}) {
    auto keep = [&](const std::string& name) {
        if (prefix_filter.empty()) return true;
        for (const auto& p : prefix_filter) {
            if (name.rfind(p, 0) == 0) return true;
        }
        return false;
    };

    std::size_t used = 0;
    for (const auto& [name, t] : dest.items()) {
        if (!keep(name)) continue;
        bool found = false;
        for (const auto& [cn, ct] : ckpt.tensors) {
            if (cn != name) continue;
            if (ct->shape != t->shape) {
                throw TensorError("load_state: '" + name + "' shape " + shape_str(ct->shape) +
                                  " does not match model shape " + shape_str(t->shape));
            }
            t->data = ct->data;
            found = true;
            ++used;
            break;
        }
        if (!found) throw TensorError("load_state: checkpoint is missing parameter '" + name + "'");
    }
    for (const auto& [cn, ct] : ckpt.tensors) {
        if (keep(cn) && !dest.has(cn)) {
            throw TensorError("load_state: checkpoint parameter '" + cn + "' has no destination in the model");
        }
    }
    if (used == 0) throw TensorError("load_state: no parameters matched the requested prefixes");
}

}  // namespace clsnav
