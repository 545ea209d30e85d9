#pragma once

// DistMatrix container files: the checkpoint container format with a single
// f64 tensor named "dist" of shape [N, V], metadata "tokens" (JSON list of
// the sequence's token strings) and "gold" (JSON list of gold token ids).
// An optional "vocab" metadata key (JSON list, index = token id) labels the
// columns so a file can be projected without side channels.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusemerge/container.hpp"
#include "fusemerge/fusion.hpp"

namespace fusemerge {

struct DistFile {
    DistMatrix dist;
    std::vector<std::string> tokens;
    std::vector<int> gold;
    std::vector<std::string> vocab;  // optional column labels
};

inline Checkpoint dist_to_checkpoint(const DistFile& file) {
    Checkpoint ckpt;
    Tensor t;
    t.dtype = Dtype::F64;
    t.shape = {file.dist.rows, file.dist.cols};
    t.data = file.dist.values;
    ckpt.tensors.emplace("dist", std::move(t));
    ckpt.metadata["tokens"] = nlohmann::json(file.tokens).dump();
    ckpt.metadata["gold"] = nlohmann::json(file.gold).dump();
    if (!file.vocab.empty()) ckpt.metadata["vocab"] = nlohmann::json(file.vocab).dump();
    return ckpt;
}

inline DistFile dist_from_checkpoint(const Checkpoint& ckpt, const std::string& origin) {
    using Kind = FormatError::Kind;
    auto it = ckpt.tensors.find("dist");
    if (it == ckpt.tensors.end())
        throw FormatError(Kind::MalformedHeader, origin + ": no 'dist' tensor");
    const Tensor& t = it->second;
    if (t.dtype != Dtype::F64 || t.shape.size() != 2)
        throw FormatError(Kind::MalformedHeader, origin + ": 'dist' must be a rank-2 f64 tensor");
    DistFile file;
    file.dist.rows = t.shape[0];
    file.dist.cols = t.shape[1];
    file.dist.values = t.data;
    try {
        file.dist.check_stochastic();
    } catch (const std::invalid_argument& e) {
        throw FormatError(Kind::MalformedHeader, origin + ": " + e.what());
    }
    auto parse_list = [&](const char* key, auto& into, bool required) {
        auto mi = ckpt.metadata.find(key);
        if (mi == ckpt.metadata.end()) {
            if (required) throw FormatError(Kind::MalformedHeader, origin + ": missing metadata '" + key + "'");
            return;
        }
        nlohmann::json j = nlohmann::json::parse(mi->second, nullptr, false);
        if (j.is_discarded() || !j.is_array())
            throw FormatError(Kind::MalformedHeader, origin + ": metadata '" + key + "' is not a JSON list");
        try {
            into = j.get<std::decay_t<decltype(into)>>();
        } catch (const nlohmann::json::exception&) {
            throw FormatError(Kind::MalformedHeader, origin + ": metadata '" + key + "' holds wrong element types");
        }
    };
    parse_list("tokens", file.tokens, true);
    parse_list("gold", file.gold, true);
    parse_list("vocab", file.vocab, false);
    return file;
}

inline void save_dist_file(const DistFile& file, const std::filesystem::path& path) {
    save_checkpoint(dist_to_checkpoint(file), path);
}

inline DistFile load_dist_file(const std::filesystem::path& path) {
    return dist_from_checkpoint(load_checkpoint(path), path.string());
}

}  // namespace fusemerge
