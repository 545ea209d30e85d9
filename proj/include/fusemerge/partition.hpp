#pragma once

#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fusemerge/tensor.hpp"

namespace fusemerge {

enum class Granularity { Model, Layer, Matrix, Parameter };

inline const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::Model: return "model";
        case Granularity::Layer: return "layer";
        case Granularity::Matrix: return "matrix";
        default: return "parameter";
    }
}

inline std::optional<Granularity> granularity_from_name(std::string_view s) {
    if (s == "model") return Granularity::Model;
    if (s == "layer") return Granularity::Layer;
    if (s == "matrix") return Granularity::Matrix;
    if (s == "parameter") return Granularity::Parameter;
    return std::nullopt;
}

// Matches the ".<int>." convention transformer checkpoints use for layer
// indices; capture group 1 is the index.
inline constexpr const char* kDefaultLayerPattern = R"(\.(\d+)\.)";

// Assignment of every scalar of a checkpoint to exactly one merge unit.
// Model/Layer/Matrix assign whole tensors; Parameter gives each scalar its
// own unit, with ids derived on demand to avoid materializing the map.
struct UnitPartition {
    Granularity granularity = Granularity::Matrix;
    std::map<std::string, std::string> tensor_unit;  // unused at Parameter granularity
    std::vector<std::string> unit_ids;
    std::vector<std::string> warnings;

    static std::string scalar_unit_id(const std::string& name, std::size_t flat_index) {
        return name + "[" + std::to_string(flat_index) + "]";
    }

    const std::string& unit_of_tensor(const std::string& name) const {
        auto it = tensor_unit.find(name);
        if (it == tensor_unit.end())
            throw std::invalid_argument("partition does not cover tensor '" + name + "'");
        return it->second;
    }

    std::string unit_of(const std::string& name, std::size_t flat_index) const {
        if (granularity == Granularity::Parameter) return scalar_unit_id(name, flat_index);
        return unit_of_tensor(name);
    }
};

inline UnitPartition partition_units(const Checkpoint& ckpt, Granularity granularity,
                                     const std::string& layer_pattern = kDefaultLayerPattern) {
    UnitPartition part;
    part.granularity = granularity;
    switch (granularity) {
        case Granularity::Model: {
            part.unit_ids.push_back("model");
            for (const auto& [name, t] : ckpt.tensors) part.tensor_unit[name] = "model";
            break;
        }
        case Granularity::Matrix: {
            for (const auto& [name, t] : ckpt.tensors) {
                part.tensor_unit[name] = name;
                part.unit_ids.push_back(name);
            }
            break;
        }
        case Granularity::Parameter: {
            for (const auto& [name, t] : ckpt.tensors)
                for (std::size_t i = 0; i < t.size(); ++i)
                    part.unit_ids.push_back(UnitPartition::scalar_unit_id(name, i));
            break;
        }
        case Granularity::Layer: {
            std::regex re;
            try {
                re = std::regex(layer_pattern);
            } catch (const std::regex_error& e) {
                throw std::invalid_argument("invalid layer pattern '" + layer_pattern + "': " + e.what());
            }
            std::set<long long> layers;
            bool any_match = false;
            bool any_unassigned = false;
            for (const auto& [name, t] : ckpt.tensors) {
                std::smatch m;
                std::string unit = "unassigned";
                if (std::regex_search(name, m, re)) {
                    const std::string idx_text = m.size() > 1 && m[1].matched ? m[1].str() : m[0].str();
                    try {
                        const long long idx = std::stoll(idx_text);
                        unit = "layer." + std::to_string(idx);
                        layers.insert(idx);
                        any_match = true;
                    } catch (const std::exception&) {
                        // matched text is not an integer; leave unassigned
                    }
                }
                if (unit == "unassigned") any_unassigned = true;
                part.tensor_unit[name] = unit;
            }
            for (long long idx : layers) part.unit_ids.push_back("layer." + std::to_string(idx));
            if (any_unassigned) part.unit_ids.push_back("unassigned");
            if (!any_match && !ckpt.tensors.empty())
                part.warnings.push_back("layer pattern '" + layer_pattern + "' matched no tensor names");
            break;
        }
    }
    return part;
}

}  // namespace fusemerge
