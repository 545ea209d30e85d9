#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fusemerge/errors.hpp"

namespace fusemerge {

enum class Dtype { F32, F64 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "F32" : "F64"; }

// Dense numeric array. Values live in an f64 working buffer regardless of the
// stored dtype; the dtype only controls the on-disk encoding.
struct Tensor {
    Dtype dtype = Dtype::F64;
    std::vector<std::size_t> shape;
    std::vector<double> data;  // row-major, length == product(shape)

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
};

inline Tensor make_tensor(Dtype dtype, std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t{dtype, std::move(shape), std::move(data)};
    if (t.size() != t.data.size())
        throw std::invalid_argument("tensor shape does not match data length");
    return t;
}

// Ordered name -> tensor map plus free-form provenance strings. Iteration is
// lexicographic by name, which fixes serialization and statistics order.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors) n += t.size();
        return n;
    }
};

enum class MismatchKind { Missing, Shape, Dtype };

inline const char* mismatch_kind_name(MismatchKind k) {
    switch (k) {
        case MismatchKind::Missing: return "missing";
        case MismatchKind::Shape: return "shape";
        default: return "dtype";
    }
}

struct Mismatch {
    std::string name;
    MismatchKind kind;
};

struct CompatibilityReport {
    bool compatible = true;
    std::vector<Mismatch> mismatches;
};

// Compares every checkpoint against the first: identical name sets, shapes
// and dtypes are required. Findings go into the report; nothing throws.
inline CompatibilityReport validate_compatible(const std::vector<const Checkpoint*>& ckpts) {
    if (ckpts.empty()) throw std::invalid_argument("validate_compatible: empty checkpoint list");
    std::set<std::pair<std::string, MismatchKind>> found;
    const Checkpoint& ref = *ckpts.front();
    for (std::size_t k = 1; k < ckpts.size(); ++k) {
        const Checkpoint& other = *ckpts[k];
        for (const auto& [name, t] : ref.tensors) {
            auto it = other.tensors.find(name);
            if (it == other.tensors.end()) {
                found.emplace(name, MismatchKind::Missing);
                continue;
            }
            if (it->second.shape != t.shape) found.emplace(name, MismatchKind::Shape);
            if (it->second.dtype != t.dtype) found.emplace(name, MismatchKind::Dtype);
        }
        for (const auto& [name, t] : other.tensors)
            if (!ref.tensors.count(name)) found.emplace(name, MismatchKind::Missing);
    }
    CompatibilityReport report;
    for (const auto& [name, kind] : found) report.mismatches.push_back({name, kind});
    report.compatible = report.mismatches.empty();
    return report;
}

inline CompatibilityReport validate_compatible(const Checkpoint& a, const Checkpoint& b) {
    return validate_compatible(std::vector<const Checkpoint*>{&a, &b});
}

inline void require_compatible(const std::vector<const Checkpoint*>& ckpts, const char* context) {
    CompatibilityReport report = validate_compatible(ckpts);
    if (report.compatible) return;
    std::string msg = std::string(context) + ": incompatible checkpoints:";
    for (const Mismatch& m : report.mismatches)
        msg += " " + m.name + "(" + mismatch_kind_name(m.kind) + ")";
    throw IncompatibleError(msg);
}

}  // namespace fusemerge
