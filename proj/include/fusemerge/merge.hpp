#pragma once

// Parameter-space merging of compatible checkpoints.
//
// The variation-ratio method weights each merge unit by the mean squared
// parameter change of that unit during fine-tuning, normalized across the
// targets. Baselines: linear combination, spherical interpolation, task
// arithmetic, trim/elect/mean, and random drop with rescale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fusemerge/parallel.hpp"
#include "fusemerge/partition.hpp"
#include "fusemerge/prng.hpp"
#include "fusemerge/tensor.hpp"

namespace fusemerge {

enum class MergeMethod { Varm, Linear, Slerp, TaskArithmetic, Ties, Dare };

inline const char* merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::Varm: return "varm";
        case MergeMethod::Linear: return "linear";
        case MergeMethod::Slerp: return "slerp";
        case MergeMethod::TaskArithmetic: return "ta";
        case MergeMethod::Ties: return "ties";
        default: return "dare";
    }
}

inline std::optional<MergeMethod> merge_method_from_name(std::string_view s) {
    if (s == "varm") return MergeMethod::Varm;
    if (s == "linear") return MergeMethod::Linear;
    if (s == "slerp") return MergeMethod::Slerp;
    if (s == "ta") return MergeMethod::TaskArithmetic;
    if (s == "ties") return MergeMethod::Ties;
    if (s == "dare") return MergeMethod::Dare;
    return std::nullopt;
}

enum class WeightMode { Square, Abs, Softmax };

inline const char* weight_mode_name(WeightMode m) {
    switch (m) {
        case WeightMode::Square: return "square";
        case WeightMode::Abs: return "abs";
        default: return "softmax";
    }
}

inline std::optional<WeightMode> weight_mode_from_name(std::string_view s) {
    if (s == "square") return WeightMode::Square;
    if (s == "abs") return WeightMode::Abs;
    if (s == "softmax") return WeightMode::Softmax;
    return std::nullopt;
}

struct MergeConfig {
    MergeMethod method = MergeMethod::Varm;
    Granularity granularity = Granularity::Matrix;
    WeightMode weight_mode = WeightMode::Square;
    std::vector<double> coeffs;       // linear
    double t = 0.5;                   // slerp
    double scale = 1.0;               // ta / ties / dare
    double density = 0.2;             // ties
    double drop_rate = 0.5;           // dare
    std::uint64_t seed = 0;           // dare
    double softmax_temperature = 1.0; // varm softmax mode
    std::string layer_pattern = kDefaultLayerPattern;

    // Only fields the method actually uses are range-checked; the rest are
    // ignored.
    void validate() const {
        switch (method) {
            case MergeMethod::Slerp:
                if (t < 0.0 || t > 1.0) throw std::invalid_argument("t must lie in [0,1]");
                break;
            case MergeMethod::Ties:
                if (!(density > 0.0 && density <= 1.0))
                    throw std::invalid_argument("density must lie in (0,1]");
                break;
            case MergeMethod::Dare:
                if (!(drop_rate >= 0.0 && drop_rate < 1.0))
                    throw std::invalid_argument("drop_rate must lie in [0,1)");
                break;
            case MergeMethod::Varm:
                if (!(softmax_temperature > 0.0))
                    throw std::invalid_argument("softmax temperature must be positive");
                break;
            default:
                break;
        }
    }
};

// Per-unit squared / absolute parameter change between a base and a target
// checkpoint. Accumulation is f64 in fixed (name, index) order, so tiny
// deltas of f32-stored checkpoints survive the ratios downstream.
struct UnitDelta {
    double mean_sq = 0.0;
    double mean_abs = 0.0;
    std::uint64_t count = 0;
};

struct DeltaStats {
    std::vector<std::string> unit_ids;
    std::map<std::string, UnitDelta> units;
};

inline DeltaStats delta_stats(const Checkpoint& base, const Checkpoint& target,
                              const UnitPartition& partition) {
    require_compatible({&base, &target}, "delta_stats");
    struct Accum {
        double sum_sq = 0.0, sum_abs = 0.0;
        std::uint64_t count = 0;
    };
    std::map<std::string, Accum> accum;
    for (const std::string& id : partition.unit_ids) accum[id];
    for (const auto& [name, bt] : base.tensors) {
        const Tensor& tt = target.tensors.at(name);
        const bool per_scalar = partition.granularity == Granularity::Parameter;
        Accum* fixed = per_scalar ? nullptr : &accum.at(partition.unit_of_tensor(name));
        for (std::size_t i = 0; i < bt.data.size(); ++i) {
            const double d = tt.data[i] - bt.data[i];
            Accum& a = fixed ? *fixed : accum.at(UnitPartition::scalar_unit_id(name, i));
            a.sum_sq += d * d;
            a.sum_abs += std::abs(d);
            a.count += 1;
        }
    }
    DeltaStats stats;
    stats.unit_ids = partition.unit_ids;
    for (const auto& [id, a] : accum) {
        UnitDelta u;
        u.count = a.count;
        if (a.count > 0) {
            u.mean_sq = a.sum_sq / static_cast<double>(a.count);
            u.mean_abs = a.sum_abs / static_cast<double>(a.count);
        }
        stats.units[id] = u;
    }
    return stats;
}

// One weight vector over the targets per unit; each vector is non-negative
// and sums to 1.
struct MergeWeights {
    std::vector<std::string> unit_ids;
    std::map<std::string, std::vector<double>> weights;
};

// Normalized variation ratios. square: mean_sq_j / sum_j mean_sq_j;
// abs: same with mean_abs; softmax: exp(mean_sq_j / T) normalized (computed
// with max subtraction). A unit whose denominator vanishes gets uniform
// weights.
inline MergeWeights varm_weights(const std::vector<DeltaStats>& stats, WeightMode mode,
                                 double temperature = 1.0) {
    if (stats.empty()) throw std::invalid_argument("varm_weights: need at least one target's stats");
    if (!(temperature > 0.0)) throw std::invalid_argument("varm_weights: temperature must be positive");
    const std::size_t k = stats.size();
    for (std::size_t j = 1; j < k; ++j)
        if (stats[j].unit_ids != stats[0].unit_ids)
            throw std::invalid_argument("varm_weights: mismatched unit ids across targets");

    MergeWeights out;
    out.unit_ids = stats[0].unit_ids;
    std::vector<double> vals(k);
    for (const std::string& id : out.unit_ids) {
        for (std::size_t j = 0; j < k; ++j) {
            const UnitDelta& u = stats[j].units.at(id);
            vals[j] = mode == WeightMode::Abs ? u.mean_abs : u.mean_sq;
        }
        std::vector<double>& w = out.weights[id];
        w.assign(k, 0.0);
        if (mode == WeightMode::Softmax) {
            const double m = *std::max_element(vals.begin(), vals.end());
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                w[j] = std::exp((vals[j] - m) / temperature);
                denom += w[j];
            }
            for (std::size_t j = 0; j < k; ++j) w[j] /= denom;
        } else {
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) denom += vals[j];
            if (denom == 0.0) {
                w.assign(k, 1.0 / static_cast<double>(k));
            } else {
                for (std::size_t j = 0; j < k; ++j) w[j] = vals[j] / denom;
            }
        }
    }
    return out;
}

namespace detail {

inline void require_targets(const std::vector<Checkpoint>& targets, const char* context) {
    if (targets.empty()) throw std::invalid_argument(std::string(context) + ": no targets");
    std::vector<const Checkpoint*> ptrs;
    for (const Checkpoint& c : targets) ptrs.push_back(&c);
    require_compatible(ptrs, context);
}

inline Checkpoint output_like(const Checkpoint& ref, std::map<std::string, std::string> metadata) {
    Checkpoint out;
    out.metadata = std::move(metadata);
    for (const auto& [name, t] : ref.tensors) {
        Tensor o;
        o.dtype = t.dtype;
        o.shape = t.shape;
        o.data.assign(t.data.size(), 0.0);
        out.tensors.emplace(name, std::move(o));
    }
    return out;
}

inline std::vector<std::string> tensor_names(const Checkpoint& c) {
    std::vector<std::string> names;
    for (const auto& [name, t] : c.tensors) names.push_back(name);
    return names;
}

}  // namespace detail

// Each output scalar is sum_j W[j, unit(scalar)] * target_j(scalar).
inline Checkpoint merge_weighted(const std::vector<Checkpoint>& targets, const MergeWeights& weights,
                                 const UnitPartition& partition,
                                 std::map<std::string, std::string> metadata = {}) {
    detail::require_targets(targets, "merge_weighted");
    if (metadata.empty()) metadata["merge.method"] = "weighted";
    Checkpoint out = detail::output_like(targets[0], std::move(metadata));
    const std::vector<std::string> names = detail::tensor_names(out);
    const bool per_scalar = partition.granularity == Granularity::Parameter;

    // Coverage is checked up front: the parallel body must not throw.
    auto weights_for = [&](const std::string& unit) -> const std::vector<double>& {
        auto it = weights.weights.find(unit);
        if (it == weights.weights.end())
            throw std::invalid_argument("merge_weighted: no weights for unit '" + unit + "'");
        if (it->second.size() != targets.size())
            throw std::invalid_argument("merge_weighted: weight vector length does not match target count");
        return it->second;
    };
    for (const std::string& name : names) {
        if (per_scalar) {
            for (std::size_t i = 0; i < out.tensors.at(name).data.size(); ++i)
                weights_for(UnitPartition::scalar_unit_id(name, i));
        } else {
            weights_for(partition.unit_of(name, 0));
        }
    }

    parallel_for(names.size(), [&](std::size_t ni) {
        const std::string& name = names[ni];
        Tensor& o = out.tensors.at(name);
        const std::vector<double>* fixed =
            per_scalar ? nullptr : &weights.weights.at(partition.unit_of_tensor(name));
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            const std::vector<double>& w =
                fixed ? *fixed : weights.weights.at(UnitPartition::scalar_unit_id(name, i));
            double acc = 0.0;
            for (std::size_t j = 0; j < targets.size(); ++j)
                acc += w[j] * targets[j].tensors.at(name).data[i];
            o.data[i] = acc;
        }
    });
    return out;
}

inline Checkpoint merge_varm(const Checkpoint& base, const std::vector<Checkpoint>& targets,
                             Granularity granularity, WeightMode mode,
                             const std::string& layer_pattern = kDefaultLayerPattern,
                             double temperature = 1.0) {
    detail::require_targets(targets, "merge_varm");
    require_compatible({&base, &targets[0]}, "merge_varm");
    const UnitPartition partition = partition_units(base, granularity, layer_pattern);
    std::vector<DeltaStats> stats;
    stats.reserve(targets.size());
    for (const Checkpoint& t : targets) stats.push_back(delta_stats(base, t, partition));
    const MergeWeights weights = varm_weights(stats, mode, temperature);
    std::map<std::string, std::string> metadata{
        {"merge.method", "varm"},
        {"merge.granularity", granularity_name(granularity)},
        {"merge.weight_mode", weight_mode_name(mode)},
    };
    return merge_weighted(targets, weights, partition, std::move(metadata));
}

inline Checkpoint merge_linear(const std::vector<Checkpoint>& targets, const std::vector<double>& coeffs) {
    detail::require_targets(targets, "merge_linear");
    if (coeffs.size() != targets.size())
        throw std::invalid_argument("merge_linear: need one coefficient per target");
    double sum = 0.0;
    for (double c : coeffs) sum += c;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("merge_linear: coefficients must sum to 1");
    Checkpoint out = detail::output_like(targets[0], {{"merge.method", "linear"}});
    for (auto& [name, o] : out.tensors) {
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < targets.size(); ++j)
                acc += coeffs[j] * targets[j].tensors.at(name).data[i];
            o.data[i] = acc;
        }
    }
    return out;
}

// Spherical interpolation per tensor. Near-parallel (or zero-norm) tensors
// fall back to linear interpolation: the spherical formula is singular there
// and antiparallel pairs have no unique geodesic.
inline Checkpoint merge_slerp(const Checkpoint& a, const Checkpoint& b, double t) {
    require_compatible({&a, &b}, "merge_slerp");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("merge_slerp: t must lie in [0,1]");
    std::map<std::string, std::string> metadata{{"merge.method", "slerp"}};
    if (t == 0.0) {
        Checkpoint out = a;
        out.metadata = std::move(metadata);
        return out;
    }
    if (t == 1.0) {
        Checkpoint out = b;
        out.metadata = std::move(metadata);
        return out;
    }
    Checkpoint out = detail::output_like(a, std::move(metadata));
    for (auto& [name, o] : out.tensors) {
        const std::vector<double>& u = a.tensors.at(name).data;
        const std::vector<double>& v = b.tensors.at(name).data;
        double dot = 0.0, nu = 0.0, nv = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        nu = std::sqrt(nu);
        nv = std::sqrt(nv);
        double cu = 1.0 - t, cv = t;  // linear fallback coefficients
        if (nu > 0.0 && nv > 0.0) {
            const double cos_omega = std::clamp(dot / (nu * nv), -1.0, 1.0);
            const double omega = std::acos(cos_omega);
            const double sin_omega = std::sin(omega);
            if (sin_omega >= 1e-6) {
                cu = std::sin((1.0 - t) * omega) / sin_omega;
                cv = std::sin(t * omega) / sin_omega;
            }
        }
        for (std::size_t i = 0; i < u.size(); ++i) o.data[i] = cu * u[i] + cv * v[i];
    }
    return out;
}

inline Checkpoint merge_task_arithmetic(const Checkpoint& base, const std::vector<Checkpoint>& targets,
                                        double scale) {
    detail::require_targets(targets, "merge_task_arithmetic");
    require_compatible({&base, &targets[0]}, "merge_task_arithmetic");
    Checkpoint out = detail::output_like(base, {{"merge.method", "ta"}});
    for (auto& [name, o] : out.tensors) {
        const std::vector<double>& b = base.tensors.at(name).data;
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < targets.size(); ++j)
                acc += targets[j].tensors.at(name).data[i] - b[i];
            o.data[i] = b[i] + scale * acc;
        }
    }
    return out;
}

namespace detail {

// Keeps the ceil(density*n) largest-magnitude entries of tau, zeroing the
// rest. Ties break toward the lower flat index.
inline std::vector<double> trim_by_magnitude(const std::vector<double>& tau, double density) {
    const std::size_t n = tau.size();
    if (n == 0) return tau;
    std::size_t keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n)));
    keep = std::min(keep, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(tau[a]), mb = std::abs(tau[b]);
        return ma != mb ? ma > mb : a < b;
    });
    std::vector<double> trimmed(n, 0.0);
    for (std::size_t r = 0; r < keep; ++r) trimmed[order[r]] = tau[order[r]];
    return trimmed;
}

}  // namespace detail

// Trim each task vector per tensor, elect a sign per scalar from the summed
// trimmed values (sum of zero elects +), then average the trimmed values
// agreeing with the elected sign.
inline Checkpoint merge_ties(const Checkpoint& base, const std::vector<Checkpoint>& targets,
                             double density, double scale) {
    detail::require_targets(targets, "merge_ties");
    require_compatible({&base, &targets[0]}, "merge_ties");
    if (!(density > 0.0 && density <= 1.0))
        throw std::invalid_argument("merge_ties: density must lie in (0,1]");
    Checkpoint out = detail::output_like(base, {{"merge.method", "ties"}});
    for (auto& [name, o] : out.tensors) {
        const std::vector<double>& b = base.tensors.at(name).data;
        const std::size_t n = b.size();
        std::vector<std::vector<double>> trimmed;
        trimmed.reserve(targets.size());
        for (const Checkpoint& tgt : targets) {
            const std::vector<double>& td = tgt.tensors.at(name).data;
            std::vector<double> tau(n);
            for (std::size_t i = 0; i < n; ++i) tau[i] = td[i] - b[i];
            trimmed.push_back(detail::trim_by_magnitude(tau, density));
        }
        for (std::size_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (const auto& tau : trimmed) total += tau[i];
            const double sign = total < 0.0 ? -1.0 : 1.0;
            double sum = 0.0;
            std::size_t cnt = 0;
            for (const auto& tau : trimmed) {
                if (tau[i] != 0.0 && ((tau[i] > 0.0) == (sign > 0.0))) {
                    sum += tau[i];
                    ++cnt;
                }
            }
            const double merged = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
            o.data[i] = b[i] + scale * merged;
        }
    }
    return out;
}

// Per scalar of each task vector: drop with probability drop_rate, otherwise
// rescale by 1/(1-drop_rate); draws come from the keyed PRNG stream, so the
// result is a pure function of (inputs, seed).
inline Checkpoint merge_dare(const Checkpoint& base, const std::vector<Checkpoint>& targets,
                             double drop_rate, double scale, std::uint64_t seed) {
    detail::require_targets(targets, "merge_dare");
    require_compatible({&base, &targets[0]}, "merge_dare");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0))
        throw std::invalid_argument("merge_dare: drop_rate must lie in [0,1)");
    Checkpoint out = detail::output_like(base, {{"merge.method", "dare"}});
    const double rescale = 1.0 / (1.0 - drop_rate);
    for (auto& [name, o] : out.tensors) {
        const std::vector<double>& b = base.tensors.at(name).data;
        for (std::size_t i = 0; i < o.data.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < targets.size(); ++j) {
                const double tau = targets[j].tensors.at(name).data[i] - b[i];
                const double u = keyed_unit_draw(seed, j, name, i);
                if (u >= drop_rate) acc += tau * rescale;
            }
            o.data[i] = b[i] + scale * acc;
        }
    }
    return out;
}

}  // namespace fusemerge
