#pragma once

// Probability-matrix view of next-token prediction: cross entropy against
// gold labels, KL toward a teacher matrix, minimum-cross-entropy fusion of
// two matrices, and the weighted training objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fusemerge {

// Probabilities are clamped here before any log.
inline constexpr double kProbClampMin = 1e-12;

// Row-stochastic N x V matrix: row i is a distribution over the vocabulary.
struct DistMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major

    DistMatrix() = default;
    DistMatrix(std::size_t n, std::size_t v, double fill = 0.0) : rows(n), cols(v), values(n * v, fill) {}

    double& at(std::size_t i, std::size_t v) { return values[i * cols + v]; }
    double at(std::size_t i, std::size_t v) const { return values[i * cols + v]; }

    double* row(std::size_t i) { return values.data() + i * cols; }
    const double* row(std::size_t i) const { return values.data() + i * cols; }

    static DistMatrix uniform(std::size_t n, std::size_t v) {
        return DistMatrix(n, v, 1.0 / static_cast<double>(v));
    }

    void check_stochastic(double tol = 1e-9) const {
        for (std::size_t i = 0; i < rows; ++i) {
            double sum = 0.0;
            for (std::size_t v = 0; v < cols; ++v) {
                const double p = at(i, v);
                if (p < 0.0) throw std::invalid_argument("distribution row holds a negative entry");
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol)
                throw std::invalid_argument("distribution row " + std::to_string(i) + " does not sum to 1");
        }
    }
};

// Gold token per row plus the loss mask (true = contributes to the loss).
struct GoldLabels {
    std::vector<int> token_ids;
    std::vector<bool> loss_mask;

    std::size_t size() const { return token_ids.size(); }
};

namespace detail {

inline void require_gold_matches(const DistMatrix& p, const GoldLabels& gold, const char* context) {
    if (gold.token_ids.size() != gold.loss_mask.size())
        throw std::invalid_argument(std::string(context) + ": gold ids and mask lengths differ");
    if (gold.size() != p.rows)
        throw std::invalid_argument(std::string(context) + ": gold length does not match matrix rows");
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (gold.loss_mask[i] && (gold.token_ids[i] < 0 || static_cast<std::size_t>(gold.token_ids[i]) >= p.cols))
            throw std::invalid_argument(std::string(context) + ": gold token id out of range");
}

inline void require_same_shape(const DistMatrix& a, const DistMatrix& b, const char* context) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument(std::string(context) + ": matrix shapes differ");
}

}  // namespace detail

// Mean negative log probability of the gold token over masked-in rows;
// 0 when nothing is masked in.
inline double cross_entropy(const DistMatrix& p, const GoldLabels& gold, double clamp_min = kProbClampMin) {
    detail::require_gold_matches(p, gold, "cross_entropy");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.rows; ++i) {
        if (!gold.loss_mask[i]) continue;
        total += -std::log(std::max(p.at(i, static_cast<std::size_t>(gold.token_ids[i])), clamp_min));
        ++count;
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

// Mean over masked-in rows of KL(P || Q): sum_v P (log P - log Q) with
// 0 log 0 = 0 and Q clamped before the log. Q is the distribution being
// trained toward the teacher P.
inline double kl_divergence(const DistMatrix& q, const DistMatrix& p, const std::vector<bool>& mask,
                            double clamp_min = kProbClampMin) {
    detail::require_same_shape(q, p, "kl_divergence");
    if (mask.size() != p.rows) throw std::invalid_argument("kl_divergence: mask length does not match rows");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.rows; ++i) {
        if (!mask[i]) continue;
        double row = 0.0;
        for (std::size_t v = 0; v < p.cols; ++v) {
            const double pv = p.at(i, v);
            if (pv <= 0.0) continue;
            row += pv * (std::log(pv) - std::log(std::max(q.at(i, v), clamp_min)));
        }
        total += row;
        ++count;
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

enum class FuseGranularity { Sequence, Token };

inline const char* fuse_granularity_name(FuseGranularity g) {
    return g == FuseGranularity::Sequence ? "sequence" : "token";
}

inline std::optional<FuseGranularity> fuse_granularity_from_name(std::string_view s) {
    if (s == "sequence") return FuseGranularity::Sequence;
    if (s == "token") return FuseGranularity::Token;
    return std::nullopt;
}

// Minimum-cross-entropy fusion. Sequence granularity returns whichever whole
// matrix scores the lower cross entropy against gold (so the output equals
// one of the inputs pointwise); token granularity picks per masked-in row,
// with masked-out rows taken from the pivot. Ties go to the pivot either way.
// Masked rows never influence selection.
inline DistMatrix fuse_mince(const DistMatrix& pivot, const DistMatrix& source, const GoldLabels& gold,
                             FuseGranularity granularity = FuseGranularity::Sequence,
                             double clamp_min = kProbClampMin) {
    detail::require_same_shape(pivot, source, "fuse_mince");
    detail::require_gold_matches(pivot, gold, "fuse_mince");
    if (granularity == FuseGranularity::Sequence) {
        const double ce_pivot = cross_entropy(pivot, gold, clamp_min);
        const double ce_source = cross_entropy(source, gold, clamp_min);
        return ce_source < ce_pivot ? source : pivot;
    }
    DistMatrix fused = pivot;
    for (std::size_t i = 0; i < fused.rows; ++i) {
        if (!gold.loss_mask[i]) continue;
        const std::size_t g = static_cast<std::size_t>(gold.token_ids[i]);
        const double ce_pivot = -std::log(std::max(pivot.at(i, g), clamp_min));
        const double ce_source = -std::log(std::max(source.at(i, g), clamp_min));
        if (ce_source < ce_pivot)
            for (std::size_t v = 0; v < fused.cols; ++v) fused.at(i, v) = source.at(i, v);
    }
    return fused;
}

// Named alias of kl_divergence toward the fused matrix.
inline double fusion_loss(const DistMatrix& q, const DistMatrix& fused, const std::vector<bool>& mask,
                          double clamp_min = kProbClampMin) {
    return kl_divergence(q, fused, mask, clamp_min);
}

inline double combined_loss(double l_clm, double l_fusion, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("combined_loss: lambda must lie in [0,1]");
    return lambda * l_clm + (1.0 - lambda) * l_fusion;
}

}  // namespace fusemerge
