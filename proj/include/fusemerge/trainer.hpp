#pragma once

// Pairwise fuse training: fuse the initial pivot's distributions with one
// teacher per sample, then fine-tune a copy of the pivot against the fused
// matrices with full-batch gradient descent.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusemerge/corpus.hpp"
#include "fusemerge/dist_io.hpp"
#include "fusemerge/fusion.hpp"
#include "fusemerge/toylm.hpp"

namespace fusemerge {

struct TrainConfig {
    double lambda = 0.9;
    double lr = 0.05;
    int epochs = 10;
    int batch = 0;  // reserved; training is full-batch
    std::uint64_t seed = 0;
    std::size_t block_len = 2048;
    FuseGranularity mince = FuseGranularity::Sequence;

    void validate() const {
        if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
        if (block_len < 2) throw std::invalid_argument("block_len must be at least 2");
        if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
        if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    }
};

// Next-token view of a sample: gold row i labels token i+1, carrying token
// i+1's role mask; the final forward row predicts nothing and stays masked
// out.
inline GoldLabels shifted_gold(const DialogueSample& sample) {
    if (sample.token_ids.size() != sample.role_mask.size())
        throw std::invalid_argument("shifted_gold: token and mask lengths differ");
    const std::size_t n = sample.token_ids.size();
    GoldLabels gold;
    gold.token_ids.assign(n, 0);
    gold.loss_mask.assign(n, false);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        gold.token_ids[i] = sample.token_ids[i + 1];
        gold.loss_mask[i] = sample.role_mask[i + 1];
    }
    return gold;
}

struct TrainLogEntry {
    int epoch = 0;
    double loss = 0.0;
    double clm = 0.0;
    double fusion = 0.0;
};

struct TrainResult {
    Checkpoint params;
    std::vector<TrainLogEntry> log;
};

// Per-sample fused matrices come from the *initial* pivot, then the model is
// trained for config.epochs full-batch steps. Deterministic: no randomness
// enters the loop, so identical inputs give bitwise-identical checkpoints.
inline TrainResult pairwise_fuse(const ToyLM& pivot, const std::vector<DistMatrix>& teachers,
                                 const std::vector<DialogueSample>& corpus, const TrainConfig& config) {
    config.validate();
    if (teachers.size() != corpus.size())
        throw std::invalid_argument("pairwise_fuse: need exactly one teacher distribution per corpus sample");

    std::vector<GoldLabels> golds;
    std::vector<DistMatrix> fused;
    golds.reserve(corpus.size());
    fused.reserve(corpus.size());
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        golds.push_back(shifted_gold(corpus[s]));
        const DistMatrix pivot_dist = toy_forward(pivot, corpus[s].token_ids);
        if (teachers[s].rows != pivot_dist.rows || teachers[s].cols != pivot_dist.cols)
            throw std::invalid_argument("pairwise_fuse: teacher matrix for sample " + std::to_string(s) +
                                        " does not match the pivot's output shape");
        fused.push_back(fuse_mince(pivot_dist, teachers[s], golds.back(), config.mince));
    }

    ToyLM model{pivot.params};
    TrainResult result;
    const double inv_s = corpus.empty() ? 0.0 : 1.0 / static_cast<double>(corpus.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss = 0.0, clm = 0.0, fus = 0.0;
        Checkpoint grad_sum;
        for (std::size_t s = 0; s < corpus.size(); ++s) {
            LossAndGrads lg =
                toy_loss_and_grads(model, corpus[s].token_ids, golds[s], &fused[s], config.lambda);
            loss += lg.loss * inv_s;
            clm += lg.clm * inv_s;
            fus += lg.fusion * inv_s;
            if (grad_sum.tensors.empty()) {
                grad_sum = std::move(lg.grads);
            } else {
                for (auto& [name, g] : grad_sum.tensors) {
                    const Tensor& add = lg.grads.tensors.at(name);
                    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += add.data[i];
                }
            }
        }
        if (!std::isfinite(loss))
            throw NonFiniteLossError("training loss became non-finite at epoch " + std::to_string(epoch));
        result.log.push_back({epoch, loss, clm, fus});
        if (grad_sum.tensors.empty()) continue;
        for (auto& [name, p] : model.params.tensors) {
            const Tensor& g = grad_sum.tensors.at(name);
            for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= config.lr * g.data[i] * inv_s;
        }
    }

    result.params = std::move(model.params);
    result.params.metadata["train.lambda"] = std::to_string(config.lambda);
    result.params.metadata["train.lr"] = std::to_string(config.lr);
    result.params.metadata["train.epochs"] = std::to_string(config.epochs);
    result.params.metadata["train.seed"] = std::to_string(config.seed);
    result.params.metadata["fuse.mince_granularity"] = fuse_granularity_name(config.mince);
    return result;
}

// File-based variant: one teacher container per sample.
inline TrainResult pairwise_fuse(const ToyLM& pivot, const std::vector<std::filesystem::path>& teacher_files,
                                 const std::vector<DialogueSample>& corpus, const TrainConfig& config) {
    std::vector<DistMatrix> teachers;
    teachers.reserve(teacher_files.size());
    for (const auto& path : teacher_files) {
        if (!std::filesystem::exists(path)) throw IoError("missing teacher distribution file '" + path.string() + "'");
        teachers.push_back(load_dist_file(path).dist);
    }
    return pairwise_fuse(pivot, teachers, corpus, config);
}

}  // namespace fusemerge
