#pragma once

// Desk-scale language model: token embedding, linear output head, softmax.
// Small enough that the loss gradients are hand-derived and checkable against
// finite differences, yet it exercises the full fusion objective.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fusemerge/fusion.hpp"
#include "fusemerge/prng.hpp"
#include "fusemerge/tensor.hpp"

namespace fusemerge {

struct ToyLM {
    Checkpoint params;  // "embed": V x d, "out": d x V, both f64

    std::size_t vocab_size() const { return params.tensors.at("embed").shape[0]; }
    std::size_t dim() const { return params.tensors.at("embed").shape[1]; }

    static ToyLM from_checkpoint(Checkpoint ckpt) {
        auto need = [&](const char* name) -> const Tensor& {
            auto it = ckpt.tensors.find(name);
            if (it == ckpt.tensors.end())
                throw std::invalid_argument(std::string("toy model checkpoint lacks tensor '") + name + "'");
            return it->second;
        };
        const Tensor& embed = need("embed");
        const Tensor& out = need("out");
        if (embed.shape.size() != 2 || out.shape.size() != 2 || embed.dtype != Dtype::F64 ||
            out.dtype != Dtype::F64)
            throw std::invalid_argument("toy model tensors must be rank-2 f64");
        if (embed.shape[0] != out.shape[1] || embed.shape[1] != out.shape[0])
            throw std::invalid_argument("toy model tensor shapes disagree: embed is VxD, out must be DxV");
        if (embed.shape[0] == 0 || embed.shape[1] == 0)
            throw std::invalid_argument("toy model dimensions must be positive");
        return ToyLM{std::move(ckpt)};
    }

    // Deterministic uniform init in [-scale/2, scale/2).
    static ToyLM init(std::size_t vocab, std::size_t dim, std::uint64_t seed, double scale = 1.0) {
        if (vocab == 0 || dim == 0) throw std::invalid_argument("toy model dimensions must be positive");
        SplitMix64 rng{seed};
        Checkpoint ckpt;
        Tensor embed;
        embed.dtype = Dtype::F64;
        embed.shape = {vocab, dim};
        embed.data.resize(vocab * dim);
        for (double& v : embed.data) v = (rng.next_unit() - 0.5) * scale;
        Tensor out;
        out.dtype = Dtype::F64;
        out.shape = {dim, vocab};
        out.data.resize(dim * vocab);
        for (double& v : out.data) v = (rng.next_unit() - 0.5) * scale;
        ckpt.tensors.emplace("embed", std::move(embed));
        ckpt.tensors.emplace("out", std::move(out));
        return ToyLM{std::move(ckpt)};
    }
};

// Row i is softmax(embed[token_i] . out): the model's distribution for what
// follows token i.
inline DistMatrix toy_forward(const ToyLM& model, const std::vector<int>& token_ids) {
    const Tensor& embed = model.params.tensors.at("embed");
    const Tensor& out = model.params.tensors.at("out");
    const std::size_t vocab = model.vocab_size(), dim = model.dim();
    DistMatrix q(token_ids.size(), vocab);
    std::vector<double> logits(vocab);
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        const int tok = token_ids[i];
        if (tok < 0 || static_cast<std::size_t>(tok) >= vocab)
            throw std::invalid_argument("toy_forward: token id out of range");
        const double* e = embed.data.data() + static_cast<std::size_t>(tok) * dim;
        for (std::size_t v = 0; v < vocab; ++v) {
            double z = 0.0;
            for (std::size_t a = 0; a < dim; ++a) z += e[a] * out.data[a * vocab + v];
            logits[v] = z;
        }
        const double zmax = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
            logits[v] = std::exp(logits[v] - zmax);
            denom += logits[v];
        }
        for (std::size_t v = 0; v < vocab; ++v) q.at(i, v) = logits[v] / denom;
    }
    return q;
}

struct LossAndGrads {
    double loss = 0.0;
    double clm = 0.0;
    double fusion = 0.0;
    Checkpoint grads;  // same names/shapes as the model parameters
};

// Combined objective with next-token shift already applied by the caller:
// gold row i labels what token i's distribution should predict (the final
// forward row is excluded by giving gold a masked-out final row).
//
// With a fused matrix: loss = lambda * CE + (1 - lambda) * KL(fused || Q).
// Without one, the loss is the plain causal LM cross entropy and lambda is
// ignored. Gradients are the closed-form softmax backward; rows whose gold
// probability fell below the clamp contribute a constant (zero gradient),
// matching the clamped forward value exactly.
inline LossAndGrads toy_loss_and_grads(const ToyLM& model, const std::vector<int>& token_ids,
                                       const GoldLabels& gold, const DistMatrix* fused, double lambda,
                                       double clamp_min = kProbClampMin) {
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("toy_loss_and_grads: lambda must lie in [0,1]");
    const DistMatrix q = toy_forward(model, token_ids);
    detail::require_gold_matches(q, gold, "toy_loss_and_grads");
    if (fused) detail::require_same_shape(q, *fused, "toy_loss_and_grads");

    const double l_clm = cross_entropy(q, gold, clamp_min);
    const double l_fusion = fused ? kl_divergence(q, *fused, gold.loss_mask, clamp_min) : 0.0;
    const double loss = fused ? combined_loss(l_clm, l_fusion, lambda) : l_clm;

    const Tensor& embed = model.params.tensors.at("embed");
    const Tensor& out = model.params.tensors.at("out");
    const std::size_t vocab = model.vocab_size(), dim = model.dim();

    Checkpoint grads;
    {
        Tensor ge;
        ge.dtype = Dtype::F64;
        ge.shape = embed.shape;
        ge.data.assign(embed.data.size(), 0.0);
        grads.tensors.emplace("embed", std::move(ge));
        Tensor go;
        go.dtype = Dtype::F64;
        go.shape = out.shape;
        go.data.assign(out.data.size(), 0.0);
        grads.tensors.emplace("out", std::move(go));
    }
    Tensor& ge = grads.tensors.at("embed");
    Tensor& go = grads.tensors.at("out");

    std::size_t masked_in = 0;
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (gold.loss_mask[i]) ++masked_in;
    if (masked_in == 0) return {loss, l_clm, l_fusion, std::move(grads)};
    const double inv_m = 1.0 / static_cast<double>(masked_in);
    const double w_clm = fused ? lambda : 1.0;
    const double w_fusion = fused ? 1.0 - lambda : 0.0;

    std::vector<double> glogits(vocab);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (!gold.loss_mask[i]) continue;
        const std::size_t g = static_cast<std::size_t>(gold.token_ids[i]);
        const bool ce_active = q.at(i, g) >= clamp_min;
        // KL terms whose q entry sits on the clamp are constant in that
        // entry; the softmax coupling keeps the remaining mass in play. When
        // nothing is clamped the row gradient reduces to q - p, which is an
        // exact zero at the fixed point q == p.
        bool any_clamped = false;
        double p_active = 0.0;
        if (fused) {
            for (std::size_t v = 0; v < vocab; ++v) {
                if (fused->at(i, v) <= 0.0) continue;
                if (q.at(i, v) >= clamp_min)
                    p_active += fused->at(i, v);
                else
                    any_clamped = true;
            }
        }
        for (std::size_t v = 0; v < vocab; ++v) {
            double grad = 0.0;
            if (ce_active) grad += w_clm * (q.at(i, v) - (v == g ? 1.0 : 0.0));
            if (fused) {
                double pv = fused->at(i, v);
                if (!any_clamped) {
                    grad += w_fusion * (q.at(i, v) - pv);
                } else {
                    if (!(pv > 0.0 && q.at(i, v) >= clamp_min)) pv = 0.0;
                    grad += w_fusion * (p_active * q.at(i, v) - pv);
                }
            }
            glogits[v] = grad * inv_m;
        }
        const std::size_t tok = static_cast<std::size_t>(token_ids[i]);
        const double* e = embed.data.data() + tok * dim;
        for (std::size_t a = 0; a < dim; ++a) {
            double acc = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) {
                go.data[a * vocab + v] += e[a] * glogits[v];
                acc += out.data[a * vocab + v] * glogits[v];
            }
            ge.data[tok * dim + a] += acc;
        }
    }
    return {loss, l_clm, l_fusion, std::move(grads)};
}

}  // namespace fusemerge
