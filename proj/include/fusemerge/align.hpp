#pragma once

// Cross-tokenizer mapping: a monotone row alignment between two tokenizations
// of the same text, plus an id map between the two vocabularies, used to
// project a distribution matrix into the pivot tokenizer's space.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusemerge/fusion.hpp"

namespace fusemerge {

struct AlignmentMap {
    // (source row, pivot row), strictly increasing in both coordinates.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    // source token id -> pivot token id, for token strings both vocabularies share.
    std::map<int, int> vocab_map;
};

namespace detail {

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Character edit distance normalized by the longer string; identical strings
// (including two empties) cost 0.
inline double token_substitution_cost(const std::string& a, const std::string& b) {
    if (a == b) return 0.0;
    const std::size_t longer = std::max(a.size(), b.size());
    if (longer == 0) return 0.0;
    return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longer);
}

}  // namespace detail

// Monotone alignment by dynamic programming over token strings: match cost 0,
// substitution cost the normalized character edit distance, gap cost 1.
// Matched and substituted positions both become pairs. Among equally cheap
// paths the backtrace gaps later source tokens first, so the earliest source
// tokens get paired ("first match").
//
// The optional vocabularies (token string per id) populate vocab_map with
// identity entries for strings present in both; the first id wins when a
// vocabulary repeats a string.
inline AlignmentMap align_tokens(const std::vector<std::string>& source_tokens,
                                 const std::vector<std::string>& pivot_tokens,
                                 const std::vector<std::string>& source_vocab = {},
                                 const std::vector<std::string>& pivot_vocab = {}) {
    AlignmentMap out;
    if (!source_vocab.empty() && !pivot_vocab.empty()) {
        std::map<std::string, int> pivot_first;
        for (std::size_t j = 0; j < pivot_vocab.size(); ++j)
            pivot_first.emplace(pivot_vocab[j], static_cast<int>(j));
        std::map<std::string, int> source_first;
        for (std::size_t i = 0; i < source_vocab.size(); ++i)
            source_first.emplace(source_vocab[i], static_cast<int>(i));
        for (const auto& [token, sid] : source_first) {
            auto it = pivot_first.find(token);
            if (it != pivot_first.end()) out.vocab_map[sid] = it->second;
        }
    }

    const std::size_t n = source_tokens.size(), m = pivot_tokens.size();
    if (n == 0 || m == 0) return out;

    std::vector<std::vector<double>> cost(n + 1, std::vector<double>(m + 1, 0.0));
    for (std::size_t i = 1; i <= n; ++i) cost[i][0] = static_cast<double>(i);
    for (std::size_t j = 1; j <= m; ++j) cost[0][j] = static_cast<double>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const double diag =
                cost[i - 1][j - 1] + detail::token_substitution_cost(source_tokens[i - 1], pivot_tokens[j - 1]);
            cost[i][j] = std::min({diag, cost[i - 1][j] + 1.0, cost[i][j - 1] + 1.0});
        }
    }

    std::size_t i = n, j = m;
    while (i > 0 && j > 0) {
        if (cost[i][j] == cost[i - 1][j] + 1.0) {
            --i;  // gap the later source token on ties
        } else if (cost[i][j] ==
                   cost[i - 1][j - 1] + detail::token_substitution_cost(source_tokens[i - 1], pivot_tokens[j - 1])) {
            out.pairs.emplace_back(i - 1, j - 1);
            --i;
            --j;
        } else {
            --j;
        }
    }
    std::reverse(out.pairs.begin(), out.pairs.end());
    return out;
}

// Projects a source-vocabulary distribution matrix onto the pivot space.
// Each aligned pair keeps the top_k source probabilities of its row, moves
// them through vocab_map (unmapped mass is dropped) and renormalizes. Pivot
// rows with no aligned source row — or whose mapped mass is zero — become
// one-hot on the gold token when gold labels are supplied, else uniform.
inline DistMatrix project_distribution(const DistMatrix& source, const AlignmentMap& map,
                                       std::size_t pivot_rows, std::size_t pivot_vocab_size,
                                       std::size_t top_k, const GoldLabels* gold = nullptr) {
    if (top_k < 1) throw std::invalid_argument("project_distribution: top_k must be at least 1");
    if (pivot_vocab_size < 1) throw std::invalid_argument("project_distribution: empty pivot vocabulary");
    if (gold && gold->size() != pivot_rows)
        throw std::invalid_argument("project_distribution: gold length does not match pivot rows");

    std::vector<std::ptrdiff_t> source_row_of(pivot_rows, -1);
    for (const auto& [s, p] : map.pairs) {
        if (s >= source.rows) throw std::invalid_argument("project_distribution: pair references a bad source row");
        if (p >= pivot_rows) throw std::invalid_argument("project_distribution: pair references a bad pivot row");
        source_row_of[p] = static_cast<std::ptrdiff_t>(s);
    }

    DistMatrix out(pivot_rows, pivot_vocab_size);
    std::vector<std::size_t> order(source.cols);
    for (std::size_t p = 0; p < pivot_rows; ++p) {
        bool filled = false;
        if (source_row_of[p] >= 0) {
            const std::size_t s = static_cast<std::size_t>(source_row_of[p]);
            std::iota(order.begin(), order.end(), std::size_t{0});
            const std::size_t keep = std::min(top_k, source.cols);
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  const double pa = source.at(s, a), pb = source.at(s, b);
                                  return pa != pb ? pa > pb : a < b;
                              });
            std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
            std::sort(kept.begin(), kept.end());
            double mass = 0.0;
            for (std::size_t id : kept) {
                auto it = map.vocab_map.find(static_cast<int>(id));
                if (it == map.vocab_map.end()) continue;
                if (it->second < 0 || static_cast<std::size_t>(it->second) >= pivot_vocab_size)
                    throw std::invalid_argument("project_distribution: vocab_map target id out of range");
                out.at(p, static_cast<std::size_t>(it->second)) += source.at(s, id);
            }
            for (std::size_t v = 0; v < pivot_vocab_size; ++v) mass += out.at(p, v);
            if (mass > 0.0) {
                for (std::size_t v = 0; v < pivot_vocab_size; ++v) out.at(p, v) /= mass;
                filled = true;
            }
        }
        if (!filled) {
            if (gold && gold->token_ids[p] >= 0 &&
                static_cast<std::size_t>(gold->token_ids[p]) < pivot_vocab_size) {
                out.at(p, static_cast<std::size_t>(gold->token_ids[p])) = 1.0;
            } else {
                for (std::size_t v = 0; v < pivot_vocab_size; ++v)
                    out.at(p, v) = 1.0 / static_cast<double>(pivot_vocab_size);
            }
        }
    }
    return out;
}

}  // namespace fusemerge
