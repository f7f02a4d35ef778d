// SPDX-License-Identifier: Apache-2.0
//
// Sentence-level BLEU and ROUGE-L over token-id sequences.
#pragma once

#include <cstddef>
#include <span>

#include "prefkit/data.hpp"

namespace prefkit {

struct BleuConfig {
    /// Highest n-gram order, in [1, 4]. Weights are uniform over the
    /// effective orders (those with at least one hypothesis n-gram).
    std::size_t max_order = 4;
    /// Precision used in place of 0 when an order has n-grams but no matches.
    double zero_floor = 1e-9;
};

struct NgramMatch {
    std::size_t matches = 0;
    std::size_t total = 0;

    bool operator==(const NgramMatch&) const = default;
};

/// Exact LCS length (O(|a|*|b|) dynamic programming).
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

/// LCS-based F1; 0 when either side is empty.
double rouge_l(std::span<const TokenId> hyp, std::span<const TokenId> ref);

/// Clipped n-gram matches and total hypothesis n-grams.
NgramMatch modified_precision(std::span<const TokenId> hyp, std::span<const TokenId> ref, std::size_t n);

double bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, const BleuConfig& cfg = {});

}  // namespace prefkit
