// SPDX-License-Identifier: Apache-2.0
#include "prefkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "prefkit/error.hpp"

namespace prefkit {

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts count_ngrams(std::span<const TokenId> seq, std::size_t n) {
    NgramCounts counts;
    if (n == 0 || seq.size() < n) return counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        ++counts[std::vector<TokenId>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

}  // namespace

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
    if (a.empty() || b.empty()) return 0;
    // Two rolling rows over b.
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(hyp, ref));
    const double p = lcs / static_cast<double>(hyp.size());
    const double r = lcs / static_cast<double>(ref.size());
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

NgramMatch modified_precision(std::span<const TokenId> hyp, std::span<const TokenId> ref, std::size_t n) {
    if (n == 0) throw InvalidArgument("modified_precision: n must be >= 1");
    NgramMatch out;
    if (hyp.size() < n) return out;
    out.total = hyp.size() - n + 1;
    const NgramCounts ref_counts = count_ngrams(ref, n);
    for (const auto& [gram, count] : count_ngrams(hyp, n)) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) out.matches += std::min(count, it->second);
    }
    return out;
}

double bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, const BleuConfig& cfg) {
    if (cfg.max_order < 1 || cfg.max_order > 4) throw InvalidArgument("bleu: max_order must lie in [1, 4]");
    if (hyp.empty()) return 0.0;
    std::vector<double> log_precisions;
    for (std::size_t n = 1; n <= cfg.max_order; ++n) {
        const NgramMatch m = modified_precision(hyp, ref, n);
        if (m.total == 0) continue;
        const double p = m.matches == 0 ? cfg.zero_floor
                                        : static_cast<double>(m.matches) / static_cast<double>(m.total);
        log_precisions.push_back(std::log(p));
    }
    const double w = 1.0 / static_cast<double>(log_precisions.size());
    double s = 0.0;
    for (double lp : log_precisions) s += w * lp;
    const double bp = hyp.size() >= ref.size()
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size()));
    return bp * std::exp(s);
}

}  // namespace prefkit
