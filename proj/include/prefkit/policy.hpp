// SPDX-License-Identifier: Apache-2.0
//
// Tabular order-k autoregressive policy. Each context key (the last k tokens,
// left-padded with BOS) owns one row of logits over the next token. The next
// token ranges over every id except BOS, so a row has V_total - 1 columns:
// column c holds token c for user symbols and the last column holds EOS.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "prefkit/data.hpp"

namespace prefkit {

class NGramPolicy {
public:
    /// All-zero (uniform) logits. order >= 1, max_len >= 1.
    NGramPolicy(Vocab vocab, std::size_t order, std::size_t max_len);

    const Vocab& vocab() const noexcept { return vocab_; }
    std::size_t order() const noexcept { return order_; }
    std::size_t max_len() const noexcept { return max_len_; }

    /// V_total^k.
    std::size_t num_contexts() const noexcept { return num_contexts_; }
    /// V_total - 1.
    std::size_t row_width() const noexcept { return vocab_.total() - 1; }
    std::size_t num_params() const noexcept { return logits_.size(); }

    std::span<const double> params() const noexcept { return logits_; }
    std::span<double> params() noexcept { return logits_; }
    std::span<const double> row(std::size_t key) const;
    std::span<double> row(std::size_t key);

    std::size_t column(TokenId token) const;
    TokenId token_at(std::size_t column) const;

    /// Key of the context formed by the last k tokens of `history`, BOS-padded.
    std::size_t context_key(std::span<const TokenId> history) const;

    /// Same vocab, order and max_len.
    bool compatible(const NGramPolicy& other) const;

    bool operator==(const NGramPolicy& other) const = default;

private:
    Vocab vocab_;
    std::size_t order_;
    std::size_t max_len_;
    std::size_t num_contexts_;
    std::vector<double> logits_;
};

struct GenerationConfig {
    double temperature = 1.0;
    bool greedy = false;
    std::size_t max_new_tokens = 8;
    std::uint64_t seed = 0;

    static GenerationConfig greedy_decoding(std::size_t max_new_tokens) {
        return GenerationConfig{1.0, true, max_new_tokens, 0};
    }
};

/// log pi(completion | prompt); no EOS is appended implicitly.
double sequence_logprob(const NGramPolicy& policy, std::span<const TokenId> prompt,
                        std::span<const TokenId> completion);

/// As sequence_logprob, and adds scale * d(logprob)/d(logits) into `grad`
/// (flat, same layout as params()).
double sequence_logprob_grad(const NGramPolicy& policy, std::span<const TokenId> prompt,
                             std::span<const TokenId> completion, double scale, std::span<double> grad);

/// softmax(row / temperature) for the context, indexed by column.
std::vector<double> next_token_dist(const NGramPolicy& policy, std::span<const TokenId> context,
                                    double temperature);

Sequence sample_completion(const NGramPolicy& policy, std::span<const TokenId> prompt,
                           const GenerationConfig& cfg);

/// Argmax decoding; ties go to the lowest token id.
Sequence greedy_decode(const NGramPolicy& policy, std::span<const TokenId> prompt, std::size_t max_new_tokens);

/// Mean over contexts of KL(p(.|ctx) || q(.|ctx)) at temperature 1.
double exact_token_kl(const NGramPolicy& p, const NGramPolicy& q, std::span<const Sequence> contexts);

enum class InitMode { zeros, gaussian };

NGramPolicy init_policy(const Vocab& vocab, std::size_t order, std::size_t max_len, InitMode mode,
                        double sigma, std::uint64_t seed);

/// JSON checkpoint: vocab symbols and hash, order, max_len, row-major logits.
/// Doubles are written in shortest round-trip form, so load(save(p)) == p bit-exactly.
void save_policy(std::ostream& out, const NGramPolicy& policy);
void save_policy(const std::filesystem::path& path, const NGramPolicy& policy);
NGramPolicy load_policy(std::istream& in);
NGramPolicy load_policy(const std::filesystem::path& path);

}  // namespace prefkit
