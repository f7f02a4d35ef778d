// SPDX-License-Identifier: Apache-2.0
//
// Vocabulary, token sequences, dataset records and their JSONL formats.
//
// Token ids: user symbols occupy [0, n) in file order, then BOS = n and
// EOS = n + 1. In text form EOS is written as the literal "<eos>" and may
// only appear as the final token of a sequence.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefkit/error.hpp"
#include "prefkit/rng.hpp"

namespace prefkit {

using TokenId = std::uint32_t;
using Sequence = std::vector<TokenId>;

inline constexpr std::string_view kBosName = "<bos>";
inline constexpr std::string_view kEosName = "<eos>";

class Vocab {
public:
    Vocab() = default;
    /// Throws FormatError on duplicates, empty or whitespace-bearing symbols,
    /// or the reserved names.
    explicit Vocab(std::vector<std::string> symbols);

    std::size_t size() const noexcept { return symbols_.size(); }
    /// |symbols| + 2.
    std::size_t total() const noexcept { return symbols_.size() + 2; }
    TokenId bos() const noexcept { return static_cast<TokenId>(symbols_.size()); }
    TokenId eos() const noexcept { return static_cast<TokenId>(symbols_.size() + 1); }

    const std::vector<std::string>& symbols() const noexcept { return symbols_; }
    std::string_view name(TokenId id) const;
    std::optional<TokenId> find(std::string_view symbol) const;

    /// Whitespace-separated symbols to ids. Throws FormatError naming the
    /// first unknown symbol, or if "<eos>" appears anywhere but last.
    Sequence encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> seq) const;

    /// Throws FormatError if an id is out of range, BOS appears, or EOS is not last.
    void validate(std::span<const TokenId> seq) const;

    /// Stable digest of the symbol list (used to pair checkpoints with vocabs).
    std::uint64_t hash() const;

    bool operator==(const Vocab& other) const { return symbols_ == other.symbols_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Drops a trailing EOS, if any.
Sequence strip_eos(std::span<const TokenId> seq, const Vocab& vocab);

struct PreferencePair {
    Sequence prompt;
    Sequence chosen;
    Sequence rejected;

    bool operator==(const PreferencePair&) const = default;
};

enum class KtoLabel { desirable, undesirable };

std::string_view to_string(KtoLabel label);

struct KtoRecord {
    Sequence prompt;
    Sequence completion;
    KtoLabel label = KtoLabel::desirable;

    bool operator==(const KtoRecord&) const = default;
};

/// Prompt with a target completion: SFT demonstrations and PP reference corpora.
struct Demo {
    Sequence prompt;
    Sequence completion;

    bool operator==(const Demo&) const = default;
};

struct ScoredResponse {
    Sequence text;
    double score = 0.0;
};

struct RankedResponses {
    Sequence prompt;
    std::vector<ScoredResponse> responses;
};

Vocab load_vocab(const std::filesystem::path& path);
Vocab parse_vocab(std::istream& in);
void write_vocab(std::ostream& out, const Vocab& vocab);

std::vector<PreferencePair> parse_pairs_jsonl(std::istream& in, const Vocab& vocab);
std::vector<PreferencePair> parse_pairs_jsonl(const std::filesystem::path& path, const Vocab& vocab);
void write_pairs_jsonl(std::ostream& out, std::span<const PreferencePair> pairs, const Vocab& vocab);

std::vector<KtoRecord> parse_kto_jsonl(std::istream& in, const Vocab& vocab);
std::vector<KtoRecord> parse_kto_jsonl(const std::filesystem::path& path, const Vocab& vocab);
void write_kto_jsonl(std::ostream& out, std::span<const KtoRecord> records, const Vocab& vocab);

/// Lines of {"prompt": ..., <target_field>: ...}. SFT demos use "completion",
/// PP corpora use "reference".
std::vector<Demo> parse_demos_jsonl(std::istream& in, const Vocab& vocab,
                                    std::string_view target_field = "completion");
std::vector<Demo> parse_demos_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                                    std::string_view target_field = "completion");
void write_demos_jsonl(std::ostream& out, std::span<const Demo> demos, const Vocab& vocab,
                       std::string_view target_field = "completion");

/// Lines of {"prompt": ..., "responses": [{"text": ..., "score": ...}, ...]}.
std::vector<RankedResponses> parse_ranked_jsonl(std::istream& in, const Vocab& vocab);

enum class DatasetKind { pairs, kto };

/// Sniffs the first non-empty line: "label" means KTO records, "chosen" means pairs.
DatasetKind detect_dataset_kind(std::istream& in);

/// Each pair becomes (prompt, chosen, desirable) then (prompt, rejected, undesirable).
std::vector<KtoRecord> pairs_to_kto(std::span<const PreferencePair> pairs);

/// chosen = highest score, rejected = lowest score among the other responses;
/// ties go to the earliest position.
PreferencePair binarize(const RankedResponses& ranked);

/// First n elements. Throws InvalidArgument if n exceeds the size.
template <typename T>
std::vector<T> take_prefix(std::span<const T> items, std::size_t n) {
    if (n > items.size()) {
        throw InvalidArgument("take_prefix: requested " + std::to_string(n) + " items but only " +
                              std::to_string(items.size()) + " available");
    }
    return std::vector<T>(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n));
}

/// Seeded Fisher-Yates permutation of a copy of `items`.
template <typename T>
std::vector<T> seeded_shuffle(std::span<const T> items, std::uint64_t seed) {
    std::vector<T> out(items.begin(), items.end());
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

}  // namespace prefkit
