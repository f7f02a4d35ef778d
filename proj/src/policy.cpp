// SPDX-License-Identifier: Apache-2.0
#include "prefkit/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "prefkit/rng.hpp"
#include "prefkit/util.hpp"

namespace prefkit {

namespace {

constexpr std::size_t kMaxParams = std::size_t{1} << 26;
constexpr const char* kCheckpointFormat = "prefkit.policy.v1";

double log_sum_exp(std::span<const double> xs) {
    const double m = *std::max_element(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

void check_completion(const NGramPolicy& policy, std::span<const TokenId> completion) {
    if (completion.empty()) throw InvalidArgument("completion must be non-empty");
    const Vocab& v = policy.vocab();
    for (std::size_t i = 0; i < completion.size(); ++i) {
        const TokenId t = completion[i];
        if (t >= v.total()) throw InvalidArgument("token id out of range: " + std::to_string(t));
        if (t == v.bos()) throw InvalidArgument("BOS cannot be a completion token");
        if (t == v.eos() && i + 1 != completion.size()) throw InvalidArgument("EOS may only appear last");
    }
}

void check_context(const NGramPolicy& policy, std::span<const TokenId> context) {
    for (TokenId t : context) {
        if (t >= policy.vocab().total()) throw InvalidArgument("token id out of range: " + std::to_string(t));
    }
}

std::vector<double> tempered_softmax(std::span<const double> row, double temperature) {
    std::vector<double> out(row.size());
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp((row[i] - m) / temperature);
        s += out[i];
    }
    for (double& p : out) p /= s;
    return out;
}

std::size_t argmax_lowest(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

// Rolling context key: appending a token shifts it into the lowest digit.
struct ContextCursor {
    const NGramPolicy& policy;
    std::size_t key;

    ContextCursor(const NGramPolicy& p, std::span<const TokenId> history) : policy(p), key(p.context_key(history)) {}

    void push(TokenId t) { key = (key * policy.vocab().total() + t) % policy.num_contexts(); }
};

}  // namespace

NGramPolicy::NGramPolicy(Vocab vocab, std::size_t order, std::size_t max_len)
    : vocab_(std::move(vocab)), order_(order), max_len_(max_len), num_contexts_(1) {
    if (order_ == 0) throw InvalidArgument("context order must be >= 1");
    if (max_len_ == 0) throw InvalidArgument("max_len must be >= 1");
    const std::size_t v = vocab_.total();
    for (std::size_t i = 0; i < order_; ++i) {
        if (num_contexts_ > kMaxParams / v) throw InvalidArgument("logit table too large");
        num_contexts_ *= v;
    }
    if (num_contexts_ > kMaxParams / (v - 1)) throw InvalidArgument("logit table too large");
    logits_.assign(num_contexts_ * (v - 1), 0.0);
}

std::span<const double> NGramPolicy::row(std::size_t key) const {
    return std::span<const double>(logits_).subspan(key * row_width(), row_width());
}

std::span<double> NGramPolicy::row(std::size_t key) {
    return std::span<double>(logits_).subspan(key * row_width(), row_width());
}

std::size_t NGramPolicy::column(TokenId token) const {
    if (token == vocab_.bos() || token >= vocab_.total()) {
        throw InvalidArgument("token has no column: " + std::to_string(token));
    }
    return token < vocab_.bos() ? token : token - 1;
}

TokenId NGramPolicy::token_at(std::size_t column) const {
    if (column >= row_width()) throw InvalidArgument("column out of range");
    return column < vocab_.size() ? static_cast<TokenId>(column) : vocab_.eos();
}

std::size_t NGramPolicy::context_key(std::span<const TokenId> history) const {
    const std::size_t v = vocab_.total();
    std::size_t key = 0;
    for (std::size_t i = 0; i < order_; ++i) {
        // position of the i-th token of the window within history (may be before the start)
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(history.size()) - static_cast<std::ptrdiff_t>(order_) +
                                   static_cast<std::ptrdiff_t>(i);
        const TokenId t = pos < 0 ? vocab_.bos() : history[static_cast<std::size_t>(pos)];
        key = key * v + t;
    }
    return key;
}

bool NGramPolicy::compatible(const NGramPolicy& other) const {
    return vocab_ == other.vocab_ && order_ == other.order_ && max_len_ == other.max_len_;
}

double sequence_logprob(const NGramPolicy& policy, std::span<const TokenId> prompt,
                        std::span<const TokenId> completion) {
    check_context(policy, prompt);
    check_completion(policy, completion);
    ContextCursor cur(policy, prompt);
    double total = 0.0;
    for (TokenId t : completion) {
        const auto row = policy.row(cur.key);
        total += row[policy.column(t)] - log_sum_exp(row);
        cur.push(t);
    }
    return total;
}

double sequence_logprob_grad(const NGramPolicy& policy, std::span<const TokenId> prompt,
                             std::span<const TokenId> completion, double scale, std::span<double> grad) {
    if (grad.size() != policy.num_params()) throw InvalidArgument("gradient buffer has wrong size");
    check_context(policy, prompt);
    check_completion(policy, completion);
    ContextCursor cur(policy, prompt);
    const std::size_t width = policy.row_width();
    std::vector<double> probs(width);
    double total = 0.0;
    for (TokenId t : completion) {
        const auto row = policy.row(cur.key);
        const double lse = log_sum_exp(row);
        const std::size_t c = policy.column(t);
        total += row[c] - lse;
        double* g = grad.data() + cur.key * width;
        for (std::size_t j = 0; j < width; ++j) g[j] -= scale * std::exp(row[j] - lse);
        g[c] += scale;
        cur.push(t);
    }
    return total;
}

std::vector<double> next_token_dist(const NGramPolicy& policy, std::span<const TokenId> context,
                                    double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw InvalidArgument("temperature must be a positive finite number");
    }
    check_context(policy, context);
    return tempered_softmax(policy.row(policy.context_key(context)), temperature);
}

Sequence sample_completion(const NGramPolicy& policy, std::span<const TokenId> prompt,
                           const GenerationConfig& cfg) {
    if (!cfg.greedy && (!(cfg.temperature > 0.0) || !std::isfinite(cfg.temperature))) {
        throw InvalidArgument("temperature must be a positive finite number");
    }
    if (cfg.max_new_tokens > policy.max_len()) {
        throw InvalidArgument("max_new_tokens exceeds the policy's max_len");
    }
    check_context(policy, prompt);
    Rng rng(cfg.seed);
    ContextCursor cur(policy, prompt);
    const TokenId eos = policy.vocab().eos();
    Sequence out;
    while (out.size() < cfg.max_new_tokens) {
        const auto row = policy.row(cur.key);
        std::size_t c;
        if (cfg.greedy) {
            c = argmax_lowest(row);
        } else {
            const auto probs = tempered_softmax(row, cfg.temperature);
            const double u = rng.uniform();
            double acc = 0.0;
            c = probs.size() - 1;
            for (std::size_t j = 0; j < probs.size(); ++j) {
                acc += probs[j];
                if (u < acc) {
                    c = j;
                    break;
                }
            }
            // u can land past the rounded cumulative sum; take the last column with mass
            while (probs[c] == 0.0 && c > 0) --c;
        }
        const TokenId t = policy.token_at(c);
        out.push_back(t);
        if (t == eos) break;
        cur.push(t);
    }
    return out;
}

Sequence greedy_decode(const NGramPolicy& policy, std::span<const TokenId> prompt, std::size_t max_new_tokens) {
    return sample_completion(policy, prompt, GenerationConfig::greedy_decoding(max_new_tokens));
}

double exact_token_kl(const NGramPolicy& p, const NGramPolicy& q, std::span<const Sequence> contexts) {
    if (!p.compatible(q)) throw InvalidArgument("exact_token_kl: policies differ in vocab, order or max_len");
    if (contexts.empty()) return 0.0;
    double total = 0.0;
    for (const auto& ctx : contexts) {
        check_context(p, ctx);
        const std::size_t key = p.context_key(ctx);
        const auto pr = p.row(key);
        const auto qr = q.row(key);
        const double lp = log_sum_exp(pr);
        const double lq = log_sum_exp(qr);
        double kl = 0.0;
        for (std::size_t j = 0; j < pr.size(); ++j) {
            const double logp = pr[j] - lp;
            kl += std::exp(logp) * (logp - (qr[j] - lq));
        }
        total += std::max(kl, 0.0);
    }
    return total / static_cast<double>(contexts.size());
}

NGramPolicy init_policy(const Vocab& vocab, std::size_t order, std::size_t max_len, InitMode mode, double sigma,
                        std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("init sigma must be >= 0");
    NGramPolicy policy(vocab, order, max_len);
    if (mode == InitMode::gaussian) {
        Rng rng(seed);
        for (double& x : policy.params()) x = sigma * rng.normal();
    }
    return policy;
}

void save_policy(std::ostream& out, const NGramPolicy& policy) {
    nlohmann::ordered_json doc;
    doc["format"] = kCheckpointFormat;
    doc["vocab_hash"] = hex64(policy.vocab().hash());
    doc["symbols"] = policy.vocab().symbols();
    doc["order"] = policy.order();
    doc["max_len"] = policy.max_len();
    doc["num_contexts"] = policy.num_contexts();
    doc["row_width"] = policy.row_width();
    auto& logits = doc["logits"] = nlohmann::ordered_json::array();
    for (double x : policy.params()) logits.push_back(x);
    out << doc.dump() << '\n';
}

void save_policy(const std::filesystem::path& path, const NGramPolicy& policy) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path.string());
    save_policy(out, policy);
}

NGramPolicy load_policy(std::istream& in) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed JSON: ") + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) {
            throw FormatError("checkpoint: unsupported format");
        }
        Vocab vocab(doc.at("symbols").get<std::vector<std::string>>());
        if (doc.at("vocab_hash").get<std::string>() != hex64(vocab.hash())) {
            throw FormatError("checkpoint: vocab hash does not match its symbol list");
        }
        NGramPolicy policy(std::move(vocab), doc.at("order").get<std::size_t>(), doc.at("max_len").get<std::size_t>());
        const auto& logits = doc.at("logits");
        if (!logits.is_array() || logits.size() != policy.num_params()) {
            throw FormatError("checkpoint: logit table has wrong size");
        }
        auto params = policy.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i] = logits[i].get<double>();
            if (!std::isfinite(params[i])) throw FormatError("checkpoint: non-finite logit");
        }
        return policy;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

NGramPolicy load_policy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    return load_policy(in);
}

}  // namespace prefkit
