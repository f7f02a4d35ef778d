// SPDX-License-Identifier: Apache-2.0
#include "prefkit/data.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "prefkit/util.hpp"

namespace prefkit {

using nlohmann::json;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path.string());
    return in;
}

// Calls fn(object, line_no) for every non-blank line.
template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        bool blank = true;
        for (char c : line) blank = blank && is_space(c);
        if (blank) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        if (!obj.is_object()) throw FormatError("expected a JSON object", line_no);
        fn(obj, line_no);
    }
}

const json& require_field(const json& obj, std::string_view field, std::size_t line_no) {
    auto it = obj.find(std::string(field));
    if (it == obj.end()) throw FormatError("missing field '" + std::string(field) + "'", line_no);
    return *it;
}

std::string require_string(const json& obj, std::string_view field, std::size_t line_no) {
    const json& v = require_field(obj, field, line_no);
    if (!v.is_string()) throw FormatError("field '" + std::string(field) + "' must be a string", line_no);
    return v.get<std::string>();
}

Sequence encode_field(const Vocab& vocab, const json& obj, std::string_view field, std::size_t line_no) {
    const std::string text = require_string(obj, field, line_no);
    try {
        return vocab.encode(text);
    } catch (const FormatError& e) {
        throw FormatError("field '" + std::string(field) + "': " + e.what(), line_no);
    }
}

void write_json_line(std::ostream& out, const json& obj) { out << obj.dump() << '\n'; }

}  // namespace

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    index_.reserve(symbols_.size());
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        const std::string& s = symbols_[i];
        if (s.empty()) throw FormatError("empty symbol", i + 1);
        for (char c : s) {
            if (is_space(c)) throw FormatError("symbol contains whitespace: '" + s + "'", i + 1);
        }
        if (s == kBosName || s == kEosName) throw FormatError("reserved symbol name: '" + s + "'", i + 1);
        if (!index_.emplace(s, static_cast<TokenId>(i)).second) {
            throw FormatError("duplicate symbol '" + s + "'", i + 1);
        }
    }
}

std::string_view Vocab::name(TokenId id) const {
    if (id < symbols_.size()) return symbols_[id];
    if (id == bos()) return kBosName;
    if (id == eos()) return kEosName;
    throw InvalidArgument("token id out of range: " + std::to_string(id));
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
    auto it = index_.find(std::string(symbol));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Sequence Vocab::encode(std::string_view text) const {
    Sequence out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        if (i == text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        const std::string_view tok = text.substr(i, j - i);
        if (!out.empty() && out.back() == eos()) throw FormatError("'<eos>' must be the final token");
        if (tok == kEosName) {
            out.push_back(eos());
        } else if (auto id = find(tok)) {
            out.push_back(*id);
        } else {
            throw FormatError("unknown symbol '" + std::string(tok) + "'");
        }
        i = j;
    }
    return out;
}

std::string Vocab::decode(std::span<const TokenId> seq) const {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out.push_back(' ');
        out.append(name(seq[i]));
    }
    return out;
}

void Vocab::validate(std::span<const TokenId> seq) const {
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq[i] >= total()) throw FormatError("token id out of range: " + std::to_string(seq[i]));
        if (seq[i] == bos()) throw FormatError("BOS may not appear inside a sequence");
        if (seq[i] == eos() && i + 1 != seq.size()) throw FormatError("EOS may only appear last");
    }
}

std::uint64_t Vocab::hash() const {
    std::uint64_t h = fnv1a64("prefkit-vocab");
    for (const auto& s : symbols_) {
        h = fnv1a64(s, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

Sequence strip_eos(std::span<const TokenId> seq, const Vocab& vocab) {
    if (!seq.empty() && seq.back() == vocab.eos()) return Sequence(seq.begin(), seq.end() - 1);
    return Sequence(seq.begin(), seq.end());
}

std::string_view to_string(KtoLabel label) {
    return label == KtoLabel::desirable ? "desirable" : "undesirable";
}

Vocab parse_vocab(std::istream& in) {
    std::vector<std::string> symbols;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) throw FormatError("empty line", line_no);
        symbols.push_back(line);
    }
    return Vocab(std::move(symbols));
}

Vocab load_vocab(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse_vocab(in);
}

void write_vocab(std::ostream& out, const Vocab& vocab) {
    for (const auto& s : vocab.symbols()) out << s << '\n';
}

std::vector<PreferencePair> parse_pairs_jsonl(std::istream& in, const Vocab& vocab) {
    std::vector<PreferencePair> pairs;
    for_each_json_line(in, [&](const json& obj, std::size_t line_no) {
        PreferencePair p{encode_field(vocab, obj, "prompt", line_no), encode_field(vocab, obj, "chosen", line_no),
                         encode_field(vocab, obj, "rejected", line_no)};
        if (p.chosen == p.rejected) throw FormatError("chosen equals rejected", line_no);
        pairs.push_back(std::move(p));
    });
    return pairs;
}

std::vector<PreferencePair> parse_pairs_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
    auto in = open_input(path);
    return parse_pairs_jsonl(in, vocab);
}

void write_pairs_jsonl(std::ostream& out, std::span<const PreferencePair> pairs, const Vocab& vocab) {
    for (const auto& p : pairs) {
        json obj;
        obj["prompt"] = vocab.decode(p.prompt);
        obj["chosen"] = vocab.decode(p.chosen);
        obj["rejected"] = vocab.decode(p.rejected);
        write_json_line(out, obj);
    }
}

std::vector<KtoRecord> parse_kto_jsonl(std::istream& in, const Vocab& vocab) {
    std::vector<KtoRecord> records;
    for_each_json_line(in, [&](const json& obj, std::size_t line_no) {
        KtoRecord r{encode_field(vocab, obj, "prompt", line_no), encode_field(vocab, obj, "completion", line_no),
                    KtoLabel::desirable};
        const std::string label = require_string(obj, "label", line_no);
        if (label == "desirable") {
            r.label = KtoLabel::desirable;
        } else if (label == "undesirable") {
            r.label = KtoLabel::undesirable;
        } else {
            throw FormatError("invalid label '" + label + "' (expected desirable or undesirable)", line_no);
        }
        records.push_back(std::move(r));
    });
    return records;
}

std::vector<KtoRecord> parse_kto_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
    auto in = open_input(path);
    return parse_kto_jsonl(in, vocab);
}

void write_kto_jsonl(std::ostream& out, std::span<const KtoRecord> records, const Vocab& vocab) {
    for (const auto& r : records) {
        json obj;
        obj["prompt"] = vocab.decode(r.prompt);
        obj["completion"] = vocab.decode(r.completion);
        obj["label"] = std::string(to_string(r.label));
        write_json_line(out, obj);
    }
}

std::vector<Demo> parse_demos_jsonl(std::istream& in, const Vocab& vocab, std::string_view target_field) {
    std::vector<Demo> demos;
    for_each_json_line(in, [&](const json& obj, std::size_t line_no) {
        demos.push_back(
            Demo{encode_field(vocab, obj, "prompt", line_no), encode_field(vocab, obj, target_field, line_no)});
    });
    return demos;
}

std::vector<Demo> parse_demos_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                                    std::string_view target_field) {
    auto in = open_input(path);
    return parse_demos_jsonl(in, vocab, target_field);
}

void write_demos_jsonl(std::ostream& out, std::span<const Demo> demos, const Vocab& vocab,
                       std::string_view target_field) {
    for (const auto& d : demos) {
        json obj;
        obj["prompt"] = vocab.decode(d.prompt);
        obj[std::string(target_field)] = vocab.decode(d.completion);
        write_json_line(out, obj);
    }
}

std::vector<RankedResponses> parse_ranked_jsonl(std::istream& in, const Vocab& vocab) {
    std::vector<RankedResponses> out;
    for_each_json_line(in, [&](const json& obj, std::size_t line_no) {
        RankedResponses r;
        r.prompt = encode_field(vocab, obj, "prompt", line_no);
        const json& arr = require_field(obj, "responses", line_no);
        if (!arr.is_array()) throw FormatError("field 'responses' must be an array", line_no);
        for (const json& item : arr) {
            if (!item.is_object()) throw FormatError("each response must be an object", line_no);
            ScoredResponse sr;
            sr.text = encode_field(vocab, item, "text", line_no);
            const json& score = require_field(item, "score", line_no);
            if (!score.is_number()) throw FormatError("field 'score' must be a number", line_no);
            sr.score = score.get<double>();
            r.responses.push_back(std::move(sr));
        }
        out.push_back(std::move(r));
    });
    return out;
}

DatasetKind detect_dataset_kind(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        bool blank = true;
        for (char c : line) blank = blank && is_space(c);
        if (blank) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        if (obj.is_object() && obj.contains("label")) return DatasetKind::kto;
        if (obj.is_object() && obj.contains("chosen")) return DatasetKind::pairs;
        throw FormatError("cannot tell pair data from KTO data (no 'chosen' or 'label' field)", line_no);
    }
    throw FormatError("dataset is empty");
}

std::vector<KtoRecord> pairs_to_kto(std::span<const PreferencePair> pairs) {
    std::vector<KtoRecord> out;
    out.reserve(2 * pairs.size());
    for (const auto& p : pairs) {
        out.push_back(KtoRecord{p.prompt, p.chosen, KtoLabel::desirable});
        out.push_back(KtoRecord{p.prompt, p.rejected, KtoLabel::undesirable});
    }
    return out;
}

PreferencePair binarize(const RankedResponses& ranked) {
    const auto& rs = ranked.responses;
    if (rs.size() < 2) throw InvalidArgument("binarize: need at least 2 responses");
    for (const auto& r : rs) {
        if (!std::isfinite(r.score)) throw InvalidArgument("binarize: non-finite score");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rs.size(); ++i) {
        if (rs[i].score > rs[best].score) best = i;
    }
    std::size_t worst = best == 0 ? 1 : 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        if (i != best && rs[i].score < rs[worst].score) worst = i;
    }
    if (rs[best].text == rs[worst].text) {
        throw InvalidArgument("binarize: selected chosen and rejected responses are identical");
    }
    return PreferencePair{ranked.prompt, rs[best].text, rs[worst].text};
}

}  // namespace prefkit
