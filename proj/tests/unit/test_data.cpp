#include <algorithm>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "prefkit/data.hpp"
#include "prefkit/rng.hpp"

using namespace prefkit;

namespace {

Vocab abc() { return Vocab({"a", "b", "c"}); }

std::string error_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("vocab: reserved ids follow the user symbols") {
    std::istringstream in("a\nb\nc\n");
    Vocab v = parse_vocab(in);
    CHECK(v.size() == 3);
    CHECK(v.total() == 5);
    CHECK(v.bos() == 3);
    CHECK(v.eos() == 4);
    CHECK(v.symbols() == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("vocab: duplicate symbol names line 2") {
    std::istringstream in("a\na\n");
    try {
        parse_vocab(in);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("vocab: empty file has only BOS and EOS") {
    std::istringstream in("");
    Vocab v = parse_vocab(in);
    CHECK(v.size() == 0);
    CHECK(v.total() == 2);
}

TEST_CASE("vocab: blank line and reserved names are rejected") {
    std::istringstream blank("a\n\nb\n");
    CHECK_THROWS_AS(parse_vocab(blank), FormatError);
    CHECK_THROWS_AS(Vocab({"a", "<eos>"}), FormatError);
    CHECK_THROWS_AS(Vocab({"<bos>"}), FormatError);
}

TEST_CASE("vocab: load from file") {
    const auto path = std::filesystem::temp_directory_path() / "prefkit_test_vocab.txt";
    {
        std::ofstream f(path);
        f << "x\ny\n";
    }
    Vocab v = load_vocab(path);
    CHECK(v.total() == 4);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_vocab(path), Error);
}

TEST_CASE("encode: eos only last") {
    Vocab v = abc();
    CHECK(v.encode("a b <eos>") == Sequence{0, 1, 4});
    CHECK_THROWS_AS(v.encode("a <eos> b"), FormatError);
    CHECK_THROWS_AS(v.encode("a d"), FormatError);
    CHECK(v.decode(Sequence{0, 1, 4}) == "a b <eos>");
}

TEST_CASE("parse_pairs_jsonl: ids") {
    std::istringstream in(R"({"prompt":"a","chosen":"b c","rejected":"c"})" "\n");
    auto pairs = parse_pairs_jsonl(in, abc());
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].prompt == Sequence{0});
    CHECK(pairs[0].chosen == Sequence{1, 2});
    CHECK(pairs[0].rejected == Sequence{2});
}

TEST_CASE("parse_pairs_jsonl: missing field cites line 1") {
    std::istringstream in(R"({"prompt":"a","chosen":"b c"})" "\n");
    try {
        parse_pairs_jsonl(in, abc());
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.line() == 1);
        CHECK(std::string(e.what()).find("rejected") != std::string::npos);
    }
}

TEST_CASE("parse_pairs_jsonl: chosen equal to rejected") {
    std::istringstream in(R"({"prompt":"","chosen":"b","rejected":"b"})" "\n");
    CHECK_THROWS_AS(parse_pairs_jsonl(in, abc()), FormatError);
}

TEST_CASE("parse_pairs_jsonl: unknown symbol names line and symbol") {
    std::istringstream in(R"({"prompt":"a","chosen":"b","rejected":"c"})" "\n"
                          R"({"prompt":"a","chosen":"zz","rejected":"c"})" "\n");
    const std::string msg = error_of([&] { parse_pairs_jsonl(in, abc()); });
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("zz") != std::string::npos);
}

TEST_CASE("parse_pairs_jsonl: malformed json") {
    std::istringstream in("{\"prompt\": \n");
    CHECK_THROWS_AS(parse_pairs_jsonl(in, abc()), FormatError);
}

TEST_CASE("parse_kto_jsonl") {
    Vocab v = abc();
    std::istringstream one(R"({"prompt":"a","completion":"b","label":"desirable"})" "\n");
    auto recs = parse_kto_jsonl(one, v);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].label == KtoLabel::desirable);

    std::istringstream bad(R"({"prompt":"a","completion":"b","label":"good"})" "\n");
    CHECK_THROWS_AS(parse_kto_jsonl(bad, v), FormatError);

    std::istringstream two(R"({"prompt":"a","completion":"b","label":"undesirable"})" "\n"
                           R"({"prompt":"","completion":"c","label":"desirable"})" "\n");
    recs = parse_kto_jsonl(two, v);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].label == KtoLabel::undesirable);
    CHECK(recs[1].completion == Sequence{2});
}

TEST_CASE("detect_dataset_kind") {
    std::istringstream p(R"({"prompt":"a","chosen":"b","rejected":"c"})" "\n");
    std::istringstream k("\n" R"({"prompt":"a","completion":"b","label":"desirable"})" "\n");
    CHECK(detect_dataset_kind(p) == DatasetKind::pairs);
    CHECK(detect_dataset_kind(k) == DatasetKind::kto);
}

TEST_CASE("pairs_to_kto") {
    std::vector<PreferencePair> none;
    CHECK(pairs_to_kto(none).empty());

    std::vector<PreferencePair> pairs{{{0}, {1}, {2}}, {{1}, {2, 0}, {0}}, {{}, {0, 0}, {1}}};
    auto recs = pairs_to_kto(pairs);
    REQUIRE(recs.size() == 6);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        CHECK(recs[2 * k] == KtoRecord{pairs[k].prompt, pairs[k].chosen, KtoLabel::desirable});
        CHECK(recs[2 * k + 1] == KtoRecord{pairs[k].prompt, pairs[k].rejected, KtoLabel::undesirable});
    }
}

TEST_CASE("binarize: argmax and argmin") {
    RankedResponses r{{0}, {{{0}, 0.9}, {{1}, 0.2}, {{2}, 0.5}}};
    auto p = binarize(r);
    CHECK(p.chosen == Sequence{0});
    CHECK(p.rejected == Sequence{1});
}

TEST_CASE("binarize: tied scores") {
    RankedResponses r{{0}, {{{0, 1}, 0.7}, {{1, 0}, 0.7}}};
    auto p = binarize(r);
    CHECK(p.chosen == Sequence{0, 1});
    CHECK(p.rejected == Sequence{1, 0});
}

TEST_CASE("binarize: errors") {
    CHECK_THROWS(binarize(RankedResponses{{0}, {{{0}, 1.0}}}));
    CHECK_THROWS(binarize(RankedResponses{{0}, {{{1}, 1.0}, {{1}, 0.0}}}));
}

TEST_CASE("parse_ranked_jsonl feeds binarize") {
    std::istringstream in(
        R"({"prompt":"a","responses":[{"text":"a b","score":0.1},{"text":"c","score":0.8}]})" "\n");
    auto ranked = parse_ranked_jsonl(in, abc());
    REQUIRE(ranked.size() == 1);
    auto p = binarize(ranked[0]);
    CHECK(p.chosen == Sequence{2});
    CHECK(p.rejected == Sequence{0, 1});
}

TEST_CASE("take_prefix") {
    std::vector<int> v{1, 2, 3, 4, 5};
    std::span<const int> s(v);
    CHECK(take_prefix(s, 0).empty());
    CHECK(take_prefix(s, 5) == v);
    CHECK(take_prefix(s, 2) == std::vector<int>{1, 2});
    CHECK_THROWS_AS(take_prefix(s, 6), InvalidArgument);
}

// ---- properties ----

namespace {

Sequence random_seq(Rng& rng, const Vocab& v, std::size_t max_len, bool allow_empty) {
    std::size_t len = rng.below(max_len + 1);
    if (!allow_empty && len == 0) len = 1;
    Sequence s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<TokenId>(rng.below(v.size())));
    if (!s.empty() && rng.below(3) == 0) s.back() = v.eos();
    return s;
}

}  // namespace

TEST_CASE("property: pairs jsonl round trip") {
    Vocab v({"a", "b", "c", "d"});
    Rng rng(11);
    std::vector<PreferencePair> pairs;
    while (pairs.size() < 200) {
        PreferencePair p{random_seq(rng, v, 4, true), random_seq(rng, v, 5, false), random_seq(rng, v, 5, false)};
        if (p.chosen != p.rejected) pairs.push_back(p);
    }
    std::ostringstream out;
    write_pairs_jsonl(out, pairs, v);
    std::istringstream in(out.str());
    CHECK(parse_pairs_jsonl(in, v) == pairs);

    auto recs = pairs_to_kto(pairs);
    std::ostringstream kout;
    write_kto_jsonl(kout, recs, v);
    std::istringstream kin(kout.str());
    CHECK(parse_kto_jsonl(kin, v) == recs);
}

TEST_CASE("property: pairs_to_kto label counts") {
    Rng rng(3);
    Vocab v = abc();
    for (std::size_t n : {0u, 1u, 7u, 40u}) {
        std::vector<PreferencePair> pairs;
        for (std::size_t i = 0; i < n; ++i) pairs.push_back({{}, {0}, {static_cast<TokenId>(1 + rng.below(2))}});
        auto recs = pairs_to_kto(pairs);
        const auto des = std::count_if(recs.begin(), recs.end(),
                                       [](const KtoRecord& r) { return r.label == KtoLabel::desirable; });
        CHECK(static_cast<std::size_t>(des) == n);
        CHECK(recs.size() - static_cast<std::size_t>(des) == n);
    }
}

TEST_CASE("property: binarize is permutation covariant for distinct scores") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        RankedResponses r;
        const std::size_t n = 2 + rng.below(5);
        for (std::size_t i = 0; i < n; ++i) {
            r.responses.push_back({Sequence{static_cast<TokenId>(i)}, rng.uniform() + static_cast<double>(i) * 1e-3});
        }
        auto base = binarize(r);
        RankedResponses permuted = r;
        rng.shuffle(permuted.responses);
        auto other = binarize(permuted);
        CHECK(other.chosen == base.chosen);
        CHECK(other.rejected == base.rejected);
    }
}

TEST_CASE("property: take_prefix nests") {
    std::vector<int> v(30);
    for (int i = 0; i < 30; ++i) v[static_cast<std::size_t>(i)] = i * 7 % 11;
    std::span<const int> s(v);
    for (std::size_t a = 0; a <= v.size(); a += 3) {
        for (std::size_t b = a; b <= v.size(); b += 4) {
            auto pa = take_prefix(s, a);
            auto pb = take_prefix(s, b);
            CHECK(std::equal(pa.begin(), pa.end(), pb.begin()));
        }
    }
}

TEST_CASE("property: seeded_shuffle is a deterministic permutation") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    std::span<const int> s(v);
    auto a = seeded_shuffle(s, 9);
    auto b = seeded_shuffle(s, 9);
    auto c = seeded_shuffle(s, 10);
    CHECK(a == b);
    CHECK(a != c);
    std::sort(a.begin(), a.end());
    CHECK(a == v);
}
