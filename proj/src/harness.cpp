// SPDX-License-Identifier: Apache-2.0
#include "prefkit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "prefkit/error.hpp"
#include "prefkit/metrics.hpp"
#include "prefkit/rng.hpp"
#include "prefkit/util.hpp"

namespace prefkit {

using ojson = nlohmann::ordered_json;

namespace {

// Stream tags for mix_seed, so every random draw in the world has its own stream.
enum Stream : std::uint64_t {
    kPlant = 1,
    kCorrupt,
    kTrainPrompts,
    kHeldoutPrompts,
    kOraclePairs,
    kHeldoutPairs,
    kBase,
    kInstruct,
    kSftTrain,
    kAlignTrain,
    kPp,
    kPpGenerate,
    kShuffle,
};

std::vector<Sequence> random_prompts(Rng& rng, std::size_t count, const WorldConfig& cfg) {
    std::vector<Sequence> out(count);
    const std::size_t span = cfg.prompt_max_len - cfg.prompt_min_len + 1;
    for (auto& p : out) {
        const std::size_t len = cfg.prompt_min_len + rng.below(span);
        p.resize(len);
        for (auto& t : p) t = static_cast<TokenId>(rng.below(cfg.n_symbols));
    }
    return out;
}

// Chosen from the expert at low temperature, rejected from the corrupted
// expert; identical draws are resampled like the PP generator does.
std::vector<PreferencePair> oracle_pairs(const SyntheticWorld& w, std::span<const Sequence> prompts,
                                         std::size_t limit, std::uint64_t seed) {
    std::vector<PreferencePair> out;
    for (std::size_t i = 0; i < prompts.size() && out.size() < limit; ++i) {
        for (std::size_t attempt = 0; attempt <= kPpMaxResamples; ++attempt) {
            const GenerationConfig gc{w.cfg.chosen_temperature, false, w.cfg.max_len, mix_seed(seed, {i, attempt, 0})};
            const GenerationConfig gr{w.cfg.rejected_temperature, false, w.cfg.max_len,
                                      mix_seed(seed, {i, attempt, 1})};
            Sequence chosen = sample_completion(w.expert, prompts[i], gc);
            Sequence rejected = sample_completion(w.corrupted, prompts[i], gr);
            if (chosen != rejected) {
                out.push_back(PreferencePair{prompts[i], std::move(chosen), std::move(rejected)});
                break;
            }
        }
    }
    return out;
}

std::string digest_sequences(std::span<const Sequence> seqs) {
    std::uint64_t h = fnv1a64("");
    for (const auto& s : seqs) {
        for (TokenId t : s) h = fnv1a64(std::to_string(t) + ",", h);
        h = fnv1a64(";", h);
    }
    return hex64(h);
}

std::string digest_pairs(std::span<const PreferencePair> pairs) {
    std::vector<Sequence> flat;
    flat.reserve(3 * pairs.size());
    for (const auto& p : pairs) {
        flat.push_back(p.prompt);
        flat.push_back(p.chosen);
        flat.push_back(p.rejected);
    }
    return digest_sequences(flat);
}

std::vector<Sequence> greedy_all(const NGramPolicy& policy, std::span<const Sequence> prompts, std::size_t n) {
    std::vector<Sequence> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(greedy_decode(policy, p, n));
    return out;
}

TrainConfig seeded(TrainConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    return cfg;
}

double last_loss(const TrainResult& r) {
    return r.trace.empty() ? std::numeric_limits<double>::quiet_NaN() : r.trace.back().loss;
}

}  // namespace

void WorldConfig::validate() const {
    if (n_symbols < 2) throw InvalidArgument("world: need at least 2 symbols (vocab size >= 4 with BOS/EOS)");
    if (order == 0) throw InvalidArgument("world: order must be >= 1");
    if (max_len == 0) throw InvalidArgument("world: max_len must be >= 1");
    if (prompt_min_len == 0 || prompt_min_len > prompt_max_len) {
        throw InvalidArgument("world: prompt lengths must satisfy 1 <= min <= max");
    }
    if (train_prompts == 0 || heldout_prompts == 0) throw InvalidArgument("world: prompt sets must be non-empty");
    if (oracle_pairs == 0) throw InvalidArgument("world: oracle_pairs must be >= 1");
    if (oracle_pairs > train_prompts) throw InvalidArgument("world: oracle_pairs exceeds train_prompts");
    if (sft_demos == 0 || sft_demos > train_prompts) {
        throw InvalidArgument("world: sft_demos must lie in [1, train_prompts]");
    }
    if (!(contrast > 0.0)) throw InvalidArgument("world: contrast must be positive");
    if (!(corrupt_sigma >= 0.0) || !(base_sigma >= 0.0) || !(instruct_sigma >= 0.0)) {
        throw InvalidArgument("world: noise scales must be >= 0");
    }
    if (!(chosen_temperature > 0.0) || !(rejected_temperature > 0.0)) {
        throw InvalidArgument("world: temperatures must be positive");
    }
}

std::vector<Demo> SyntheticWorld::sft_demos() const {
    std::vector<Demo> out;
    out.reserve(cfg.sft_demos);
    for (std::size_t i = 0; i < cfg.sft_demos; ++i) out.push_back(Demo{train_prompts[i], train_gold[i]});
    return out;
}

SyntheticWorld build_world(std::uint64_t seed, const WorldConfig& cfg) {
    cfg.validate();
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < cfg.n_symbols; ++i) symbols.push_back("w" + std::to_string(i));
    Vocab vocab(std::move(symbols));

    NGramPolicy expert(vocab, cfg.order, cfg.max_len);
    {
        Rng rng(mix_seed(seed, {kPlant}));
        for (std::size_t key = 0; key < expert.num_contexts(); ++key) {
            expert.row(key)[rng.below(cfg.n_symbols)] = cfg.contrast;
        }
    }
    NGramPolicy corrupted = expert;
    {
        Rng rng(mix_seed(seed, {kCorrupt}));
        for (double& x : corrupted.params()) x += cfg.corrupt_sigma * rng.normal();
    }

    SyntheticWorld w{seed, cfg, vocab, std::move(expert), std::move(corrupted), {}, {}, {}, {}, {}, {}};
    Rng train_rng(mix_seed(seed, {kTrainPrompts}));
    w.train_prompts = random_prompts(train_rng, cfg.train_prompts, cfg);
    Rng heldout_rng(mix_seed(seed, {kHeldoutPrompts}));
    w.heldout_prompts = random_prompts(heldout_rng, cfg.heldout_prompts, cfg);
    w.train_gold = greedy_all(w.expert, w.train_prompts, cfg.max_len);
    w.heldout_gold = greedy_all(w.expert, w.heldout_prompts, cfg.max_len);
    for (const auto* gold : {&w.train_gold, &w.heldout_gold}) {
        for (const auto& g : *gold) {
            if (strip_eos(g, w.vocab).empty()) throw Error("world: expert produced an empty gold response");
        }
    }

    w.oracle_pairs = oracle_pairs(w, w.train_prompts, cfg.oracle_pairs, mix_seed(seed, {kOraclePairs}));
    if (w.oracle_pairs.size() < cfg.oracle_pairs) {
        throw Error("world: only " + std::to_string(w.oracle_pairs.size()) + " of " +
                    std::to_string(cfg.oracle_pairs) + " oracle pairs could be drawn");
    }
    w.heldout_pairs = oracle_pairs(w, w.heldout_prompts, w.heldout_prompts.size(), mix_seed(seed, {kHeldoutPairs}));
    if (w.heldout_pairs.empty()) throw Error("world: no held-out pairs could be drawn");
    return w;
}

std::string world_manifest_json(const SyntheticWorld& w) {
    const WorldConfig& c = w.cfg;
    ojson doc;
    doc["format"] = "prefkit.world.v1";
    doc["seed"] = w.seed;
    doc["n_symbols"] = c.n_symbols;
    doc["order"] = c.order;
    doc["max_len"] = c.max_len;
    doc["prompt_min_len"] = c.prompt_min_len;
    doc["prompt_max_len"] = c.prompt_max_len;
    doc["train_prompts"] = c.train_prompts;
    doc["heldout_prompts"] = c.heldout_prompts;
    doc["oracle_pairs"] = c.oracle_pairs;
    doc["sft_demos"] = c.sft_demos;
    doc["contrast"] = c.contrast;
    doc["corrupt_sigma"] = c.corrupt_sigma;
    doc["chosen_temperature"] = c.chosen_temperature;
    doc["rejected_temperature"] = c.rejected_temperature;
    doc["base_sigma"] = c.base_sigma;
    doc["instruct_sigma"] = c.instruct_sigma;
    doc["vocab_hash"] = hex64(w.vocab.hash());
    doc["digests"] = ojson{{"train_gold", digest_sequences(w.train_gold)},
                           {"heldout_gold", digest_sequences(w.heldout_gold)},
                           {"oracle_pairs", digest_pairs(w.oracle_pairs)},
                           {"heldout_pairs", digest_pairs(w.heldout_pairs)}};
    return doc.dump(2) + "\n";
}

JudgeScore judge(std::span<const Sequence> responses, const SyntheticWorld& world) {
    if (responses.size() != world.heldout_prompts.size()) {
        throw InvalidArgument("judge: got " + std::to_string(responses.size()) + " responses for " +
                              std::to_string(world.heldout_prompts.size()) + " prompts");
    }
    JudgeScore out;
    out.per_prompt.reserve(responses.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const double s = rouge_l(strip_eos(responses[i], world.vocab), strip_eos(world.heldout_gold[i], world.vocab));
        out.per_prompt.push_back(s);
        sum += s;
    }
    out.aggregate = 10.0 * sum / static_cast<double>(responses.size());
    return out;
}

double preference_accuracy(const NGramPolicy& policy, std::span<const PreferencePair> pairs) {
    if (pairs.empty()) throw InvalidArgument("preference_accuracy: no pairs");
    std::size_t correct = 0;
    for (const auto& p : pairs) {
        if (sequence_logprob(policy, p.prompt, p.chosen) > sequence_logprob(policy, p.prompt, p.rejected)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::string_view to_string(InitRegime r) {
    switch (r) {
        case InitRegime::base: return "base";
        case InitRegime::sft: return "sft";
        case InitRegime::instruct: return "instruct";
    }
    return "?";
}

std::string_view to_string(DataSource s) { return s == DataSource::oracle ? "oracle" : "pp"; }

InitRegime parse_regime(std::string_view name) {
    for (InitRegime r : {InitRegime::base, InitRegime::sft, InitRegime::instruct}) {
        if (name == to_string(r)) return r;
    }
    throw InvalidArgument("unknown init regime '" + std::string(name) + "' (valid: base, sft, instruct)");
}

DataSource parse_source(std::string_view name) {
    for (DataSource s : {DataSource::oracle, DataSource::pp}) {
        if (name == to_string(s)) return s;
    }
    throw InvalidArgument("unknown dataset source '" + std::string(name) + "' (valid: oracle, pp)");
}

HarnessConfig HarnessConfig::defaults() {
    HarnessConfig c;
    c.sft.peak_lr = 5e-2;
    c.sft.epochs = 20;
    c.sft.batch_size = 16;
    c.align.peak_lr = 5e-2;
    c.align.epochs = 60;
    c.beta = 0.05;
    c.tau = 0.002;
    c.align.batch_size = 16;
    return c;
}

NGramPolicy regime_policy(const SyntheticWorld& world, InitRegime regime, const HarnessConfig& cfg) {
    const WorldConfig& wc = world.cfg;
    NGramPolicy base =
        init_policy(world.vocab, wc.order, wc.max_len, InitMode::gaussian, wc.base_sigma, mix_seed(world.seed, {kBase}));
    switch (regime) {
        case InitRegime::base: return base;
        case InitRegime::sft: {
            const auto demos = world.sft_demos();
            return sft_train(std::move(base), demos, seeded(cfg.sft, mix_seed(world.seed, {kSftTrain}))).policy;
        }
        case InitRegime::instruct: {
            NGramPolicy p = world.expert;
            Rng rng(mix_seed(world.seed, {kInstruct}));
            for (double& x : p.params()) x += wc.instruct_sigma * rng.normal();
            return p;
        }
    }
    throw InvalidArgument("unknown init regime");
}

Evaluation evaluate(const NGramPolicy& policy, const SyntheticWorld& world) {
    const auto responses = greedy_all(policy, world.heldout_prompts, world.cfg.max_len);
    return Evaluation{judge(responses, world).aggregate, preference_accuracy(policy, world.heldout_pairs)};
}

void Report::check_unique_keys() const {
    std::set<std::tuple<std::string, std::string, std::string, std::size_t, std::string, std::uint64_t>> seen;
    for (const auto& r : rows) {
        if (!seen.emplace(r.scenario, r.method, r.init_regime, r.train_size, r.dataset_source, r.seed).second) {
            throw Error("report: duplicate key (" + r.scenario + ", " + r.method + ", " + r.init_regime + ", " +
                        std::to_string(r.train_size) + ", " + r.dataset_source + ", " + std::to_string(r.seed) + ")");
        }
    }
}

void Report::write_csv(std::ostream& out) const {
    out << "scenario,method,init_regime,train_size,dataset_source,seed,judge_score,preference_accuracy,final_loss\n";
    for (const auto& r : rows) {
        out << r.scenario << ',' << r.method << ',' << r.init_regime << ',' << r.train_size << ','
            << r.dataset_source << ',' << r.seed << ',' << format_double(r.judge_score) << ','
            << format_double(r.preference_accuracy) << ',' << format_double(r.final_loss) << '\n';
    }
}

Report scenario_a(const SyntheticWorld& world, std::span<const Method> methods, std::span<const InitRegime> regimes,
                  const HarnessConfig& cfg) {
    std::vector<NGramPolicy> starts;
    starts.reserve(regimes.size());
    for (InitRegime r : regimes) starts.push_back(regime_policy(world, r, cfg));

    // Cell layout per regime: baseline first, then one per method.
    const std::size_t per_regime = methods.size() + 1;
    std::vector<ReportRow> rows(regimes.size() * per_regime);
    const auto kto_data = pairs_to_kto(world.oracle_pairs);
    parallel_for(rows.size(), cfg.threads, [&](std::size_t cell) {
        const std::size_t ri = cell / per_regime;
        const std::size_t mi = cell % per_regime;
        ReportRow row;
        row.scenario = "a";
        row.init_regime = std::string(to_string(regimes[ri]));
        row.seed = world.seed;
        if (mi == 0) {
            const Evaluation e = evaluate(starts[ri], world);
            row.method = std::string(kBaselineMethod);
            row.dataset_source = "none";
            row.judge_score = e.judge_score;
            row.preference_accuracy = e.preference_accuracy;
            row.final_loss = std::numeric_limits<double>::quiet_NaN();
        } else {
            const Method m = methods[mi - 1];
            AlignConfig acfg{m, cfg.beta, cfg.tau, 0};
            const TrainConfig tcfg = seeded(cfg.align, mix_seed(world.seed, {kAlignTrain, 0xA, ri, mi}));
            const AlignData data = m == Method::kto ? AlignData{kto_data} : AlignData{world.oracle_pairs};
            const NGramPolicy* ref = needs_reference(m) ? &starts[ri] : nullptr;
            const TrainResult res = align_train(starts[ri], ref, data, acfg, tcfg);
            const Evaluation e = evaluate(res.policy, world);
            row.method = std::string(to_string(m));
            row.train_size = world.oracle_pairs.size();
            row.dataset_source = "oracle";
            row.judge_score = e.judge_score;
            row.preference_accuracy = e.preference_accuracy;
            row.final_loss = last_loss(res);
        }
        rows[cell] = std::move(row);
    });
    Report report{std::move(rows)};
    report.check_unique_keys();
    return report;
}

PpRun pp_pipeline(const SyntheticWorld& world, const NGramPolicy& sft, const HarnessConfig& cfg) {
    std::vector<Demo> corpus;
    corpus.reserve(world.train_prompts.size());
    for (const auto& p : world.train_prompts) corpus.push_back(Demo{p, greedy_decode(sft, p, world.cfg.max_len)});
    PpConfig pcfg = cfg.pp;
    pcfg.seed = mix_seed(world.seed, {kPp});
    pcfg.max_new_tokens = world.cfg.max_len;
    pcfg.threads = cfg.threads;
    PpRun run;
    run.summaries = sweep(sft, corpus, pcfg);
    run.selection = select_configs(run.summaries);
    run.generated = generate_preferences(sft, world.train_prompts, run.selection, mix_seed(world.seed, {kPpGenerate}),
                                         world.cfg.max_len);
    return run;
}

Report scenario_b(const SyntheticWorld& world, std::span<const std::size_t> sizes, std::span<const DataSource> sources,
                  const HarnessConfig& cfg) {
    if (!std::is_sorted(sizes.begin(), sizes.end())) throw InvalidArgument("scenario b: sizes must be ascending");
    if (std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end()) {
        throw InvalidArgument("scenario b: sizes must be distinct");
    }
    const NGramPolicy sft = regime_policy(world, InitRegime::sft, cfg);
    const std::size_t largest = sizes.empty() ? 0 : sizes.back();

    std::vector<std::vector<PreferencePair>> datasets;
    for (DataSource s : sources) {
        std::vector<PreferencePair> pool;
        if (s == DataSource::oracle) {
            pool = world.oracle_pairs;
        } else {
            pool = pp_pipeline(world, sft, cfg).generated.pairs;
        }
        if (largest > pool.size()) {
            throw InvalidArgument("scenario b: size " + std::to_string(largest) + " exceeds the " +
                                  std::string(to_string(s)) + " dataset (" + std::to_string(pool.size()) + " pairs)");
        }
        datasets.push_back(seeded_shuffle<PreferencePair>(pool, mix_seed(world.seed, {kShuffle, std::uint64_t(s)})));
    }

    const Evaluation sft_eval = evaluate(sft, world);
    std::vector<ReportRow> rows(sources.size() * sizes.size());
    parallel_for(rows.size(), cfg.threads, [&](std::size_t cell) {
        const std::size_t si = cell / sizes.size();
        const std::size_t zi = cell % sizes.size();
        ReportRow row;
        row.scenario = "b";
        row.method = "dpo";
        row.init_regime = "sft";
        row.train_size = sizes[zi];
        row.dataset_source = std::string(to_string(sources[si]));
        row.seed = world.seed;
        if (sizes[zi] == 0) {
            row.judge_score = sft_eval.judge_score;
            row.preference_accuracy = sft_eval.preference_accuracy;
            row.final_loss = std::numeric_limits<double>::quiet_NaN();
        } else {
            const auto subset = take_prefix<PreferencePair>(datasets[si], sizes[zi]);
            AlignConfig acfg{Method::dpo, cfg.beta, cfg.tau, 0};
            const TrainConfig tcfg = seeded(cfg.align, mix_seed(world.seed, {kAlignTrain, 0xB, si, zi}));
            const TrainResult res = align_train(sft, &sft, AlignData{subset}, acfg, tcfg);
            const Evaluation e = evaluate(res.policy, world);
            row.judge_score = e.judge_score;
            row.preference_accuracy = e.preference_accuracy;
            row.final_loss = last_loss(res);
        }
        rows[cell] = std::move(row);
    });
    Report report{std::move(rows)};
    report.check_unique_keys();
    return report;
}

}  // namespace prefkit
