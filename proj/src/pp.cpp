// SPDX-License-Identifier: Apache-2.0
#include "prefkit/pp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "prefkit/metrics.hpp"
#include "prefkit/rng.hpp"
#include "prefkit/util.hpp"

namespace prefkit {

using ojson = nlohmann::ordered_json;

void PpConfig::validate() const {
    if (temperatures.empty()) throw InvalidArgument("pp: at least one temperature is required");
    for (std::size_t i = 0; i < temperatures.size(); ++i) {
        if (!(temperatures[i] > 0.0) || !std::isfinite(temperatures[i])) {
            throw InvalidArgument("pp: temperatures must be positive");
        }
        if (i > 0 && !(temperatures[i] > temperatures[i - 1])) {
            throw InvalidArgument("pp: temperatures must be strictly increasing");
        }
    }
    if (batch_size == 0) throw InvalidArgument("pp: batch size must be >= 1");
    if (repeats == 0) throw InvalidArgument("pp: repeats must be >= 1");
}

std::string_view to_string(Metric m) { return m == Metric::bleu ? "bleu" : "rouge_l"; }

BoxStats summarize(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("summarize: no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    auto quantile = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return v[lo] + frac * (v[hi] - v[lo]);
    };
    BoxStats s;
    s.min = v.front();
    s.max = v.back();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return s;
}

std::vector<ExampleScore> sample_metric_batch(const NGramPolicy& sft, std::span<const Demo> corpus,
                                              const GenerationConfig& gen, std::size_t batch_size,
                                              std::uint64_t seed) {
    if (batch_size == 0) throw InvalidArgument("sample_metric_batch: batch size must be >= 1");
    if (corpus.size() < batch_size) {
        throw InvalidArgument("corpus has " + std::to_string(corpus.size()) + " entries, fewer than the batch size " +
                              std::to_string(batch_size));
    }
    // Partial Fisher-Yates: the first batch_size slots become the draw.
    std::vector<std::size_t> idx(corpus.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, {0x5E1EC7ULL}));
    for (std::size_t j = 0; j < batch_size; ++j) {
        std::swap(idx[j], idx[j + rng.below(idx.size() - j)]);
    }
    const Vocab& vocab = sft.vocab();
    std::vector<ExampleScore> out;
    out.reserve(batch_size);
    for (std::size_t j = 0; j < batch_size; ++j) {
        const Demo& ex = corpus[idx[j]];
        GenerationConfig g = gen;
        g.seed = mix_seed(seed, {0x5A3B1EULL, j});
        const Sequence hyp = strip_eos(sample_completion(sft, ex.prompt, g), vocab);
        const Sequence ref = strip_eos(ex.completion, vocab);
        out.push_back(ExampleScore{idx[j], bleu(hyp, ref), rouge_l(hyp, ref)});
    }
    return out;
}

std::vector<MetricSummary> sweep(const NGramPolicy& sft, std::span<const Demo> corpus, const PpConfig& cfg) {
    cfg.validate();
    if (corpus.size() < cfg.batch_size) {
        throw InvalidArgument("corpus has " + std::to_string(corpus.size()) + " entries, fewer than the batch size " +
                              std::to_string(cfg.batch_size));
    }
    const std::size_t n_temps = cfg.temperatures.size();
    std::vector<std::vector<ExampleScore>> cells(n_temps * cfg.repeats);
    parallel_for(cells.size(), cfg.threads, [&](std::size_t cell) {
        const std::size_t t = cell / cfg.repeats;
        const std::size_t r = cell % cfg.repeats;
        GenerationConfig gen{cfg.temperatures[t], false, cfg.max_new_tokens, 0};
        cells[cell] = sample_metric_batch(sft, corpus, gen, cfg.batch_size, mix_seed(cfg.seed, {t, r}));
    });

    std::vector<MetricSummary> out;
    out.reserve(2 * n_temps);
    for (std::size_t t = 0; t < n_temps; ++t) {
        for (Metric metric : {Metric::bleu, Metric::rouge_l}) {
            MetricSummary s;
            s.metric = metric;
            s.temperature = cfg.temperatures[t];
            std::vector<double> pooled;
            pooled.reserve(cfg.repeats * cfg.batch_size);
            for (std::size_t r = 0; r < cfg.repeats; ++r) {
                double sum = 0.0;
                for (const auto& ex : cells[t * cfg.repeats + r]) {
                    const double v = metric == Metric::bleu ? ex.bleu : ex.rouge_l;
                    pooled.push_back(v);
                    sum += v;
                }
                s.repeat_means.push_back(sum / static_cast<double>(cfg.batch_size));
            }
            s.stats = summarize(pooled);
            out.push_back(std::move(s));
        }
    }
    return out;
}

PpSelection select_configs(std::span<const MetricSummary> summaries) {
    struct Medians {
        double rouge = 0.0, bleu = 0.0;
        bool has_rouge = false, has_bleu = false;
    };
    std::map<double, Medians> by_temp;
    for (const auto& s : summaries) {
        Medians& m = by_temp[s.temperature];
        bool& seen = s.metric == Metric::rouge_l ? m.has_rouge : m.has_bleu;
        if (seen) throw InvalidArgument("select_configs: duplicate summary for one temperature and metric");
        seen = true;
        (s.metric == Metric::rouge_l ? m.rouge : m.bleu) = s.stats.median;
    }
    if (by_temp.size() < 2) throw InvalidArgument("select_configs: need at least 2 temperatures");
    PpSelection sel;
    for (const auto& [temp, m] : by_temp) {
        if (!m.has_rouge || !m.has_bleu) {
            throw InvalidArgument("select_configs: temperature " + format_double(temp) +
                                  " lacks a BLEU or ROUGE-L summary");
        }
        sel.ranking.push_back(RankEntry{temp, m.rouge, m.bleu});
    }
    // Map iteration is temperature-ascending and stable_sort keeps that as the final tie-break.
    std::stable_sort(sel.ranking.begin(), sel.ranking.end(), [](const RankEntry& a, const RankEntry& b) {
        if (a.median_rouge_l != b.median_rouge_l) return a.median_rouge_l > b.median_rouge_l;
        return a.median_bleu > b.median_bleu;
    });
    const RankEntry& top = sel.ranking.front();
    const RankEntry& bottom = sel.ranking.back();
    if (top.median_rouge_l == bottom.median_rouge_l && top.median_bleu == bottom.median_bleu) {
        throw InvalidArgument("select_configs: all temperatures tie on both ROUGE-L and BLEU medians");
    }
    sel.chosen_temperature = top.temperature;
    sel.rejected_temperature = bottom.temperature;
    return sel;
}

GeneratedPreferences generate_preferences(const NGramPolicy& sft, std::span<const Sequence> prompts,
                                          const PpSelection& sel, std::uint64_t seed, std::size_t max_new_tokens) {
    GeneratedPreferences out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        bool done = false;
        for (std::size_t attempt = 0; attempt <= kPpMaxResamples && !done; ++attempt) {
            const GenerationConfig gc{sel.chosen_temperature, false, max_new_tokens, mix_seed(seed, {i, attempt, 0})};
            const GenerationConfig gr{sel.rejected_temperature, false, max_new_tokens,
                                      mix_seed(seed, {i, attempt, 1})};
            Sequence chosen = sample_completion(sft, prompts[i], gc);
            Sequence rejected = sample_completion(sft, prompts[i], gr);
            if (chosen != rejected) {
                out.pairs.push_back(PreferencePair{prompts[i], std::move(chosen), std::move(rejected)});
                done = true;
            }
        }
        if (!done) out.skipped.push_back(SkipRecord{i, kPpMaxResamples + 1});
    }
    return out;
}

void write_sweep_csv(std::ostream& out, std::span<const MetricSummary> summaries) {
    out << "metric,temperature,min,q1,median,q3,max,mean\n";
    for (const auto& s : summaries) {
        out << to_string(s.metric) << ',' << format_double(s.temperature) << ',' << format_double(s.stats.min) << ','
            << format_double(s.stats.q1) << ',' << format_double(s.stats.median) << ','
            << format_double(s.stats.q3) << ',' << format_double(s.stats.max) << ','
            << format_double(s.stats.mean) << '\n';
    }
}

std::string sweep_json(std::span<const MetricSummary> summaries, const PpConfig& cfg) {
    ojson doc;
    doc["batch_size"] = cfg.batch_size;
    doc["repeats"] = cfg.repeats;
    doc["seed"] = cfg.seed;
    doc["max_new_tokens"] = cfg.max_new_tokens;
    doc["temperatures"] = cfg.temperatures;
    auto& arr = doc["summaries"] = ojson::array();
    for (const auto& s : summaries) {
        ojson item;
        item["metric"] = std::string(to_string(s.metric));
        item["temperature"] = s.temperature;
        item["min"] = s.stats.min;
        item["q1"] = s.stats.q1;
        item["median"] = s.stats.median;
        item["q3"] = s.stats.q3;
        item["max"] = s.stats.max;
        item["mean"] = s.stats.mean;
        item["repeat_means"] = s.repeat_means;
        arr.push_back(std::move(item));
    }
    return doc.dump(2) + "\n";
}

std::string selection_json(const PpSelection& sel, std::span<const SkipRecord> skipped) {
    ojson doc;
    doc["chosen_temperature"] = sel.chosen_temperature;
    doc["rejected_temperature"] = sel.rejected_temperature;
    auto& ranking = doc["ranking"] = ojson::array();
    for (const auto& r : sel.ranking) {
        ranking.push_back(ojson{{"temperature", r.temperature},
                                {"median_rouge_l", r.median_rouge_l},
                                {"median_bleu", r.median_bleu}});
    }
    auto& skips = doc["skipped"] = ojson::array();
    for (const auto& s : skipped) skips.push_back(ojson{{"prompt_index", s.prompt_index}, {"attempts", s.attempts}});
    return doc.dump(2) + "\n";
}

}  // namespace prefkit
