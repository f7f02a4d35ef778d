// SPDX-License-Identifier: Apache-2.0
//
// Preference Pruning: pick generation temperatures for chosen and rejected
// responses from small repeated samples instead of scoring a full generated
// dataset per configuration.
//
//   1. sweep: for each temperature, R times draw B corpus prompts, sample one
//      completion each, and score BLEU / ROUGE-L against the reference;
//   2. select_configs: the temperature with the highest median ROUGE-L
//      generates chosen responses, the lowest generates rejected ones;
//   3. generate_preferences: sample both for every prompt.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefkit/data.hpp"
#include "prefkit/policy.hpp"

namespace prefkit {

struct PpConfig {
    std::vector<double> temperatures{0.2, 0.4, 0.6, 0.8, 1.0};
    std::size_t batch_size = 128;
    std::size_t repeats = 10;
    std::uint64_t seed = 0;
    std::size_t max_new_tokens = 8;
    /// Worker cap for the sweep; never changes results.
    std::size_t threads = 1;

    void validate() const;
};

enum class Metric { bleu, rouge_l };

std::string_view to_string(Metric m);

struct BoxStats {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

struct MetricSummary {
    Metric metric = Metric::rouge_l;
    double temperature = 0.0;
    std::vector<double> repeat_means;
    BoxStats stats;
};

struct ExampleScore {
    std::size_t corpus_index = 0;
    double bleu = 0.0;
    double rouge_l = 0.0;
};

struct RankEntry {
    double temperature = 0.0;
    double median_rouge_l = 0.0;
    double median_bleu = 0.0;
};

struct PpSelection {
    double chosen_temperature = 0.0;
    double rejected_temperature = 0.0;
    /// Best first.
    std::vector<RankEntry> ranking;
};

struct SkipRecord {
    std::size_t prompt_index = 0;
    std::size_t attempts = 0;
};

struct GeneratedPreferences {
    std::vector<PreferencePair> pairs;
    std::vector<SkipRecord> skipped;
};

/// Quartiles by linear interpolation at position p*(n-1) of the sorted values.
BoxStats summarize(std::span<const double> values);

/// Draws B distinct corpus entries (seeded), samples one completion per prompt
/// with `gen` (its seed field is ignored; per-example seeds derive from `seed`),
/// and scores it against the reference. Trailing EOS is dropped on both sides
/// before scoring.
std::vector<ExampleScore> sample_metric_batch(const NGramPolicy& sft, std::span<const Demo> corpus,
                                              const GenerationConfig& gen, std::size_t batch_size,
                                              std::uint64_t seed);

/// One summary per (temperature, metric), temperature-major, BLEU before ROUGE-L.
std::vector<MetricSummary> sweep(const NGramPolicy& sft, std::span<const Demo> corpus, const PpConfig& cfg);

PpSelection select_configs(std::span<const MetricSummary> summaries);

/// Resamples a prompt whose chosen and rejected samples coincide up to 8
/// times, then records a skip.
GeneratedPreferences generate_preferences(const NGramPolicy& sft, std::span<const Sequence> prompts,
                                          const PpSelection& sel, std::uint64_t seed, std::size_t max_new_tokens);

inline constexpr std::size_t kPpMaxResamples = 8;

/// `metric,temperature,min,q1,median,q3,max,mean`
void write_sweep_csv(std::ostream& out, std::span<const MetricSummary> summaries);
/// Summaries with per-repeat means, as a JSON document.
std::string sweep_json(std::span<const MetricSummary> summaries, const PpConfig& cfg);
/// `{chosen_temperature, rejected_temperature, ranking: [...]}` plus skip records.
std::string selection_json(const PpSelection& sel, std::span<const SkipRecord> skipped = {});

}  // namespace prefkit
