// SPDX-License-Identifier: Apache-2.0
//
// Synthetic alignment world and the two experiment runners.
//
// The world plants an expert policy whose argmax continuation of every
// context is a fixed random symbol (logit `contrast`, all other logits 0, EOS
// never planted), so gold responses are the expert's greedy decodes of full
// length. Oracle preference pairs take chosen = expert sample at a low
// temperature and rejected = sample from a noise-corrupted expert. A ROUGE-L
// judge against gold stands in for human/LLM rating.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefkit/data.hpp"
#include "prefkit/losses.hpp"
#include "prefkit/policy.hpp"
#include "prefkit/pp.hpp"
#include "prefkit/trainer.hpp"

namespace prefkit {

struct WorldConfig {
    std::size_t n_symbols = 10;
    std::size_t order = 2;
    std::size_t max_len = 24;
    std::size_t prompt_min_len = 1;
    std::size_t prompt_max_len = 3;
    std::size_t train_prompts = 3072;
    std::size_t heldout_prompts = 256;
    std::size_t oracle_pairs = 2048;
    /// Gold demonstrations (from the first training prompts) used for SFT.
    std::size_t sft_demos = 48;
    double contrast = 4.0;
    double corrupt_sigma = 2.0;
    double chosen_temperature = 0.25;
    double rejected_temperature = 2.0;
    /// Logit noise of the "base" (not instruction-tuned, no SFT) starting policy.
    double base_sigma = 0.5;
    /// Noise added to the expert to form the "instruct" starting policy.
    double instruct_sigma = 1.0;

    void validate() const;
};

struct SyntheticWorld {
    std::uint64_t seed = 0;
    WorldConfig cfg;
    Vocab vocab;
    NGramPolicy expert;
    NGramPolicy corrupted;
    std::vector<Sequence> train_prompts;
    std::vector<Sequence> train_gold;
    std::vector<Sequence> heldout_prompts;
    std::vector<Sequence> heldout_gold;
    std::vector<PreferencePair> oracle_pairs;
    std::vector<PreferencePair> heldout_pairs;

    std::vector<Demo> sft_demos() const;
};

/// Deterministic per (seed, cfg).
SyntheticWorld build_world(std::uint64_t seed, const WorldConfig& cfg = {});

/// Everything needed to rebuild the world bit-exactly, plus digests to check it.
std::string world_manifest_json(const SyntheticWorld& world);

struct JudgeScore {
    std::vector<double> per_prompt;
    /// Mean per-prompt ROUGE-L times 10, in [0, 10].
    double aggregate = 0.0;
};

/// Scores one response per held-out prompt against its gold response.
JudgeScore judge(std::span<const Sequence> responses, const SyntheticWorld& world);

/// Fraction of pairs with log pi(chosen) > log pi(rejected); ties count as wrong.
double preference_accuracy(const NGramPolicy& policy, std::span<const PreferencePair> pairs);

enum class InitRegime { base, sft, instruct };
enum class DataSource { oracle, pp };

std::string_view to_string(InitRegime r);
std::string_view to_string(DataSource s);
InitRegime parse_regime(std::string_view name);
DataSource parse_source(std::string_view name);

struct HarnessConfig {
    TrainConfig sft;
    TrainConfig align;
    double beta = 0.1;
    double tau = 0.1;
    PpConfig pp;
    std::size_t threads = 1;

    /// Calibrated defaults for the synthetic world.
    static HarnessConfig defaults();
};

/// Starting policy for a regime. "sft" trains the base policy on the world's
/// gold demonstrations; "instruct" is the expert plus Gaussian logit noise.
NGramPolicy regime_policy(const SyntheticWorld& world, InitRegime regime, const HarnessConfig& cfg);

struct Evaluation {
    double judge_score = 0.0;
    double preference_accuracy = 0.0;
};

/// Greedy decodes on held-out prompts, judged; accuracy on held-out pairs.
Evaluation evaluate(const NGramPolicy& policy, const SyntheticWorld& world);

struct ReportRow {
    std::string scenario;
    std::string method;
    std::string init_regime;
    std::size_t train_size = 0;
    std::string dataset_source;
    std::uint64_t seed = 0;
    double judge_score = 0.0;
    double preference_accuracy = 0.0;
    /// Loss at the last training step; NaN when nothing was trained.
    double final_loss = 0.0;
};

struct Report {
    std::vector<ReportRow> rows;

    /// Throws Error on a duplicate (scenario, method, init_regime, train_size, dataset_source, seed) key.
    void check_unique_keys() const;
    void write_csv(std::ostream& out) const;
};

inline constexpr std::string_view kBaselineMethod = "none";

/// Per regime: one unaligned baseline row, then one row per method trained on
/// the oracle pairs.
Report scenario_a(const SyntheticWorld& world, std::span<const Method> methods,
                  std::span<const InitRegime> regimes, const HarnessConfig& cfg);

struct PpRun {
    std::vector<MetricSummary> summaries;
    PpSelection selection;
    GeneratedPreferences generated;
};

/// Full Preference Pruning pipeline on the SFT policy: references are its own
/// greedy decodes of the training prompts.
PpRun pp_pipeline(const SyntheticWorld& world, const NGramPolicy& sft, const HarnessConfig& cfg);

/// DPO from the SFT regime on nested prefixes of each source's shuffled dataset.
/// Size 0 is the untrained SFT policy. Sizes must be ascending.
Report scenario_b(const SyntheticWorld& world, std::span<const std::size_t> sizes,
                  std::span<const DataSource> sources, const HarnessConfig& cfg);

}  // namespace prefkit
