// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "prefkit/data.hpp"
#include "prefkit/losses.hpp"
#include "prefkit/policy.hpp"

namespace prefkit {

struct TrainConfig {
    /// Peak learning rate used for 7B-parameter models. Recorded in run
    /// manifests; pass it as peak_lr to replicate that setting exactly.
    static constexpr double kLargeModelPeakLr = 5e-7;

    /// Default scaled up by 1e4 so the tabular policy moves at desk scale.
    double peak_lr = 5e-3;
    double warmup_frac = 0.10;
    std::size_t batch_size = 16;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const;
};

/// Linear warmup to the peak over round(warmup_frac * total) steps, then
/// linear decay to zero at `total`. lr(0) = lr(total) = 0.
double lr_at_step(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    explicit OptimizerState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected adaptive-moment update with decoupled weight decay.
/// Throws InvalidArgument on shape mismatch or non-finite gradient entries.
void optimizer_step(std::span<double> params, OptimizerState& state, std::span<const double> grad, double lr,
                    const TrainConfig& cfg);

/// Index batches for one epoch: a permutation seeded by (seed, epoch), cut
/// into chunks of batch_size. The trailing partial chunk is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

struct TraceRow {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    /// Mean per-example margin of the batch; NaN for SFT.
    double mean_margin = 0.0;
};

struct TrainResult {
    NGramPolicy policy;
    std::vector<TraceRow> trace;
    std::vector<std::string> warnings;
};

/// Maximum likelihood on demonstrations: minimizes mean -log pi(completion | prompt).
TrainResult sft_train(NGramPolicy init, std::span<const Demo> demos, const TrainConfig& cfg);

using AlignData = std::variant<std::vector<PreferencePair>, std::vector<KtoRecord>>;

/// Preference alignment with any of the four objectives. `ref` must be set for
/// DPO/IPO/KTO; for CPO it is ignored and a warning is recorded.
TrainResult align_train(NGramPolicy init, const NGramPolicy* ref, const AlignData& data, const AlignConfig& acfg,
                        const TrainConfig& tcfg);

/// Writes `step,lr,loss,mean_margin`.
void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace);

struct GradFault {
    std::size_t coordinate = 0;
    double delta = 1.0;
};

struct GradcheckReport {
    Method method = Method::dpo;
    std::size_t instances = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_instance = 0;
    std::size_t worst_coordinate = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = true;
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckRelTol = 1e-5;
inline constexpr double kGradcheckAbsTol = 1e-8;

/// Compares analytic gradients with central differences on `n` random small
/// instances (V_total <= 6, k = 1, sequences of length <= 4). A coordinate
/// passes when |a - f| <= 1e-8 or |a - f| / max(|a|, |f|) <= 1e-5. For KTO the
/// baseline z is frozen at its unperturbed value. `fault`, when set, is added
/// to the analytic gradient of every instance (test hook).
GradcheckReport gradcheck(Method method, std::uint64_t seed, std::size_t n,
                          std::optional<GradFault> fault = std::nullopt);

}  // namespace prefkit
