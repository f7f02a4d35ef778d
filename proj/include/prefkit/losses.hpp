// SPDX-License-Identifier: Apache-2.0
//
// RL-free preference objectives over a tabular policy, with exact gradients
// with respect to the trainable policy's logits. The reference policy is a
// constant throughout.
//
//   DPO   mean -log sigma(m),            m = beta * [(lt_w - lr_w) - (lt_l - lr_l)]
//   IPO   mean (h - 1/(2 tau))^2,        h = (lt_w - lr_w) - (lt_l - lr_l)
//   KTO   mean 1 - sigma(+/-(beta*r - z)), r = lt - lr, z = beta * KL(theta || ref) (no gradient)
//   CPO   mean -log sigma(beta*(lt_w - lt_l)) + mean -lt_w   (reference-free)
//
// lt = log pi_theta(y|x), lr = log pi_ref(y|x).
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prefkit/data.hpp"
#include "prefkit/policy.hpp"

namespace prefkit {

enum class Method { dpo, ipo, kto, cpo };

std::string_view to_string(Method m);
/// Throws InvalidArgument listing the valid names.
Method parse_method(std::string_view name);
/// DPO, IPO and KTO anchor on a reference policy; CPO does not.
bool needs_reference(Method m);

struct AlignConfig {
    Method method = Method::dpo;
    double beta = 0.1;
    double tau = 0.1;
    /// Number of batch prompts used as KL contexts for KTO; 0 = all.
    std::size_t kl_contexts = 0;

    void validate() const;
};

struct LossOutput {
    double loss = 0.0;
    /// d loss / d logits of the trainable policy, same layout as params().
    std::vector<double> grad;
    /// Per example: beta-scaled log-ratio margin (DPO/IPO), beta * r (KTO),
    /// beta * (lt_w - lt_l) (CPO).
    std::vector<double> margins;
    /// CPO components; loss == prefer + nll exactly.
    double prefer = 0.0;
    double nll = 0.0;
    /// KTO baseline z.
    double kl_baseline = 0.0;
};

/// Log-probabilities of one pair under the trainable and reference policies.
struct PairLogps {
    double policy_chosen;
    double policy_rejected;
    double ref_chosen;
    double ref_rejected;
};

// Scalar pieces of each objective, shared by the batch losses and exposed for
// tests that probe the algebra without a policy.
double softplus(double x);
double sigmoid(double x);
double implicit_margin(const PairLogps& lp, double beta);
double dpo_term(double margin);
double ipo_term(double h, double tau);
double kto_value(double beta_r, double z, KtoLabel label);
double cpo_prefer_term(double policy_chosen, double policy_rejected, double beta);

double implicit_margin(const PreferencePair& pair, const NGramPolicy& theta, const NGramPolicy& ref, double beta);

LossOutput dpo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg);

LossOutput ipo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg);

/// KL contexts are the batch prompts in order, truncated to cfg.kl_contexts.
LossOutput kto_loss(std::span<const KtoRecord> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg);

/// KTO with an explicit KL context list.
LossOutput kto_loss(std::span<const KtoRecord> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg, std::span<const Sequence> kl_contexts);

/// KTO with the baseline z supplied by the caller.
LossOutput kto_loss_with_baseline(std::span<const KtoRecord> batch, const NGramPolicy& theta,
                                  const NGramPolicy& ref, const AlignConfig& cfg, double z);

LossOutput cpo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const AlignConfig& cfg);

using LossBatch = std::variant<std::span<const PreferencePair>, std::span<const KtoRecord>>;

/// Dispatches on cfg.method. `ref` may be null only for CPO (and is ignored there).
/// Throws InvalidArgument on batch/method mismatch or a missing reference.
LossOutput loss_and_grad(const LossBatch& batch, const NGramPolicy& theta, const NGramPolicy* ref,
                         const AlignConfig& cfg);

}  // namespace prefkit
