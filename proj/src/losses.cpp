// SPDX-License-Identifier: Apache-2.0
#include "prefkit/losses.hpp"

#include <cmath>

namespace prefkit {

namespace {

template <typename T>
void require_nonempty(std::span<const T> batch, std::string_view what) {
    if (batch.empty()) throw InvalidArgument(std::string(what) + ": batch must be non-empty");
}

void require_compatible(const NGramPolicy& theta, const NGramPolicy& ref) {
    if (!theta.compatible(ref)) throw InvalidArgument("policy and reference differ in vocab, order or max_len");
}

PairLogps pair_logps(const PreferencePair& p, const NGramPolicy& theta, const NGramPolicy& ref) {
    return PairLogps{sequence_logprob(theta, p.prompt, p.chosen), sequence_logprob(theta, p.prompt, p.rejected),
                     sequence_logprob(ref, p.prompt, p.chosen), sequence_logprob(ref, p.prompt, p.rejected)};
}

// Accumulates coeff * (grad lt_w - grad lt_l) for one pair.
void add_pair_grad(const PreferencePair& p, const NGramPolicy& theta, double coeff, std::vector<double>& grad) {
    sequence_logprob_grad(theta, p.prompt, p.chosen, coeff, grad);
    sequence_logprob_grad(theta, p.prompt, p.rejected, -coeff, grad);
}

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::dpo: return "dpo";
        case Method::ipo: return "ipo";
        case Method::kto: return "kto";
        case Method::cpo: return "cpo";
    }
    return "dpo";
}

Method parse_method(std::string_view name) {
    if (name == "dpo") return Method::dpo;
    if (name == "ipo") return Method::ipo;
    if (name == "kto") return Method::kto;
    if (name == "cpo") return Method::cpo;
    throw InvalidArgument("unknown method '" + std::string(name) + "' (valid: dpo, ipo, kto, cpo)");
}

bool needs_reference(Method m) { return m != Method::cpo; }

void AlignConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be > 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be > 0");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double implicit_margin(const PairLogps& lp, double beta) {
    return beta * ((lp.policy_chosen - lp.ref_chosen) - (lp.policy_rejected - lp.ref_rejected));
}

double dpo_term(double margin) { return softplus(-margin); }

double ipo_term(double h, double tau) {
    const double d = h - 1.0 / (2.0 * tau);
    return d * d;
}

double kto_value(double beta_r, double z, KtoLabel label) {
    return label == KtoLabel::desirable ? sigmoid(beta_r - z) : sigmoid(z - beta_r);
}

double cpo_prefer_term(double policy_chosen, double policy_rejected, double beta) {
    return softplus(-beta * (policy_chosen - policy_rejected));
}

double implicit_margin(const PreferencePair& pair, const NGramPolicy& theta, const NGramPolicy& ref, double beta) {
    require_compatible(theta, ref);
    return implicit_margin(pair_logps(pair, theta, ref), beta);
}

LossOutput dpo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg) {
    require_nonempty(batch, "dpo_loss");
    require_compatible(theta, ref);
    cfg.validate();
    const double n = static_cast<double>(batch.size());
    LossOutput out;
    out.grad.assign(theta.num_params(), 0.0);
    out.margins.reserve(batch.size());
    double sum = 0.0;
    for (const auto& p : batch) {
        const double m = implicit_margin(pair_logps(p, theta, ref), cfg.beta);
        out.margins.push_back(m);
        sum += dpo_term(m);
        // d softplus(-m) / dm = -sigmoid(-m)
        add_pair_grad(p, theta, -sigmoid(-m) * cfg.beta / n, out.grad);
    }
    out.loss = sum / n;
    return out;
}

LossOutput ipo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg) {
    require_nonempty(batch, "ipo_loss");
    require_compatible(theta, ref);
    cfg.validate();
    const double n = static_cast<double>(batch.size());
    const double target = 1.0 / (2.0 * cfg.tau);
    LossOutput out;
    out.grad.assign(theta.num_params(), 0.0);
    out.margins.reserve(batch.size());
    double sum = 0.0;
    for (const auto& p : batch) {
        const double h = implicit_margin(pair_logps(p, theta, ref), 1.0);
        out.margins.push_back(cfg.beta * h);
        sum += ipo_term(h, cfg.tau);
        add_pair_grad(p, theta, 2.0 * (h - target) / n, out.grad);
    }
    out.loss = sum / n;
    return out;
}

LossOutput kto_loss_with_baseline(std::span<const KtoRecord> batch, const NGramPolicy& theta,
                                  const NGramPolicy& ref, const AlignConfig& cfg, double z) {
    require_nonempty(batch, "kto_loss");
    require_compatible(theta, ref);
    cfg.validate();
    const double n = static_cast<double>(batch.size());
    LossOutput out;
    out.kl_baseline = z;
    out.grad.assign(theta.num_params(), 0.0);
    out.margins.reserve(batch.size());
    // First pass fixes the coefficients; the gradient pass reuses them.
    std::vector<double> coeffs;
    coeffs.reserve(batch.size());
    double sum = 0.0;
    for (const auto& rec : batch) {
        const double r = sequence_logprob(theta, rec.prompt, rec.completion) -
                         sequence_logprob(ref, rec.prompt, rec.completion);
        const double beta_r = cfg.beta * r;
        out.margins.push_back(beta_r);
        const double h = kto_value(beta_r, z, rec.label);
        sum += 1.0 - h;
        const double slope = h * (1.0 - h) * cfg.beta;
        coeffs.push_back(rec.label == KtoLabel::desirable ? -slope / n : slope / n);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        sequence_logprob_grad(theta, batch[i].prompt, batch[i].completion, coeffs[i], out.grad);
    }
    out.loss = sum / n;
    return out;
}

LossOutput kto_loss(std::span<const KtoRecord> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg, std::span<const Sequence> kl_contexts) {
    require_compatible(theta, ref);
    cfg.validate();
    const double z = cfg.beta * exact_token_kl(theta, ref, kl_contexts);
    return kto_loss_with_baseline(batch, theta, ref, cfg, z);
}

LossOutput kto_loss(std::span<const KtoRecord> batch, const NGramPolicy& theta, const NGramPolicy& ref,
                    const AlignConfig& cfg) {
    require_nonempty(batch, "kto_loss");
    std::size_t count = cfg.kl_contexts == 0 ? batch.size() : std::min(cfg.kl_contexts, batch.size());
    std::vector<Sequence> contexts;
    contexts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) contexts.push_back(batch[i].prompt);
    return kto_loss(batch, theta, ref, cfg, contexts);
}

LossOutput cpo_loss(std::span<const PreferencePair> batch, const NGramPolicy& theta, const AlignConfig& cfg) {
    require_nonempty(batch, "cpo_loss");
    cfg.validate();
    const double n = static_cast<double>(batch.size());
    LossOutput out;
    out.grad.assign(theta.num_params(), 0.0);
    out.margins.reserve(batch.size());
    double prefer_sum = 0.0;
    double nll_sum = 0.0;
    for (const auto& p : batch) {
        const double lw = sequence_logprob(theta, p.prompt, p.chosen);
        const double ll = sequence_logprob(theta, p.prompt, p.rejected);
        const double d = cfg.beta * (lw - ll);
        out.margins.push_back(d);
        prefer_sum += cpo_prefer_term(lw, ll, cfg.beta);
        nll_sum += -lw;
        const double c = -sigmoid(-d) * cfg.beta / n;
        sequence_logprob_grad(theta, p.prompt, p.chosen, c - 1.0 / n, out.grad);
        sequence_logprob_grad(theta, p.prompt, p.rejected, -c, out.grad);
    }
    out.prefer = prefer_sum / n;
    out.nll = nll_sum / n;
    out.loss = out.prefer + out.nll;
    return out;
}

LossOutput loss_and_grad(const LossBatch& batch, const NGramPolicy& theta, const NGramPolicy* ref,
                         const AlignConfig& cfg) {
    const bool is_kto_batch = std::holds_alternative<std::span<const KtoRecord>>(batch);
    if ((cfg.method == Method::kto) != is_kto_batch) {
        throw InvalidArgument(std::string("method ") + std::string(to_string(cfg.method)) +
                              (cfg.method == Method::kto ? " expects KTO records" : " expects preference pairs"));
    }
    if (needs_reference(cfg.method) && ref == nullptr) {
        throw InvalidArgument(std::string("method ") + std::string(to_string(cfg.method)) +
                              " requires a reference policy");
    }
    switch (cfg.method) {
        case Method::dpo: return dpo_loss(std::get<0>(batch), theta, *ref, cfg);
        case Method::ipo: return ipo_loss(std::get<0>(batch), theta, *ref, cfg);
        case Method::kto: return kto_loss(std::get<1>(batch), theta, *ref, cfg);
        case Method::cpo: return cpo_loss(std::get<0>(batch), theta, cfg);
    }
    throw InvalidArgument("unknown method");
}

}  // namespace prefkit
