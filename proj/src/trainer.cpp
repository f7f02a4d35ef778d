// SPDX-License-Identifier: Apache-2.0
#include "prefkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "prefkit/rng.hpp"
#include "prefkit/util.hpp"

namespace prefkit {

void TrainConfig::validate() const {
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw InvalidArgument("peak_lr must be > 0");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw InvalidArgument("warmup_frac must lie in [0, 1]");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw InvalidArgument("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw InvalidArgument("adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
}

double lr_at_step(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    if (total_steps == 0) throw InvalidArgument("lr_at_step: total_steps must be >= 1");
    if (step > total_steps) throw InvalidArgument("lr_at_step: step exceeds total_steps");
    const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps)));
    if (step == 0 || step == total_steps) return 0.0;
    if (step <= warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    return cfg.peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

void optimizer_step(std::span<double> params, OptimizerState& state, std::span<const double> grad, double lr,
                    const TrainConfig& cfg) {
    if (params.size() != grad.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw InvalidArgument("optimizer_step: shape mismatch");
    }
    for (double g : grad) {
        if (!std::isfinite(g)) throw InvalidArgument("optimizer_step: non-finite gradient");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
        state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * params[i]);
    }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, {0xBA7C4ULL, epoch}));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

namespace {

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

template <typename T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(items[i]);
    return out;
}

// Shared epoch/batch/schedule driver. step_fn(batch_indices) returns
// (loss, mean_margin) and fills `grad`.
template <typename StepFn>
std::vector<TraceRow> run_loop(NGramPolicy& policy, std::size_t n, const TrainConfig& cfg, StepFn&& step_fn) {
    std::vector<TraceRow> trace;
    const std::size_t total = cfg.epochs * steps_per_epoch(n, cfg.batch_size);
    if (total == 0) return trace;
    OptimizerState state(policy.num_params());
    std::vector<double> grad;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch : epoch_batches(n, cfg.batch_size, cfg.seed, epoch)) {
            const double lr = lr_at_step(step, total, cfg);
            const auto [loss, margin] = step_fn(batch, grad);
            trace.push_back(TraceRow{step, lr, loss, margin});
            optimizer_step(policy.params(), state, grad, lr, cfg);
            ++step;
        }
    }
    return trace;
}

}  // namespace

TrainResult sft_train(NGramPolicy init, std::span<const Demo> demos, const TrainConfig& cfg) {
    if (demos.empty()) throw InvalidArgument("sft_train: demos must be non-empty");
    cfg.validate();
    NGramPolicy policy = std::move(init);
    const std::vector<Demo> items(demos.begin(), demos.end());
    auto trace = run_loop(policy, items.size(), cfg, [&](const std::vector<std::size_t>& idx, std::vector<double>& grad) {
        grad.assign(policy.num_params(), 0.0);
        const double b = static_cast<double>(idx.size());
        double sum = 0.0;
        for (std::size_t i : idx) {
            sum -= sequence_logprob_grad(policy, items[i].prompt, items[i].completion, -1.0 / b, grad);
        }
        return std::pair{sum / b, std::numeric_limits<double>::quiet_NaN()};
    });
    return TrainResult{std::move(policy), std::move(trace), {}};
}

TrainResult align_train(NGramPolicy init, const NGramPolicy* ref, const AlignData& data, const AlignConfig& acfg,
                        const TrainConfig& tcfg) {
    acfg.validate();
    tcfg.validate();
    std::vector<std::string> warnings;
    if (needs_reference(acfg.method)) {
        if (ref == nullptr) {
            throw InvalidArgument("method " + std::string(to_string(acfg.method)) + " requires a reference policy");
        }
        if (!init.compatible(*ref)) throw InvalidArgument("policy and reference differ in vocab, order or max_len");
    } else if (ref != nullptr) {
        warnings.emplace_back("reference policy ignored: cpo is reference-free");
        ref = nullptr;
    }
    const bool kto_data = std::holds_alternative<std::vector<KtoRecord>>(data);
    if ((acfg.method == Method::kto) != kto_data) {
        throw InvalidArgument("method " + std::string(to_string(acfg.method)) +
                              (kto_data ? " cannot train on KTO records" : " needs KTO records, got pairs"));
    }
    const std::size_t n = kto_data ? std::get<1>(data).size() : std::get<0>(data).size();
    if (n == 0) throw InvalidArgument("align_train: dataset must be non-empty");

    NGramPolicy policy = std::move(init);
    auto trace = run_loop(policy, n, tcfg, [&](const std::vector<std::size_t>& idx, std::vector<double>& grad) {
        LossOutput out;
        if (kto_data) {
            const auto batch = gather(std::get<1>(data), idx);
            out = loss_and_grad(std::span<const KtoRecord>(batch), policy, ref, acfg);
        } else {
            const auto batch = gather(std::get<0>(data), idx);
            out = loss_and_grad(std::span<const PreferencePair>(batch), policy, ref, acfg);
        }
        grad = std::move(out.grad);
        const double mean_margin =
            std::accumulate(out.margins.begin(), out.margins.end(), 0.0) / static_cast<double>(out.margins.size());
        return std::pair{out.loss, mean_margin};
    });
    return TrainResult{std::move(policy), std::move(trace), std::move(warnings)};
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace) {
    out << "step,lr,loss,mean_margin\n";
    for (const auto& r : trace) {
        out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.loss) << ','
            << format_double(r.mean_margin) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

struct GradInstance {
    NGramPolicy theta;
    NGramPolicy ref;
    AlignConfig cfg;
    std::vector<PreferencePair> pairs;
    std::vector<KtoRecord> records;
};

Sequence random_sequence(Rng& rng, const Vocab& vocab, std::size_t min_len, std::size_t max_len, bool allow_eos) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    Sequence s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<TokenId>(rng.below(vocab.size())));
    if (allow_eos && len > 0 && rng.below(2) == 0) s.back() = vocab.eos();
    return s;
}

GradInstance make_instance(Method method, Rng& rng) {
    const std::size_t n_symbols = 1 + rng.below(4);  // V_total in [3, 6]
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < n_symbols; ++i) symbols.push_back("s" + std::to_string(i));
    const Vocab vocab(symbols);
    const std::size_t max_len = 4;
    GradInstance inst{init_policy(vocab, 1, max_len, InitMode::gaussian, 1.0, rng.next()),
                      init_policy(vocab, 1, max_len, InitMode::gaussian, 1.0, rng.next()),
                      AlignConfig{method, 0.05 + 1.95 * rng.uniform(), 0.05 + 0.95 * rng.uniform(), 0},
                      {},
                      {}};
    const std::size_t batch = 1 + rng.below(4);
    for (std::size_t i = 0; i < batch; ++i) {
        Sequence prompt = random_sequence(rng, vocab, 0, 2, false);
        Sequence chosen = random_sequence(rng, vocab, 1, max_len, true);
        if (method == Method::kto) {
            const KtoLabel label = rng.below(2) == 0 ? KtoLabel::desirable : KtoLabel::undesirable;
            inst.records.push_back(KtoRecord{std::move(prompt), std::move(chosen), label});
            continue;
        }
        Sequence rejected = random_sequence(rng, vocab, 1, max_len, true);
        while (rejected == chosen) rejected = random_sequence(rng, vocab, 1, max_len, true);
        inst.pairs.push_back(PreferencePair{std::move(prompt), std::move(chosen), std::move(rejected)});
    }
    return inst;
}

double instance_loss(const GradInstance& inst, const NGramPolicy& theta, double frozen_z) {
    switch (inst.cfg.method) {
        case Method::dpo: return dpo_loss(inst.pairs, theta, inst.ref, inst.cfg).loss;
        case Method::ipo: return ipo_loss(inst.pairs, theta, inst.ref, inst.cfg).loss;
        case Method::kto: return kto_loss_with_baseline(inst.records, theta, inst.ref, inst.cfg, frozen_z).loss;
        case Method::cpo: return cpo_loss(inst.pairs, theta, inst.cfg).loss;
    }
    return 0.0;
}

}  // namespace

GradcheckReport gradcheck(Method method, std::uint64_t seed, std::size_t n, std::optional<GradFault> fault) {
    if (n == 0) throw InvalidArgument("gradcheck: need at least one instance");
    GradcheckReport report;
    report.method = method;
    report.instances = n;
    Rng rng(mix_seed(seed, {0x6C4ECULL, static_cast<std::uint64_t>(method)}));
    for (std::size_t k = 0; k < n; ++k) {
        GradInstance inst = make_instance(method, rng);
        LossOutput analytic = method == Method::kto
                                  ? kto_loss(inst.records, inst.theta, inst.ref, inst.cfg)
                                  : loss_and_grad(std::span<const PreferencePair>(inst.pairs), inst.theta,
                                                  &inst.ref, inst.cfg);
        if (fault && fault->coordinate < analytic.grad.size()) analytic.grad[fault->coordinate] += fault->delta;
        const double z = analytic.kl_baseline;
        NGramPolicy probe = inst.theta;
        auto params = probe.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + kGradcheckStep;
            const double up = instance_loss(inst, probe, z);
            params[i] = saved - kGradcheckStep;
            const double down = instance_loss(inst, probe, z);
            params[i] = saved;
            const double numeric = (up - down) / (2.0 * kGradcheckStep);
            const double a = analytic.grad[i];
            const double abs_err = std::abs(a - numeric);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel_err = abs_err <= kGradcheckAbsTol ? 0.0 : abs_err / scale;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel_err > report.max_rel_error || (k == 0 && i == 0)) {
                report.max_rel_error = rel_err;
                report.worst_instance = k;
                report.worst_coordinate = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= kGradcheckRelTol;
    return report;
}

}  // namespace prefkit
