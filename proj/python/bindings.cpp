// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the prefkit core. Sequences cross the boundary as lists
// of token ids; policies as NGramPolicy objects with a flat `params` list.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "prefkit/data.hpp"
#include "prefkit/error.hpp"
#include "prefkit/harness.hpp"
#include "prefkit/losses.hpp"
#include "prefkit/metrics.hpp"
#include "prefkit/policy.hpp"
#include "prefkit/pp.hpp"
#include "prefkit/trainer.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace prefkit;

namespace {

std::string report_csv(const Report& r) {
    std::ostringstream os;
    r.write_csv(os);
    return os.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "prefkit core: tabular policies, preference losses, PP sweep and synthetic harness";

    // Translators run newest first, so the base class goes in before its subclasses.
    auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());

    py::class_<Vocab>(m, "Vocab")
        .def(py::init<std::vector<std::string>>(), "symbols"_a)
        .def("encode", &Vocab::encode, "text"_a)
        .def("decode", [](const Vocab& v, const Sequence& s) { return v.decode(s); }, "seq"_a)
        .def("hash", &Vocab::hash)
        .def_property_readonly("symbols", &Vocab::symbols)
        .def_property_readonly("bos", &Vocab::bos)
        .def_property_readonly("eos", &Vocab::eos)
        .def("__len__", &Vocab::size);

    py::class_<PreferencePair>(m, "PreferencePair")
        .def(py::init<Sequence, Sequence, Sequence>(), "prompt"_a, "chosen"_a, "rejected"_a)
        .def_readwrite("prompt", &PreferencePair::prompt)
        .def_readwrite("chosen", &PreferencePair::chosen)
        .def_readwrite("rejected", &PreferencePair::rejected);

    py::enum_<KtoLabel>(m, "KtoLabel").value("desirable", KtoLabel::desirable).value("undesirable", KtoLabel::undesirable);

    py::class_<KtoRecord>(m, "KtoRecord")
        .def(py::init<Sequence, Sequence, KtoLabel>(), "prompt"_a, "completion"_a, "label"_a)
        .def_readwrite("prompt", &KtoRecord::prompt)
        .def_readwrite("completion", &KtoRecord::completion)
        .def_readwrite("label", &KtoRecord::label);

    py::class_<Demo>(m, "Demo")
        .def(py::init<Sequence, Sequence>(), "prompt"_a, "completion"_a)
        .def_readwrite("prompt", &Demo::prompt)
        .def_readwrite("completion", &Demo::completion);

    m.def("pairs_to_kto", [](const std::vector<PreferencePair>& p) { return pairs_to_kto(p); }, "pairs"_a);

    py::class_<NGramPolicy>(m, "NGramPolicy")
        .def(py::init<Vocab, std::size_t, std::size_t>(), "vocab"_a, "order"_a, "max_len"_a)
        .def_property_readonly("vocab", &NGramPolicy::vocab)
        .def_property_readonly("order", &NGramPolicy::order)
        .def_property_readonly("max_len", &NGramPolicy::max_len)
        .def_property_readonly("num_contexts", &NGramPolicy::num_contexts)
        .def_property_readonly("row_width", &NGramPolicy::row_width)
        .def_property(
            "params",
            [](const NGramPolicy& p) {
                auto s = p.params();
                return std::vector<double>(s.begin(), s.end());
            },
            [](NGramPolicy& p, const std::vector<double>& v) {
                if (v.size() != p.num_params()) throw InvalidArgument("params: wrong length");
                std::copy(v.begin(), v.end(), p.params().begin());
            })
        .def("context_key", [](const NGramPolicy& p, const Sequence& h) { return p.context_key(h); }, "history"_a)
        .def("__eq__", [](const NGramPolicy& a, const NGramPolicy& b) { return a == b; })
        .def("to_json",
             [](const NGramPolicy& p) {
                 std::ostringstream os;
                 save_policy(os, p);
                 return os.str();
             })
        .def_static(
            "from_json",
            [](const std::string& text) {
                std::istringstream is(text);
                return load_policy(is);
            },
            "text"_a);

    m.def("init_policy",
          [](const Vocab& v, std::size_t order, std::size_t max_len, const std::string& mode, double sigma,
             std::uint64_t seed) {
              if (mode != "zeros" && mode != "gaussian") throw InvalidArgument("mode must be zeros or gaussian");
              return init_policy(v, order, max_len, mode == "zeros" ? InitMode::zeros : InitMode::gaussian, sigma,
                                 seed);
          },
          "vocab"_a, "order"_a, "max_len"_a, "mode"_a = "zeros", "sigma"_a = 0.0, "seed"_a = 0);
    m.def("sequence_logprob",
          [](const NGramPolicy& p, const Sequence& x, const Sequence& y) { return sequence_logprob(p, x, y); },
          "policy"_a, "prompt"_a, "completion"_a);
    m.def("next_token_dist",
          [](const NGramPolicy& p, const Sequence& ctx, double t) { return next_token_dist(p, ctx, t); },
          "policy"_a, "context"_a, "temperature"_a = 1.0);
    m.def("greedy_decode",
          [](const NGramPolicy& p, const Sequence& x, std::size_t n) { return greedy_decode(p, x, n); },
          "policy"_a, "prompt"_a, "max_new_tokens"_a);
    m.def("sample_completion",
          [](const NGramPolicy& p, const Sequence& x, double temperature, std::size_t n, std::uint64_t seed) {
              return sample_completion(p, x, GenerationConfig{temperature, false, n, seed});
          },
          "policy"_a, "prompt"_a, "temperature"_a, "max_new_tokens"_a, "seed"_a);

    m.def("loss",
          [](const std::string& method, const NGramPolicy& theta, const NGramPolicy* ref, py::object batch,
             double beta, double tau) {
              AlignConfig cfg{parse_method(method), beta, tau, 0};
              LossOutput out;
              if (cfg.method == Method::kto) {
                  const auto records = batch.cast<std::vector<KtoRecord>>();
                  out = loss_and_grad(LossBatch{std::span<const KtoRecord>(records)}, theta, ref, cfg);
              } else {
                  const auto pairs = batch.cast<std::vector<PreferencePair>>();
                  out = loss_and_grad(LossBatch{std::span<const PreferencePair>(pairs)}, theta, ref, cfg);
              }
              return py::dict("loss"_a = out.loss, "grad"_a = out.grad, "margins"_a = out.margins,
                              "prefer"_a = out.prefer, "nll"_a = out.nll, "kl_baseline"_a = out.kl_baseline);
          },
          "method"_a, "theta"_a, "ref"_a, "batch"_a, "beta"_a = 0.1, "tau"_a = 0.1,
          "Loss, gradient and per-example margins for one batch. `ref` may be None for cpo.");

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("peak_lr", &TrainConfig::peak_lr)
        .def_readwrite("warmup_frac", &TrainConfig::warmup_frac)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readonly_static("large_model_peak_lr", &TrainConfig::kLargeModelPeakLr);

    m.def("lr_at_step", &lr_at_step, "step"_a, "total_steps"_a, "cfg"_a);
    m.def("sft_train",
          [](const NGramPolicy& init, const std::vector<Demo>& demos, const TrainConfig& cfg) {
              const TrainResult r = sft_train(init, demos, cfg);
              std::vector<double> losses;
              for (const auto& t : r.trace) losses.push_back(t.loss);
              return py::make_tuple(r.policy, losses);
          },
          "init"_a, "demos"_a, "cfg"_a, "Returns (policy, per-step losses).");
    m.def("align_train",
          [](const NGramPolicy& init, const NGramPolicy* ref, const std::string& method, py::object data,
             const TrainConfig& cfg, double beta, double tau) {
              AlignConfig acfg{parse_method(method), beta, tau, 0};
              AlignData payload;
              if (acfg.method == Method::kto) {
                  payload = data.cast<std::vector<KtoRecord>>();
              } else {
                  payload = data.cast<std::vector<PreferencePair>>();
              }
              const TrainResult r = align_train(init, ref, payload, acfg, cfg);
              std::vector<double> losses;
              for (const auto& t : r.trace) losses.push_back(t.loss);
              return py::make_tuple(r.policy, losses, r.warnings);
          },
          "init"_a, "ref"_a, "method"_a, "data"_a, "cfg"_a, "beta"_a = 0.1, "tau"_a = 0.1,
          "Returns (policy, per-step losses, warnings).");
    m.def("gradcheck",
          [](const std::string& method, std::uint64_t seed, std::size_t n) {
              const GradcheckReport r = gradcheck(parse_method(method), seed, n);
              return py::dict("passed"_a = r.passed, "instances"_a = r.instances, "max_rel_error"_a = r.max_rel_error,
                              "max_abs_error"_a = r.max_abs_error);
          },
          "method"_a, "seed"_a = 0, "n"_a = 100);

    m.def("lcs_length", [](const Sequence& a, const Sequence& b) { return lcs_length(a, b); }, "a"_a, "b"_a);
    m.def("rouge_l", [](const Sequence& h, const Sequence& r) { return rouge_l(h, r); }, "hyp"_a, "ref"_a);
    m.def("bleu", [](const Sequence& h, const Sequence& r, std::size_t max_order) {
              return bleu(h, r, BleuConfig{max_order, 1e-9});
          },
          "hyp"_a, "ref"_a, "max_order"_a = 4);

    m.def("summarize",
          [](const std::vector<double>& v) {
              const BoxStats s = summarize(v);
              return py::dict("min"_a = s.min, "q1"_a = s.q1, "median"_a = s.median, "q3"_a = s.q3, "max"_a = s.max,
                              "mean"_a = s.mean);
          },
          "values"_a);
    m.def("pp_sweep",
          [](const NGramPolicy& sft, const std::vector<Demo>& corpus, const std::vector<double>& temps,
             std::size_t batch, std::size_t repeats, std::uint64_t seed, std::size_t threads) {
              PpConfig cfg;
              cfg.temperatures = temps;
              cfg.batch_size = batch;
              cfg.repeats = repeats;
              cfg.seed = seed;
              cfg.max_new_tokens = sft.max_len();
              cfg.threads = threads;
              const auto summaries = sweep(sft, corpus, cfg);
              const PpSelection sel = select_configs(summaries);
              py::list rows;
              for (const auto& s : summaries) {
                  rows.append(py::dict("metric"_a = std::string(to_string(s.metric)), "temperature"_a = s.temperature,
                                       "median"_a = s.stats.median, "q1"_a = s.stats.q1, "q3"_a = s.stats.q3,
                                       "mean"_a = s.stats.mean));
              }
              return py::make_tuple(rows, sel.chosen_temperature, sel.rejected_temperature);
          },
          "sft"_a, "corpus"_a, "temperatures"_a = PpConfig{}.temperatures, "batch"_a = 128, "repeats"_a = 10,
          "seed"_a = 0, "threads"_a = 1, "Returns (summary rows, chosen temperature, rejected temperature).");

    py::class_<SyntheticWorld>(m, "SyntheticWorld")
        .def_readonly("seed", &SyntheticWorld::seed)
        .def_readonly("vocab", &SyntheticWorld::vocab)
        .def_readonly("expert", &SyntheticWorld::expert)
        .def_readonly("heldout_prompts", &SyntheticWorld::heldout_prompts)
        .def_readonly("heldout_gold", &SyntheticWorld::heldout_gold)
        .def_readonly("oracle_pairs", &SyntheticWorld::oracle_pairs)
        .def_readonly("heldout_pairs", &SyntheticWorld::heldout_pairs)
        .def("manifest_json", [](const SyntheticWorld& w) { return world_manifest_json(w); });

    m.def("build_world", [](std::uint64_t seed) { return build_world(seed); }, "seed"_a);
    m.def("judge",
          [](const std::vector<Sequence>& responses, const SyntheticWorld& w) { return judge(responses, w).aggregate; },
          "responses"_a, "world"_a);
    m.def("preference_accuracy",
          [](const NGramPolicy& p, const std::vector<PreferencePair>& pairs) { return preference_accuracy(p, pairs); },
          "policy"_a, "pairs"_a);
    m.def("scenario_a",
          [](const SyntheticWorld& w, const std::vector<std::string>& methods, const std::vector<std::string>& regimes,
             std::size_t threads) {
              std::vector<Method> ms;
              std::vector<InitRegime> rs;
              for (const auto& s : methods) ms.push_back(parse_method(s));
              for (const auto& s : regimes) rs.push_back(parse_regime(s));
              HarnessConfig cfg = HarnessConfig::defaults();
              cfg.threads = threads;
              return report_csv(scenario_a(w, ms, rs, cfg));
          },
          "world"_a, "methods"_a, "regimes"_a, "threads"_a = 1, "Report CSV text.");
    m.def("scenario_b",
          [](const SyntheticWorld& w, const std::vector<std::size_t>& sizes, const std::vector<std::string>& sources,
             std::size_t threads) {
              std::vector<DataSource> ss;
              for (const auto& s : sources) ss.push_back(parse_source(s));
              HarnessConfig cfg = HarnessConfig::defaults();
              cfg.threads = threads;
              return report_csv(scenario_b(w, sizes, ss, cfg));
          },
          "world"_a, "sizes"_a, "sources"_a, "threads"_a = 1, "Report CSV text.");
}
