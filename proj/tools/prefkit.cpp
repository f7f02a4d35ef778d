// SPDX-License-Identifier: Apache-2.0
//
// prefkit command-line tool.
//
// Exit codes: 0 success, 1 check failure (gradcheck), 2 usage/config/input error.
// Every command writes manifest.json into --out before the long computation;
// `prefkit replay --manifest m.json [--out dir]` reruns it.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefkit/data.hpp"
#include "prefkit/error.hpp"
#include "prefkit/harness.hpp"
#include "prefkit/losses.hpp"
#include "prefkit/policy.hpp"
#include "prefkit/pp.hpp"
#include "prefkit/trainer.hpp"
#include "prefkit/util.hpp"

#ifndef PREFKIT_VERSION
#define PREFKIT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace prefkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

// Values from --config; a flag given on the command line wins.
class ConfigFile {
public:
    void load(const fs::path& path) {
        try {
            doc_ = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": invalid JSON: " + e.what());
        }
        if (!doc_.is_object()) throw FormatError(path.string() + ": config must be a JSON object");
    }

    template <typename T>
    void resolve(const CLI::Option* opt, T& value, const std::string& key) {
        known_.insert(key);
        if (opt->count() > 0 || !doc_.contains(key)) return;
        try {
            value = doc_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw InvalidArgument("config field '" + key + "' has the wrong type");
        }
    }

    void check_unknown() const {
        for (const auto& [key, _] : doc_.items()) {
            if (!known_.count(key)) throw InvalidArgument("config field '" + key + "' is not recognized");
        }
    }

private:
    nlohmann::json doc_ = nlohmann::json::object();
    std::set<std::string> known_;
};

struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    ojson config = ojson::object();
    ojson inputs = ojson::array();
    std::vector<std::string> artifacts;

    void input(const std::string& role, const fs::path& path) {
        inputs.push_back(ojson{{"role", role}, {"path", path.string()}, {"digest", file_digest(path)}});
    }

    void write(const fs::path& out) const {
        ojson doc;
        doc["format"] = "prefkit.manifest.v1";
        doc["tool"] = "prefkit";
        doc["version"] = PREFKIT_VERSION;
        doc["command"] = command;
        doc["argv"] = argv;
        doc["config"] = config;
        doc["inputs"] = inputs;
        doc["artifacts"] = artifacts;
        write_file(out / "manifest.json", doc.dump(2) + "\n");
    }
};

// The argv recorded in manifests omits --out, so a replay into another
// directory reproduces the manifest byte for byte as well.
std::vector<std::string> strip_out_flag(const std::vector<std::string>& args) {
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--out") {
            ++i;
            continue;
        }
        if (args[i].rfind("--out=", 0) == 0) continue;
        kept.push_back(args[i]);
    }
    return kept;
}

void prepare_out(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw Error("cannot create output directory: " + out.string());
}

template <typename F>
auto with_path(const fs::path& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string trace_csv(const TrainResult& r) {
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    return os.str();
}

std::string checkpoint_json(const NGramPolicy& p) {
    std::ostringstream os;
    save_policy(os, p);
    return os.str();
}

void print_warnings(const TrainResult& r) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

InitMode parse_init_mode(const std::string& s) {
    if (s == "zeros") return InitMode::zeros;
    if (s == "gaussian") return InitMode::gaussian;
    throw InvalidArgument("unknown init mode '" + s + "' (valid: zeros, gaussian)");
}

struct TrainFlags {
    double lr = TrainConfig{}.peak_lr;
    double warmup_frac = TrainConfig{}.warmup_frac;
    std::size_t batch = TrainConfig{}.batch_size;
    std::size_t epochs = TrainConfig{}.epochs;
    CLI::Option* o_lr = nullptr;
    CLI::Option* o_warmup = nullptr;
    CLI::Option* o_batch = nullptr;
    CLI::Option* o_epochs = nullptr;

    void add(CLI::App* app) {
        o_lr = app->add_option("--lr", lr, "Peak learning rate")->capture_default_str();
        o_warmup = app->add_option("--warmup-frac", warmup_frac, "Warmup fraction of total steps")->capture_default_str();
        o_batch = app->add_option("--batch-size", batch, "Batch size")->capture_default_str();
        o_epochs = app->add_option("--epochs", epochs, "Epochs")->capture_default_str();
    }

    TrainConfig resolve(ConfigFile& cfg, std::uint64_t seed, ojson& out) {
        cfg.resolve(o_lr, lr, "lr");
        cfg.resolve(o_warmup, warmup_frac, "warmup_frac");
        cfg.resolve(o_batch, batch, "batch_size");
        cfg.resolve(o_epochs, epochs, "epochs");
        TrainConfig t;
        t.peak_lr = lr;
        t.warmup_frac = warmup_frac;
        t.batch_size = batch;
        t.epochs = epochs;
        t.seed = seed;
        t.validate();
        out["lr"] = lr;
        out["warmup_frac"] = warmup_frac;
        out["batch_size"] = batch;
        out["epochs"] = epochs;
        out["adam_beta1"] = t.adam_beta1;
        out["adam_beta2"] = t.adam_beta2;
        out["adam_eps"] = t.adam_eps;
        out["weight_decay"] = t.weight_decay;
        out["large_model_peak_lr"] = TrainConfig::kLargeModelPeakLr;
        return t;
    }
};

std::size_t resolve_threads(const CLI::Option* opt, std::size_t value) {
    return opt->count() > 0 ? std::max<std::size_t>(value, 1) : default_threads();
}

// ---------------------------------------------------------------- sft

struct SftCmd {
    std::string vocab, demos, out, config, init, init_mode = "zeros";
    std::uint64_t seed = 0;
    std::size_t order = 2, max_len = 8;
    double init_sigma = 0.1;
    TrainFlags train;
    CLI::Option *o_order, *o_max_len, *o_init_mode, *o_init_sigma;

    void add(CLI::App* app) {
        app->add_option("--vocab", vocab, "Vocabulary file (one symbol per line)")->required();
        app->add_option("--demos", demos, "Demonstrations JSONL {prompt, completion}")->required();
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--seed", seed, "Random seed")->required();
        app->add_option("--config", config, "JSON config; flags override it");
        app->add_option("--init", init, "Start from this checkpoint instead of a fresh policy");
        o_order = app->add_option("--order", order, "Context length k")->capture_default_str();
        o_max_len = app->add_option("--max-len", max_len, "Maximum completion length")->capture_default_str();
        o_init_mode = app->add_option("--init-mode", init_mode, "zeros | gaussian")->capture_default_str();
        o_init_sigma = app->add_option("--init-sigma", init_sigma, "Gaussian init scale")->capture_default_str();
        train.add(app);
    }

    int run(Manifest& m) {
        ConfigFile cfg;
        if (!config.empty()) {
            cfg.load(config);
            m.input("config", config);
        }
        cfg.resolve(o_order, order, "order");
        cfg.resolve(o_max_len, max_len, "max_len");
        cfg.resolve(o_init_mode, init_mode, "init_mode");
        cfg.resolve(o_init_sigma, init_sigma, "init_sigma");
        TrainConfig tcfg = train.resolve(cfg, seed, m.config);
        cfg.check_unknown();

        const Vocab v = with_path(vocab, [&] { return load_vocab(vocab); });
        m.input("vocab", vocab);
        const auto data = with_path(demos, [&] { return parse_demos_jsonl(fs::path(demos), v); });
        m.input("demos", demos);
        if (data.empty()) throw InvalidArgument(demos + ": no demonstrations");

        std::optional<NGramPolicy> start;
        if (!init.empty()) {
            start = with_path(init, [&] { return load_policy(fs::path(init)); });
            m.input("init", init);
            if (!(start->vocab() == v)) throw InvalidArgument(init + ": checkpoint vocabulary differs from " + vocab);
            m.config["order"] = start->order();
            m.config["max_len"] = start->max_len();
        } else {
            const InitMode mode = parse_init_mode(init_mode);
            start = init_policy(v, order, max_len, mode, init_sigma, mix_seed(seed, {1}));
            m.config["order"] = order;
            m.config["max_len"] = max_len;
            m.config["init_mode"] = init_mode;
            m.config["init_sigma"] = init_sigma;
        }
        m.config["seed"] = seed;
        m.artifacts = {"checkpoint.json", "trace.csv"};
        prepare_out(out);
        m.write(out);

        const TrainResult r = sft_train(std::move(*start), data, tcfg);
        print_warnings(r);
        write_file(fs::path(out) / "checkpoint.json", checkpoint_json(r.policy));
        write_file(fs::path(out) / "trace.csv", trace_csv(r));
        std::cout << "sft: " << data.size() << " demos, " << r.trace.size() << " steps, final loss "
                  << (r.trace.empty() ? std::string("nan") : format_double(r.trace.back().loss)) << "\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- align

struct AlignCmd {
    std::string method, init, ref, data, out, config;
    std::uint64_t seed = 0;
    double beta = 0.1, tau = 0.1;
    std::size_t kl_contexts = 0;
    TrainFlags train;
    CLI::Option *o_beta, *o_tau, *o_kl;

    void add(CLI::App* app) {
        app->add_option("--method", method, "dpo | ipo | kto | cpo")->required();
        app->add_option("--init", init, "Starting checkpoint")->required();
        app->add_option("--ref", ref, "Frozen reference checkpoint (not used by cpo)");
        app->add_option("--data", data, "Preference pairs or KTO records (JSONL)")->required();
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--seed", seed, "Random seed")->required();
        app->add_option("--config", config, "JSON config; flags override it");
        o_beta = app->add_option("--beta", beta, "Deviation strength")->capture_default_str();
        o_tau = app->add_option("--tau", tau, "IPO regularization")->capture_default_str();
        o_kl = app->add_option("--kl-contexts", kl_contexts, "KTO: batch prompts used for the KL baseline (0 = all)")
                   ->capture_default_str();
        train.add(app);
    }

    int run(Manifest& m) {
        ConfigFile cfg;
        if (!config.empty()) {
            cfg.load(config);
            m.input("config", config);
        }
        cfg.resolve(o_beta, beta, "beta");
        cfg.resolve(o_tau, tau, "tau");
        cfg.resolve(o_kl, kl_contexts, "kl_contexts");
        TrainConfig tcfg = train.resolve(cfg, seed, m.config);
        cfg.check_unknown();

        const Method meth = parse_method(method);
        AlignConfig acfg{meth, beta, tau, kl_contexts};
        acfg.validate();
        if (needs_reference(meth) && ref.empty()) {
            throw InvalidArgument("--ref is required for method " + std::string(to_string(meth)));
        }

        const NGramPolicy start = with_path(init, [&] { return load_policy(fs::path(init)); });
        m.input("init", init);
        std::optional<NGramPolicy> reference;
        if (!ref.empty()) {
            reference = with_path(ref, [&] { return load_policy(fs::path(ref)); });
            m.input("ref", ref);
            if (!reference->compatible(start)) {
                throw InvalidArgument(ref + ": reference is incompatible with " + init +
                                      " (vocabulary, order or max_len differ)");
            }
        }

        std::ifstream probe(data);
        if (!probe) throw Error("cannot open file: " + data);
        const DatasetKind kind = with_path(data, [&] { return detect_dataset_kind(probe); });
        AlignData payload;
        if (kind == DatasetKind::kto) {
            if (meth != Method::kto) {
                throw InvalidArgument(data + " holds KTO records, but method " + std::string(to_string(meth)) +
                                      " needs preference pairs");
            }
            payload = with_path(data, [&] { return parse_kto_jsonl(fs::path(data), start.vocab()); });
        } else {
            auto pairs = with_path(data, [&] { return parse_pairs_jsonl(fs::path(data), start.vocab()); });
            if (meth == Method::kto) {
                auto records = pairs_to_kto(pairs);
                std::cerr << "notice: converted " << pairs.size() << " pairs to " << records.size() << " records\n";
                payload = std::move(records);
            } else {
                payload = std::move(pairs);
            }
        }
        m.input("data", data);

        m.config["method"] = std::string(to_string(meth));
        m.config["beta"] = beta;
        m.config["tau"] = tau;
        m.config["kl_contexts"] = kl_contexts;
        m.config["seed"] = seed;
        m.artifacts = {"checkpoint.json", "trace.csv"};
        prepare_out(out);
        m.write(out);

        const TrainResult r =
            align_train(start, reference ? &*reference : nullptr, payload, acfg, tcfg);
        print_warnings(r);
        write_file(fs::path(out) / "checkpoint.json", checkpoint_json(r.policy));
        write_file(fs::path(out) / "trace.csv", trace_csv(r));
        std::cout << "align " << to_string(meth) << ": " << r.trace.size() << " steps, final loss "
                  << (r.trace.empty() ? std::string("nan") : format_double(r.trace.back().loss)) << "\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- ppsweep

struct PpSweepCmd {
    std::string sft, corpus, out, config;
    std::uint64_t seed = 0;
    std::vector<double> temps = PpConfig{}.temperatures;
    std::size_t batch = 128, repeats = 10, max_new_tokens = 0, threads = 1;
    CLI::Option *o_temps, *o_batch, *o_repeats, *o_max_new, *o_threads;

    void add(CLI::App* app) {
        app->add_option("--sft", sft, "SFT checkpoint")->required();
        app->add_option("--corpus", corpus, "Corpus JSONL {prompt, reference}")->required();
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--seed", seed, "Random seed")->required();
        app->add_option("--config", config, "JSON config; flags override it");
        o_temps = app->add_option("--temps", temps, "Comma-separated temperature grid")->delimiter(',');
        o_batch = app->add_option("--batch", batch, "Samples per repeat")->capture_default_str();
        o_repeats = app->add_option("--repeats", repeats, "Repeats per temperature")->capture_default_str();
        o_max_new = app->add_option("--max-new-tokens", max_new_tokens, "Generation cap (default: checkpoint max_len)");
        o_threads = app->add_option("--threads", threads, "Worker cap (default: PREFKIT_THREADS or 1)");
    }

    int run(Manifest& m) {
        ConfigFile cfg;
        if (!config.empty()) {
            cfg.load(config);
            m.input("config", config);
        }
        cfg.resolve(o_temps, temps, "temps");
        cfg.resolve(o_batch, batch, "batch");
        cfg.resolve(o_repeats, repeats, "repeats");
        cfg.resolve(o_max_new, max_new_tokens, "max_new_tokens");
        cfg.check_unknown();

        const NGramPolicy policy = with_path(sft, [&] { return load_policy(fs::path(sft)); });
        m.input("sft", sft);
        const auto docs = with_path(corpus, [&] { return parse_demos_jsonl(fs::path(corpus), policy.vocab(), "reference"); });
        m.input("corpus", corpus);

        PpConfig pcfg;
        pcfg.temperatures = temps;
        pcfg.batch_size = batch;
        pcfg.repeats = repeats;
        pcfg.seed = seed;
        pcfg.max_new_tokens = max_new_tokens == 0 ? policy.max_len() : max_new_tokens;
        pcfg.threads = resolve_threads(o_threads, threads);
        pcfg.validate();
        if (pcfg.max_new_tokens > policy.max_len()) {
            throw InvalidArgument("--max-new-tokens exceeds the checkpoint max_len " + std::to_string(policy.max_len()));
        }
        if (docs.size() < batch) {
            throw InvalidArgument(corpus + ": corpus has " + std::to_string(docs.size()) +
                                  " entries, fewer than the batch size " + std::to_string(batch));
        }

        m.config["temps"] = temps;
        m.config["batch"] = batch;
        m.config["repeats"] = repeats;
        m.config["max_new_tokens"] = pcfg.max_new_tokens;
        m.config["seed"] = seed;
        m.artifacts = {"sweep.csv", "sweep.json", "selection.json", "pairs.jsonl"};
        prepare_out(out);
        m.write(out);

        const auto summaries = sweep(policy, docs, pcfg);
        const PpSelection sel = select_configs(summaries);
        std::vector<Sequence> prompts;
        prompts.reserve(docs.size());
        for (const auto& d : docs) prompts.push_back(d.prompt);
        const GeneratedPreferences gen =
            generate_preferences(policy, prompts, sel, mix_seed(seed, {2}), pcfg.max_new_tokens);

        std::ostringstream csv, pairs;
        write_sweep_csv(csv, summaries);
        write_pairs_jsonl(pairs, gen.pairs, policy.vocab());
        write_file(fs::path(out) / "sweep.csv", csv.str());
        write_file(fs::path(out) / "sweep.json", sweep_json(summaries, pcfg));
        write_file(fs::path(out) / "selection.json", selection_json(sel, gen.skipped));
        write_file(fs::path(out) / "pairs.jsonl", pairs.str());
        std::cout << "ppsweep: chosen T=" << format_double(sel.chosen_temperature)
                  << ", rejected T=" << format_double(sel.rejected_temperature) << ", " << gen.pairs.size()
                  << " pairs, " << gen.skipped.size() << " skipped\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- scenario

struct ScenarioCmd {
    std::string which, out, config;
    std::vector<std::uint64_t> world_seeds;
    std::vector<std::string> methods{"dpo", "ipo", "kto", "cpo"};
    std::vector<std::string> regimes{"base", "sft", "instruct"};
    std::vector<std::size_t> sizes{0, 32, 128, 512, 2048};
    std::vector<std::string> sources{"oracle", "pp"};
    std::size_t threads = 1;
    HarnessConfig h = HarnessConfig::defaults();
    CLI::Option *o_methods, *o_regimes, *o_sizes, *o_sources, *o_threads;
    CLI::Option *o_beta, *o_tau, *o_align_lr, *o_align_epochs, *o_sft_lr, *o_sft_epochs;

    void add(CLI::App* app) {
        app->add_option("scenario", which, "a | b")->required()->check(CLI::IsMember({"a", "b"}));
        app->add_option("--world-seed", world_seeds, "World seed(s), comma-separated")->required()->delimiter(',');
        app->add_option("--out", out, "Output directory")->required();
        app->add_option("--config", config, "JSON config; flags override it");
        o_methods = app->add_option("--methods", methods, "Scenario a: methods")->delimiter(',');
        o_regimes = app->add_option("--regimes", regimes, "Scenario a: init regimes")->delimiter(',');
        o_sizes = app->add_option("--sizes", sizes, "Scenario b: ascending training set sizes")->delimiter(',');
        o_sources = app->add_option("--sources", sources, "Scenario b: dataset sources")->delimiter(',');
        o_threads = app->add_option("--threads", threads, "Worker cap (default: PREFKIT_THREADS or 1)");
        o_beta = app->add_option("--beta", h.beta, "Deviation strength")->capture_default_str();
        o_tau = app->add_option("--tau", h.tau, "IPO regularization")->capture_default_str();
        o_align_lr = app->add_option("--align-lr", h.align.peak_lr, "Alignment peak lr")->capture_default_str();
        o_align_epochs = app->add_option("--align-epochs", h.align.epochs, "Alignment epochs")->capture_default_str();
        o_sft_lr = app->add_option("--sft-lr", h.sft.peak_lr, "SFT peak lr")->capture_default_str();
        o_sft_epochs = app->add_option("--sft-epochs", h.sft.epochs, "SFT epochs")->capture_default_str();
    }

    int run(Manifest& m) {
        ConfigFile cfg;
        if (!config.empty()) {
            cfg.load(config);
            m.input("config", config);
        }
        cfg.resolve(o_methods, methods, "methods");
        cfg.resolve(o_regimes, regimes, "regimes");
        cfg.resolve(o_sizes, sizes, "sizes");
        cfg.resolve(o_sources, sources, "sources");
        cfg.resolve(o_beta, h.beta, "beta");
        cfg.resolve(o_tau, h.tau, "tau");
        cfg.resolve(o_align_lr, h.align.peak_lr, "align_lr");
        cfg.resolve(o_align_epochs, h.align.epochs, "align_epochs");
        cfg.resolve(o_sft_lr, h.sft.peak_lr, "sft_lr");
        cfg.resolve(o_sft_epochs, h.sft.epochs, "sft_epochs");
        cfg.check_unknown();
        h.threads = resolve_threads(o_threads, threads);
        h.align.validate();
        h.sft.validate();
        AlignConfig{Method::ipo, h.beta, h.tau, 0}.validate();

        std::vector<Method> ms;
        std::vector<InitRegime> rs;
        std::vector<DataSource> ss;
        for (const auto& s : methods) ms.push_back(parse_method(s));
        for (const auto& s : regimes) rs.push_back(parse_regime(s));
        for (const auto& s : sources) ss.push_back(parse_source(s));
        if (which == "b" && !std::is_sorted(sizes.begin(), sizes.end())) {
            throw InvalidArgument("--sizes must be ascending");
        }

        m.config["scenario"] = which;
        m.config["world_seeds"] = world_seeds;
        if (which == "a") {
            m.config["methods"] = methods;
            m.config["regimes"] = regimes;
        } else {
            m.config["sizes"] = sizes;
            m.config["sources"] = sources;
        }
        m.config["beta"] = h.beta;
        m.config["tau"] = h.tau;
        m.config["align_lr"] = h.align.peak_lr;
        m.config["align_epochs"] = h.align.epochs;
        m.config["align_batch_size"] = h.align.batch_size;
        m.config["sft_lr"] = h.sft.peak_lr;
        m.config["sft_epochs"] = h.sft.epochs;
        m.config["sft_batch_size"] = h.sft.batch_size;
        m.artifacts = {"report.csv", "world.json"};
        prepare_out(out);
        m.write(out);

        Report all;
        ojson worlds = ojson::array();
        for (std::uint64_t ws : world_seeds) {
            const SyntheticWorld w = build_world(ws);
            worlds.push_back(ojson::parse(world_manifest_json(w)));
            const Report r = which == "a" ? scenario_a(w, ms, rs, h) : scenario_b(w, sizes, ss, h);
            all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
        }
        all.check_unique_keys();
        std::ostringstream csv;
        all.write_csv(csv);
        write_file(fs::path(out) / "report.csv", csv.str());
        write_file(fs::path(out) / "world.json", worlds.dump(2) + "\n");
        std::cout << "scenario " << which << ": " << all.rows.size() << " rows\n";
        return kExitOk;
    }
};

// ---------------------------------------------------------------- gradcheck

struct GradcheckCmd {
    std::string method, out;
    std::size_t n = 100;
    std::uint64_t seed = 0;
    bool inject_fault = false;

    void add(CLI::App* app) {
        app->add_option("--method", method, "dpo | ipo | kto | cpo")->required();
        app->add_option("--n", n, "Random instances")->capture_default_str();
        app->add_option("--seed", seed, "Random seed")->required();
        app->add_option("--out", out, "Optional output directory for manifest.json and gradcheck.json");
        // Test hook: perturbs one analytic gradient coordinate so the check must fail.
        app->add_flag("--inject-fault", inject_fault)->group("");
    }

    int run(Manifest& m) {
        const Method meth = parse_method(method);
        if (n == 0) throw InvalidArgument("--n must be >= 1");
        m.config["method"] = std::string(to_string(meth));
        m.config["n"] = n;
        m.config["seed"] = seed;
        m.config["inject_fault"] = inject_fault;
        m.config["step"] = kGradcheckStep;
        m.config["rel_tol"] = kGradcheckRelTol;
        m.config["abs_tol"] = kGradcheckAbsTol;
        if (!out.empty()) {
            m.artifacts = {"gradcheck.json"};
            prepare_out(out);
            m.write(out);
        }
        std::optional<GradFault> fault;
        if (inject_fault) fault = GradFault{0, 1.0};
        const GradcheckReport r = gradcheck(meth, seed, n, fault);
        ojson doc;
        doc["method"] = std::string(to_string(meth));
        doc["instances"] = r.instances;
        doc["passed"] = r.passed;
        doc["max_rel_error"] = r.max_rel_error;
        doc["max_abs_error"] = r.max_abs_error;
        doc["worst_instance"] = r.worst_instance;
        doc["worst_coordinate"] = r.worst_coordinate;
        doc["worst_analytic"] = r.worst_analytic;
        doc["worst_numeric"] = r.worst_numeric;
        if (!out.empty()) write_file(fs::path(out) / "gradcheck.json", doc.dump(2) + "\n");
        std::cout << "gradcheck " << to_string(meth) << ": " << (r.passed ? "PASS" : "FAIL") << " (" << r.instances
                  << " instances, max rel error " << format_double(r.max_rel_error) << ", max abs error "
                  << format_double(r.max_abs_error) << ")\n";
        return r.passed ? kExitOk : kExitCheckFailed;
    }
};

int run(const std::vector<std::string>& args);

int replay(const std::string& manifest_path, std::string out) {
    ojson doc;
    try {
        doc = ojson::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path + ": invalid JSON: " + e.what());
    }
    if (doc.value("format", "") != "prefkit.manifest.v1") throw FormatError(manifest_path + ": not a prefkit manifest");
    for (const auto& in : doc.at("inputs")) {
        const std::string path = in.at("path").get<std::string>();
        if (file_digest(path) != in.at("digest").get<std::string>()) {
            throw InvalidArgument("input changed since the manifest was written: " + path);
        }
    }
    auto argv = doc.at("argv").get<std::vector<std::string>>();
    // gradcheck without --out records no artifacts and writes nothing.
    const bool had_out = !doc.at("artifacts").empty();
    if (out.empty()) out = fs::path(manifest_path).parent_path().string();
    if (out.empty()) out = ".";
    if (had_out) {
        argv.push_back("--out");
        argv.push_back(out);
    }
    return run(argv);
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"prefkit: RL-free preference alignment toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PREFKIT_VERSION);

    SftCmd sft;
    AlignCmd align;
    PpSweepCmd pp;
    ScenarioCmd scen;
    GradcheckCmd gc;
    std::string manifest, replay_out;
    auto* c_sft = app.add_subcommand("sft", "Supervised fine-tuning on demonstrations");
    auto* c_align = app.add_subcommand("align", "Preference alignment (dpo, ipo, kto, cpo)");
    auto* c_pp = app.add_subcommand("ppsweep", "Preference Pruning temperature sweep and pair generation");
    auto* c_scen = app.add_subcommand("scenario", "Run scenario a (with/without SFT) or b (size sweep)");
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the analytic loss gradients");
    auto* c_replay = app.add_subcommand("replay", "Rerun a command from its manifest");
    sft.add(c_sft);
    align.add(c_align);
    pp.add(c_pp);
    scen.add(c_scen);
    gc.add(c_gc);
    c_replay->add_option("--manifest", manifest, "manifest.json to replay")->required();
    c_replay->add_option("--out", replay_out, "Output directory (default: the manifest's directory)");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    Manifest m;
    m.argv = strip_out_flag(args);
    try {
        if (c_replay->parsed()) return replay(manifest, replay_out);
        if (c_sft->parsed()) return m.command = "sft", sft.run(m);
        if (c_align->parsed()) return m.command = "align", align.run(m);
        if (c_pp->parsed()) return m.command = "ppsweep", pp.run(m);
        if (c_scen->parsed()) return m.command = "scenario", scen.run(m);
        if (c_gc->parsed()) return m.command = "gradcheck", gc.run(m);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}
