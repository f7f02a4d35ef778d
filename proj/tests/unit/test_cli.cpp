#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "prefkit/util.hpp"

#ifndef PREFKIT_CLI_PATH
#error "PREFKIT_CLI_PATH must point at the prefkit binary"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("prefkit_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run(const std::string& args, const std::string& env = "") {
    const fs::path log = scratch() / "last_output.txt";
    const std::string cmd = env + " \"" + std::string(PREFKIT_CLI_PATH) + "\" " + args + " > \"" + log.string() +
                            "\" 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = prefkit::read_file(log);
    return r;
}

std::string slurp(const fs::path& p) { return prefkit::read_file(p); }

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

// Tiny fixture: 4 symbols, a few demos and pairs, a 160-line PP corpus.
struct Fixture {
    fs::path dir = scratch() / "fixture";
    fs::path vocab = dir / "vocab.txt";
    fs::path demos = dir / "demos.jsonl";
    fs::path pairs = dir / "pairs.jsonl";
    fs::path kto = dir / "kto.jsonl";
    fs::path corpus = dir / "corpus.jsonl";

    Fixture() {
        fs::create_directories(dir);
        prefkit::write_file(vocab, "a\nb\nc\nd\n");
        prefkit::write_file(demos, "{\"prompt\":\"a\",\"completion\":\"b c <eos>\"}\n"
                                   "{\"prompt\":\"b\",\"completion\":\"c d\"}\n"
                                   "{\"prompt\":\"\",\"completion\":\"a a b\"}\n");
        prefkit::write_file(pairs, "{\"prompt\":\"a\",\"chosen\":\"b c\",\"rejected\":\"d\"}\n"
                                   "{\"prompt\":\"c\",\"chosen\":\"d <eos>\",\"rejected\":\"a b\"}\n"
                                   "{\"prompt\":\"\",\"chosen\":\"a\",\"rejected\":\"b\"}\n");
        prefkit::write_file(kto, "{\"prompt\":\"a\",\"completion\":\"b\",\"label\":\"desirable\"}\n"
                                 "{\"prompt\":\"b\",\"completion\":\"a\",\"label\":\"undesirable\"}\n");
        const char* syms[] = {"a", "b", "c", "d"};
        std::ostringstream c;
        for (int i = 0; i < 160; ++i) {
            c << "{\"prompt\":\"" << syms[i % 4] << ' ' << syms[(i / 4) % 4] << "\",\"reference\":\""
              << syms[(i + 1) % 4] << ' ' << syms[(i / 3) % 4] << ' ' << syms[(i / 7) % 4] << "\"}\n";
        }
        prefkit::write_file(corpus, c.str());
    }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path sft_checkpoint() {
    static const fs::path ck = [] {
        const fs::path out = scratch() / "sft_base";
        const auto r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(out) +
                           " --seed 1 --epochs 30 --batch-size 2 --lr 0.05 --init-mode gaussian --init-sigma 0.5");
        REQUIRE(r.code == 0);
        return out / "checkpoint.json";
    }();
    return ck;
}

}  // namespace

TEST_CASE("cli: help and version") {
    CHECK(run("--help").code == 0);
    CHECK(run("--version").code == 0);
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
}

TEST_CASE("cli sft: artifacts") {
    const fs::path out = scratch() / "sft1";
    const auto r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(out) + " --seed 3");
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "checkpoint.json"));
    CHECK(fs::exists(out / "trace.csv"));
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(slurp(out / "trace.csv").rfind("step,lr,loss,mean_margin\n", 0) == 0);
}

TEST_CASE("cli sft: missing demos names the path") {
    const fs::path missing = scratch() / "no_such_demos.jsonl";
    const auto r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(missing) + " --out " + q(scratch() / "sft2") +
                       " --seed 3");
    CHECK(r.code == 2);
    CHECK(r.output.find(missing.string()) != std::string::npos);
}

TEST_CASE("cli sft: seed is mandatory") {
    const auto r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(scratch() / "sft3"));
    CHECK(r.code == 2);
    CHECK(r.output.find("--seed") != std::string::npos);
}

TEST_CASE("cli sft: parse errors name the line") {
    const fs::path bad = scratch() / "bad_demos.jsonl";
    prefkit::write_file(bad, "{\"prompt\":\"a\",\"completion\":\"b\"}\n{\"prompt\":\"a\",\"completion\":\"zz\"}\n");
    const auto r =
        run("sft --vocab " + q(fx().vocab) + " --demos " + q(bad) + " --out " + q(scratch() / "sft4") + " --seed 3");
    CHECK(r.code == 2);
    CHECK(r.output.find("line 2") != std::string::npos);
}

TEST_CASE("cli sft: config file and overrides") {
    const fs::path cfg = scratch() / "sft_config.json";
    prefkit::write_file(cfg, "{\"epochs\": 2, \"batch_size\": 1, \"lr\": 0.01}\n");
    const fs::path out = scratch() / "sft_cfg";
    auto r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(out) +
                 " --seed 3 --config " + q(cfg) + " --epochs 3");
    CHECK(r.code == 0);
    // 3 demos, batch 1, 3 epochs from the flag.
    CHECK(line_count(out / "trace.csv") == 1 + 9);

    prefkit::write_file(cfg, "{\"epoch\": 2}\n");
    r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(out) + " --seed 3 --config " +
            q(cfg));
    CHECK(r.code == 2);
    CHECK(r.output.find("epoch") != std::string::npos);

    prefkit::write_file(cfg, "{\"epochs\": \"two\"}\n");
    r = run("sft --vocab " + q(fx().vocab) + " --demos " + q(fx().demos) + " --out " + q(out) + " --seed 3 --config " +
            q(cfg));
    CHECK(r.code == 2);
    CHECK(r.output.find("epochs") != std::string::npos);
}

TEST_CASE("cli align: reference rules") {
    const fs::path ck = sft_checkpoint();
    auto r = run("align --method dpo --init " + q(ck) + " --data " + q(fx().pairs) + " --out " +
                 q(scratch() / "al1") + " --seed 1");
    CHECK(r.code == 2);

    r = run("align --method cpo --init " + q(ck) + " --data " + q(fx().pairs) + " --out " + q(scratch() / "al2") +
            " --seed 1");
    CHECK(r.code == 0);
    CHECK(fs::exists(scratch() / "al2" / "checkpoint.json"));

    r = run("align --method cpo --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().pairs) + " --out " +
            q(scratch() / "al2b") + " --seed 1");
    CHECK(r.code == 0);
    CHECK(r.output.find("warning:") != std::string::npos);
    CHECK(slurp(scratch() / "al2" / "checkpoint.json") == slurp(scratch() / "al2b" / "checkpoint.json"));

    r = run("align --method dpo --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().pairs) + " --out " +
            q(scratch() / "al3") + " --seed 1 --epochs 2");
    CHECK(r.code == 0);
    const std::string trace = slurp(scratch() / "al3" / "trace.csv");
    CHECK(trace.find("\n0,0,0.6931471805599453,0\n") != std::string::npos);
}

TEST_CASE("cli align: data kinds") {
    const fs::path ck = sft_checkpoint();
    auto r = run("align --method kto --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().pairs) + " --out " +
                 q(scratch() / "al4") + " --seed 1");
    CHECK(r.code == 0);
    CHECK(r.output.find("converted 3 pairs to 6 records") != std::string::npos);

    r = run("align --method kto --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().kto) + " --out " +
            q(scratch() / "al5") + " --seed 1");
    CHECK(r.code == 0);

    r = run("align --method ipo --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().kto) + " --out " +
            q(scratch() / "al6") + " --seed 1");
    CHECK(r.code == 2);

    r = run("align --method ppo --init " + q(ck) + " --ref " + q(ck) + " --data " + q(fx().pairs) + " --out " +
            q(scratch() / "al7") + " --seed 1");
    CHECK(r.code == 2);
    CHECK(r.output.find("dpo, ipo, kto, cpo") != std::string::npos);
}

TEST_CASE("cli ppsweep: defaults, temps, undersized corpus") {
    const fs::path ck = sft_checkpoint();
    const fs::path out = scratch() / "pp1";
    auto r = run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(out) + " --seed 5");
    CHECK(r.code == 0);
    CHECK(line_count(out / "sweep.csv") == 1 + 10);
    CHECK(fs::exists(out / "sweep.json"));
    CHECK(fs::exists(out / "selection.json"));
    CHECK(fs::exists(out / "pairs.jsonl"));
    CHECK(fs::exists(out / "manifest.json"));

    const fs::path out2 = scratch() / "pp2";
    r = run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(out2) +
            " --seed 5 --temps 0.2,0.8 --batch 32 --repeats 3");
    CHECK(r.code == 0);
    CHECK(line_count(out2 / "sweep.csv") == 1 + 4);
    const std::string sel = slurp(out2 / "selection.json");
    const bool a = sel.find("\"chosen_temperature\": 0.2") != std::string::npos &&
                   sel.find("\"rejected_temperature\": 0.8") != std::string::npos;
    const bool b = sel.find("\"chosen_temperature\": 0.8") != std::string::npos &&
                   sel.find("\"rejected_temperature\": 0.2") != std::string::npos;
    CHECK((a || b));

    r = run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(scratch() / "pp3") +
            " --seed 5 --batch 500");
    CHECK(r.code == 2);
}

TEST_CASE("cli replay: byte-identical artifacts") {
    const fs::path ck = sft_checkpoint();
    const fs::path out = scratch() / "pp_replay_src";
    REQUIRE(run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(out) +
                " --seed 8 --batch 16 --repeats 2")
                .code == 0);
    const fs::path again = scratch() / "pp_replay_dst";
    REQUIRE(run("replay --manifest " + q(out / "manifest.json") + " --out " + q(again)).code == 0);
    for (const char* f : {"manifest.json", "sweep.csv", "sweep.json", "selection.json", "pairs.jsonl"}) {
        CHECK_MESSAGE(slurp(out / f) == slurp(again / f), f);
    }

    // A changed input is detected.
    const fs::path corpus_copy = scratch() / "corpus_copy.jsonl";
    fs::copy_file(fx().corpus, corpus_copy, fs::copy_options::overwrite_existing);
    const fs::path out3 = scratch() / "pp_replay_changed";
    REQUIRE(run("ppsweep --sft " + q(ck) + " --corpus " + q(corpus_copy) + " --out " + q(out3) +
                " --seed 8 --batch 16 --repeats 2")
                .code == 0);
    prefkit::write_file(corpus_copy, slurp(corpus_copy) + "\n");
    CHECK(run("replay --manifest " + q(out3 / "manifest.json") + " --out " + q(scratch() / "pp_replay_x")).code == 2);
}

TEST_CASE("cli ppsweep: thread count does not change results") {
    const fs::path ck = sft_checkpoint();
    const fs::path a = scratch() / "pp_t1", b = scratch() / "pp_t8";
    REQUIRE(run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(a) +
                " --seed 9 --batch 32 --repeats 3 --threads 1")
                .code == 0);
    REQUIRE(run("ppsweep --sft " + q(ck) + " --corpus " + q(fx().corpus) + " --out " + q(b) +
                " --seed 9 --batch 32 --repeats 3",
                "PREFKIT_THREADS=8")
                .code == 0);
    CHECK(slurp(a / "sweep.csv") == slurp(b / "sweep.csv"));
    CHECK(slurp(a / "pairs.jsonl") == slurp(b / "pairs.jsonl"));
}

TEST_CASE("cli scenario: row counts and errors") {
    const fs::path b = scratch() / "scen_b";
    auto r = run("scenario b --world-seed 0 --sizes 0,32 --out " + q(b));
    REQUIRE(r.code == 0);
    CHECK(line_count(b / "report.csv") == 1 + 2 * 2);
    CHECK(fs::exists(b / "world.json"));
    CHECK(fs::exists(b / "manifest.json"));

    const fs::path a = scratch() / "scen_a";
    r = run("scenario a --world-seed 0 --methods dpo,kto --regimes base,sft --align-epochs 1 --out " + q(a));
    REQUIRE(r.code == 0);
    CHECK(line_count(a / "report.csv") == 1 + 6);

    r = run("scenario a --world-seed 0 --methods dpo,ppo --out " + q(scratch() / "scen_bad"));
    CHECK(r.code == 2);
    CHECK(r.output.find("dpo, ipo, kto, cpo") != std::string::npos);

    r = run("scenario b --world-seed 0 --sizes 0,999999 --out " + q(scratch() / "scen_bad2"));
    CHECK(r.code == 2);
}

TEST_CASE("cli gradcheck") {
    for (const char* m : {"dpo", "ipo", "kto", "cpo"}) {
        CHECK(run(std::string("gradcheck --method ") + m + " --seed 0").code == 0);
    }
    CHECK(run("gradcheck --method dpo --seed 0 --n 0").code == 2);
    CHECK(run("gradcheck --method dpo --seed 0 --n 3 --inject-fault").code == 1);
    const fs::path out = scratch() / "gc";
    CHECK(run("gradcheck --method kto --seed 0 --n 5 --out " + q(out)).code == 0);
    CHECK(fs::exists(out / "gradcheck.json"));
    CHECK(fs::exists(out / "manifest.json"));
}
