#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "fusemerge/container.hpp"
#include "fusemerge/corpus.hpp"
#include "fusemerge/dist_io.hpp"
#include "fusemerge/toylm.hpp"
#include "test_support.hpp"

using namespace fusemerge;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

std::filesystem::path work_dir() {
    static const auto dir = [] {
        auto d = std::filesystem::temp_directory_path() / "fusemerge_cli_test";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    const auto out_path = work_dir() / "stdout.txt";
    const std::string cmd = (env_prefix.empty() ? "" : env_prefix + " ") + FUSEMERGE_CLI_PATH + " " +
                            args + " > " + out_path.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_path);
    std::stringstream ss;
    ss << in.rdbuf();
    result.stdout_text = ss.str();
    return result;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

Checkpoint two_tensor_ckpt(double a0, double a1, double b0) {
    Checkpoint ckpt;
    Tensor t;
    t.dtype = Dtype::F64;
    t.shape = {2};
    t.data = {a0, a1};
    ckpt.tensors.emplace("blk.0.w", std::move(t));
    Tensor u;
    u.dtype = Dtype::F64;
    u.shape = {1};
    u.data = {b0};
    ckpt.tensors.emplace("blk.1.w", std::move(u));
    return ckpt;
}

}  // namespace

TEST_CASE("cli merge varm over matrix units") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.0, 0.0, 1.0), dir / "base.st");
    save_checkpoint(two_tensor_ckpt(2.0, 0.0, 1.5), dir / "t1.st");
    save_checkpoint(two_tensor_ckpt(0.0, 4.0, 1.0), dir / "t2.st");

    const RunResult r = run_cli("merge --method varm --granularity matrix --base " + q(dir / "base.st") +
                                " --targets " + q(dir / "t1.st") + " --targets " + q(dir / "t2.st") +
                                " --out " + q(dir / "merged.st"));
    REQUIRE(r.exit_code == 0);

    const json report = json::parse(r.stdout_text);
    REQUIRE(report.at("method") == "varm");
    for (const auto& [unit, info] : report.at("units").items()) {
        double sum = 0.0;
        for (double w : info.at("weights").get<std::vector<double>>()) {
            REQUIRE(w >= 0.0);
            sum += w;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
    // blk.0.w: mean_sq (2, 8) -> weights (0.2, 0.8) -> [0.4, 3.2]
    const Checkpoint merged = load_checkpoint(dir / "merged.st");
    REQUIRE(merged.tensors.at("blk.0.w").data[0] == Catch::Approx(0.4).epsilon(1e-13));
    REQUIRE(merged.tensors.at("blk.0.w").data[1] == Catch::Approx(3.2).epsilon(1e-13));
}

TEST_CASE("cli merge usage and failure exits") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.0, 0.0, 1.0), dir / "base.st");
    save_checkpoint(two_tensor_ckpt(1.0, 1.0, 1.0), dir / "t1.st");
    Checkpoint other;
    Tensor t;
    t.shape = {3};
    t.data = {0.0, 0.0, 0.0};
    other.tensors.emplace("different", std::move(t));
    save_checkpoint(other, dir / "alien.st");

    SECTION("missing --base for varm is a usage error") {
        const RunResult r =
            run_cli("merge --method varm --targets " + q(dir / "t1.st") + " --out " + q(dir / "x.st"));
        REQUIRE(r.exit_code == 1);
    }
    SECTION("unknown method is a usage error") {
        const RunResult r = run_cli("merge --method soup --base " + q(dir / "base.st") + " --targets " +
                                    q(dir / "t1.st") + " --out " + q(dir / "x.st"));
        REQUIRE(r.exit_code == 1);
    }
    SECTION("incompatible checkpoints exit 2") {
        const RunResult r = run_cli("merge --method varm --base " + q(dir / "base.st") + " --targets " +
                                    q(dir / "t1.st") + " --targets " + q(dir / "alien.st") + " --out " +
                                    q(dir / "x.st"));
        REQUIRE(r.exit_code == 2);
    }
    SECTION("missing input file exits 3") {
        const RunResult r = run_cli("merge --method varm --base " + q(dir / "missing.st") + " --targets " +
                                    q(dir / "t1.st") + " --out " + q(dir / "x.st"));
        REQUIRE(r.exit_code == 3);
    }
}

TEST_CASE("cli granularity sweep produces four valid outputs") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.0, 0.0, 1.0), dir / "base.st");
    save_checkpoint(two_tensor_ckpt(2.0, 1.0, 1.5), dir / "t1.st");
    save_checkpoint(two_tensor_ckpt(-1.0, 4.0, 0.5), dir / "t2.st");
    for (const std::string g : {"model", "layer", "matrix", "parameter"}) {
        const auto out = dir / ("sweep_" + g + ".st");
        const RunResult r = run_cli("merge --method varm --granularity " + g + " --base " +
                                    q(dir / "base.st") + " --targets " + q(dir / "t1.st") + " --targets " +
                                    q(dir / "t2.st") + " --out " + q(out));
        REQUIRE(r.exit_code == 0);
        REQUIRE(json::parse(r.stdout_text).at("granularity") == g);
        const Checkpoint merged = load_checkpoint(out);
        REQUIRE(merged.tensors.size() == 2);
    }
}

TEST_CASE("cli merge is idempotent given identical inputs") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.1, 0.2, 0.3), dir / "base.st");
    save_checkpoint(two_tensor_ckpt(1.1, -0.2, 0.4), dir / "t1.st");
    save_checkpoint(two_tensor_ckpt(0.4, 0.9, -0.3), dir / "t2.st");
    const std::string cmd = "merge --method dare --seed 9 --base " + q(dir / "base.st") + " --targets " +
                            q(dir / "t1.st") + " --targets " + q(dir / "t2.st");
    REQUIRE(run_cli(cmd + " --out " + q(dir / "d1.st")).exit_code == 0);
    REQUIRE(run_cli(cmd + " --out " + q(dir / "d2.st")).exit_code == 0);
    std::ifstream f1(dir / "d1.st", std::ios::binary), f2(dir / "d2.st", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
}

TEST_CASE("cli merge honors config files with flag precedence") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(1.0, -1.0, 2.0), dir / "cfg_base.st");
    save_checkpoint(two_tensor_ckpt(3.0, 1.0, 2.0), dir / "cfg_t1.st");
    {
        std::ofstream cfg(dir / "merge_config.json");
        cfg << json{{"method", "ta"},
                    {"scale", 1.0},
                    {"base", (dir / "cfg_base.st").string()},
                    {"targets", std::vector<std::string>{(dir / "cfg_t1.st").string()}},
                    {"out", (dir / "cfg_out.st").string()}}
                   .dump();
    }
    SECTION("config alone drives the run") {
        const RunResult r = run_cli("merge --config " + q(dir / "merge_config.json"));
        REQUIRE(r.exit_code == 0);
        const Checkpoint out = load_checkpoint(dir / "cfg_out.st");
        REQUIRE(out.tensors.at("blk.0.w").data == std::vector<double>{3.0, 1.0});
    }
    SECTION("flags override config values") {
        const RunResult r = run_cli("merge --config " + q(dir / "merge_config.json") + " --scale 0.0");
        REQUIRE(r.exit_code == 0);
        const Checkpoint out = load_checkpoint(dir / "cfg_out.st");
        REQUIRE(out.tensors.at("blk.0.w").data == std::vector<double>{1.0, -1.0});
    }
    SECTION("unknown config keys exit 1") {
        std::ofstream cfg(dir / "bad_merge.json");
        cfg << R"({"method":"ta","warp_factor":9})";
        cfg.close();
        const RunResult r = run_cli("merge --config " + q(dir / "bad_merge.json"));
        REQUIRE(r.exit_code == 1);
    }
}

TEST_CASE("cli inspect") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.0, 0.0, 1.0), dir / "a.st");
    save_checkpoint(two_tensor_ckpt(2.0, 0.0, 1.0), dir / "b.st");

    SECTION("lists names, shapes, dtypes") {
        const RunResult r = run_cli("inspect --ckpt " + q(dir / "a.st"));
        REQUIRE(r.exit_code == 0);
        const json report = json::parse(r.stdout_text);
        REQUIRE(report.at("tensors").size() == 2);
        REQUIRE(report.at("tensors")[0].at("name") == "blk.0.w");
        REQUIRE(report.at("tensors")[0].at("dtype") == "F64");
    }
    SECTION("empty checkpoint lists no tensors") {
        save_checkpoint(Checkpoint{}, dir / "empty.st");
        const RunResult r = run_cli("inspect --ckpt " + q(dir / "empty.st"));
        REQUIRE(r.exit_code == 0);
        REQUIRE(json::parse(r.stdout_text).at("tensors").empty());
    }
    SECTION("delta against itself is all zeros") {
        const RunResult r = run_cli("inspect --ckpt " + q(dir / "a.st") + " --delta-against " + q(dir / "a.st"));
        REQUIRE(r.exit_code == 0);
        const json report = json::parse(r.stdout_text);
        for (const auto& [unit, info] : report.at("delta").items())
            REQUIRE(info.at("mean_sq").get<double>() == 0.0);
    }
    SECTION("delta reproduces the worked example") {
        // base (0,0), target A (2,0) -> mean_sq 2; target B (0,4) -> mean_sq 8
        save_checkpoint(two_tensor_ckpt(0.0, 4.0, 1.0), dir / "c.st");
        const RunResult ra = run_cli("inspect --ckpt " + q(dir / "b.st") + " --delta-against " + q(dir / "a.st"));
        REQUIRE(json::parse(ra.stdout_text).at("delta").at("blk.0.w").at("mean_sq").get<double>() == 2.0);
        const RunResult rb = run_cli("inspect --ckpt " + q(dir / "c.st") + " --delta-against " + q(dir / "a.st"));
        REQUIRE(json::parse(rb.stdout_text).at("delta").at("blk.0.w").at("mean_sq").get<double>() == 8.0);
    }
}

TEST_CASE("cli thread cap and tensor filter") {
    const auto dir = work_dir();
    save_checkpoint(two_tensor_ckpt(0.0, 0.0, 1.0), dir / "tbase.st");
    save_checkpoint(two_tensor_ckpt(2.0, 1.0, 1.5), dir / "tt1.st");
    save_checkpoint(two_tensor_ckpt(-1.0, 4.0, 0.5), dir / "tt2.st");
    const std::string cmd = "merge --method varm --granularity matrix --base " + q(dir / "tbase.st") +
                            " --targets " + q(dir / "tt1.st") + " --targets " + q(dir / "tt2.st");

    SECTION("results are identical under different FUSEMERGE_THREADS caps") {
        const RunResult r1 = run_cli(cmd + " --out " + q(dir / "thr1.st"), "FUSEMERGE_THREADS=1");
        const RunResult r4 = run_cli(cmd + " --out " + q(dir / "thr4.st"), "FUSEMERGE_THREADS=4");
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r4.exit_code == 0);
        std::ifstream f1(dir / "thr1.st", std::ios::binary), f2(dir / "thr4.st", std::ios::binary);
        const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        REQUIRE(b1 == b2);
    }
    SECTION("tensor filter carries non-matching tensors from the base") {
        const RunResult r =
            run_cli(cmd + " --tensor-filter 'blk\\.0' --out " + q(dir / "filtered.st"));
        REQUIRE(r.exit_code == 0);
        const Checkpoint out = load_checkpoint(dir / "filtered.st");
        // blk.1.w did not participate: copied from the base
        REQUIRE(out.tensors.at("blk.1.w").data == std::vector<double>{1.0});
        // blk.0.w was merged: mean_sq A=(4+1)/2=2.5, B=(1+16)/2=8.5 -> weights (5/22, 17/22)
        const double wa = 2.5 / 11.0, wb = 8.5 / 11.0;
        REQUIRE(out.tensors.at("blk.0.w").data[0] ==
                Catch::Approx(wa * 2.0 + wb * -1.0).epsilon(1e-13));
        REQUIRE(json::parse(r.stdout_text).at("units").size() == 1);
    }
}

TEST_CASE("cli fuse-train end to end") {
    const auto dir = work_dir();
    const CharVocab vocab = make_char_vocab("ab ");
    {
        std::ofstream corpus(dir / "corpus.jsonl");
        corpus << R"({"turns":[{"role":"user","text":"a"},{"role":"assistant","text":"ab ab"}]})" << "\n";
        corpus << R"({"turns":[{"role":"assistant","text":"b a"}]})" << "\n";
    }
    ToyLM pivot = ToyLM::init(vocab.size(), 3, 5, 1.0);
    pivot.params.metadata["vocab"] = json(vocab.id_to_token).dump();
    save_checkpoint(pivot.params, dir / "pivot.st");

    const auto samples = ingest_dialogues(dir / "corpus.jsonl", vocab, 64);
    std::filesystem::create_directories(dir / "teachers");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        DistFile f;
        f.dist = DistMatrix::uniform(samples[i].token_ids.size(), vocab.size());
        f.tokens.assign(samples[i].token_ids.size(), "?");
        f.gold.assign(samples[i].token_ids.size(), 0);
        save_dist_file(f, dir / "teachers" / ("teacher_" + std::to_string(i) + ".st"));
    }
    {
        std::ofstream cfg(dir / "config.json");
        cfg << R"({"lambda":0.9,"lr":0.05,"epochs":4,"seed":3,"block_len":64})" << "\n";
    }

    SECTION("training writes a checkpoint and a JSON log, deterministically") {
        const std::string cmd = "fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                q(dir / "teachers") + " --corpus " + q(dir / "corpus.jsonl") +
                                " --config " + q(dir / "config.json");
        const RunResult r1 = run_cli(cmd + " --out " + q(dir / "target1.st"));
        REQUIRE(r1.exit_code == 0);
        const json report = json::parse(r1.stdout_text);
        REQUIRE(report.at("log").size() == 4);
        REQUIRE(report.at("lambda").get<double>() == 0.9);

        const RunResult r2 = run_cli(cmd + " --out " + q(dir / "target2.st"));
        REQUIRE(r2.exit_code == 0);
        std::ifstream f1(dir / "target1.st", std::ios::binary), f2(dir / "target2.st", std::ios::binary);
        const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        REQUIRE(b1 == b2);
    }
    SECTION("zero epochs copies the pivot tensors") {
        const RunResult r = run_cli("fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                    q(dir / "teachers") + " --corpus " + q(dir / "corpus.jsonl") +
                                    " --config " + q(dir / "config.json") + " --epochs 0 --out " +
                                    q(dir / "same.st"));
        REQUIRE(r.exit_code == 0);
        const Checkpoint out = load_checkpoint(dir / "same.st");
        for (const auto& [name, t] : pivot.params.tensors)
            REQUIRE(out.tensors.at(name).data == t.data);
    }
    SECTION("lambda one and lambda 0.9 produce different training logs") {
        const std::string cmd = "fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                q(dir / "teachers") + " --corpus " + q(dir / "corpus.jsonl") +
                                " --config " + q(dir / "config.json");
        const RunResult r1 = run_cli(cmd + " --lambda 1.0 --out " + q(dir / "l1.st"));
        const RunResult r2 = run_cli(cmd + " --lambda 0.9 --out " + q(dir / "l9.st"));
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r2.exit_code == 0);
        const auto log1 = json::parse(r1.stdout_text).at("log");
        const auto log2 = json::parse(r2.stdout_text).at("log");
        REQUIRE(log1.at(1).at("loss").get<double>() != log2.at(1).at("loss").get<double>());
    }
    SECTION("divergent training exits 4") {
        const RunResult r = run_cli("fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                    q(dir / "teachers") + " --corpus " + q(dir / "corpus.jsonl") +
                                    " --config " + q(dir / "config.json") + " --lr 1e300 --epochs 3 --out " +
                                    q(dir / "x.st"));
        REQUIRE(r.exit_code == 4);
    }
    SECTION("missing teacher directory exits 3") {
        const RunResult r = run_cli("fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                    q(dir / "nowhere") + " --corpus " + q(dir / "corpus.jsonl") +
                                    " --config " + q(dir / "config.json") + " --out " + q(dir / "x.st"));
        REQUIRE(r.exit_code == 3);
    }
    SECTION("unknown config keys are rejected") {
        std::ofstream cfg(dir / "bad_config.json");
        cfg << R"({"lambda":0.9,"turbo":true})" << "\n";
        cfg.close();
        const RunResult r = run_cli("fuse-train --pivot " + q(dir / "pivot.st") + " --teacher-dir " +
                                    q(dir / "teachers") + " --corpus " + q(dir / "corpus.jsonl") +
                                    " --config " + q(dir / "bad_config.json") + " --out " + q(dir / "x.st"));
        REQUIRE(r.exit_code == 1);
    }
}

TEST_CASE("cli align") {
    const auto dir = work_dir();
    const std::vector<std::string> vocab = {"<unk>", "a", "b", "c"};
    DistFile source;
    source.dist = DistMatrix(2, 4);
    source.dist.at(0, 1) = 0.5;
    source.dist.at(0, 2) = 0.5;
    source.dist.at(1, 2) = 0.25;
    source.dist.at(1, 3) = 0.75;
    source.tokens = {"a", "b"};
    source.gold = {1, 2};
    source.vocab = vocab;
    save_dist_file(source, dir / "source.st");

    auto write_list = [&](const std::string& name, const std::vector<std::string>& items) {
        std::ofstream out(dir / name);
        out << json(items).dump();
        return q(dir / name);
    };

    SECTION("identity projection with the same tokenizer") {
        const std::string pivot_tokens = write_list("ptoks.json", {"a", "b"});
        const std::string pivot_vocab = write_list("pvocab.json", vocab);
        const RunResult r = run_cli("align --source-dist " + q(dir / "source.st") + " --pivot-tokens " +
                                    pivot_tokens + " --pivot-vocab " + pivot_vocab + " --out " +
                                    q(dir / "projected.st"));
        REQUIRE(r.exit_code == 0);
        const DistFile out = load_dist_file(dir / "projected.st");
        REQUIRE(out.dist.values == source.dist.values);
        const json report = json::parse(r.stdout_text);
        REQUIRE(report.at("pairs").size() == 2);
    }
    SECTION("empty token list exits 1") {
        const std::string pivot_tokens = write_list("empty.json", {});
        const std::string pivot_vocab = write_list("pvocab2.json", vocab);
        const RunResult r = run_cli("align --source-dist " + q(dir / "source.st") + " --pivot-tokens " +
                                    pivot_tokens + " --pivot-vocab " + pivot_vocab + " --out " +
                                    q(dir / "x.st"));
        REQUIRE(r.exit_code == 1);
    }
    SECTION("split-token projection is deterministic") {
        // pair tokenizer side: tokens ["ab"], char side: ["a","b"]
        DistFile pair_source;
        pair_source.dist = DistMatrix(1, 2);
        pair_source.dist.at(0, 0) = 0.25;
        pair_source.dist.at(0, 1) = 0.75;
        pair_source.tokens = {"ab"};
        pair_source.gold = {1};
        pair_source.vocab = {"<unk>", "ab"};
        save_dist_file(pair_source, dir / "pair.st");
        const std::string pivot_tokens = write_list("chartoks.json", {"a", "b"});
        const std::string pivot_vocab = write_list("charvocab.json", {"<unk>", "a", "b"});
        const RunResult r1 = run_cli("align --source-dist " + q(dir / "pair.st") + " --pivot-tokens " +
                                     pivot_tokens + " --pivot-vocab " + pivot_vocab + " --out " +
                                     q(dir / "p1.st"));
        const RunResult r2 = run_cli("align --source-dist " + q(dir / "pair.st") + " --pivot-tokens " +
                                     pivot_tokens + " --pivot-vocab " + pivot_vocab + " --out " +
                                     q(dir / "p2.st"));
        REQUIRE(r1.exit_code == 0);
        REQUIRE(r2.exit_code == 0);
        json rep1 = json::parse(r1.stdout_text);
        json rep2 = json::parse(r2.stdout_text);
        rep1.erase("out");
        rep2.erase("out");
        REQUIRE(rep1 == rep2);
        const DistFile p1 = load_dist_file(dir / "p1.st");
        const DistFile p2 = load_dist_file(dir / "p2.st");
        REQUIRE(p1.dist.values == p2.dist.values);
        p1.dist.check_stochastic();
    }
}

TEST_CASE("cli rejects unknown subcommands and prints help") {
    REQUIRE(run_cli("frobnicate").exit_code == 1);
    const RunResult help = run_cli("--help");
    REQUIRE(help.exit_code == 0);
    REQUIRE(help.stdout_text.find("merge") != std::string::npos);
}
