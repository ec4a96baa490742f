// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "hft/app/commands.hpp"
#include "hft/error.hpp"
#include "json.hpp"

using namespace hft;
using namespace hft::app;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hft-test-" + std::to_string(::getpid()) + "-" +
                                            std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string(HFT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

StreamConfig tiny_stream() {
    StreamConfig c;
    c.tokens_per_frame = 2;
    c.model_dim = 8;
    c.heads = 2;
    c.head_dim = 4;
    c.layers = 1;
    return c;
}

}  // namespace

TEST_CASE("key = value grammar") {
    const auto kv = parse_key_values("# comment\n\n  seed = 7  \nmode=dense\r\ntimesteps = 1, 0.5\n");
    CHECK(kv.size() == 3);
    CHECK(kv.at("seed") == "7");
    CHECK(kv.at("mode") == "dense");
    CHECK(kv.at("timesteps") == "1, 0.5");
    CHECK_THROWS_WITH_AS(parse_key_values("a = 1\nb\n"), doctest::Contains("line 2"), UsageError);
    CHECK_THROWS_WITH_AS(parse_key_values("a = 1\na = 2\n"), doctest::Contains("duplicate"), UsageError);
    CHECK_THROWS_AS(parse_key_values(" = 3\n"), UsageError);
}

TEST_CASE("applying config keys") {
    StreamConfig s;
    apply_config(parse_key_values("seed = 9\nmode = dense\nwindow_frames = 6\ntimesteps = 1,0.5"), s);
    CHECK(s.seed == 9);
    CHECK(s.mode == AttentionMode::Dense);
    CHECK(s.window_frames == 6);
    CHECK(s.timesteps == std::vector<double>{1.0, 0.5});
    CHECK_THROWS_WITH_AS(apply_config(parse_key_values("windw = 3"), s), doctest::Contains("windw"), UsageError);
    CHECK_THROWS_WITH_AS(apply_config(parse_key_values("heads = two"), s), doctest::Contains("heads"), UsageError);
    CHECK_THROWS_AS(apply_config(parse_key_values("mode = sparse"), s), UsageError);

    DistillSettings d;
    apply_config(parse_key_values("lambda = 0\nphase_switch = 0\ncritic = exact\nworld_dim = 3"), d);
    CHECK(d.train.lambda == 0.0);
    CHECK(d.train.phase_switch_step == 0);
    CHECK(d.train.critic == CriticKind::Exact);
    CHECK(d.world_dim == 3);
    CHECK_THROWS_WITH_AS(apply_config(parse_key_values("batchsize = 3"), d), doctest::Contains("batchsize"), UsageError);
}

TEST_CASE("config hash reacts to every field") {
    const StreamConfig base;
    std::vector<StreamConfig> variants(14, base);
    variants[0].frames_per_chunk = 2;
    variants[1].window_frames = 6;
    variants[2].sink_chunks = 0;
    variants[3].tokens_per_frame = 8;
    variants[4].model_dim = 16;
    variants[5].heads = 4;
    variants[6].head_dim = 8;
    variants[7].layers = 3;
    variants[8].keep_ratio = 0.25;
    variants[9].max_temporal_index = 22;
    variants[10].timesteps = {1.0, 0.5};
    variants[11].seed = 1;
    variants[12].mode = AttentionMode::Dense;
    variants[13].timesteps = {1.0, 0.75, 0.5, 0.2500000001};
    std::set<std::string> hashes{config_hash(base)};
    for (const auto& v : variants) {
        hashes.insert(config_hash(v));
    }
    CHECK(hashes.size() == variants.size() + 1);
    CHECK(config_hash(base) == config_hash(StreamConfig{}));
    CHECK(config_hash(base).rfind("fnv1a64:", 0) == 0);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("bench modes map onto stream configs") {
    BenchRequest r;
    r.base = tiny_stream();
    r.mode = BenchMode::Dense21;
    StreamConfig c = bench_config(r);
    CHECK(c.window_frames == 21);
    CHECK(c.sink_chunks == 0);
    CHECK(c.mode == AttentionMode::Dense);
    r.mode = BenchMode::SwaSink;
    c = bench_config(r);
    CHECK(c.window_frames == 9);
    CHECK(c.sink_chunks == 1);
    CHECK(c.mode == AttentionMode::Dense);
    r.mode = BenchMode::Hybrid;
    r.keep_ratio = 0.5;
    c = bench_config(r);
    CHECK(c.keep_ratio == 0.5);
    CHECK(c.mode == AttentionMode::Hybrid);
    r.window_frames = 7;
    CHECK_THROWS_AS(bench_config(r), UsageError);
    CHECK_THROWS_AS(parse_bench_mode("dense"), UsageError);
    for (BenchMode m : all_bench_modes()) {
        CHECK(parse_bench_mode(to_string(m)) == m);
    }
}

TEST_CASE("bench counts follow the analytic formulas") {
    std::vector<BenchRequest> reqs;
    for (BenchMode m : all_bench_modes()) {
        BenchRequest r;
        r.mode = m;
        r.base = tiny_stream();
        r.chunks = 12;
        r.seed = 4;
        reqs.push_back(r);
    }
    const auto reports = run_benches(reqs, 2);
    REQUIRE(reports.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(reports[i].mode == reqs[i].mode);
        CHECK(reports[i].counts_match());
        CHECK(reports[i].chunk_ms.size() == 12);
        CHECK(reports[i].p50_ms <= reports[i].p95_ms);
    }
    const auto& dense21 = reports[0];
    const auto& hybrid = reports[3];
    CHECK(hybrid.score_evaluations.back() < dense21.score_evaluations.back());
    CHECK(hybrid.score_evaluations.back() * dense21.expected_score_evaluations.back() ==
          dense21.score_evaluations.back() * hybrid.expected_score_evaluations.back());
    CHECK(hybrid.peak_cached_tokens < dense21.peak_cached_tokens);

    SUBCASE("same seed repeats the work exactly") {
        const auto again = run_bench(reqs[3]);
        CHECK(again.score_evaluations == hybrid.score_evaluations);
        CHECK(again.cached_tokens == hybrid.cached_tokens);
    }

    SUBCASE("single chunk") {
        BenchRequest one = reqs[3];
        one.chunks = 1;
        const auto rep = run_bench(one);
        CHECK(rep.chunk_ms.size() == 1);
        CHECK(rep.evicted_chunks == 0);
    }

    SUBCASE("outputs parse") {
        const auto doc = nlohmann::json::parse(bench_json(reports));
        CHECK(doc["schema"] == "hft-bench/1");
        CHECK(doc["reports"].size() == 4);
        CHECK(doc["reports"][3]["mode"] == "hybrid");
        CHECK(doc["reports"][3]["counts_match"] == true);
        const std::string csv = bench_csv(reports);
        CHECK(csv.rfind("mode,chunks,window_frames,sink_chunks,keep_ratio,attention,mean_ms,p50_ms,p95_ms,"
                        "peak_cached_tokens,evicted_chunks,score_evals_last_chunk,score_evals_total,counts_match\n",
                        0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
        const std::string rows = bench_chunks_csv(reports);
        CHECK(std::count(rows.begin(), rows.end(), '\n') == 1 + 4 * 12);
    }
}

TEST_CASE("worker thread count comes from HFT_THREADS") {
    ::unsetenv("HFT_THREADS");
    CHECK(worker_threads() == 1);
    ::setenv("HFT_THREADS", "3", 1);
    CHECK(worker_threads() == 3);
    ::setenv("HFT_THREADS", "0", 1);
    CHECK_THROWS_AS(worker_threads(), UsageError);
    ::setenv("HFT_THREADS", "2x", 1);
    CHECK_THROWS_AS(worker_threads(), UsageError);
    ::unsetenv("HFT_THREADS");
}

TEST_CASE("generate writes tensors and a manifest, deterministically") {
    TempDir a;
    TempDir b;
    const StreamConfig cfg = tiny_stream();
    const auto out = cmd_generate(cfg, 4, a.path);
    cmd_generate(cfg, 4, b.path);
    CHECK(out.tensors.size() == 4);
    for (const auto& t : out.tensors) {
        CHECK(slurp(t) == slurp(b.path / t.filename()));
        const Tensor tensor = read_tensor(t);
        CHECK(tensor.shape == std::vector<std::uint32_t>{6, 8});
    }
    const auto manifest = nlohmann::json::parse(slurp(out.manifest));
    CHECK(manifest["config_hash"] == config_hash(cfg));
    CHECK(manifest["seed"] == cfg.seed);
    CHECK(manifest["chunks"] == 4);
    CHECK(manifest["files"].size() == 4);
    CHECK(slurp(out.manifest) == slurp(b.path / "manifest.json"));

    TempDir c;
    std::ofstream(c.path / "blocker") << "x";
    CHECK_THROWS_AS(cmd_generate(cfg, 1, c.path / "blocker" / "sub"), IoError);
}

TEST_CASE("distill writes a trace and parameters") {
    DistillSettings s;
    s.train.generator_steps = 60;
    s.train.phase_switch_step = 30;
    s.train.fixture_chunks = 2;

    SUBCASE("lambda 0 leaves no regularizer contribution") {
        TempDir d;
        s.train.lambda = 0.0;
        const auto out = cmd_distill(s, d.path);
        std::istringstream csv(slurp(out.trace));
        std::string line;
        std::getline(csv, line);
        CHECK(line.rfind("step,phase,L_DMD,L_Reg,grad_norm,mean_error,cov_error,", 0) == 0);
        std::size_t rows = 0;
        while (std::getline(csv, line)) {
            ++rows;
            std::vector<std::string> cols;
            std::stringstream ls(line);
            for (std::string c; std::getline(ls, c, ',');) {
                cols.push_back(c);
            }
            REQUIRE(cols.size() == 15);
            CHECK(cols[10] == "0");
            CHECK(cols[1] == (rows <= 30 ? "dense" : "hybrid"));
        }
        CHECK(rows == 60);
        const auto params = nlohmann::json::parse(slurp(out.params));
        CHECK(params["A"].size() == 2);
        CHECK(params["b"].size() == 2);
        CHECK(fs::exists(d.path / "generator_A.hft"));
        CHECK(read_tensor(d.path / "generator_b.hft").shape == std::vector<std::uint32_t>{2});
    }

    SUBCASE("phase switch 0 runs hybrid throughout") {
        TempDir d;
        s.train.phase_switch_step = 0;
        const auto out = cmd_distill(s, d.path);
        for (const TraceRow& row : out.result.trace) {
            CHECK(row.phase == Phase::Hybrid);
        }
    }

    SUBCASE("invalid settings are usage errors naming the field") {
        TempDir d;
        s.train.batch = 0;
        CHECK_THROWS_WITH_AS(cmd_distill(s, d.path), doctest::Contains("batch"), UsageError);
    }
}

TEST_CASE("default distill config converges") {
    TempDir d;
    const auto out = cmd_distill(DistillSettings{}, d.path);
    CHECK(out.result.trace.back().mean_error <= 0.05);
    CHECK(out.result.trace.back().cov_error <= 0.05);
}

TEST_CASE("cli exit codes") {
    TempDir d;
    CHECK(cli("") == 2);
    CHECK(cli("bench --mode bogus") == 2);
    CHECK(cli("verify --suite bogus") == 2);
    CHECK(cli("verify --suite online_softmax") == 0);
    CHECK(cli("verify --suite dense_limit --inject-fault zero_keep_ratio") == 1);
    CHECK(cli("distill --config " + (d.path / "missing.cfg").string() + " --out " + d.path.string()) == 3);

    std::ofstream(d.path / "bad.cfg") << "lambda = 0.05\nbatch_size = 3\n";
    CHECK(cli("distill --config " + (d.path / "bad.cfg").string() + " --out " + d.path.string()) == 2);

    std::ofstream(d.path / "blocker") << "x";
    CHECK(cli("generate --chunks 1 --out " + (d.path / "blocker" / "x").string()) == 3);

    std::ofstream(d.path / "gen.cfg") << "tokens_per_frame = 2\nmodel_dim = 8\nhead_dim = 4\nlayers = 1\nseed = 5\n";
    CHECK(cli("generate --config " + (d.path / "gen.cfg").string() + " --chunks 2 --seed 6 --out " +
              (d.path / "g").string()) == 0);
    const auto manifest = nlohmann::json::parse(slurp(d.path / "g" / "manifest.json"));
    CHECK(manifest["seed"] == 6);  // flags win over the file
    CHECK(manifest["config"]["tokens_per_frame"] == 2);

    CHECK(cli("bench --mode hybrid,dense21 --chunks 3 --config " + (d.path / "gen.cfg").string() + " --out " +
              (d.path / "b").string()) == 0);
    CHECK(fs::exists(d.path / "b" / "bench.json"));
    CHECK(fs::exists(d.path / "b" / "bench_chunks.csv"));
}
