// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/app/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <system_error>
#include <thread>

#include <unistd.h>

#include "json.hpp"

#include "hft/error.hpp"

namespace hft::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double percentile(std::vector<double> v, double p) {
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    // Nearest rank.
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require<IoError>(!ec && fs::is_directory(dir), "cannot create output directory ", dir.string(),
                     ec ? ": " + ec.message() : "");
}

void write_text(const fs::path& path, const std::string& text) {
    const auto* p = reinterpret_cast<const std::byte*>(text.data());
    write_file_bytes(path, {p, text.size()});
}

json config_json(const StreamConfig& c) {
    return {{"frames_per_chunk", c.frames_per_chunk},
            {"window_frames", c.window_frames},
            {"sink_chunks", c.sink_chunks},
            {"tokens_per_frame", c.tokens_per_frame},
            {"model_dim", c.model_dim},
            {"heads", c.heads},
            {"head_dim", c.head_dim},
            {"layers", c.layers},
            {"keep_ratio", c.keep_ratio},
            {"max_temporal_index", c.max_temporal_index},
            {"timesteps", c.timesteps},
            {"seed", c.seed},
            {"mode", to_string(c.mode)}};
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    }
    return rows;
}

std::string hex_hash(const std::string& text) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

verify::Outcome determinism(const verify::FaultInjection&) {
    const fs::path root = fs::temp_directory_path() / ("hft-determinism-" + std::to_string(::getpid()));
    fs::remove_all(root);
    auto same_files = [](const fs::path& a, const fs::path& b, std::size_t& count) {
        std::vector<fs::path> names;
        for (const auto& e : fs::directory_iterator(a)) {
            names.push_back(e.path().filename());
        }
        std::size_t other = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) {
            ++other;
        }
        if (names.size() != other) {
            return false;
        }
        count += names.size();
        return std::all_of(names.begin(), names.end(),
                           [&](const fs::path& n) { return read_file_bytes(a / n) == read_file_bytes(b / n); });
    };
    StreamConfig stream;
    stream.seed = 3;
    DistillSettings distill;
    std::size_t files = 0;
    cmd_generate(stream, 6, root / "gen_a");
    cmd_generate(stream, 6, root / "gen_b");
    cmd_distill(distill, root / "distill_a");
    cmd_distill(distill, root / "distill_b");
    const bool gen_ok = same_files(root / "gen_a", root / "gen_b", files);
    const bool distill_ok = same_files(root / "distill_a", root / "distill_b", files);
    fs::remove_all(root);
    std::string detail = "generate " + std::string(gen_ok ? "byte-identical" : "DIFFERS") + ", distill " +
                         (distill_ok ? "byte-identical" : "DIFFERS") + " across two runs (" +
                         std::to_string(files) + " files compared)";
    return {gen_ok && distill_ok, detail};
}

}  // namespace

BenchMode parse_bench_mode(const std::string& text) {
    for (BenchMode m : all_bench_modes()) {
        if (text == to_string(m)) {
            return m;
        }
    }
    throw UsageError("unknown bench mode '" + text + "' (expected dense21, swa, swa_sink, hybrid or all)");
}

const char* to_string(BenchMode mode) {
    switch (mode) {
        case BenchMode::Dense21:
            return "dense21";
        case BenchMode::Swa:
            return "swa";
        case BenchMode::SwaSink:
            return "swa_sink";
        case BenchMode::Hybrid:
            return "hybrid";
    }
    return "?";
}

std::vector<BenchMode> all_bench_modes() {
    return {BenchMode::Dense21, BenchMode::Swa, BenchMode::SwaSink, BenchMode::Hybrid};
}

StreamConfig bench_config(const BenchRequest& r) {
    StreamConfig c = r.base;
    c.seed = r.seed;
    switch (r.mode) {
        case BenchMode::Dense21:
            c.window_frames = 21;
            c.sink_chunks = 0;
            c.keep_ratio = 1.0;
            c.mode = AttentionMode::Dense;
            break;
        case BenchMode::Swa:
            c.window_frames = r.window_frames;
            c.sink_chunks = 0;
            c.keep_ratio = 1.0;
            c.mode = AttentionMode::Dense;
            break;
        case BenchMode::SwaSink:
            c.window_frames = r.window_frames;
            c.sink_chunks = 1;
            c.keep_ratio = 1.0;
            c.mode = AttentionMode::Dense;
            break;
        case BenchMode::Hybrid:
            c.window_frames = r.window_frames;
            c.sink_chunks = 1;
            c.keep_ratio = r.keep_ratio;
            c.mode = AttentionMode::Hybrid;
            break;
    }
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw UsageError(std::string("invalid bench config: ") + e.what());
    }
    return c;
}

BenchReport run_bench(const BenchRequest& request) {
    require<UsageError>(request.chunks > 0, "chunks must be positive");
    BenchReport rep;
    rep.mode = request.mode;
    rep.config = bench_config(request);
    rep.chunks = request.chunks;
    const StreamResult res = generate_stream(rep.config, request.chunks);
    for (const ChunkRecord& c : res.chunks) {
        rep.chunk_ms.push_back(static_cast<double>(c.wall_ns) * 1e-6);
        rep.score_evaluations.push_back(c.score_evaluations);
        rep.expected_score_evaluations.push_back(expected_score_evaluations(rep.config, c.chunk_index));
        rep.cached_tokens.push_back(c.cached_tokens);
    }
    rep.mean_ms = std::accumulate(rep.chunk_ms.begin(), rep.chunk_ms.end(), 0.0) /
                  static_cast<double>(rep.chunk_ms.size());
    rep.p50_ms = percentile(rep.chunk_ms, 50.0);
    rep.p95_ms = percentile(rep.chunk_ms, 95.0);
    rep.peak_cached_tokens = res.peak_cached_tokens;
    rep.evicted_chunks = res.evicted_chunks;
    return rep;
}

std::vector<BenchReport> run_benches(const std::vector<BenchRequest>& requests, std::size_t threads) {
    std::vector<BenchReport> reports(requests.size());
    std::vector<std::exception_ptr> errors(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                reports[i] = run_bench(requests[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(requests.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return reports;
}

std::size_t worker_threads() {
    const char* env = std::getenv("HFT_THREADS");
    if (!env || !*env) {
        return 1;
    }
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    require<UsageError>(*end == '\0' && v > 0, "HFT_THREADS must be a positive integer, got '", env, "'");
    return static_cast<std::size_t>(v);
}

std::string bench_csv(const std::vector<BenchReport>& reports) {
    std::ostringstream os;
    os << "mode,chunks,window_frames,sink_chunks,keep_ratio,attention,mean_ms,p50_ms,p95_ms,peak_cached_tokens,"
          "evicted_chunks,score_evals_last_chunk,score_evals_total,counts_match\n";
    char buf[512];
    for (const BenchReport& r : reports) {
        const std::uint64_t total =
            std::accumulate(r.score_evaluations.begin(), r.score_evaluations.end(), std::uint64_t{0});
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%g,%s,%.4f,%.4f,%.4f,%zu,%llu,%llu,%llu,%s\n", to_string(r.mode),
                      r.chunks, r.config.window_frames, r.config.sink_chunks, r.config.keep_ratio,
                      to_string(r.config.mode), r.mean_ms, r.p50_ms, r.p95_ms, r.peak_cached_tokens,
                      static_cast<unsigned long long>(r.evicted_chunks),
                      static_cast<unsigned long long>(r.score_evaluations.back()),
                      static_cast<unsigned long long>(total), r.counts_match() ? "true" : "false");
        os << buf;
    }
    return os.str();
}

std::string bench_chunks_csv(const std::vector<BenchReport>& reports) {
    std::ostringstream os;
    os << "mode,chunk,score_evals,expected_score_evals,cached_tokens,wall_ms\n";
    char buf[256];
    for (const BenchReport& r : reports) {
        for (std::size_t i = 0; i < r.chunks; ++i) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%llu,%llu,%zu,%.4f\n", to_string(r.mode), i,
                          static_cast<unsigned long long>(r.score_evaluations[i]),
                          static_cast<unsigned long long>(r.expected_score_evaluations[i]), r.cached_tokens[i],
                          r.chunk_ms[i]);
            os << buf;
        }
    }
    return os.str();
}

std::string bench_json(const std::vector<BenchReport>& reports) {
    json out;
    out["schema"] = "hft-bench/1";
    out["reports"] = json::array();
    for (const BenchReport& r : reports) {
        out["reports"].push_back({{"mode", to_string(r.mode)},
                                  {"chunks", r.chunks},
                                  {"wall_ms", {{"mean", r.mean_ms}, {"p50", r.p50_ms}, {"p95", r.p95_ms}}},
                                  {"peak_cached_tokens", r.peak_cached_tokens},
                                  {"evicted_chunks", r.evicted_chunks},
                                  {"score_evaluations", r.score_evaluations},
                                  {"expected_score_evaluations", r.expected_score_evaluations},
                                  {"counts_match", r.counts_match()},
                                  {"chunk_ms", r.chunk_ms},
                                  {"config", config_json(r.config)}});
    }
    return out.dump(2) + "\n";
}

GenerateOutput cmd_generate(const StreamConfig& cfg, std::size_t chunks, const fs::path& out_dir) {
    require<UsageError>(chunks > 0, "chunks must be positive");
    try {
        cfg.validate();
    } catch (const ContractError& e) {
        throw UsageError(std::string("invalid stream config: ") + e.what());
    }
    ensure_dir(out_dir);
    GenerateOutput out;
    out.config_hash = config_hash(cfg);
    json files = json::array();
    generate_stream(cfg, chunks, [&](const ChunkRecord& rec, const RollingCache&) {
        char name[32];
        std::snprintf(name, sizeof name, "chunk_%05lld.hft", static_cast<long long>(rec.chunk_index));
        const Tensor t = to_tensor(rec.latent);
        write_tensor(out_dir / name, t.shape, t.data);
        out.tensors.push_back(out_dir / name);
        files.push_back(name);
    });
    const json manifest = {{"schema", "hft-generate/1"},
                           {"config_hash", out.config_hash},
                           {"seed", cfg.seed},
                           {"chunks", chunks},
                           {"latent_shape", {cfg.chunk_tokens(), cfg.model_dim}},
                           {"files", files},
                           {"config", config_json(cfg)}};
    out.manifest = out_dir / "manifest.json";
    write_text(out.manifest, manifest.dump(2) + "\n");
    return out;
}

DistillOutput cmd_distill(const DistillSettings& s, const fs::path& out_dir) {
    s.train.validate();
    require<UsageError>(s.world_dim > 0, "world_dim must be positive");
    require<UsageError>(s.init_scale > 0.0, "init_scale must be positive");
    ensure_dir(out_dir);
    SeededRng world_rng(s.world_seed);
    DistillOutput out;
    out.world = GaussianWorld::random(s.world_dim, world_rng);
    SeededRng rng(s.train.seed);
    out.result = train(s.train, out.world, AffineGenerator::scaled_identity(s.world_dim, s.init_scale),
                       {s.train.phase_switch_step}, rng);

    out.trace = out_dir / "trace.csv";
    write_text(out.trace, trace_csv(out.result.trace));

    const AffineGenerator& g = out.result.generator;
    const json params = {{"schema", "hft-distill/1"},
                         {"config_hash", hex_hash(canonical(s))},
                         {"steps", out.result.trace.size()},
                         {"A", matrix_json(g.A)},
                         {"b", g.b},
                         {"world_mean", out.world.mean},
                         {"world_cov", matrix_json(out.world.cov)},
                         {"mean_error", mean_error(g, out.world)},
                         {"cov_error", cov_error(g, out.world)}};
    out.params = out_dir / "params.json";
    write_text(out.params, params.dump(2) + "\n");
    const Tensor a = to_tensor(g.A);
    write_tensor(out_dir / "generator_A.hft", a.shape, a.data);
    const std::vector<std::uint32_t> b_shape{static_cast<std::uint32_t>(g.b.size())};
    const std::vector<float> b_data(g.b.begin(), g.b.end());
    write_tensor(out_dir / "generator_b.hft", b_shape, b_data);
    return out;
}

std::vector<verify::Criterion> all_criteria() {
    auto all = verify::library_criteria();
    all.push_back({"determinism", "generate and distill outputs are byte-identical across runs", 60.0, determinism});
    return all;
}

}  // namespace hft::app
