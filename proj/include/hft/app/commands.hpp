// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hft/app/config.hpp"
#include "hft/distill_lab.hpp"
#include "hft/hybrid_engine.hpp"
#include "hft/verify/suites.hpp"

namespace hft::app {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailed = 1,
    kExitUsage = 2,
    kExitIo = 3,
};

// ---- bench -------------------------------------------------------------

enum class BenchMode {
    /// Dense attention over a 21-frame window, no sink, no history state.
    Dense21,
    /// Dense attention over a w-frame window, no sink.
    Swa,
    /// Dense attention over a w-frame window plus the sink chunk.
    SwaSink,
    /// Sparse local window plus sink plus linear history.
    Hybrid,
};

BenchMode parse_bench_mode(const std::string& text);
const char* to_string(BenchMode mode);
std::vector<BenchMode> all_bench_modes();

struct BenchRequest {
    BenchMode mode = BenchMode::Hybrid;
    std::size_t chunks = 32;
    std::size_t window_frames = 9;
    double keep_ratio = 0.2;
    std::uint64_t seed = 0;
    /// Model shape and schedule; window, sink, sparsity and mode come from the fields above.
    StreamConfig base;
};

/// The stream configuration a bench mode runs with.
StreamConfig bench_config(const BenchRequest& request);

struct BenchReport {
    BenchMode mode = BenchMode::Hybrid;
    StreamConfig config;
    std::size_t chunks = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    std::size_t peak_cached_tokens = 0;
    std::uint64_t evicted_chunks = 0;
    std::vector<double> chunk_ms;
    std::vector<std::uint64_t> score_evaluations;
    std::vector<std::uint64_t> expected_score_evaluations;
    std::vector<std::size_t> cached_tokens;

    /// Every measured count equals its analytic value.
    bool counts_match() const { return score_evaluations == expected_score_evaluations; }
};

BenchReport run_bench(const BenchRequest& request);

/// Runs independent requests on up to `threads` workers; results keep request order.
std::vector<BenchReport> run_benches(const std::vector<BenchRequest>& requests, std::size_t threads);

/// HFT_THREADS, defaulting to 1. UsageError unless it is a positive integer.
std::size_t worker_threads();

/// One summary row per report.
std::string bench_csv(const std::vector<BenchReport>& reports);
/// One row per (report, chunk).
std::string bench_chunks_csv(const std::vector<BenchReport>& reports);
std::string bench_json(const std::vector<BenchReport>& reports);

// ---- generate ----------------------------------------------------------

struct GenerateOutput {
    std::vector<std::filesystem::path> tensors;
    std::filesystem::path manifest;
    std::string config_hash;
};

/// chunk_NNNNN.hft per chunk plus manifest.json. IoError if `out_dir` cannot be written.
GenerateOutput cmd_generate(const StreamConfig& cfg, std::size_t chunks, const std::filesystem::path& out_dir);

// ---- distill -----------------------------------------------------------

struct DistillOutput {
    TrainResult result;
    GaussianWorld world;
    std::filesystem::path trace;
    std::filesystem::path params;
};

/// Writes trace.csv, params.json, generator_A.hft and generator_b.hft.
DistillOutput cmd_distill(const DistillSettings& settings, const std::filesystem::path& out_dir);

// ---- verify ------------------------------------------------------------

/// Library criteria followed by the end-to-end determinism check.
std::vector<verify::Criterion> all_criteria();

}  // namespace hft::app
