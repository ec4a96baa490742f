// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

// hft: verification suites, attention-mode benchmarks, stream dumps and
// distillation runs. Exit codes: 0 ok, 1 failed check, 2 usage, 3 I/O.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hft/app/commands.hpp"
#include "hft/error.hpp"

namespace fs = std::filesystem;
using namespace hft;
using namespace hft::app;

namespace {

struct Flags {
    std::string mode;
    std::optional<std::size_t> chunks;
    std::optional<std::size_t> window;
    std::optional<double> sparsity;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda;
    std::optional<std::size_t> phase_switch;
    std::string out;
    std::string suite;
    std::string config;
    std::string inject_fault;
};

void write_file(const fs::path& path, const std::string& text) {
    write_file_bytes(path, {reinterpret_cast<const std::byte*>(text.data()), text.size()});
}

KeyValues load(const std::string& path) {
    return path.empty() ? KeyValues{} : load_key_values(path);
}

int run_verify(const Flags& f) {
    verify::FaultInjection faults;
    if (f.inject_fault == "zero_keep_ratio") {
        faults.zero_keep_ratio = true;
    } else if (!f.inject_fault.empty()) {
        throw UsageError("unknown fault '" + f.inject_fault + "' (known: zero_keep_ratio)");
    }
    const auto chosen = verify::select(all_criteria(), f.suite);
    const auto results = verify::run(chosen, faults, [](const verify::CriterionResult& r) {
        std::cout << verify::format_line(r) << std::endl;
    });
    std::size_t failed = 0;
    for (const auto& r : results) {
        failed += !r.passed;
    }
    std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed\n";
    if (!f.out.empty()) {
        fs::create_directories(f.out);
        write_file(fs::path(f.out) / "verify.json", verify::to_json(results) + "\n");
    }
    return failed == 0 ? kExitOk : kExitFailed;
}

int run_bench_cmd(const Flags& f) {
    StreamConfig base;
    apply_config(load(f.config), base);
    std::vector<BenchMode> modes;
    if (f.mode.empty() || f.mode == "all") {
        modes = all_bench_modes();
    } else {
        std::stringstream ss(f.mode);
        for (std::string m; std::getline(ss, m, ',');) {
            modes.push_back(parse_bench_mode(m));
        }
    }
    std::vector<BenchRequest> requests;
    for (BenchMode m : modes) {
        BenchRequest r;
        r.mode = m;
        r.base = base;
        r.chunks = f.chunks.value_or(32);
        r.window_frames = f.window.value_or(9);
        r.keep_ratio = f.sparsity.value_or(base.keep_ratio);
        r.seed = f.seed.value_or(base.seed);
        requests.push_back(r);
    }
    const auto reports = run_benches(requests, worker_threads());
    const std::string csv = bench_csv(reports);
    std::cout << csv;
    if (!f.out.empty()) {
        fs::create_directories(f.out);
        write_file(fs::path(f.out) / "bench.csv", csv);
        write_file(fs::path(f.out) / "bench_chunks.csv", bench_chunks_csv(reports));
        write_file(fs::path(f.out) / "bench.json", bench_json(reports));
    }
    for (const auto& r : reports) {
        if (!r.counts_match()) {
            std::cerr << "score-evaluation counts for " << to_string(r.mode) << " disagree with the formula\n";
            return kExitFailed;
        }
    }
    return kExitOk;
}

int run_generate(const Flags& f) {
    require<UsageError>(!f.out.empty(), "generate needs --out");
    StreamConfig cfg;
    apply_config(load(f.config), cfg);
    if (!f.mode.empty()) {
        cfg.mode = parse_mode(f.mode);
    }
    if (f.window) {
        cfg.window_frames = *f.window;
    }
    if (f.sparsity) {
        cfg.keep_ratio = *f.sparsity;
    }
    if (f.seed) {
        cfg.seed = *f.seed;
    }
    const auto out = cmd_generate(cfg, f.chunks.value_or(4), f.out);
    std::cout << "wrote " << out.tensors.size() << " chunks and " << out.manifest.string() << " ("
              << out.config_hash << ")\n";
    return kExitOk;
}

int run_distill(const Flags& f) {
    require<UsageError>(!f.out.empty(), "distill needs --out");
    DistillSettings s;
    apply_config(load(f.config), s);
    if (f.lambda) {
        s.train.lambda = *f.lambda;
    }
    if (f.phase_switch) {
        s.train.phase_switch_step = *f.phase_switch;
    }
    if (f.seed) {
        s.train.seed = *f.seed;
    }
    const auto out = cmd_distill(s, f.out);
    const TraceRow& last = out.result.trace.back();
    std::printf("%zu steps; |b - mu| = %.4f, |AA^T - cov|_F = %.4f; trace in %s\n", out.result.trace.size(),
                last.mean_error, last.cov_error, out.trace.string().c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid streaming attention toolkit"};
    app.require_subcommand(1);
    Flags f;

    auto* verify = app.add_subcommand("verify", "Run oracle and property suites");
    verify->add_option("--suite", f.suite, "Comma-separated suites to run (default all)");
    verify->add_option("--out", f.out, "Directory for verify.json");
    verify->add_option("--inject-fault", f.inject_fault, "Deliberate defect to prove checks bite")->group("");

    auto* bench = app.add_subcommand("bench", "Per-chunk cost of each attention mode");
    bench->add_option("--mode", f.mode, "dense21, swa, swa_sink, hybrid, a comma list or all (default)");
    bench->add_option("--chunks", f.chunks, "Chunks per stream (default 32)");
    bench->add_option("--window", f.window, "Window in frames for swa, swa_sink and hybrid (default 9)");
    bench->add_option("--sparsity", f.sparsity, "Keep ratio for hybrid (default 0.2)");
    bench->add_option("--seed", f.seed, "Stream seed");
    bench->add_option("--out", f.out, "Directory for bench.csv, bench_chunks.csv and bench.json");
    bench->add_option("--config", f.config, "Stream config file (key = value)");

    auto* generate = app.add_subcommand("generate", "Write streamed latents and a manifest");
    generate->add_option("--config", f.config, "Stream config file (key = value)");
    generate->add_option("--chunks", f.chunks, "Chunks to generate (default 4)");
    generate->add_option("--mode", f.mode, "dense or hybrid");
    generate->add_option("--window", f.window, "Window in frames");
    generate->add_option("--sparsity", f.sparsity, "Keep ratio");
    generate->add_option("--seed", f.seed, "Stream seed");
    generate->add_option("--out", f.out, "Output directory")->required();

    auto* distill = app.add_subcommand("distill", "Distill an affine generator against a Gaussian world");
    distill->add_option("--config", f.config, "Distillation config file (key = value)");
    distill->add_option("--lambda", f.lambda, "Regularizer weight (default 0.05)");
    distill->add_option("--phase-switch", f.phase_switch, "Generator step where hybrid attention starts");
    distill->add_option("--seed", f.seed, "Training seed");
    distill->add_option("--out", f.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*verify) {
            return run_verify(f);
        }
        if (*bench) {
            return run_bench_cmd(f);
        }
        if (*generate) {
            return run_generate(f);
        }
        return run_distill(f);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailed;
    }
}
