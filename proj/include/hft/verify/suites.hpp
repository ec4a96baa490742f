// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

namespace hft::verify {

/// Deliberate defects a caller can switch on to prove a check bites.
struct FaultInjection {
    /// Zero keep ratio written into the stream config after validation.
    bool zero_keep_ratio = false;
};

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    std::string suite;
    std::string name;
    /// Wall-clock limit in seconds; exceeding it fails the criterion.
    double budget_seconds = 10.0;
    std::function<Outcome(const FaultInjection&)> run;
};

struct CriterionResult {
    std::string suite;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// The oracle and property criteria, in a fixed order.
std::vector<Criterion> library_criteria();

/// Names accepted by `select`, in order of first appearance.
std::vector<std::string> suite_names(const std::vector<Criterion>& all);

/// Keeps criteria whose suite is in the comma-separated `filter` ("" or "all" keeps everything).
/// UsageError on an unknown suite name.
std::vector<Criterion> select(const std::vector<Criterion>& all, const std::string& filter);

/// Runs each criterion, turning exceptions and budget overruns into failures.
std::vector<CriterionResult> run(const std::vector<Criterion>& criteria, const FaultInjection& faults = {},
                                 const std::function<void(const CriterionResult&)>& on_result = {});

/// "PASS suite/name (1.23 s): detail"
std::string format_line(const CriterionResult& r);
std::string to_json(const std::vector<CriterionResult>& results);

}  // namespace hft::verify
