// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is 0 only if all pass.

#include <iostream>

#include "hft/app/commands.hpp"

int main() {
    const auto results = hft::verify::run(hft::app::all_criteria(), {}, [](const hft::verify::CriterionResult& r) {
        std::cout << hft::verify::format_line(r) << std::endl;
    });
    std::size_t passed = 0;
    for (const auto& r : results) {
        passed += r.passed;
    }
    std::cout << passed << "/" << results.size() << " acceptance criteria passed" << std::endl;
    return passed == results.size() ? 0 : 1;
}
