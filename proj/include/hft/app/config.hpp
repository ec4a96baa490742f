// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "hft/distill_lab.hpp"
#include "hft/hybrid_engine.hpp"

namespace hft::app {

/**
 * Config files are plain text, one `key = value` per line. Blank lines and
 * lines starting with `#` are ignored; whitespace around keys and values is
 * trimmed. Lists are comma separated (`timesteps = 1, 0.75, 0.5, 0.25`).
 * A key may appear once.
 */
using KeyValues = std::map<std::string, std::string>;

/// UsageError with the line number on malformed or duplicate lines.
KeyValues parse_key_values(const std::string& text);
/// IoError if the file cannot be read.
KeyValues load_key_values(const std::filesystem::path& path);

/// Distillation run: trainer settings plus the world and starting point.
struct DistillSettings {
    DistillConfig train;
    std::size_t world_dim = 2;
    std::uint64_t world_seed = 0xC0;
    double init_scale = 0.5;

    bool operator==(const DistillSettings&) const = default;
};

/// Applies recognised keys; UsageError naming the key on unknown keys or bad values.
void apply_config(const KeyValues& kv, StreamConfig& cfg);
void apply_config(const KeyValues& kv, DistillSettings& settings);

AttentionMode parse_mode(const std::string& text);

/// Every field, `key=value` per line, in a fixed order.
std::string canonical(const StreamConfig& cfg);
std::string canonical(const DistillSettings& settings);

std::uint64_t fnv1a64(const std::string& bytes);
/// "fnv1a64:" followed by 16 hex digits of the canonical form's hash.
std::string config_hash(const StreamConfig& cfg);

}  // namespace hft::app
