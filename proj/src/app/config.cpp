// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/app/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "hft/error.hpp"

namespace hft::app {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    require<UsageError>(ec == std::errc() && ptr == last && !text.empty(), "config key '", key, "': cannot parse '",
                        text, "'");
    return value;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        out.push_back(parse_number<double>(key, trim(item)));
    }
    require<UsageError>(!out.empty(), "config key '", key, "' needs at least one value");
    return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void dispatch(const KeyValues& kv, const std::map<std::string, Setter>& setters) {
    for (const auto& [key, value] : kv) {
        const auto it = setters.find(key);
        if (it == setters.end()) {
            std::string known;
            for (const auto& [k, _] : setters) {
                known += (known.empty() ? "" : ", ") + k;
            }
            throw UsageError("unknown config key '" + key + "' (known: " + known + ")");
        }
        it->second(key, value);
    }
}

template <typename T>
Setter set_number(T& field) {
    return [&field](const std::string& k, const std::string& v) { field = parse_number<T>(k, v); };
}

std::string number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string list(const std::vector<double>& v) {
    std::string out;
    for (double x : v) {
        out += (out.empty() ? "" : ",") + number(x);
    }
    return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        const auto eq = body.find('=');
        require<UsageError>(eq != std::string::npos, "config line ", line_no, ": expected key = value");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        require<UsageError>(!key.empty(), "config line ", line_no, ": empty key");
        require<UsageError>(out.emplace(key, value).second, "config line ", line_no, ": duplicate key '", key, "'");
    }
    return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    require<IoError>(static_cast<bool>(in), "cannot read config ", path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

AttentionMode parse_mode(const std::string& text) {
    if (text == "dense") {
        return AttentionMode::Dense;
    }
    if (text == "hybrid") {
        return AttentionMode::Hybrid;
    }
    throw UsageError("attention mode must be dense or hybrid, got '" + text + "'");
}

void apply_config(const KeyValues& kv, StreamConfig& cfg) {
    dispatch(kv, {
                     {"frames_per_chunk", set_number(cfg.frames_per_chunk)},
                     {"window_frames", set_number(cfg.window_frames)},
                     {"sink_chunks", set_number(cfg.sink_chunks)},
                     {"tokens_per_frame", set_number(cfg.tokens_per_frame)},
                     {"model_dim", set_number(cfg.model_dim)},
                     {"heads", set_number(cfg.heads)},
                     {"head_dim", set_number(cfg.head_dim)},
                     {"layers", set_number(cfg.layers)},
                     {"keep_ratio", set_number(cfg.keep_ratio)},
                     {"max_temporal_index", set_number(cfg.max_temporal_index)},
                     {"seed", set_number(cfg.seed)},
                     {"timesteps", [&](const auto& k, const auto& v) { cfg.timesteps = parse_list(k, v); }},
                     {"mode", [&](const auto&, const auto& v) { cfg.mode = parse_mode(v); }},
                 });
}

void apply_config(const KeyValues& kv, DistillSettings& s) {
    DistillConfig& c = s.train;
    dispatch(kv, {
                     {"lambda", set_number(c.lambda)},
                     {"phase_switch", set_number(c.phase_switch_step)},
                     {"generator_steps", set_number(c.generator_steps)},
                     {"generator_update_every", set_number(c.generator_update_every)},
                     {"batch", set_number(c.batch)},
                     {"generator_lr", set_number(c.generator_lr)},
                     {"lr_floor", set_number(c.lr_floor)},
                     {"critic_lr", set_number(c.critic_lr)},
                     {"tau_min", set_number(c.tau_min)},
                     {"tau_max", set_number(c.tau_max)},
                     {"fixture_chunks", set_number(c.fixture_chunks)},
                     {"seed", set_number(c.seed)},
                     {"timesteps", [&](const auto& k, const auto& v) { c.timesteps = parse_list(k, v); }},
                     {"critic",
                      [&](const auto&, const auto& v) {
                          require<UsageError>(v == "fitted" || v == "exact", "critic must be fitted or exact, got '",
                                              v, "'");
                          c.critic = v == "fitted" ? CriticKind::Fitted : CriticKind::Exact;
                      }},
                     {"world_dim", set_number(s.world_dim)},
                     {"world_seed", set_number(s.world_seed)},
                     {"init_scale", set_number(s.init_scale)},
                 });
}

std::string canonical(const StreamConfig& c) {
    std::ostringstream os;
    os << "frames_per_chunk=" << c.frames_per_chunk << '\n'
       << "window_frames=" << c.window_frames << '\n'
       << "sink_chunks=" << c.sink_chunks << '\n'
       << "tokens_per_frame=" << c.tokens_per_frame << '\n'
       << "model_dim=" << c.model_dim << '\n'
       << "heads=" << c.heads << '\n'
       << "head_dim=" << c.head_dim << '\n'
       << "layers=" << c.layers << '\n'
       << "keep_ratio=" << number(c.keep_ratio) << '\n'
       << "max_temporal_index=" << c.max_temporal_index << '\n'
       << "timesteps=" << list(c.timesteps) << '\n'
       << "seed=" << c.seed << '\n'
       << "mode=" << to_string(c.mode) << '\n';
    return os.str();
}

std::string canonical(const DistillSettings& s) {
    const DistillConfig& c = s.train;
    std::ostringstream os;
    os << "lambda=" << number(c.lambda) << '\n'
       << "timesteps=" << list(c.timesteps) << '\n'
       << "phase_switch=" << c.phase_switch_step << '\n'
       << "generator_steps=" << c.generator_steps << '\n'
       << "generator_update_every=" << c.generator_update_every << '\n'
       << "batch=" << c.batch << '\n'
       << "generator_lr=" << number(c.generator_lr) << '\n'
       << "lr_floor=" << number(c.lr_floor) << '\n'
       << "critic_lr=" << number(c.critic_lr) << '\n'
       << "critic=" << (c.critic == CriticKind::Fitted ? "fitted" : "exact") << '\n'
       << "tau_min=" << number(c.tau_min) << '\n'
       << "tau_max=" << number(c.tau_max) << '\n'
       << "fixture_chunks=" << c.fixture_chunks << '\n'
       << "seed=" << c.seed << '\n'
       << "world_dim=" << s.world_dim << '\n'
       << "world_seed=" << s.world_seed << '\n'
       << "init_scale=" << number(s.init_scale) << '\n';
    return os.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const StreamConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(canonical(cfg))));
    return buf;
}

}  // namespace hft::app
