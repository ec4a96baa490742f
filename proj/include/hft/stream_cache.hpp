// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "hft/linear_history.hpp"

namespace hft {

/// Per-layer, per-head K (unrotated) and V of one generated chunk.
struct ChunkKV {
    std::int64_t chunk_index = 0;
    bool is_sink = false;
    std::vector<LayerKV> layers;

    std::size_t tokens() const { return layers.empty() ? 0 : layers.front().tokens(); }
    bool operator==(const ChunkKV&) const = default;
};

struct CacheConfig {
    /// Window capacity in chunks (window frames / frames per chunk).
    std::size_t capacity_chunks = 3;
    /// The first `sink_chunks` chunks of a stream are pinned and never evicted.
    std::size_t sink_chunks = 1;
    std::int64_t max_temporal_index = 21;

    void validate() const;
    bool operator==(const CacheConfig&) const = default;
};

/**
 * Capped relative temporal index of a cached chunk as seen from the query
 * chunk: max(min(q, T0) - (q - e), 0). The query itself gets min(q, T0);
 * older entries count down from there and bottom out at 0.
 */
std::int64_t relative_temporal_index(std::int64_t query_chunk, std::int64_t entry_chunk,
                                     std::int64_t max_temporal_index);

struct VisibleEntry {
    const ChunkKV* entry = nullptr;
    std::int64_t relative_index = 0;
};

/**
 * Rolling KV cache: pinned sink chunks plus a FIFO window of at most
 * capacity_chunks entries. Evicted window entries can be folded into the
 * attached per-layer linear states.
 */
class RollingCache {
public:
    explicit RollingCache(CacheConfig config, std::vector<LinearState> states = {});

    const CacheConfig& config() const { return m_config; }

    /**
     * Appends the next chunk; when the window is already full the oldest
     * window entry is popped first and returned. SequenceError unless
     * kv.chunk_index is exactly one past the last appended chunk.
     */
    std::optional<ChunkKV> append(ChunkKV kv);

    /// append(), with the evicted chunk absorbed into the linear states before the new entry lands.
    std::optional<ChunkKV> append_and_absorb(ChunkKV kv);

    /// Sink entries then window entries, each tagged with its relative temporal index.
    std::vector<VisibleEntry> visible_kv(std::int64_t query_chunk) const;

    const std::vector<ChunkKV>& sinks() const { return m_sinks; }
    const std::deque<ChunkKV>& window() const { return m_window; }
    bool window_full() const { return m_window.size() >= m_config.capacity_chunks; }
    std::size_t cached_tokens() const;
    std::int64_t next_chunk_index() const { return m_next_index; }

    bool has_linear_states() const { return !m_states.empty(); }
    const std::vector<LinearState>& states() const { return m_states; }
    const LinearState& state(std::size_t layer) const { return m_states.at(layer); }

    /// Self-describing byte image: manifest plus HFT1 tensor records.
    std::vector<std::byte> snapshot() const;
    /// FormatError on any corruption or truncation.
    static RollingCache restore(std::span<const std::byte> bytes);

    bool operator==(const RollingCache&) const = default;

private:
    CacheConfig m_config;
    std::vector<ChunkKV> m_sinks;
    std::deque<ChunkKV> m_window;
    std::vector<LinearState> m_states;
    std::int64_t m_next_index = 0;
};

}  // namespace hft
