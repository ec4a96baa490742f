// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hft/linear_history.hpp"
#include "hft/numerics.hpp"
#include "hft/rope.hpp"
#include "hft/sparse_local.hpp"
#include "hft/stream_cache.hpp"

namespace hft {

enum class AttentionMode {
    /// Full softmax over every visible key; evicted chunks are dropped.
    Dense,
    /// Block-sparse local attention plus the linear history term.
    Hybrid,
};

const char* to_string(AttentionMode mode);

struct StreamConfig {
    std::size_t frames_per_chunk = 3;
    /// Cached window in frames, not counting sink chunks or the chunk being generated.
    std::size_t window_frames = 9;
    std::size_t sink_chunks = 1;
    std::size_t tokens_per_frame = 16;
    std::size_t model_dim = 32;
    std::size_t heads = 2;
    std::size_t head_dim = 16;
    std::size_t layers = 2;
    double keep_ratio = 0.2;
    std::int64_t max_temporal_index = 21;
    std::vector<double> timesteps{1.0, 0.75, 0.5, 0.25};
    std::uint64_t seed = 0;
    AttentionMode mode = AttentionMode::Hybrid;

    std::size_t chunk_tokens() const { return frames_per_chunk * tokens_per_frame; }
    std::size_t capacity_chunks() const { return window_frames / frames_per_chunk; }

    FrameLayout layout() const { return {frames_per_chunk, tokens_per_frame}; }
    RoPEConfig rope() const { return RoPEConfig::half_split(head_dim, max_temporal_index); }
    CacheConfig cache_config() const { return {capacity_chunks(), sink_chunks, max_temporal_index}; }
    LinearStateConfig linear_config() const;

    /// ContractError naming the first field that breaks an invariant.
    void validate() const;
    bool operator==(const StreamConfig&) const = default;
};

/// Rectified-flow interpolation x_t = (1 - t) x0 + t eps.
struct NoiseSchedule {
    static double alpha(double t) { return 1.0 - t; }
    static double beta(double t) { return t; }
    static Matrix interpolate(const Matrix& x0, const Matrix& eps, double t);
};

struct HybridAttentionResult {
    /// Sparse sliding-window term, heads concatenated (tokens x model_dim).
    Matrix local;
    /// Projected linear-history term; zeros while the state is empty or in Dense mode.
    Matrix history;
    /// local + history.
    Matrix output;
    std::uint64_t score_evaluations = 0;
    std::size_t active_blocks = 0;
    std::size_t key_blocks = 0;
    /// Largest temporal RoPE index handed to any query or key rotation.
    std::int64_t max_rope_index = 0;
};

/**
 * One layer of hybrid attention for the chunk `chunk_index`.
 *
 * Keys are the cache's visible entries followed by the chunk's own keys,
 * each rotated at its relative temporal index. Sink and self blocks are
 * always active; keep_ratio >= 1 or Dense mode skips scoring and uses a full
 * mask. The history term reads cache.state(layer) when the cache carries
 * linear states and the mode is Hybrid.
 */
HybridAttentionResult hybrid_attention(std::span<const Matrix> q_heads, const LayerKV& self_kv,
                                       const RollingCache& cache, std::size_t layer, std::int64_t chunk_index,
                                       const StreamConfig& cfg, const RopeTable& rope);

/// Per-chunk bookkeeping filled in by the denoiser.
struct ChunkStats {
    std::uint64_t score_evaluations = 0;
    std::size_t active_blocks = 0;
    std::int64_t max_rope_index = 0;
};

/**
 * Seeded fixed-weight chunk denoiser: timestep embedding, then per layer an
 * RMS-normed hybrid attention block and a GELU MLP block, both residual,
 * then a final RMS norm and output projection. Every weight matrix is drawn
 * from N(0, 1/fan_in).
 */
class ToyDenoiser {
public:
    explicit ToyDenoiser(StreamConfig config);

    const StreamConfig& config() const { return m_config; }
    const RopeTable& rope_table() const { return m_rope; }

    /// One linear state per layer, each carrying that layer's history projection.
    std::vector<LinearState> make_linear_states() const;

    /// Predicts the clean chunk from x_t. Reads the cache, never mutates it.
    Matrix denoise_chunk(const Matrix& x_t, double t, const RollingCache& cache, std::int64_t chunk_index,
                         ChunkStats* stats = nullptr) const;

    /// Per-layer K and V of the clean chunk, from a forward pass at t = 0.
    ChunkKV cache_kv(const Matrix& x0, const RollingCache& cache, std::int64_t chunk_index,
                     ChunkStats* stats = nullptr) const;

private:
    struct LayerWeights {
        Matrix wq, wk, wv, wo;
        Matrix w1, w2;
        Matrix history_projection;
    };

    Matrix forward(const Matrix& x, double t, const RollingCache& cache, std::int64_t chunk_index,
                   ChunkStats* stats, ChunkKV* kv_out) const;
    Matrix time_embedding(double t) const;

    StreamConfig m_config;
    RopeTable m_rope;
    std::vector<LayerWeights> m_layers;
    Matrix m_time_proj;
    Matrix m_out;
};

struct ChunkRecord {
    std::int64_t chunk_index = 0;
    Matrix latent;
    std::uint64_t score_evaluations = 0;
    std::size_t active_blocks = 0;
    std::int64_t max_rope_index = 0;
    /// Tokens held by the cache after this chunk was appended.
    std::size_t cached_tokens = 0;
    bool evicted = false;
    /// Wall-clock for denoising, caching and appending this chunk.
    std::uint64_t wall_ns = 0;
};

struct StreamResult {
    std::vector<ChunkRecord> chunks;
    std::size_t peak_cached_tokens = 0;
    std::uint64_t evicted_chunks = 0;
};

/// Called after every chunk; the cache reflects the chunk's append.
using StreamObserver = std::function<void(const ChunkRecord&, const RollingCache&)>;

/**
 * Rolling-cache streaming generation: fresh noise per chunk, one denoiser
 * pass per timestep with renoising between passes, the last x0 prediction is
 * emitted, then its K/V are recomputed at t = 0 and appended (evicting into
 * the linear states first when the window is full).
 */
StreamResult generate_stream(const StreamConfig& cfg, std::size_t num_chunks, const StreamObserver& observer = {});

/// Score evaluations one chunk costs under `cfg`, derived from block counts.
std::uint64_t expected_score_evaluations(const StreamConfig& cfg, std::int64_t chunk_index);

/// One head's K/V for one chunk of the full, never-evicted history.
struct HistoryEntry {
    std::int64_t chunk_index = 0;
    Matrix keys;
    Matrix values;
};

/**
 * Plain softmax attention of one head's queries over every history entry
 * (which should include the query chunk itself), with the same capped
 * relative RoPE as the streaming path.
 */
Matrix dense_oracle_attention(const Matrix& q, std::int64_t query_chunk, std::span<const HistoryEntry> history,
                              const RoPEConfig& rope, const FrameLayout& layout);

}  // namespace hft
