// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hft/numerics.hpp"

namespace hft {

/**
 * Rotary embedding split into a temporal axis and a spatial axis.
 *
 * Rotation pairs (2k, 2k+1) for k < temporal_pairs follow the temporal index;
 * the remaining spatial_pairs follow the token's spatial index. Only the
 * temporal index is capped, at max_temporal_index.
 */
struct RoPEConfig {
    std::size_t head_dim = 16;
    std::size_t temporal_pairs = 4;
    std::size_t spatial_pairs = 4;
    double base_theta = 10000.0;
    std::int64_t max_temporal_index = 21;

    /// Half of the rotation pairs on each axis (temporal gets the extra one if odd).
    static RoPEConfig half_split(std::size_t head_dim, std::int64_t max_temporal_index = 21);

    /// Throws ContractError when the pair split does not cover head_dim or the cap is < 1.
    void validate() const;
    bool operator==(const RoPEConfig&) const = default;
};

/// How the tokens of one chunk are laid out: frame-major, tokens_per_frame each.
struct FrameLayout {
    std::size_t frames_per_chunk = 3;
    std::size_t tokens_per_frame = 16;

    std::size_t chunk_tokens() const { return frames_per_chunk * tokens_per_frame; }
    bool operator==(const FrameLayout&) const = default;
};

/// min(chunk_pos, max_temporal_index).
std::int64_t temporal_index(std::int64_t chunk_pos, const RoPEConfig& config);

/**
 * Temporal indices of the frames in a chunk whose capped index is `i`:
 * [i - F + 1, ..., i] for F frames, i.e. [i-2, i-1, i] for three frames.
 */
std::vector<std::int64_t> frame_temporal_indices(std::int64_t chunk_t_index, std::size_t frames_per_chunk);

/**
 * Temporal and spatial index of each of `tokens` rows laid out as chunks.
 * Row j sits at position j % chunk_tokens within its chunk, so several
 * chunks stacked on top of each other share the same index pattern.
 */
void chunk_token_positions(std::size_t tokens, std::int64_t chunk_t_index, const FrameLayout& layout,
                           std::vector<std::int64_t>& t_indices, std::vector<std::int64_t>& s_indices);

/// Inverse frequencies base^(-2k / (2 * pairs)) for one axis.
std::vector<double> rope_inverse_frequencies(std::size_t pairs, double base_theta);

/**
 * Rotates every token of `x` (tokens x head_dim) by temporal index `t_index`
 * and its own spatial index. ContractError when t_index exceeds the cap.
 */
Matrix apply_rope(const Matrix& x, std::int64_t t_index, std::span<const std::int64_t> s_indices,
                  const RoPEConfig& config);

/// Per-token temporal indices; each must respect the cap.
Matrix apply_rope(const Matrix& x, std::span<const std::int64_t> t_indices, std::span<const std::int64_t> s_indices,
                  const RoPEConfig& config);

/// Chunk-shaped rotation: frame f of the chunk uses frame_temporal_indices()[f],
/// token j uses spatial index j % tokens_per_frame.
Matrix apply_rope_chunk(const Matrix& x, std::int64_t chunk_t_index, const FrameLayout& layout,
                        const RoPEConfig& config);

/**
 * Precomputed cos/sin tables for chunk rotations, used on the streaming hot
 * path. Results are bit-identical to apply_rope_chunk().
 */
class RopeTable {
public:
    RopeTable(const RoPEConfig& config, const FrameLayout& layout);

    const RoPEConfig& config() const { return m_config; }
    const FrameLayout& layout() const { return m_layout; }

    Matrix rotate_chunk(const Matrix& x, std::int64_t chunk_t_index) const;

private:
    RoPEConfig m_config;
    FrameLayout m_layout;
    std::int64_t m_min_temporal;
    // [temporal index - m_min_temporal][pair]
    std::vector<double> m_temporal_cos;
    std::vector<double> m_temporal_sin;
    // [spatial index][pair]
    std::vector<double> m_spatial_cos;
    std::vector<double> m_spatial_sin;
};

}  // namespace hft
