// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "hft/linear_history.hpp"
#include "hft/numerics.hpp"
#include "hft/rope.hpp"
#include "hft/stream_cache.hpp"

// Slow, longhand reference implementations. Nothing in here calls into the
// attention, rope or linear-state code it is used to check; only Matrix
// storage and the RNG are shared.
namespace hft::oracle {

Matrix naive_matmul(const Matrix& a, const Matrix& b);

/// Rotates one token vector in place: temporal pairs first, then spatial.
void rope_token(std::span<double> x, double t_index, double s_index, const RoPEConfig& cfg);

/// Rotates every row of a chunk-shaped matrix at chunk temporal index `chunk_t`.
Matrix rope_chunk(const Matrix& x, std::int64_t chunk_t, const FrameLayout& layout, const RoPEConfig& cfg);

double feature(FeatureMap kind, double x);

/// allowed(query_row, key_row) decides which keys a query may see.
using KeyFilter = std::function<bool(std::size_t, std::size_t)>;

/// Two-pass per-row softmax attention, one query token at a time.
Matrix naive_attention(const Matrix& Q, const Matrix& K, const Matrix& V, double scale,
                       const KeyFilter& allowed = {});

/// Per-token pooled block scores, computed without any pooling helper.
Matrix naive_block_scores(const Matrix& Q, const Matrix& K, std::size_t b_q, std::size_t b_kv);

/// Batch (L, H) sums over every evicted chunk, each rotated at `rope_index`.
struct LinearSums {
    std::vector<Matrix> L;
    std::vector<std::vector<double>> H;
};
LinearSums linear_state_sums(const std::vector<LayerKV>& evicted, const LinearStateConfig& cfg,
                             std::int64_t rope_index = 0);

/// History term for one head straight from the definition, before projection.
Matrix linear_history_head(const Matrix& q, const Matrix& L, const std::vector<double>& H,
                           std::int64_t query_rope_index, const LinearStateConfig& cfg);

/**
 * Dense softmax attention of one chunk's queries over the cache's sink and
 * window entries plus the chunk itself, heads concatenated. Relative indices
 * are recomputed here from chunk numbers rather than read from the cache.
 */
Matrix dense_window_attention(const std::vector<Matrix>& q_heads, const LayerKV& self_kv, const RollingCache& cache,
                              std::size_t layer, std::int64_t chunk_index, const RoPEConfig& rope,
                              const FrameLayout& layout);

}  // namespace hft::oracle
