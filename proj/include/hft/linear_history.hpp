// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hft/numerics.hpp"
#include "hft/rope.hpp"

namespace hft {

/// Keys and values of one attention layer, one matrix per head.
struct LayerKV {
    std::vector<Matrix> keys;
    std::vector<Matrix> values;

    std::size_t heads() const { return keys.size(); }
    std::size_t tokens() const { return keys.empty() ? 0 : keys.front().rows(); }
    bool operator==(const LayerKV&) const = default;
};

/// Positive feature map applied to queries and keys of the linear pathway.
enum class FeatureMap {
    /// elu(x) + 1; strictly positive for every finite input.
    EluPlusOne,
    /// x itself; positive only on positive inputs, kept for closed-form checks.
    Identity,
};

double apply_feature_map(FeatureMap kind, double x);
Matrix apply_feature_map(FeatureMap kind, const Matrix& m);

struct LinearStateConfig {
    std::size_t heads = 2;
    std::size_t head_dim = 16;
    FeatureMap feature_map = FeatureMap::EluPlusOne;
    double eps_div = 1e-6;
    RoPEConfig rope = RoPEConfig::half_split(16);
    FrameLayout layout;

    std::size_t model_dim() const { return heads * head_dim; }
    void validate() const;
    bool operator==(const LinearStateConfig&) const = default;
};

/**
 * Constant-size summary of every token evicted from the rolling cache.
 *
 * Per head, L accumulates RoPE(phi(K))^T V over evicted tokens and H
 * accumulates the per-chunk mean of phi(K). Queries read the state as
 * Linear(RoPE(phi(q)) L / (phi(q) . H + eps)).
 */
class LinearState {
public:
    /// `output_projection` is the model_dim x model_dim Linear applied to the concatenated heads.
    LinearState(LinearStateConfig config, Matrix output_projection);

    const LinearStateConfig& config() const { return m_config; }

    /**
     * Folds one evicted chunk into (L, H). Keys are rotated at temporal index
     * `rope_index` before entering L; H takes the chunk's token mean of phi(K).
     */
    void absorb(const LayerKV& evicted, std::int64_t rope_index = 0);

    /// tokens x model_dim history term; exact zeros while nothing has been evicted.
    Matrix history_output(std::span<const Matrix> query_heads, std::int64_t rope_index_of_query) const;
    /// Same as history_output() without the final projection.
    Matrix history_pre_projection(std::span<const Matrix> query_heads, std::int64_t rope_index_of_query) const;

    const Matrix& L(std::size_t head) const { return m_L[head]; }
    const std::vector<double>& H(std::size_t head) const { return m_H[head]; }
    const Matrix& output_projection() const { return m_projection; }
    std::uint64_t evicted_token_count() const { return m_evicted_tokens; }
    std::uint64_t evicted_chunk_count() const { return m_evicted_chunks; }
    bool empty() const { return m_evicted_tokens == 0; }

    /// Bytes held by the state; independent of how many chunks were absorbed.
    std::size_t byte_size() const;

    /// Restores raw accumulators, used when reading snapshots.
    void set_accumulators(std::vector<Matrix> L, std::vector<std::vector<double>> H, std::uint64_t evicted_tokens,
                          std::uint64_t evicted_chunks);

    bool operator==(const LinearState&) const = default;

private:
    LinearStateConfig m_config;
    Matrix m_projection;
    std::vector<Matrix> m_L;
    std::vector<std::vector<double>> m_H;
    std::uint64_t m_evicted_tokens = 0;
    std::uint64_t m_evicted_chunks = 0;
};

}  // namespace hft
