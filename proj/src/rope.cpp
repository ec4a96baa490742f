// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/rope.hpp"

#include <algorithm>
#include <cmath>

#include "hft/error.hpp"

namespace hft {

namespace {

inline void rotate_pair(std::span<double> row, std::size_t pair, double c, double s) {
    const double x0 = row[2 * pair];
    const double x1 = row[2 * pair + 1];
    row[2 * pair] = x0 * c - x1 * s;
    row[2 * pair + 1] = x0 * s + x1 * c;
}

}  // namespace

RoPEConfig RoPEConfig::half_split(std::size_t head_dim, std::int64_t max_temporal_index) {
    RoPEConfig cfg;
    cfg.head_dim = head_dim;
    const std::size_t pairs = head_dim / 2;
    cfg.temporal_pairs = pairs - pairs / 2;
    cfg.spatial_pairs = pairs / 2;
    cfg.max_temporal_index = max_temporal_index;
    return cfg;
}

void RoPEConfig::validate() const {
    require<ContractError>(2 * (temporal_pairs + spatial_pairs) == head_dim, "RoPE pairs 2*(", temporal_pairs, "+",
                           spatial_pairs, ") != head_dim ", head_dim);
    require<ContractError>(max_temporal_index >= 1, "RoPE max_temporal_index must be >= 1");
    require<ContractError>(base_theta > 1.0, "RoPE base_theta must exceed 1");
}

std::int64_t temporal_index(std::int64_t chunk_pos, const RoPEConfig& config) {
    require<ContractError>(chunk_pos >= 0, "chunk position must be non-negative");
    return std::min(chunk_pos, config.max_temporal_index);
}

std::vector<std::int64_t> frame_temporal_indices(std::int64_t chunk_t_index, std::size_t frames_per_chunk) {
    std::vector<std::int64_t> out(frames_per_chunk);
    for (std::size_t f = 0; f < frames_per_chunk; ++f) {
        out[f] = chunk_t_index - static_cast<std::int64_t>(frames_per_chunk - 1 - f);
    }
    return out;
}

std::vector<double> rope_inverse_frequencies(std::size_t pairs, double base_theta) {
    std::vector<double> inv(pairs);
    const double axis_dim = 2.0 * static_cast<double>(pairs);
    for (std::size_t k = 0; k < pairs; ++k) {
        inv[k] = std::pow(base_theta, -2.0 * static_cast<double>(k) / axis_dim);
    }
    return inv;
}

Matrix apply_rope(const Matrix& x, std::span<const std::int64_t> t_indices, std::span<const std::int64_t> s_indices,
                  const RoPEConfig& config) {
    config.validate();
    require<ShapeError>(x.cols() == config.head_dim, "apply_rope: width ", x.cols(), " != head_dim ",
                        config.head_dim);
    require<ShapeError>(t_indices.size() == x.rows() && s_indices.size() == x.rows(),
                        "apply_rope: need one temporal and one spatial index per token");
    const auto inv_t = rope_inverse_frequencies(config.temporal_pairs, config.base_theta);
    const auto inv_s = rope_inverse_frequencies(config.spatial_pairs, config.base_theta);

    Matrix out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        require<ContractError>(t_indices[r] <= config.max_temporal_index, "temporal index ", t_indices[r],
                               " exceeds cap ", config.max_temporal_index);
        auto row = out.row(r);
        const auto t = static_cast<double>(t_indices[r]);
        for (std::size_t k = 0; k < config.temporal_pairs; ++k) {
            const double angle = t * inv_t[k];
            rotate_pair(row, k, std::cos(angle), std::sin(angle));
        }
        const auto s = static_cast<double>(s_indices[r]);
        for (std::size_t k = 0; k < config.spatial_pairs; ++k) {
            const double angle = s * inv_s[k];
            rotate_pair(row, config.temporal_pairs + k, std::cos(angle), std::sin(angle));
        }
    }
    return out;
}

Matrix apply_rope(const Matrix& x, std::int64_t t_index, std::span<const std::int64_t> s_indices,
                  const RoPEConfig& config) {
    std::vector<std::int64_t> t(x.rows(), t_index);
    return apply_rope(x, t, s_indices, config);
}

void chunk_token_positions(std::size_t tokens, std::int64_t chunk_t_index, const FrameLayout& layout,
                           std::vector<std::int64_t>& t_indices, std::vector<std::int64_t>& s_indices) {
    const auto frames = frame_temporal_indices(chunk_t_index, layout.frames_per_chunk);
    const std::size_t chunk = layout.chunk_tokens();
    t_indices.resize(tokens);
    s_indices.resize(tokens);
    for (std::size_t j = 0; j < tokens; ++j) {
        const std::size_t in_chunk = j % chunk;
        t_indices[j] = frames[in_chunk / layout.tokens_per_frame];
        s_indices[j] = static_cast<std::int64_t>(in_chunk % layout.tokens_per_frame);
    }
}

Matrix apply_rope_chunk(const Matrix& x, std::int64_t chunk_t_index, const FrameLayout& layout,
                        const RoPEConfig& config) {
    require<ShapeError>(x.rows() == layout.chunk_tokens(), "apply_rope_chunk: ", x.rows(), " tokens, layout has ",
                        layout.chunk_tokens());
    std::vector<std::int64_t> t;
    std::vector<std::int64_t> s;
    chunk_token_positions(x.rows(), chunk_t_index, layout, t, s);
    return apply_rope(x, t, s, config);
}

RopeTable::RopeTable(const RoPEConfig& config, const FrameLayout& layout)
    : m_config(config),
      m_layout(layout),
      m_min_temporal(-static_cast<std::int64_t>(layout.frames_per_chunk) + 1) {
    m_config.validate();
    const auto inv_t = rope_inverse_frequencies(config.temporal_pairs, config.base_theta);
    const auto inv_s = rope_inverse_frequencies(config.spatial_pairs, config.base_theta);

    const auto t_count = static_cast<std::size_t>(config.max_temporal_index - m_min_temporal + 1);
    m_temporal_cos.resize(t_count * config.temporal_pairs);
    m_temporal_sin.resize(t_count * config.temporal_pairs);
    for (std::size_t i = 0; i < t_count; ++i) {
        const auto t = static_cast<double>(m_min_temporal + static_cast<std::int64_t>(i));
        for (std::size_t k = 0; k < config.temporal_pairs; ++k) {
            const double angle = t * inv_t[k];
            m_temporal_cos[i * config.temporal_pairs + k] = std::cos(angle);
            m_temporal_sin[i * config.temporal_pairs + k] = std::sin(angle);
        }
    }
    m_spatial_cos.resize(layout.tokens_per_frame * config.spatial_pairs);
    m_spatial_sin.resize(layout.tokens_per_frame * config.spatial_pairs);
    for (std::size_t j = 0; j < layout.tokens_per_frame; ++j) {
        const auto s = static_cast<double>(j);
        for (std::size_t k = 0; k < config.spatial_pairs; ++k) {
            const double angle = s * inv_s[k];
            m_spatial_cos[j * config.spatial_pairs + k] = std::cos(angle);
            m_spatial_sin[j * config.spatial_pairs + k] = std::sin(angle);
        }
    }
}

Matrix RopeTable::rotate_chunk(const Matrix& x, std::int64_t chunk_t_index) const {
    require<ShapeError>(x.rows() == m_layout.chunk_tokens() && x.cols() == m_config.head_dim,
                        "RopeTable::rotate_chunk shape mismatch");
    require<ContractError>(chunk_t_index <= m_config.max_temporal_index, "temporal index ", chunk_t_index,
                           " exceeds cap ", m_config.max_temporal_index);
    require<ContractError>(chunk_t_index >= 0, "chunk temporal index must be non-negative");
    const std::size_t tp = m_config.temporal_pairs;
    const std::size_t sp = m_config.spatial_pairs;
    const auto frames = frame_temporal_indices(chunk_t_index, m_layout.frames_per_chunk);

    Matrix out = x;
    for (std::size_t j = 0; j < x.rows(); ++j) {
        auto row = out.row(j);
        const auto ti = static_cast<std::size_t>(frames[j / m_layout.tokens_per_frame] - m_min_temporal);
        for (std::size_t k = 0; k < tp; ++k) {
            rotate_pair(row, k, m_temporal_cos[ti * tp + k], m_temporal_sin[ti * tp + k]);
        }
        const std::size_t si = j % m_layout.tokens_per_frame;
        for (std::size_t k = 0; k < sp; ++k) {
            rotate_pair(row, tp + k, m_spatial_cos[si * sp + k], m_spatial_sin[si * sp + k]);
        }
    }
    return out;
}

}  // namespace hft
