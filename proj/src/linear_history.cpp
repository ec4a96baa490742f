// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/linear_history.hpp"

#include <cmath>

#include "hft/error.hpp"

namespace hft {

double apply_feature_map(FeatureMap kind, double x) {
    switch (kind) {
        case FeatureMap::EluPlusOne:
            return x > 0.0 ? x + 1.0 : std::exp(x);
        case FeatureMap::Identity:
            return x;
    }
    return x;
}

Matrix apply_feature_map(FeatureMap kind, const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) {
        v = apply_feature_map(kind, v);
    }
    return out;
}

void LinearStateConfig::validate() const {
    require<ContractError>(heads > 0 && head_dim > 0, "linear state needs heads and head_dim > 0");
    require<ContractError>(rope.head_dim == head_dim, "linear state RoPE head_dim ", rope.head_dim,
                           " != head_dim ", head_dim);
    require<ContractError>(eps_div > 0.0, "eps_div must be positive");
    rope.validate();
}

LinearState::LinearState(LinearStateConfig config, Matrix output_projection)
    : m_config(std::move(config)), m_projection(std::move(output_projection)) {
    m_config.validate();
    const std::size_t d = m_config.model_dim();
    require<ShapeError>(m_projection.rows() == d && m_projection.cols() == d, "output projection must be ", d, "x",
                        d);
    m_L.assign(m_config.heads, Matrix(m_config.head_dim, m_config.head_dim));
    m_H.assign(m_config.heads, std::vector<double>(m_config.head_dim, 0.0));
}

void LinearState::absorb(const LayerKV& evicted, std::int64_t rope_index) {
    require<ShapeError>(evicted.keys.size() == m_config.heads && evicted.values.size() == m_config.heads,
                        "absorb: expected ", m_config.heads, " heads");
    const std::size_t tokens = evicted.tokens();
    require<ShapeError>(tokens > 0, "absorb: evicted chunk has no tokens");

    std::vector<std::int64_t> t_idx;
    std::vector<std::int64_t> s_idx;
    chunk_token_positions(tokens, rope_index, m_config.layout, t_idx, s_idx);

    for (std::size_t h = 0; h < m_config.heads; ++h) {
        const Matrix& k = evicted.keys[h];
        const Matrix& v = evicted.values[h];
        require<ShapeError>(k.rows() == tokens && v.rows() == tokens && k.cols() == m_config.head_dim &&
                                v.cols() == m_config.head_dim,
                            "absorb: head ", h, " K/V shape mismatch");
        const Matrix phi_k = apply_feature_map(m_config.feature_map, k);
        const Matrix rot_k = apply_rope(phi_k, t_idx, s_idx, m_config.rope);

        Matrix& L = m_L[h];
        for (std::size_t j = 0; j < tokens; ++j) {
            auto kr = rot_k.row(j);
            auto vr = v.row(j);
            for (std::size_t a = 0; a < m_config.head_dim; ++a) {
                auto lrow = L.row(a);
                for (std::size_t b = 0; b < m_config.head_dim; ++b) {
                    lrow[b] += kr[a] * vr[b];
                }
            }
        }

        std::vector<double>& H = m_H[h];
        for (std::size_t a = 0; a < m_config.head_dim; ++a) {
            double sum = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) {
                sum += phi_k(j, a);
            }
            H[a] += sum / static_cast<double>(tokens);
        }
    }
    m_evicted_tokens += tokens;
    m_evicted_chunks += 1;

    for (const auto& L : m_L) {
        require<NumericError>(all_finite(L), "linear state L became non-finite");
    }
}

Matrix LinearState::history_pre_projection(std::span<const Matrix> query_heads,
                                           std::int64_t rope_index_of_query) const {
    require<ShapeError>(query_heads.size() == m_config.heads, "history query: expected ", m_config.heads, " heads");
    const std::size_t tokens = query_heads.front().rows();
    const std::size_t hd = m_config.head_dim;
    Matrix out(tokens, m_config.model_dim());
    if (empty()) {
        return out;
    }

    std::vector<std::int64_t> t_idx;
    std::vector<std::int64_t> s_idx;
    chunk_token_positions(tokens, rope_index_of_query, m_config.layout, t_idx, s_idx);

    for (std::size_t h = 0; h < m_config.heads; ++h) {
        const Matrix& q = query_heads[h];
        require<ShapeError>(q.rows() == tokens && q.cols() == hd, "history query: head ", h, " shape mismatch");
        const Matrix phi_q = apply_feature_map(m_config.feature_map, q);
        const Matrix rot_q = apply_rope(phi_q, t_idx, s_idx, m_config.rope);
        const Matrix numerator = matmul(rot_q, m_L[h]);
        const auto& H = m_H[h];
        for (std::size_t j = 0; j < tokens; ++j) {
            double denom = m_config.eps_div;
            auto pq = phi_q.row(j);
            for (std::size_t a = 0; a < hd; ++a) {
                denom += pq[a] * H[a];
            }
            for (std::size_t c = 0; c < hd; ++c) {
                out(j, h * hd + c) = numerator(j, c) / denom;
            }
        }
    }
    return out;
}

Matrix LinearState::history_output(std::span<const Matrix> query_heads, std::int64_t rope_index_of_query) const {
    if (empty()) {
        require<ShapeError>(query_heads.size() == m_config.heads, "history query: expected ", m_config.heads,
                            " heads");
        return Matrix(query_heads.front().rows(), m_config.model_dim());
    }
    return matmul(history_pre_projection(query_heads, rope_index_of_query), m_projection);
}

std::size_t LinearState::byte_size() const {
    std::size_t bytes = sizeof(m_evicted_tokens) + sizeof(m_evicted_chunks);
    for (const auto& L : m_L) {
        bytes += L.size() * sizeof(double);
    }
    for (const auto& H : m_H) {
        bytes += H.size() * sizeof(double);
    }
    bytes += m_projection.size() * sizeof(double);
    return bytes;
}

void LinearState::set_accumulators(std::vector<Matrix> L, std::vector<std::vector<double>> H,
                                   std::uint64_t evicted_tokens, std::uint64_t evicted_chunks) {
    require<FormatError>(L.size() == m_config.heads && H.size() == m_config.heads, "linear state head count mismatch");
    for (std::size_t h = 0; h < m_config.heads; ++h) {
        require<FormatError>(L[h].rows() == m_config.head_dim && L[h].cols() == m_config.head_dim &&
                                 H[h].size() == m_config.head_dim,
                             "linear state accumulator shape mismatch");
    }
    m_L = std::move(L);
    m_H = std::move(H);
    m_evicted_tokens = evicted_tokens;
    m_evicted_chunks = evicted_chunks;
}

}  // namespace hft
