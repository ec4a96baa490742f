// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hft/numerics.hpp"

namespace hft {

struct BlockConfig {
    std::size_t b_q = 16;
    std::size_t b_kv = 16;
    /// Fraction of key blocks each query block keeps, in (0, 1].
    double keep_ratio = 0.2;
    /// Key blocks that are active for every query block (sink and self blocks).
    std::vector<std::size_t> forced_kv_blocks;

    /// ContractError on zero block sizes or a keep ratio outside (0, 1].
    void validate() const;
};

/// Per-row quota: max(forced, ceil(keep_ratio * key_blocks)), never above key_blocks.
std::size_t block_quota(std::size_t key_blocks, std::size_t forced, double keep_ratio);

/// Query-block x key-block activity for one head.
class BlockMask {
public:
    BlockMask() = default;
    BlockMask(std::size_t query_blocks, std::size_t key_blocks, bool fill = false);

    static BlockMask dense(std::size_t query_blocks, std::size_t key_blocks) {
        return BlockMask(query_blocks, key_blocks, true);
    }

    std::size_t query_blocks() const { return m_rows; }
    std::size_t key_blocks() const { return m_cols; }

    bool active(std::size_t i, std::size_t j) const { return m_bits[i * m_cols + j] != 0; }
    void set(std::size_t i, std::size_t j, bool on) { m_bits[i * m_cols + j] = on ? 1 : 0; }

    std::size_t active_in_row(std::size_t i) const;
    std::size_t total_active() const;
    /// Ascending key-block indices active in row i.
    std::vector<std::size_t> active_blocks(std::size_t i) const;

    bool operator==(const BlockMask&) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<std::uint8_t> m_bits;
};

/// Appends zero rows so the row count is a multiple of `block`.
Matrix pad_to_block(const Matrix& m, std::size_t block);

/**
 * Pooled block importance A_ij = mean(q block i) . mean(k block j).
 * Token counts must already be block multiples (ShapeError otherwise).
 */
Matrix block_scores(const Matrix& Q, const Matrix& K, const BlockConfig& cfg);

/**
 * Forced blocks first, then the highest remaining scores until the row quota
 * is met. Ties go to the lower key-block index.
 */
BlockMask build_mask(const Matrix& scores, const BlockConfig& cfg);

struct SparseAttentionOptions {
    /// Keys at or beyond this row are padding and never attended.
    std::size_t valid_kv = std::numeric_limits<std::size_t>::max();
    /// Order in which key blocks are visited; empty means ascending.
    std::vector<std::size_t> visit_order;
};

struct SparseAttentionResult {
    Matrix output;
    /// q.k products evaluated: active blocks x b_q x b_kv.
    std::uint64_t score_evaluations = 0;
};

/**
 * Block-sparse attention with online softmax. For every query block, active
 * key blocks are folded in with a running row max, running normalizer and
 * rescaled partial output; inactive blocks are never touched.
 */
SparseAttentionResult sparse_attention(const Matrix& Q, const Matrix& K, const Matrix& V, const BlockMask& mask,
                                       double scale, const BlockConfig& cfg, const SparseAttentionOptions& opts = {});

}  // namespace hft
