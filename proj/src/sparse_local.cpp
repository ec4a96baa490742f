// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/sparse_local.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hft/error.hpp"

namespace hft {

void BlockConfig::validate() const {
    require<ContractError>(b_q > 0 && b_kv > 0, "block sizes must be positive");
    require<ContractError>(keep_ratio > 0.0 && keep_ratio <= 1.0, "keep_ratio ", keep_ratio, " outside (0, 1]");
}

std::size_t block_quota(std::size_t key_blocks, std::size_t forced, double keep_ratio) {
    // The epsilon keeps products like 0.2 * 5 from rounding up to 2.
    const double wanted = std::ceil(keep_ratio * static_cast<double>(key_blocks) - 1e-9);
    const auto by_ratio = static_cast<std::size_t>(std::max(0.0, wanted));
    return std::min(key_blocks, std::max(forced, by_ratio));
}

BlockMask::BlockMask(std::size_t query_blocks, std::size_t key_blocks, bool fill)
    : m_rows(query_blocks), m_cols(key_blocks), m_bits(query_blocks * key_blocks, fill ? 1 : 0) {}

std::size_t BlockMask::active_in_row(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < m_cols; ++j) {
        n += m_bits[i * m_cols + j];
    }
    return n;
}

std::size_t BlockMask::total_active() const {
    return static_cast<std::size_t>(std::count(m_bits.begin(), m_bits.end(), std::uint8_t{1}));
}

std::vector<std::size_t> BlockMask::active_blocks(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < m_cols; ++j) {
        if (active(i, j)) {
            out.push_back(j);
        }
    }
    return out;
}

Matrix pad_to_block(const Matrix& m, std::size_t block) {
    require<ContractError>(block > 0, "block size must be positive");
    const std::size_t rows = (m.rows() + block - 1) / block * block;
    if (rows == m.rows()) {
        return m;
    }
    Matrix out(rows, m.cols());
    std::copy(m.data().begin(), m.data().end(), out.data().begin());
    return out;
}

namespace {

Matrix pool_blocks(const Matrix& x, std::size_t block) {
    const std::size_t blocks = x.rows() / block;
    Matrix pooled(blocks, x.cols());
    for (std::size_t b = 0; b < blocks; ++b) {
        auto dst = pooled.row(b);
        for (std::size_t t = 0; t < block; ++t) {
            auto src = x.row(b * block + t);
            for (std::size_t c = 0; c < x.cols(); ++c) {
                dst[c] += src[c];
            }
        }
        for (double& v : dst) {
            v /= static_cast<double>(block);
        }
    }
    return pooled;
}

}  // namespace

Matrix block_scores(const Matrix& Q, const Matrix& K, const BlockConfig& cfg) {
    require<ContractError>(cfg.b_q > 0 && cfg.b_kv > 0, "block sizes must be positive");
    require<ShapeError>(Q.cols() == K.cols(), "block_scores: Q width ", Q.cols(), " != K width ", K.cols());
    require<ShapeError>(Q.rows() % cfg.b_q == 0, "block_scores: ", Q.rows(), " query tokens not a multiple of b_q ",
                        cfg.b_q);
    require<ShapeError>(K.rows() % cfg.b_kv == 0, "block_scores: ", K.rows(), " key tokens not a multiple of b_kv ",
                        cfg.b_kv);
    return matmul_transposed(pool_blocks(Q, cfg.b_q), pool_blocks(K, cfg.b_kv));
}

BlockMask build_mask(const Matrix& scores, const BlockConfig& cfg) {
    const std::size_t tm = scores.rows();
    const std::size_t tn = scores.cols();
    BlockMask mask(tm, tn);

    std::vector<std::uint8_t> forced(tn, 0);
    for (std::size_t j : cfg.forced_kv_blocks) {
        require<ContractError>(j < tn, "forced key block ", j, " out of ", tn);
        forced[j] = 1;
    }
    const auto forced_count = static_cast<std::size_t>(std::count(forced.begin(), forced.end(), std::uint8_t{1}));
    const std::size_t quota = block_quota(tn, forced_count, cfg.keep_ratio);

    std::vector<std::size_t> order(tn);
    for (std::size_t i = 0; i < tm; ++i) {
        for (std::size_t j = 0; j < tn; ++j) {
            if (forced[j]) {
                mask.set(i, j, true);
            }
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores(i, a) > scores(i, b); });
        std::size_t active = forced_count;
        for (std::size_t j : order) {
            if (active >= quota) {
                break;
            }
            if (!forced[j]) {
                mask.set(i, j, true);
                ++active;
            }
        }
    }
    return mask;
}

SparseAttentionResult sparse_attention(const Matrix& Q, const Matrix& K, const Matrix& V, const BlockMask& mask,
                                       double scale, const BlockConfig& cfg, const SparseAttentionOptions& opts) {
    require<ContractError>(cfg.b_q > 0 && cfg.b_kv > 0, "block sizes must be positive");
    require<ShapeError>(Q.cols() == K.cols(), "sparse_attention: Q width ", Q.cols(), " != K width ", K.cols());
    require<ShapeError>(K.rows() == V.rows(), "sparse_attention: K rows ", K.rows(), " != V rows ", V.rows());
    require<ShapeError>(Q.rows() % cfg.b_q == 0 && K.rows() % cfg.b_kv == 0,
                        "sparse_attention: token counts must be block multiples");
    const std::size_t tm = Q.rows() / cfg.b_q;
    const std::size_t tn = K.rows() / cfg.b_kv;
    require<ShapeError>(mask.query_blocks() == tm && mask.key_blocks() == tn, "sparse_attention: mask is ",
                        mask.query_blocks(), "x", mask.key_blocks(), ", blocks are ", tm, "x", tn);

    std::vector<std::size_t> order = opts.visit_order;
    if (order.empty()) {
        order.resize(tn);
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    require<ContractError>(order.size() == tn, "visit order must list every key block");

    const std::size_t bq = cfg.b_q;
    const std::size_t bkv = cfg.b_kv;
    const std::size_t dv = V.cols();
    const std::size_t valid_kv = std::min(opts.valid_kv, K.rows());
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();

    SparseAttentionResult result;
    result.output = Matrix(Q.rows(), dv);

    std::vector<double> row_max(bq);
    std::vector<double> row_sum(bq);
    std::vector<double> scores(bq * bkv);
    Matrix acc(bq, dv);

    for (std::size_t i = 0; i < tm; ++i) {
        require<ContractError>(mask.active_in_row(i) > 0, "query block ", i, " has no active key blocks");
        std::fill(row_max.begin(), row_max.end(), kNegInf);
        std::fill(row_sum.begin(), row_sum.end(), 0.0);
        std::fill(acc.data().begin(), acc.data().end(), 0.0);

        for (std::size_t j : order) {
            if (!mask.active(i, j)) {
                continue;
            }
            result.score_evaluations += static_cast<std::uint64_t>(bq * bkv);
            for (std::size_t r = 0; r < bq; ++r) {
                auto q = Q.row(i * bq + r);
                for (std::size_t c = 0; c < bkv; ++c) {
                    const std::size_t key = j * bkv + c;
                    double s = kNegInf;
                    if (key < valid_kv) {
                        auto k = K.row(key);
                        s = 0.0;
                        for (std::size_t d = 0; d < q.size(); ++d) {
                            s += q[d] * k[d];
                        }
                        s *= scale;
                    }
                    scores[r * bkv + c] = s;
                }
            }
            for (std::size_t r = 0; r < bq; ++r) {
                double block_max = kNegInf;
                for (std::size_t c = 0; c < bkv; ++c) {
                    block_max = std::max(block_max, scores[r * bkv + c]);
                }
                const double new_max = std::max(row_max[r], block_max);
                if (new_max == kNegInf) {
                    continue;  // every key seen so far is padding
                }
                const double correction = std::exp(row_max[r] - new_max);
                auto o = acc.row(r);
                for (double& v : o) {
                    v *= correction;
                }
                double block_sum = 0.0;
                for (std::size_t c = 0; c < bkv; ++c) {
                    const double p = std::exp(scores[r * bkv + c] - new_max);
                    if (p == 0.0) {
                        continue;
                    }
                    block_sum += p;
                    auto v = V.row(j * bkv + c);
                    for (std::size_t d = 0; d < dv; ++d) {
                        o[d] += p * v[d];
                    }
                }
                row_sum[r] = correction * row_sum[r] + block_sum;
                row_max[r] = new_max;
            }
        }

        for (std::size_t r = 0; r < bq; ++r) {
            require<ContractError>(row_sum[r] > 0.0, "query row ", i * bq + r, " saw no valid keys");
            auto dst = result.output.row(i * bq + r);
            auto src = acc.row(r);
            for (std::size_t d = 0; d < dv; ++d) {
                dst[d] = src[d] / row_sum[r];
            }
        }
    }
    return result;
}

}  // namespace hft
