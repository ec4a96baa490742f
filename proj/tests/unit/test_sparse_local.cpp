// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hft/error.hpp"
#include "hft/sparse_local.hpp"
#include "hft/verify/oracles.hpp"

using namespace hft;

namespace {

BlockConfig blocks(std::size_t b, double keep, std::vector<std::size_t> forced = {}) {
    BlockConfig cfg;
    cfg.b_q = b;
    cfg.b_kv = b;
    cfg.keep_ratio = keep;
    cfg.forced_kv_blocks = std::move(forced);
    return cfg;
}

BlockMask random_mask(SeededRng& rng, std::size_t tm, std::size_t tn) {
    BlockMask mask(tm, tn);
    for (std::size_t i = 0; i < tm; ++i) {
        mask.set(i, rng.uniform_index(tn), true);
        for (std::size_t j = 0; j < tn; ++j) {
            if (rng.uniform() < 0.4) {
                mask.set(i, j, true);
            }
        }
    }
    return mask;
}

oracle::KeyFilter block_filter(const BlockMask& mask, std::size_t bq, std::size_t bkv) {
    return [&mask, bq, bkv](std::size_t q, std::size_t k) { return mask.active(q / bq, k / bkv); };
}

}  // namespace

TEST_CASE("block quota counts forced blocks inside the budget") {
    CHECK(block_quota(15, 0, 0.2) == 3);
    CHECK(block_quota(15, 6, 0.2) == 6);
    CHECK(block_quota(5, 0, 0.2) == 1);
    CHECK(block_quota(4, 0, 0.5) == 2);
    CHECK(block_quota(7, 0, 1.0) == 7);
    CHECK(block_quota(3, 5, 0.2) == 3);
}

TEST_CASE("block_scores closed forms") {
    const BlockConfig cfg = blocks(4, 1.0);
    SeededRng rng(1);
    const Matrix q = gaussian_matrix(rng, 8, 6);
    Matrix k(12, 6);
    const Matrix base = gaussian_matrix(rng, 4, 6);
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 6; ++c) {
                k(b * 4 + r, c) = base(r, c);
            }
        }
    }
    const Matrix a = block_scores(q, k, cfg);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        CHECK(a(i, 0) == a(i, 1));
        CHECK(a(i, 1) == a(i, 2));
    }

    const Matrix ones(4, 5, 1.0);
    CHECK(block_scores(ones, ones, cfg)(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("block_scores agrees with per-token pooling") {
    SeededRng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t bq = 1 + rng.uniform_index(5);
        const std::size_t bkv = 1 + rng.uniform_index(5);
        BlockConfig cfg;
        cfg.b_q = bq;
        cfg.b_kv = bkv;
        const Matrix q = gaussian_matrix(rng, bq * (1 + rng.uniform_index(6)), 7);
        const Matrix k = gaussian_matrix(rng, bkv * (1 + rng.uniform_index(6)), 7);
        CHECK(max_abs_diff(block_scores(q, k, cfg), oracle::naive_block_scores(q, k, bq, bkv)) < 1e-12);
    }
    CHECK_THROWS_AS(block_scores(Matrix(5, 4), Matrix(8, 4), blocks(4, 1.0)), ShapeError);
    CHECK_THROWS_AS(block_scores(Matrix(4, 4), Matrix(8, 3), blocks(4, 1.0)), ShapeError);
}

TEST_CASE("build_mask selection rules") {
    const Matrix row = Matrix::from_rows({{3, 1, 2, 0}});
    const BlockMask top2 = build_mask(row, blocks(1, 0.5));
    CHECK(top2.active_blocks(0) == std::vector<std::size_t>{0, 2});

    const BlockMask ties = build_mask(Matrix(1, 4, 7.0), blocks(1, 0.5));
    CHECK(ties.active_blocks(0) == std::vector<std::size_t>{0, 1});

    CHECK(build_mask(row, blocks(1, 1.0)) == BlockMask::dense(1, 4));

    // Forced block 3 has the lowest score but still takes one of the two slots.
    const BlockMask forced = build_mask(row, blocks(1, 0.5, {3}));
    CHECK(forced.active_blocks(0) == std::vector<std::size_t>{0, 3});
}

TEST_CASE("mask invariants on random scores") {
    SeededRng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t tm = 1 + rng.uniform_index(8);
        const std::size_t tn = 1 + rng.uniform_index(12);
        std::vector<std::size_t> forced;
        for (std::size_t j = 0; j < tn; ++j) {
            if (rng.uniform() < 0.2) {
                forced.push_back(j);
            }
        }
        const double keep = 0.05 + 0.95 * rng.uniform();
        const BlockConfig cfg = blocks(1, keep, forced);
        const Matrix scores = gaussian_matrix(rng, tm, tn);
        const BlockMask mask = build_mask(scores, cfg);
        const std::size_t quota = block_quota(tn, forced.size(), keep);
        for (std::size_t i = 0; i < tm; ++i) {
            CHECK(mask.active_in_row(i) == quota);
            CHECK(mask.active_in_row(i) >= 1);
            for (std::size_t j : forced) {
                CHECK(mask.active(i, j));
            }
        }
        CHECK(build_mask(scores, cfg) == mask);
    }
}

TEST_CASE("dense mask reproduces softmax attention") {
    SeededRng rng(4);
    const BlockConfig cfg = blocks(4, 1.0);
    const Matrix q = gaussian_matrix(rng, 16, 8);
    const Matrix k = gaussian_matrix(rng, 24, 8);
    const Matrix v = gaussian_matrix(rng, 24, 5);
    const double scale = 1.0 / std::sqrt(8.0);
    const auto res = sparse_attention(q, k, v, BlockMask::dense(4, 6), scale, cfg);
    const Matrix want = matmul(softmax_rows(matmul_transposed(q, k) * scale), v);
    CHECK(max_abs_diff(res.output, want) < 1e-6);
    CHECK(res.score_evaluations == 16u * 24u);
}

TEST_CASE("single active block equals attention restricted to that block") {
    SeededRng rng(5);
    const BlockConfig cfg = blocks(3, 1.0);
    const Matrix q = gaussian_matrix(rng, 6, 4);
    const Matrix k = gaussian_matrix(rng, 12, 4);
    const Matrix v = gaussian_matrix(rng, 12, 4);
    BlockMask mask(2, 4);
    mask.set(0, 2, true);
    mask.set(1, 0, true);
    const auto res = sparse_attention(q, k, v, mask, 0.5, cfg);
    const Matrix top = matmul(softmax_rows(matmul_transposed(q.row_block(0, 3), k.row_block(6, 3)) * 0.5),
                              v.row_block(6, 3));
    const Matrix bottom = matmul(softmax_rows(matmul_transposed(q.row_block(3, 3), k.row_block(0, 3)) * 0.5),
                                 v.row_block(0, 3));
    CHECK(max_abs_diff(res.output.row_block(0, 3), top) < 1e-9);
    CHECK(max_abs_diff(res.output.row_block(3, 3), bottom) < 1e-9);
    CHECK(res.score_evaluations == 2u * 9u);
}

TEST_CASE("masked-dense equivalence, visit order and convex hull on random draws") {
    SeededRng rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t b = 1 + rng.uniform_index(4);
        const std::size_t tm = 1 + rng.uniform_index(8);
        const std::size_t tn = 1 + rng.uniform_index(8);
        const BlockConfig cfg = blocks(b, 1.0);
        const Matrix q = gaussian_matrix(rng, tm * b, 6) * 2.0;
        const Matrix k = gaussian_matrix(rng, tn * b, 6) * 2.0;
        const Matrix v = gaussian_matrix(rng, tn * b, 1);
        const BlockMask mask = random_mask(rng, tm, tn);
        const double scale = 1.0 / std::sqrt(6.0);

        const auto res = sparse_attention(q, k, v, mask, scale, cfg);
        const Matrix want = oracle::naive_attention(q, k, v, scale, block_filter(mask, b, b));
        CHECK(max_abs_diff(res.output, want) < 1e-6);
        CHECK(res.score_evaluations == mask.total_active() * b * b);

        SparseAttentionOptions reversed;
        for (std::size_t j = tn; j-- > 0;) {
            reversed.visit_order.push_back(j);
        }
        CHECK(max_abs_diff(sparse_attention(q, k, v, mask, scale, cfg, reversed).output, res.output) < 1e-9);

        for (std::size_t i = 0; i < tm; ++i) {
            double lo = INFINITY;
            double hi = -INFINITY;
            for (std::size_t j : mask.active_blocks(i)) {
                for (std::size_t r = 0; r < b; ++r) {
                    lo = std::min(lo, v(j * b + r, 0));
                    hi = std::max(hi, v(j * b + r, 0));
                }
            }
            for (std::size_t r = 0; r < b; ++r) {
                const double o = res.output(i * b + r, 0);
                CHECK(o >= lo - 1e-12);
                CHECK(o <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("score evaluation count stays within the keep-ratio budget") {
    SeededRng rng(7);
    const std::size_t b = 2;
    const std::size_t tm = 4;
    const std::size_t tn = 10;
    const BlockConfig cfg = blocks(b, 0.2, {0, 9});
    const Matrix q = gaussian_matrix(rng, tm * b, 4);
    const Matrix k = gaussian_matrix(rng, tn * b, 4);
    const Matrix v = gaussian_matrix(rng, tn * b, 4);
    const BlockMask mask = build_mask(block_scores(q, k, cfg), cfg);
    const auto res = sparse_attention(q, k, v, mask, 0.5, cfg);
    const double dense = static_cast<double>(tm * tn * b * b);
    const double forced = static_cast<double>(tm * 2 * b * b);
    CHECK(res.score_evaluations == mask.total_active() * b * b);
    CHECK(static_cast<double>(res.score_evaluations) <= 0.2 * dense + forced);
}

TEST_CASE("padding keys are never attended") {
    SeededRng rng(8);
    const BlockConfig cfg = blocks(4, 1.0);
    const Matrix q = gaussian_matrix(rng, 4, 4);
    const Matrix k = gaussian_matrix(rng, 6, 4);
    const Matrix v = gaussian_matrix(rng, 6, 3);
    SparseAttentionOptions opts;
    opts.valid_kv = 6;
    const auto res =
        sparse_attention(q, pad_to_block(k, 4), pad_to_block(v, 4), BlockMask::dense(1, 2), 0.5, cfg, opts);
    CHECK(max_abs_diff(res.output, oracle::naive_attention(q, k, v, 0.5)) < 1e-12);
    CHECK(pad_to_block(k, 4).rows() == 8);
}

TEST_CASE("empty mask rows are a contract violation") {
    const BlockConfig cfg = blocks(2, 1.0);
    const Matrix q(2, 2, 1.0);
    const Matrix k(4, 2, 1.0);
    BlockMask mask(1, 2);
    CHECK_THROWS_AS(sparse_attention(q, k, k, mask, 1.0, cfg), ContractError);
    CHECK_THROWS_AS(sparse_attention(q, k, k, BlockMask::dense(2, 2), 1.0, cfg), ShapeError);

    BlockConfig zero = cfg;
    zero.keep_ratio = 0.0;
    CHECK_THROWS_AS(zero.validate(), ContractError);
    // Without validation a zero keep ratio and no forced blocks leave rows empty.
    const BlockMask starved = build_mask(Matrix(1, 2, 1.0), zero);
    CHECK(starved.active_in_row(0) == 0);
    CHECK_THROWS_AS(sparse_attention(q, k, k, starved, 1.0, zero), ContractError);
}
