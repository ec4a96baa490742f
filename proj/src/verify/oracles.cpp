// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/verify/oracles.hpp"

#include <cmath>
#include <limits>

namespace hft::oracle {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(k, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

void rope_token(std::span<double> x, double t_index, double s_index, const RoPEConfig& cfg) {
    auto rotate = [&](std::size_t pair, std::size_t axis_pairs, std::size_t k, double index) {
        const double theta = index / std::pow(cfg.base_theta, static_cast<double>(2 * k) / (2.0 * axis_pairs));
        const double a = x[2 * pair];
        const double b = x[2 * pair + 1];
        x[2 * pair] = a * std::cos(theta) - b * std::sin(theta);
        x[2 * pair + 1] = a * std::sin(theta) + b * std::cos(theta);
    };
    for (std::size_t k = 0; k < cfg.temporal_pairs; ++k) {
        rotate(k, cfg.temporal_pairs, k, t_index);
    }
    for (std::size_t k = 0; k < cfg.spatial_pairs; ++k) {
        rotate(cfg.temporal_pairs + k, cfg.spatial_pairs, k, s_index);
    }
}

Matrix rope_chunk(const Matrix& x, std::int64_t chunk_t, const FrameLayout& layout, const RoPEConfig& cfg) {
    Matrix out = x;
    const std::size_t per_chunk = layout.frames_per_chunk * layout.tokens_per_frame;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::size_t pos = r % per_chunk;
        const std::size_t frame = pos / layout.tokens_per_frame;
        const double t = static_cast<double>(chunk_t) - static_cast<double>(layout.frames_per_chunk - 1 - frame);
        const double s = static_cast<double>(pos % layout.tokens_per_frame);
        rope_token(out.row(r), t, s, cfg);
    }
    return out;
}

double feature(FeatureMap kind, double x) {
    if (kind == FeatureMap::Identity) {
        return x;
    }
    return x > 0.0 ? 1.0 + x : std::exp(x);
}

Matrix naive_attention(const Matrix& Q, const Matrix& K, const Matrix& V, double scale, const KeyFilter& allowed) {
    Matrix out(Q.rows(), V.cols());
    std::vector<double> s(K.rows());
    for (std::size_t i = 0; i < Q.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < K.rows(); ++j) {
            if (allowed && !allowed(i, j)) {
                s[j] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double d = 0.0;
            for (std::size_t c = 0; c < Q.cols(); ++c) {
                d += Q(i, c) * K(j, c);
            }
            s[j] = d * scale;
            m = std::max(m, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < K.rows(); ++j) {
            z += std::exp(s[j] - m);
        }
        for (std::size_t j = 0; j < K.rows(); ++j) {
            const double p = std::exp(s[j] - m) / z;
            for (std::size_t c = 0; c < V.cols(); ++c) {
                out(i, c) += p * V(j, c);
            }
        }
    }
    return out;
}

Matrix naive_block_scores(const Matrix& Q, const Matrix& K, std::size_t b_q, std::size_t b_kv) {
    const std::size_t tm = Q.rows() / b_q;
    const std::size_t tn = K.rows() / b_kv;
    Matrix out(tm, tn);
    for (std::size_t i = 0; i < tm; ++i) {
        for (std::size_t j = 0; j < tn; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < Q.cols(); ++c) {
                double qm = 0.0;
                for (std::size_t r = 0; r < b_q; ++r) {
                    qm += Q(i * b_q + r, c);
                }
                double km = 0.0;
                for (std::size_t r = 0; r < b_kv; ++r) {
                    km += K(j * b_kv + r, c);
                }
                acc += (qm / static_cast<double>(b_q)) * (km / static_cast<double>(b_kv));
            }
            out(i, j) = acc;
        }
    }
    return out;
}

LinearSums linear_state_sums(const std::vector<LayerKV>& evicted, const LinearStateConfig& cfg,
                             std::int64_t rope_index) {
    const std::size_t d = cfg.head_dim;
    LinearSums sums;
    sums.L.assign(cfg.heads, Matrix(d, d));
    sums.H.assign(cfg.heads, std::vector<double>(d, 0.0));
    for (const LayerKV& chunk : evicted) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const Matrix& k = chunk.keys[h];
            const Matrix& v = chunk.values[h];
            Matrix phi(k.rows(), d);
            for (std::size_t r = 0; r < k.rows(); ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    phi(r, c) = feature(cfg.feature_map, k(r, c));
                }
            }
            const Matrix rot = rope_chunk(phi, rope_index, cfg.layout, cfg.rope);
            for (std::size_t r = 0; r < k.rows(); ++r) {
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = 0; b < d; ++b) {
                        sums.L[h](a, b) += rot(r, a) * v(r, b);
                    }
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                double mean = 0.0;
                for (std::size_t r = 0; r < k.rows(); ++r) {
                    mean += phi(r, a);
                }
                sums.H[h][a] += mean / static_cast<double>(k.rows());
            }
        }
    }
    return sums;
}

Matrix linear_history_head(const Matrix& q, const Matrix& L, const std::vector<double>& H,
                           std::int64_t query_rope_index, const LinearStateConfig& cfg) {
    const std::size_t d = cfg.head_dim;
    Matrix phi(q.rows(), d);
    for (std::size_t r = 0; r < q.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            phi(r, c) = feature(cfg.feature_map, q(r, c));
        }
    }
    const Matrix rot = rope_chunk(phi, query_rope_index, cfg.layout, cfg.rope);
    Matrix out(q.rows(), d);
    for (std::size_t r = 0; r < q.rows(); ++r) {
        double denom = cfg.eps_div;
        for (std::size_t a = 0; a < d; ++a) {
            denom += phi(r, a) * H[a];
        }
        for (std::size_t b = 0; b < d; ++b) {
            double num = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                num += rot(r, a) * L(a, b);
            }
            out(r, b) = num / denom;
        }
    }
    return out;
}

Matrix dense_window_attention(const std::vector<Matrix>& q_heads, const LayerKV& self_kv, const RollingCache& cache,
                              std::size_t layer, std::int64_t chunk_index, const RoPEConfig& rope,
                              const FrameLayout& layout) {
    const std::int64_t cap = rope.max_temporal_index;
    const std::int64_t q_pos = chunk_index < cap ? chunk_index : cap;
    std::vector<const ChunkKV*> entries;
    for (const auto& e : cache.sinks()) {
        entries.push_back(&e);
    }
    for (const auto& e : cache.window()) {
        entries.push_back(&e);
    }
    const std::size_t hd = rope.head_dim;
    const std::size_t tokens = q_heads.front().rows();
    Matrix out(tokens, hd * q_heads.size());
    for (std::size_t h = 0; h < q_heads.size(); ++h) {
        std::vector<double> kdata;
        std::vector<double> vdata;
        auto push = [&](const Matrix& k, const Matrix& v, std::int64_t pos) {
            const Matrix rk = rope_chunk(k, pos, layout, rope);
            kdata.insert(kdata.end(), rk.data().begin(), rk.data().end());
            vdata.insert(vdata.end(), v.data().begin(), v.data().end());
        };
        for (const ChunkKV* e : entries) {
            std::int64_t pos = q_pos - (chunk_index - e->chunk_index);
            pos = pos < 0 ? 0 : pos;
            push(e->layers[layer].keys[h], e->layers[layer].values[h], pos);
        }
        push(self_kv.keys[h], self_kv.values[h], q_pos);
        const std::size_t n = kdata.size() / hd;
        const Matrix K(n, hd, std::move(kdata));
        const Matrix V(n, hd, std::move(vdata));
        const Matrix Q = rope_chunk(q_heads[h], q_pos, layout, rope);
        const Matrix o = naive_attention(Q, K, V, 1.0 / std::sqrt(static_cast<double>(hd)));
        for (std::size_t r = 0; r < tokens; ++r) {
            for (std::size_t c = 0; c < hd; ++c) {
                out(r, h * hd + c) = o(r, c);
            }
        }
    }
    return out;
}

}  // namespace hft::oracle
