// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/hybrid_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "hft/error.hpp"

namespace hft {

namespace {

// Noise draws use their own stream so changing the weight layout never
// shifts the sampled noise.
constexpr std::uint64_t kNoiseStream = 0x6E6F6973655F7631ULL;

void rms_norm_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double ms = 0.0;
        for (double v : row) {
            ms += v * v;
        }
        const double inv = 1.0 / std::sqrt(ms / static_cast<double>(row.size()) + 1e-6);
        for (double& v : row) {
            v *= inv;
        }
    }
}

double gelu(double x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Matrix scaled_gaussian(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m = gaussian_matrix(rng, rows, cols);
    m *= scale;
    return m;
}

void copy_rows(Matrix& dst, std::size_t first_row, const Matrix& src) {
    std::copy(src.data().begin(), src.data().end(), dst.data().begin() + first_row * dst.cols());
}

std::vector<Matrix> split_heads(const Matrix& m, std::size_t heads, std::size_t head_dim) {
    std::vector<Matrix> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        out.push_back(m.col_block(h * head_dim, head_dim));
    }
    return out;
}

}  // namespace

const char* to_string(AttentionMode mode) {
    return mode == AttentionMode::Dense ? "dense" : "hybrid";
}

LinearStateConfig StreamConfig::linear_config() const {
    LinearStateConfig c;
    c.heads = heads;
    c.head_dim = head_dim;
    c.rope = rope();
    c.layout = layout();
    return c;
}

void StreamConfig::validate() const {
    require<ContractError>(frames_per_chunk > 0, "frames_per_chunk must be positive");
    require<ContractError>(tokens_per_frame > 0, "tokens_per_frame must be positive");
    require<ContractError>(heads > 0 && head_dim > 0 && layers > 0, "heads, head_dim and layers must be positive");
    require<ContractError>(head_dim % 2 == 0, "head_dim must be even, got ", head_dim);
    require<ContractError>(model_dim == heads * head_dim, "model_dim ", model_dim, " != heads * head_dim ",
                           heads * head_dim);
    require<ContractError>(window_frames % frames_per_chunk == 0, "window_frames ", window_frames,
                           " is not a multiple of frames_per_chunk ", frames_per_chunk);
    require<ContractError>(capacity_chunks() >= 1, "window must hold at least one chunk");
    require<ContractError>(keep_ratio > 0.0 && keep_ratio <= 1.0, "keep_ratio ", keep_ratio, " outside (0, 1]");
    require<ContractError>(max_temporal_index >= 1, "max_temporal_index must be >= 1");
    require<ContractError>(!timesteps.empty(), "timesteps must not be empty");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        require<ContractError>(timesteps[i] > 0.0 && timesteps[i] <= 1.0, "timestep ", timesteps[i],
                               " outside (0, 1]");
        require<ContractError>(i == 0 || timesteps[i] < timesteps[i - 1], "timesteps must be strictly descending");
    }
}

Matrix NoiseSchedule::interpolate(const Matrix& x0, const Matrix& eps, double t) {
    require<ShapeError>(x0.rows() == eps.rows() && x0.cols() == eps.cols(), "interpolate: shape mismatch");
    Matrix out(x0.rows(), x0.cols());
    const double a = alpha(t);
    const double b = beta(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
    }
    return out;
}

HybridAttentionResult hybrid_attention(std::span<const Matrix> q_heads, const LayerKV& self_kv,
                                       const RollingCache& cache, std::size_t layer, std::int64_t chunk_index,
                                       const StreamConfig& cfg, const RopeTable& rope) {
    const std::size_t tokens = cfg.chunk_tokens();
    const std::size_t hd = cfg.head_dim;
    const std::size_t fpc = cfg.frames_per_chunk;
    require<ShapeError>(q_heads.size() == cfg.heads && self_kv.heads() == cfg.heads, "hybrid_attention: expected ",
                        cfg.heads, " heads");
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        require<ShapeError>(q_heads[h].rows() == tokens && q_heads[h].cols() == hd &&
                                self_kv.keys[h].rows() == tokens && self_kv.values[h].rows() == tokens,
                            "hybrid_attention: head ", h, " is not one chunk of ", tokens, " x ", hd);
    }

    const auto visible = cache.visible_kv(chunk_index);
    const std::int64_t q_index = temporal_index(chunk_index, rope.config());
    const std::size_t entries = visible.size() + 1;
    const std::size_t key_tokens = entries * tokens;

    BlockConfig blocks;
    blocks.b_q = cfg.tokens_per_frame;
    blocks.b_kv = cfg.tokens_per_frame;
    blocks.keep_ratio = cfg.keep_ratio;
    const std::size_t tm = tokens / blocks.b_q;
    const std::size_t tn = key_tokens / blocks.b_kv;
    for (std::size_t e = 0; e < visible.size(); ++e) {
        if (visible[e].entry->is_sink) {
            for (std::size_t f = 0; f < fpc; ++f) {
                blocks.forced_kv_blocks.push_back(e * fpc + f);
            }
        }
    }
    for (std::size_t f = 0; f < fpc; ++f) {
        blocks.forced_kv_blocks.push_back(tn - fpc + f);
    }
    const bool dense = cfg.mode == AttentionMode::Dense || cfg.keep_ratio >= 1.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    HybridAttentionResult result;
    result.local = Matrix(tokens, cfg.model_dim);
    result.key_blocks = tn;
    result.max_rope_index = q_index;

    Matrix keys(key_tokens, hd);
    Matrix values(key_tokens, hd);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        for (std::size_t e = 0; e < visible.size(); ++e) {
            const LayerKV& kv = visible[e].entry->layers.at(layer);
            copy_rows(keys, e * tokens, rope.rotate_chunk(kv.keys[h], visible[e].relative_index));
            copy_rows(values, e * tokens, kv.values[h]);
            result.max_rope_index = std::max(result.max_rope_index, visible[e].relative_index);
        }
        copy_rows(keys, visible.size() * tokens, rope.rotate_chunk(self_kv.keys[h], q_index));
        copy_rows(values, visible.size() * tokens, self_kv.values[h]);

        const Matrix q = rope.rotate_chunk(q_heads[h], q_index);
        const BlockMask mask = dense ? BlockMask::dense(tm, tn) : build_mask(block_scores(q, keys, blocks), blocks);
        const auto attn = sparse_attention(q, keys, values, mask, scale, blocks);
        result.local.set_col_block(h * hd, attn.output);
        result.score_evaluations += attn.score_evaluations;
        result.active_blocks += mask.total_active();
    }

    if (cfg.mode == AttentionMode::Hybrid && cache.has_linear_states()) {
        result.history = cache.state(layer).history_output(q_heads, q_index);
    } else {
        result.history = Matrix(tokens, cfg.model_dim);
    }
    result.output = result.local + result.history;
    return result;
}

ToyDenoiser::ToyDenoiser(StreamConfig config)
    : m_config(std::move(config)), m_rope(m_config.rope(), m_config.layout()) {
    m_config.validate();
    const std::size_t d = m_config.model_dim;
    const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_2d = 1.0 / std::sqrt(static_cast<double>(2 * d));
    SeededRng rng(m_config.seed);
    for (std::size_t l = 0; l < m_config.layers; ++l) {
        LayerWeights w;
        w.wq = scaled_gaussian(rng, d, d, s_d);
        w.wk = scaled_gaussian(rng, d, d, s_d);
        w.wv = scaled_gaussian(rng, d, d, s_d);
        w.wo = scaled_gaussian(rng, d, d, s_d);
        w.w1 = scaled_gaussian(rng, d, 2 * d, s_d);
        w.w2 = scaled_gaussian(rng, 2 * d, d, s_2d);
        // L sums over tokens while H sums per-chunk means, so the raw history
        // term runs about chunk_tokens times larger than a softmax average.
        w.history_projection = scaled_gaussian(rng, d, d, s_d / static_cast<double>(m_config.chunk_tokens()));
        m_layers.push_back(std::move(w));
    }
    m_time_proj = scaled_gaussian(rng, d, d, s_d);
    m_out = scaled_gaussian(rng, d, d, s_d);
}

std::vector<LinearState> ToyDenoiser::make_linear_states() const {
    std::vector<LinearState> states;
    states.reserve(m_layers.size());
    for (const auto& w : m_layers) {
        states.emplace_back(m_config.linear_config(), w.history_projection);
    }
    return states;
}

Matrix ToyDenoiser::time_embedding(double t) const {
    const std::size_t d = m_config.model_dim;
    const std::size_t half = d / 2;
    Matrix e(1, d);
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
        e(0, k) = std::sin(1000.0 * t * freq);
        e(0, half + k) = std::cos(1000.0 * t * freq);
    }
    return matmul(e, m_time_proj);
}

Matrix ToyDenoiser::forward(const Matrix& x, double t, const RollingCache& cache, std::int64_t chunk_index,
                            ChunkStats* stats, ChunkKV* kv_out) const {
    const std::size_t d = m_config.model_dim;
    require<ShapeError>(x.rows() == m_config.chunk_tokens() && x.cols() == d, "denoiser input is ", x.rows(), "x",
                        x.cols(), ", expected ", m_config.chunk_tokens(), "x", d);
    require<SequenceError>(chunk_index == cache.next_chunk_index(), "denoising chunk ", chunk_index,
                           " but the cache expects ", cache.next_chunk_index());

    Matrix h = x;
    const Matrix temb = time_embedding(t);
    for (std::size_t r = 0; r < h.rows(); ++r) {
        auto row = h.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            row[c] += temb(0, c);
        }
    }

    for (std::size_t l = 0; l < m_layers.size(); ++l) {
        const LayerWeights& w = m_layers[l];
        Matrix a = h;
        rms_norm_rows(a);
        const auto q = split_heads(matmul(a, w.wq), m_config.heads, m_config.head_dim);
        LayerKV self;
        self.keys = split_heads(matmul(a, w.wk), m_config.heads, m_config.head_dim);
        self.values = split_heads(matmul(a, w.wv), m_config.heads, m_config.head_dim);

        const auto attn = hybrid_attention(q, self, cache, l, chunk_index, m_config, m_rope);
        h += matmul(attn.output, w.wo);
        if (stats != nullptr) {
            stats->score_evaluations += attn.score_evaluations;
            stats->active_blocks += attn.active_blocks;
            stats->max_rope_index = std::max(stats->max_rope_index, attn.max_rope_index);
        }
        if (kv_out != nullptr) {
            kv_out->layers.push_back(std::move(self));
        }

        Matrix m = h;
        rms_norm_rows(m);
        Matrix hidden = matmul(m, w.w1);
        for (double& v : hidden.data()) {
            v = gelu(v);
        }
        h += matmul(hidden, w.w2);
    }
    rms_norm_rows(h);
    return matmul(h, m_out);
}

Matrix ToyDenoiser::denoise_chunk(const Matrix& x_t, double t, const RollingCache& cache, std::int64_t chunk_index,
                                  ChunkStats* stats) const {
    return forward(x_t, t, cache, chunk_index, stats, nullptr);
}

ChunkKV ToyDenoiser::cache_kv(const Matrix& x0, const RollingCache& cache, std::int64_t chunk_index,
                              ChunkStats* stats) const {
    ChunkKV kv;
    kv.chunk_index = chunk_index;
    forward(x0, 0.0, cache, chunk_index, stats, &kv);
    return kv;
}

StreamResult generate_stream(const StreamConfig& cfg, std::size_t num_chunks, const StreamObserver& observer) {
    require<ContractError>(num_chunks >= 1, "generate_stream needs at least one chunk");
    const ToyDenoiser model(cfg);
    RollingCache cache(cfg.cache_config(),
                       cfg.mode == AttentionMode::Hybrid ? model.make_linear_states() : std::vector<LinearState>{});
    SeededRng noise(cfg.seed ^ kNoiseStream);
    const std::size_t tokens = cfg.chunk_tokens();
    const auto& ts = cfg.timesteps;

    StreamResult result;
    result.chunks.reserve(num_chunks);
    for (std::size_t i = 0; i < num_chunks; ++i) {
        const auto index = static_cast<std::int64_t>(i);
        const auto start = std::chrono::steady_clock::now();

        ChunkStats stats;
        Matrix x = gaussian_matrix(noise, tokens, cfg.model_dim);
        Matrix x0;
        for (std::size_t j = 0; j < ts.size(); ++j) {
            x0 = model.denoise_chunk(x, ts[j], cache, index, &stats);
            if (j + 1 < ts.size()) {
                x = NoiseSchedule::interpolate(x0, gaussian_matrix(noise, tokens, cfg.model_dim), ts[j + 1]);
            }
        }
        ChunkKV kv = model.cache_kv(x0, cache, index, &stats);
        const bool evicted = cache.append_and_absorb(std::move(kv)).has_value();

        const auto elapsed = std::chrono::steady_clock::now() - start;
        ChunkRecord rec;
        rec.chunk_index = index;
        rec.latent = std::move(x0);
        rec.score_evaluations = stats.score_evaluations;
        rec.active_blocks = stats.active_blocks;
        rec.max_rope_index = stats.max_rope_index;
        rec.cached_tokens = cache.cached_tokens();
        rec.evicted = evicted;
        rec.wall_ns = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed).count());

        result.peak_cached_tokens = std::max(result.peak_cached_tokens, rec.cached_tokens);
        result.evicted_chunks += evicted ? 1 : 0;
        if (observer) {
            observer(rec, cache);
        }
        result.chunks.push_back(std::move(rec));
    }
    return result;
}

std::uint64_t expected_score_evaluations(const StreamConfig& cfg, std::int64_t chunk_index) {
    const auto i = static_cast<std::size_t>(chunk_index);
    const std::size_t sinks = std::min(i, cfg.sink_chunks);
    const std::size_t window = std::min(i - sinks, cfg.capacity_chunks());
    const std::size_t fpc = cfg.frames_per_chunk;
    const std::size_t tm = fpc;
    const std::size_t tn = (sinks + window + 1) * fpc;
    const bool dense = cfg.mode == AttentionMode::Dense || cfg.keep_ratio >= 1.0;
    const std::size_t per_row = dense ? tn : block_quota(tn, (sinks + 1) * fpc, cfg.keep_ratio);
    const std::size_t block = cfg.tokens_per_frame * cfg.tokens_per_frame;
    const std::size_t passes = cfg.timesteps.size() + 1;
    return static_cast<std::uint64_t>(tm * per_row * block * cfg.heads * cfg.layers * passes);
}

Matrix dense_oracle_attention(const Matrix& q, std::int64_t query_chunk, std::span<const HistoryEntry> history,
                              const RoPEConfig& rope, const FrameLayout& layout) {
    require<ContractError>(!history.empty(), "dense oracle needs at least one history entry");
    std::vector<Matrix> keys;
    std::vector<Matrix> values;
    std::vector<std::int64_t> t_idx;
    std::vector<std::int64_t> s_idx;
    for (const auto& e : history) {
        const std::int64_t rel = relative_temporal_index(query_chunk, e.chunk_index, rope.max_temporal_index);
        chunk_token_positions(e.keys.rows(), rel, layout, t_idx, s_idx);
        keys.push_back(apply_rope(e.keys, t_idx, s_idx, rope));
        values.push_back(e.values);
    }
    chunk_token_positions(q.rows(), std::min(query_chunk, rope.max_temporal_index), layout, t_idx, s_idx);
    const Matrix qr = apply_rope(q, t_idx, s_idx, rope);
    const Matrix k = vstack(keys);
    const Matrix v = vstack(values);
    Matrix scores = matmul_transposed(qr, k);
    scores *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return matmul(softmax_rows(scores), v);
}

}  // namespace hft
