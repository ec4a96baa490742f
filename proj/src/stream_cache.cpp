// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include "hft/stream_cache.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include <json.hpp>

#include "hft/error.hpp"

namespace hft {

using json = nlohmann::json;

void CacheConfig::validate() const {
    require<ContractError>(capacity_chunks >= 1, "cache capacity must be at least one chunk");
    require<ContractError>(max_temporal_index >= 1, "max_temporal_index must be >= 1");
}

std::int64_t relative_temporal_index(std::int64_t query_chunk, std::int64_t entry_chunk,
                                     std::int64_t max_temporal_index) {
    require<ContractError>(entry_chunk <= query_chunk, "entry chunk ", entry_chunk, " is after query chunk ",
                           query_chunk);
    const std::int64_t query_index = std::min(query_chunk, max_temporal_index);
    return std::max<std::int64_t>(query_index - (query_chunk - entry_chunk), 0);
}

RollingCache::RollingCache(CacheConfig config, std::vector<LinearState> states)
    : m_config(config), m_states(std::move(states)) {
    m_config.validate();
}

std::optional<ChunkKV> RollingCache::append(ChunkKV kv) {
    require<SequenceError>(kv.chunk_index == m_next_index, "expected chunk ", m_next_index, ", got ",
                           kv.chunk_index);
    if (!m_sinks.empty() || !m_window.empty()) {
        const ChunkKV& ref = m_sinks.empty() ? m_window.front() : m_sinks.front();
        require<ShapeError>(kv.layers.size() == ref.layers.size() && kv.tokens() == ref.tokens(),
                            "chunk layout differs from cached chunks");
    }
    ++m_next_index;
    kv.is_sink = kv.chunk_index < static_cast<std::int64_t>(m_config.sink_chunks);
    if (kv.is_sink) {
        m_sinks.push_back(std::move(kv));
        return std::nullopt;
    }
    std::optional<ChunkKV> evicted;
    if (window_full()) {
        evicted = std::move(m_window.front());
        m_window.pop_front();
    }
    m_window.push_back(std::move(kv));
    return evicted;
}

std::optional<ChunkKV> RollingCache::append_and_absorb(ChunkKV kv) {
    require<SequenceError>(kv.chunk_index == m_next_index, "expected chunk ", m_next_index, ", got ",
                           kv.chunk_index);
    const bool is_sink = kv.chunk_index < static_cast<std::int64_t>(m_config.sink_chunks);
    if (!is_sink && window_full() && has_linear_states()) {
        const ChunkKV& oldest = m_window.front();
        require<ShapeError>(oldest.layers.size() == m_states.size(), "cache has ", oldest.layers.size(),
                            " layers but ", m_states.size(), " linear states");
        for (std::size_t l = 0; l < m_states.size(); ++l) {
            m_states[l].absorb(oldest.layers[l], 0);
        }
    }
    return append(std::move(kv));
}

std::vector<VisibleEntry> RollingCache::visible_kv(std::int64_t query_chunk) const {
    std::vector<VisibleEntry> out;
    out.reserve(m_sinks.size() + m_window.size());
    const auto add = [&](const ChunkKV& e) {
        out.push_back({&e, relative_temporal_index(query_chunk, e.chunk_index, m_config.max_temporal_index)});
    };
    std::for_each(m_sinks.begin(), m_sinks.end(), add);
    std::for_each(m_window.begin(), m_window.end(), add);
    return out;
}

std::size_t RollingCache::cached_tokens() const {
    std::size_t n = 0;
    for (const auto& e : m_sinks) {
        n += e.tokens();
    }
    for (const auto& e : m_window) {
        n += e.tokens();
    }
    return n;
}

// Snapshot layout: "HFS1", u32 little-endian manifest length, UTF-8 JSON
// manifest, then one HFT1 record per tensor in manifest "tensors" order.
// Doubles are stored losslessly as pairs of 32-bit words (low word first)
// in the f32 payload; such records carry a trailing dimension of 2.
namespace {

constexpr std::array<char, 4> kSnapshotMagic{'H', 'F', 'S', '1'};

void append_record(std::vector<std::byte>& out, json& names, std::string name, std::vector<std::uint32_t> shape,
                   std::span<const double> values) {
    shape.push_back(2);
    std::vector<float> words;
    words.reserve(values.size() * 2);
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        words.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits & 0xFFFFFFFFu)));
        words.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits >> 32)));
    }
    const auto rec = encode_tensor(shape, words);
    out.insert(out.end(), rec.begin(), rec.end());
    names.push_back(std::move(name));
}

void append_matrix(std::vector<std::byte>& out, json& names, std::string name, const Matrix& m) {
    append_record(out, names, std::move(name),
                  {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, m.data());
}

std::vector<double> decode_doubles(const Tensor& t) {
    require<FormatError>(!t.shape.empty() && t.shape.back() == 2, "snapshot record is not f64-split");
    std::vector<double> values(t.data.size() / 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto lo = std::bit_cast<std::uint32_t>(t.data[2 * i]);
        const auto hi = std::bit_cast<std::uint32_t>(t.data[2 * i + 1]);
        values[i] = std::bit_cast<double>(static_cast<std::uint64_t>(hi) << 32 | lo);
    }
    return values;
}

class RecordReader {
public:
    explicit RecordReader(std::span<const std::byte> bytes) : m_bytes(bytes) {}

    Matrix matrix(std::size_t rows, std::size_t cols) {
        Tensor t = next();
        require<FormatError>(t.shape.size() == 3 && t.shape[0] == rows && t.shape[1] == cols,
                             "snapshot matrix record has unexpected shape");
        return Matrix(rows, cols, decode_doubles(t));
    }

    std::vector<double> vector(std::size_t n) {
        Tensor t = next();
        require<FormatError>(t.shape.size() == 2 && t.shape[0] == n, "snapshot vector record has unexpected shape");
        return decode_doubles(t);
    }

    bool at_end() const { return m_offset == m_bytes.size(); }

private:
    Tensor next() {
        std::size_t consumed = 0;
        Tensor t = decode_tensor(m_bytes.subspan(m_offset), &consumed);
        m_offset += consumed;
        return t;
    }

    std::span<const std::byte> m_bytes;
    std::size_t m_offset = 0;
};

const char* feature_map_name(FeatureMap f) { return f == FeatureMap::Identity ? "identity" : "elu_plus_one"; }

FeatureMap feature_map_from(const std::string& s) {
    if (s == "identity") {
        return FeatureMap::Identity;
    }
    require<FormatError>(s == "elu_plus_one", "unknown feature map '", s, "'");
    return FeatureMap::EluPlusOne;
}

}  // namespace

std::vector<std::byte> RollingCache::snapshot() const {
    std::vector<std::byte> records;
    json names = json::array();
    json manifest;
    manifest["format"] = "hft-rolling-cache";
    manifest["version"] = 1;
    manifest["config"] = {{"capacity_chunks", m_config.capacity_chunks},
                          {"sink_chunks", m_config.sink_chunks},
                          {"max_temporal_index", m_config.max_temporal_index}};
    manifest["next_chunk_index"] = m_next_index;

    json entries = json::array();
    const auto dump_entry = [&](const ChunkKV& e, const char* where) {
        json layer_heads = json::array();
        for (const auto& layer : e.layers) {
            layer_heads.push_back(layer.heads());
        }
        entries.push_back({{"chunk_index", e.chunk_index},
                           {"is_sink", e.is_sink},
                           {"region", where},
                           {"tokens", e.tokens()},
                           {"head_dim", e.layers.empty() || e.layers[0].keys.empty() ? 0 : e.layers[0].keys[0].cols()},
                           {"layer_heads", layer_heads}});
        const std::string prefix = "chunk" + std::to_string(e.chunk_index);
        for (std::size_t l = 0; l < e.layers.size(); ++l) {
            for (std::size_t h = 0; h < e.layers[l].heads(); ++h) {
                const std::string tag = prefix + "/layer" + std::to_string(l) + "/head" + std::to_string(h);
                append_matrix(records, names, tag + "/k", e.layers[l].keys[h]);
                append_matrix(records, names, tag + "/v", e.layers[l].values[h]);
            }
        }
    };
    for (const auto& e : m_sinks) {
        dump_entry(e, "sink");
    }
    for (const auto& e : m_window) {
        dump_entry(e, "window");
    }
    manifest["entries"] = entries;

    json states = json::array();
    for (std::size_t l = 0; l < m_states.size(); ++l) {
        const LinearState& s = m_states[l];
        const auto& c = s.config();
        states.push_back({{"heads", c.heads},
                          {"head_dim", c.head_dim},
                          {"feature_map", feature_map_name(c.feature_map)},
                          {"eps_div", c.eps_div},
                          {"rope",
                           {{"head_dim", c.rope.head_dim},
                            {"temporal_pairs", c.rope.temporal_pairs},
                            {"spatial_pairs", c.rope.spatial_pairs},
                            {"base_theta", c.rope.base_theta},
                            {"max_temporal_index", c.rope.max_temporal_index}}},
                          {"layout",
                           {{"frames_per_chunk", c.layout.frames_per_chunk},
                            {"tokens_per_frame", c.layout.tokens_per_frame}}},
                          {"evicted_tokens", s.evicted_token_count()},
                          {"evicted_chunks", s.evicted_chunk_count()}});
        const std::string tag = "state" + std::to_string(l);
        append_matrix(records, names, tag + "/projection", s.output_projection());
        for (std::size_t h = 0; h < c.heads; ++h) {
            append_matrix(records, names, tag + "/head" + std::to_string(h) + "/L", s.L(h));
            append_record(records, names, tag + "/head" + std::to_string(h) + "/H",
                          {static_cast<std::uint32_t>(c.head_dim)}, s.H(h));
        }
    }
    manifest["linear_states"] = states;
    manifest["tensors"] = names;

    const std::string text = manifest.dump();
    std::vector<std::byte> out;
    out.reserve(8 + text.size() + records.size());
    for (char c : kSnapshotMagic) {
        out.push_back(static_cast<std::byte>(c));
    }
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xFFu));
    }
    for (char c : text) {
        out.push_back(static_cast<std::byte>(c));
    }
    out.insert(out.end(), records.begin(), records.end());
    return out;
}

RollingCache RollingCache::restore(std::span<const std::byte> bytes) {
    try {
        require<FormatError>(bytes.size() >= 8, "snapshot shorter than its header");
        for (std::size_t i = 0; i < kSnapshotMagic.size(); ++i) {
            require<FormatError>(bytes[i] == static_cast<std::byte>(kSnapshotMagic[i]), "bad snapshot magic");
        }
        std::uint32_t len = 0;
        for (int i = 0; i < 4; ++i) {
            len |= static_cast<std::uint32_t>(bytes[4 + static_cast<std::size_t>(i)]) << (8 * i);
        }
        require<FormatError>(bytes.size() >= 8 + static_cast<std::size_t>(len), "snapshot manifest truncated");
        const std::string text(reinterpret_cast<const char*>(bytes.data() + 8), len);
        const json manifest = json::parse(text);
        require<FormatError>(manifest.at("format") == "hft-rolling-cache" && manifest.at("version") == 1,
                             "unsupported snapshot format");

        CacheConfig config;
        config.capacity_chunks = manifest.at("config").at("capacity_chunks").get<std::size_t>();
        config.sink_chunks = manifest.at("config").at("sink_chunks").get<std::size_t>();
        config.max_temporal_index = manifest.at("config").at("max_temporal_index").get<std::int64_t>();

        RecordReader reader(bytes.subspan(8 + len));

        std::vector<ChunkKV> sinks;
        std::deque<ChunkKV> window;
        for (const auto& je : manifest.at("entries")) {
            ChunkKV e;
            e.chunk_index = je.at("chunk_index").get<std::int64_t>();
            e.is_sink = je.at("is_sink").get<bool>();
            const auto tokens = je.at("tokens").get<std::size_t>();
            const auto head_dim = je.at("head_dim").get<std::size_t>();
            for (const auto& heads_json : je.at("layer_heads")) {
                const auto heads = heads_json.get<std::size_t>();
                LayerKV layer;
                for (std::size_t h = 0; h < heads; ++h) {
                    layer.keys.push_back(reader.matrix(tokens, head_dim));
                    layer.values.push_back(reader.matrix(tokens, head_dim));
                }
                e.layers.push_back(std::move(layer));
            }
            if (je.at("region") == "sink") {
                sinks.push_back(std::move(e));
            } else {
                window.push_back(std::move(e));
            }
        }

        std::vector<LinearState> states;
        for (const auto& js : manifest.at("linear_states")) {
            LinearStateConfig c;
            c.heads = js.at("heads").get<std::size_t>();
            c.head_dim = js.at("head_dim").get<std::size_t>();
            c.feature_map = feature_map_from(js.at("feature_map").get<std::string>());
            c.eps_div = js.at("eps_div").get<double>();
            const auto& jr = js.at("rope");
            c.rope.head_dim = jr.at("head_dim").get<std::size_t>();
            c.rope.temporal_pairs = jr.at("temporal_pairs").get<std::size_t>();
            c.rope.spatial_pairs = jr.at("spatial_pairs").get<std::size_t>();
            c.rope.base_theta = jr.at("base_theta").get<double>();
            c.rope.max_temporal_index = jr.at("max_temporal_index").get<std::int64_t>();
            c.layout.frames_per_chunk = js.at("layout").at("frames_per_chunk").get<std::size_t>();
            c.layout.tokens_per_frame = js.at("layout").at("tokens_per_frame").get<std::size_t>();

            Matrix projection = reader.matrix(c.model_dim(), c.model_dim());
            std::vector<Matrix> L;
            std::vector<std::vector<double>> H;
            for (std::size_t h = 0; h < c.heads; ++h) {
                L.push_back(reader.matrix(c.head_dim, c.head_dim));
                H.push_back(reader.vector(c.head_dim));
            }
            LinearState state(c, std::move(projection));
            state.set_accumulators(std::move(L), std::move(H), js.at("evicted_tokens").get<std::uint64_t>(),
                                   js.at("evicted_chunks").get<std::uint64_t>());
            states.push_back(std::move(state));
        }
        require<FormatError>(reader.at_end(), "snapshot has trailing bytes");

        RollingCache cache(config, std::move(states));
        cache.m_sinks = std::move(sinks);
        cache.m_window = std::move(window);
        cache.m_next_index = manifest.at("next_chunk_index").get<std::int64_t>();
        require<FormatError>(cache.m_window.size() <= config.capacity_chunks, "snapshot window exceeds capacity");
        return cache;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("corrupt cache snapshot: ") + e.what());
    }
}

}  // namespace hft
