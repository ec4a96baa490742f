// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <set>

#include "hft/error.hpp"
#include "hft/stream_cache.hpp"

using namespace hft;

namespace {

constexpr std::size_t kTokens = 6;
constexpr std::size_t kHeadDim = 4;

LinearStateConfig state_config() {
    LinearStateConfig cfg;
    cfg.heads = 1;
    cfg.head_dim = kHeadDim;
    cfg.rope = RoPEConfig::half_split(kHeadDim);
    cfg.layout = FrameLayout{3, 2};
    return cfg;
}

ChunkKV make_chunk(std::int64_t index, std::size_t layers = 2) {
    SeededRng rng(1000 + static_cast<std::uint64_t>(index));
    ChunkKV kv;
    kv.chunk_index = index;
    for (std::size_t l = 0; l < layers; ++l) {
        LayerKV layer;
        layer.keys.push_back(gaussian_matrix(rng, kTokens, kHeadDim));
        layer.values.push_back(gaussian_matrix(rng, kTokens, kHeadDim));
        kv.layers.push_back(std::move(layer));
    }
    return kv;
}

std::vector<LinearState> make_states(std::size_t layers) {
    std::vector<LinearState> states;
    for (std::size_t l = 0; l < layers; ++l) {
        SeededRng rng(50 + l);
        states.emplace_back(state_config(), gaussian_matrix(rng, kHeadDim, kHeadDim));
    }
    return states;
}

std::vector<std::int64_t> window_indices(const RollingCache& cache) {
    std::vector<std::int64_t> out;
    for (const auto& e : cache.window()) {
        out.push_back(e.chunk_index);
    }
    return out;
}

}  // namespace

TEST_CASE("FIFO eviction without sinks") {
    RollingCache cache(CacheConfig{3, 0, 21});
    for (std::int64_t i = 0; i < 3; ++i) {
        CHECK_FALSE(cache.append(make_chunk(i)).has_value());
    }
    const auto evicted = cache.append(make_chunk(3));
    REQUIRE(evicted.has_value());
    CHECK(evicted->chunk_index == 0);
    CHECK(window_indices(cache) == std::vector<std::int64_t>{1, 2, 3});
}

TEST_CASE("sink chunk survives while the window rolls") {
    RollingCache cache(CacheConfig{3, 1, 21});
    std::vector<std::int64_t> evictions;
    for (std::int64_t i = 0; i < 6; ++i) {
        if (auto e = cache.append(make_chunk(i))) {
            evictions.push_back(e->chunk_index);
        }
    }
    // Chunk 0 is pinned; chunks 1..3 fill the window; 4 and 5 push out 1 and 2.
    CHECK(evictions == std::vector<std::int64_t>{1, 2});
    REQUIRE(cache.sinks().size() == 1);
    CHECK(cache.sinks()[0].chunk_index == 0);
    CHECK(cache.sinks()[0].is_sink);
    CHECK(window_indices(cache) == std::vector<std::int64_t>{3, 4, 5});
}

TEST_CASE("out-of-order appends are sequence errors") {
    RollingCache cache(CacheConfig{3, 1, 21});
    cache.append(make_chunk(0));
    CHECK_THROWS_AS(cache.append(make_chunk(2)), SequenceError);
    CHECK_THROWS_AS(cache.append(make_chunk(0)), SequenceError);
    CHECK_NOTHROW(cache.append(make_chunk(1)));
}

TEST_CASE("relative temporal indices") {
    CHECK(relative_temporal_index(0, 0, 21) == 0);
    CHECK(relative_temporal_index(5, 3, 21) == 3);
    CHECK(relative_temporal_index(500, 500, 21) == 21);
    CHECK(relative_temporal_index(500, 497, 21) == 18);
    CHECK(relative_temporal_index(500, 0, 21) == 0);

    RollingCache start(CacheConfig{3, 1, 21});
    start.append(make_chunk(0));
    const auto first = start.visible_kv(0);
    REQUIRE(first.size() == 1);
    CHECK(first[0].relative_index == 0);
}

TEST_CASE("visible indices are capped, ordered and shift-invariant once saturated") {
    RollingCache cache(CacheConfig{3, 1, 21});
    std::vector<std::int64_t> pattern_at_100;
    for (std::int64_t i = 0; i <= 1100; ++i) {
        cache.append(make_chunk(i, 1));
        const auto vis = cache.visible_kv(i);
        std::int64_t prev = -1;
        for (const auto& e : vis) {
            CHECK(e.relative_index <= 21);
            CHECK(e.relative_index >= prev);
            prev = e.relative_index;
        }
        std::vector<std::int64_t> pattern;
        for (const auto& e : vis) {
            pattern.push_back(e.relative_index);
        }
        if (i == 100) {
            pattern_at_100 = pattern;
            CHECK(pattern == std::vector<std::int64_t>{0, 19, 20, 21});
        }
        if (i == 1000) {
            CHECK(pattern == pattern_at_100);
        }
    }
}

TEST_CASE("cached token count follows the memory bound") {
    RollingCache cache(CacheConfig{3, 1, 21});
    for (std::int64_t i = 0; i < 40; ++i) {
        cache.append(make_chunk(i, 1));
        const std::size_t generated_after_sink = static_cast<std::size_t>(i);
        const std::size_t want = (1 + std::min<std::size_t>(generated_after_sink, 3)) * kTokens;
        CHECK(cache.cached_tokens() == want);
    }
}

TEST_CASE("evicted and visible chunks partition the stream") {
    RollingCache cache(CacheConfig{3, 1, 21}, make_states(2));
    std::set<std::int64_t> evicted;
    for (std::int64_t i = 0; i < 25; ++i) {
        if (auto e = cache.append_and_absorb(make_chunk(i))) {
            CHECK(evicted.insert(e->chunk_index).second);
        }
        std::set<std::int64_t> visible;
        for (const auto& v : cache.visible_kv(i)) {
            visible.insert(v.entry->chunk_index);
        }
        std::set<std::int64_t> all = evicted;
        for (auto v : visible) {
            CHECK(all.insert(v).second);
        }
        CHECK(all.size() == static_cast<std::size_t>(i + 1));
        CHECK(cache.state(0).evicted_chunk_count() == evicted.size());
    }
}

TEST_CASE("absorption happens before append and skips the sink") {
    RollingCache cache(CacheConfig{2, 1, 21}, make_states(2));
    for (std::int64_t i = 0; i < 3; ++i) {
        cache.append_and_absorb(make_chunk(i));
    }
    CHECK(cache.state(0).empty());
    cache.append_and_absorb(make_chunk(3));

    LinearState want = make_states(1).front();
    want.absorb(make_chunk(1).layers[0], 0);
    CHECK(cache.state(0) == want);
}

TEST_CASE("snapshot round trip is lossless") {
    RollingCache cache(CacheConfig{3, 1, 21}, make_states(2));
    for (std::int64_t i = 0; i < 10; ++i) {
        cache.append_and_absorb(make_chunk(i));
    }
    const auto bytes = cache.snapshot();
    const RollingCache back = RollingCache::restore(bytes);
    CHECK(back == cache);
    const auto a = cache.visible_kv(10);
    const auto b = back.visible_kv(10);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(*a[i].entry == *b[i].entry);
        CHECK(a[i].relative_index == b[i].relative_index);
    }

    RollingCache resumed = RollingCache::restore(bytes);
    cache.append_and_absorb(make_chunk(10));
    resumed.append_and_absorb(make_chunk(10));
    CHECK(resumed == cache);
}

TEST_CASE("snapshot size does not grow with the stream") {
    RollingCache cache(CacheConfig{3, 1, 21}, make_states(2));
    std::size_t at_10 = 0;
    for (std::int64_t i = 0; i < 100; ++i) {
        cache.append_and_absorb(make_chunk(i));
        if (i == 9) {
            at_10 = cache.snapshot().size();
        }
    }
    const std::size_t at_100 = cache.snapshot().size();
    // Only the decimal chunk indices and counters in the manifest can differ.
    CHECK(at_100 >= at_10);
    CHECK(at_100 - at_10 <= 64);
}

TEST_CASE("corrupt or truncated snapshots are format errors") {
    RollingCache cache(CacheConfig{3, 1, 21}, make_states(2));
    for (std::int64_t i = 0; i < 6; ++i) {
        cache.append_and_absorb(make_chunk(i));
    }
    const auto bytes = cache.snapshot();
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        CHECK_THROWS_AS(RollingCache::restore(std::span(bytes).first(cut)), FormatError);
    }
    auto bad_magic = bytes;
    bad_magic[1] = std::byte{'X'};
    CHECK_THROWS_AS(RollingCache::restore(bad_magic), FormatError);

    auto extra = bytes;
    extra.push_back(std::byte{0});
    CHECK_THROWS_AS(RollingCache::restore(extra), FormatError);
}
