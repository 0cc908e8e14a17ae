// Copyright 2026 the coldboot authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>
#include <latch>
#include <thread>

#include "coldboot/imageloader.hpp"
#include "support.hpp"

using namespace coldboot;

namespace {

constexpr uint64_t kBs = 4096;

// A registry plus tracker, and a helper to build images into the registry.
struct Cluster {
  cbtest::TempDir registry_dir;
  BlockStore registry{registry_dir.path()};
  BlockServer registry_server{"127.0.0.1", BlockServer::store_lookup(registry)};
  TrackerServer tracker;

  BlockManifest make_image(const std::string& image_id, const cbtest::TreeSpec& tree) {
    cbtest::TempDir src;
    cbtest::write_tree(src.path(), tree);
    LayeredImageSpec spec;
    spec.image_id = image_id;
    spec.layers.push_back({src.path(), {}});
    return registry.build_image(spec, kBs);
  }

  NodeAgent::Options agent_options(uint32_t node_id, const fs::path& cache_dir,
                                   uint64_t seed = 7) {
    NodeAgent::Options opt;
    opt.node_id = node_id;
    opt.cache_dir = cache_dir;
    opt.tracker_endpoint = tracker.endpoint();
    opt.registry_endpoint = registry_server.endpoint();
    opt.seed = seed;
    return opt;
  }
};

std::string blob(size_t n, char seedc) {
  coldboot::Rng rng(static_cast<uint64_t>(seedc) * 0x51ed2701u + n);
  return cbtest::random_bytes(rng, n);
}

}  // namespace

TEST_CASE("record_trace collapses same-block accesses and keeps order") {
  Cluster cl;
  auto m = cl.make_image("img-rt", {{"a/one", blob(3 * kBs, 'a')},
                                    {"b/two", blob(2 * kBs + 17, 'b')},
                                    {"c/three", blob(kBs / 2, 'c')}});

  SECTION("two offsets inside one block make one event") {
    auto t = record_trace(m, {{10, "/a/one", 0}, {20, "/a/one", 100}});
    REQUIRE(t.events.size() == 1);
    REQUIRE(t.events[0].path == "/a/one");
    REQUIRE(t.events[0].block_index == 0);
    REQUIRE(t.events[0].t_ms == 10);
  }

  SECTION("empty stream gives an empty trace") {
    auto t = record_trace(m, {});
    REQUIRE(t.image_id == "img-rt");
    REQUIRE(t.events.empty());
  }

  SECTION("three files across seven blocks in first-touch order") {
    // hand-enumerated: each access maps to floor(offset / 4096)
    std::vector<RawAccess> stream = {
        {1, "/a/one", 0},            // a:0
        {2, "/a/one", kBs + 5},      // a:1
        {3, "/b/two", 2 * kBs + 9},  // b:2
        {4, "/c/three", 11},         // c:0
        {5, "/b/two", 0},            // b:0
        {6, "/a/one", 2 * kBs},      // a:2
        {7, "/b/two", kBs + 1},      // b:1
    };
    auto t = record_trace(m, stream);
    std::vector<std::pair<std::string, uint64_t>> got;
    for (const auto& e : t.events) got.emplace_back(e.path, e.block_index);
    std::vector<std::pair<std::string, uint64_t>> want = {
        {"/a/one", 0}, {"/a/one", 1}, {"/b/two", 2}, {"/c/three", 0},
        {"/b/two", 0}, {"/a/one", 2}, {"/b/two", 1}};
    REQUIRE(got == want);
  }

  SECTION("non-consecutive repeats are kept") {
    auto t = record_trace(
        m, {{1, "/a/one", 0}, {2, "/b/two", 0}, {3, "/a/one", kBs}, {4, "/a/one", 0}});
    REQUIRE(t.events.size() == 4);
  }

  SECTION("unknown path and out-of-range offset fail") {
    REQUIRE_THROWS_AS(record_trace(m, {{1, "/nope", 0}}), TraceError);
    REQUIRE_THROWS_AS(record_trace(m, {{1, "/c/three", kBs}}), TraceError);
  }
}

TEST_CASE("traces roundtrip through json lines") {
  AccessTrace t;
  t.image_id = "img-serde";
  t.events = {{0, "/x", 0}, {1500, "/y/z", 7}, {120001, "/x", 2}};
  std::string payload = t.dump();
  REQUIRE(std::count(payload.begin(), payload.end(), '\n') == 3);
  AccessTrace back = AccessTrace::parse("img-serde", payload);
  REQUIRE(back.image_id == t.image_id);
  REQUIRE(back.events == t.events);

  REQUIRE_THROWS_AS(AccessTrace::parse("x", "{\"t\":1,\"path\"\n"), TraceError);
  REQUIRE_THROWS_AS(AccessTrace::parse("x", "{\"t\":1,\"path\":\"/a\"}\n"), TraceError);
  REQUIRE(AccessTrace::parse("x", "\n\n").events.empty());
}

TEST_CASE("derive_hotset keeps first accesses inside the window") {
  Cluster cl;
  auto m = cl.make_image("img-hs", {{"f", blob(6 * kBs, 'f')}});
  const auto& blocks = m.find("/f")->blocks;

  SECTION("boundary: t <= window is hot, beyond is cold") {
    AccessTrace t;
    t.image_id = "img-hs";
    t.events = {{1000, "/f", 0}, {119999, "/f", 1}, {120000, "/f", 2}, {120001, "/f", 3}};
    auto hs = derive_hotset(t, m, 120000);
    REQUIRE(hs.blocks == std::vector<BlockId>{blocks[0], blocks[1], blocks[2]});
  }

  SECTION("window beyond last event takes everything") {
    AccessTrace t;
    t.image_id = "img-hs";
    t.events = {{5, "/f", 4}, {900000, "/f", 1}};
    auto hs = derive_hotset(t, m, 1000000);
    REQUIRE(hs.blocks == std::vector<BlockId>{blocks[4], blocks[1]});
  }

  SECTION("first access governs a repeated block") {
    AccessTrace t;
    t.image_id = "img-hs";
    t.events = {{5, "/f", 2}, {130000, "/f", 2}};
    auto hs = derive_hotset(t, m, 120000);
    REQUIRE(hs.blocks == std::vector<BlockId>{blocks[2]});
  }

  SECTION("matches a brute-force oracle on random traces") {
    Rng rng(404);
    for (int iter = 0; iter < 50; ++iter) {
      AccessTrace t;
      t.image_id = "img-hs";
      size_t n = 1 + rng.below(40);
      for (size_t i = 0; i < n; ++i)
        t.events.push_back({static_cast<int64_t>(rng.below(240000)), "/f", rng.below(6)});
      std::sort(t.events.begin(), t.events.end(),
                [](const auto& a, const auto& b) { return a.t_ms < b.t_ms; });
      int64_t window = 1 + static_cast<int64_t>(rng.below(240000));

      // oracle: first access time per block id, then filter and order
      std::unordered_map<Digest32, int64_t, Digest32Hash> first;
      std::vector<BlockId> order;
      for (const auto& e : t.events) {
        const BlockId& id = blocks[e.block_index];
        if (first.emplace(id, e.t_ms).second) order.push_back(id);
      }
      std::vector<BlockId> want;
      for (const auto& id : order)
        if (first[id] <= window) want.push_back(id);

      REQUIRE(derive_hotset(t, m, window).blocks == want);
    }
  }

  SECTION("rejects bad windows and unresolvable events") {
    AccessTrace t;
    t.image_id = "img-hs";
    t.events = {{5, "/f", 0}};
    REQUIRE_THROWS_AS(derive_hotset(t, m, 0), TraceError);
    t.events = {{5, "/missing", 0}};
    REQUIRE_THROWS_AS(derive_hotset(t, m, 1000), TraceError);
    t.events = {{5, "/f", 6}};
    REQUIRE_THROWS_AS(derive_hotset(t, m, 1000), TraceError);
  }
}

TEST_CASE("hot sets roundtrip through json") {
  HotSet hs;
  hs.image_id = "img-json";
  hs.window_ms = 90000;
  hs.blocks = {sha256("a"), sha256("b")};
  HotSet back = HotSet::parse(hs.dump());
  REQUIRE(back.image_id == hs.image_id);
  REQUIRE(back.window_ms == hs.window_ms);
  REQUIRE(back.blocks == hs.blocks);
  REQUIRE_THROWS_AS(HotSet::parse("{nope"), TraceError);
}

TEST_CASE("fetch_block prefers peers, then cluster cache, then registry") {
  Cluster cl;
  auto m = cl.make_image("img-pref", {{"app", blob(2 * kBs, 'p')}});
  BlockId b0 = m.find("/app")->blocks[0];

  cbtest::TempDir cache_a, cache_b, cache_c;
  NodeAgent a(cl.agent_options(1, cache_a.path()));

  SECTION("cold cluster falls through to the registry") {
    auto [bytes, src] = a.fetch_block(b0);
    REQUIRE(src == FetchSource::kRegistry);
    REQUIRE(sha256(bytes) == b0);
    REQUIRE(a.metrics().registry_fetches == 1);
    // refetch is a local hit
    auto [bytes2, src2] = a.fetch_block(b0);
    REQUIRE(src2 == FetchSource::kLocal);
    REQUIRE(bytes2 == bytes);
  }

  SECTION("a peer holding the block wins over the registry") {
    a.ensure_block(b0);  // node A now holds and has announced b0
    uint64_t registry_gets = cl.registry_server.gets_served();
    NodeAgent b(cl.agent_options(2, cache_b.path()));
    auto [bytes, src] = b.fetch_block(b0);
    REQUIRE(src == FetchSource::kPeer);
    REQUIRE(sha256(bytes) == b0);
    REQUIRE(cl.registry_server.gets_served() == registry_gets);
    REQUIRE(a.metrics().blocks_served == 1);
  }

  SECTION("cluster cache wins over registry when no peer holds it") {
    cbtest::TempDir cache_dir;
    BlockStore cache_store(cache_dir.path());
    cache_store.put_block(b0, cl.registry.get_block(b0));
    BlockServer cache_server("127.0.0.1", BlockServer::store_lookup(cache_store));
    TrackerClient announcer(cl.tracker.endpoint());
    announcer.announce(HolderTier::kCache, 1000, cache_server.endpoint(), b0);

    uint64_t registry_gets = cl.registry_server.gets_served();
    NodeAgent c(cl.agent_options(3, cache_c.path()));
    auto [bytes, src] = c.fetch_block(b0);
    REQUIRE(src == FetchSource::kClusterCache);
    REQUIRE(cl.registry_server.gets_served() == registry_gets);
    cache_server.stop();
  }
}

TEST_CASE("corrupt responses are discarded, never cached or announced") {
  Cluster cl;
  auto m = cl.make_image("img-evil", {{"app", blob(kBs, 'e')}});
  BlockId b0 = m.find("/app")->blocks[0];

  SECTION("a lying peer is skipped and the registry saves the fetch") {
    FramedServer evil("127.0.0.1", [&](MsgKind kind, std::string_view payload) {
      REQUIRE(kind == MsgKind::kGet);
      ByteReader r(payload);
      std::string out = std::string(r.bytes(32));  // echo the claimed digest
      out += blob(kBs, 'X');                       // wrong bytes
      return WireResponse::ok(std::move(out));
    });
    TrackerClient announcer(cl.tracker.endpoint());
    announcer.announce(HolderTier::kPeer, 666, evil.endpoint(), b0);

    cbtest::TempDir cache;
    NodeAgent agent(cl.agent_options(1, cache.path()));
    auto [bytes, src] = agent.fetch_block(b0);
    REQUIRE(src == FetchSource::kRegistry);
    REQUIRE(sha256(bytes) == b0);
    REQUIRE(agent.metrics().corrupt_fetches == 1);
    REQUIRE(agent.cache().get_block(b0) == bytes);
    evil.stop();
  }

  SECTION("an unreachable peer is skipped without counting as corrupt") {
    TrackerClient announcer(cl.tracker.endpoint());
    announcer.announce(HolderTier::kPeer, 666, "127.0.0.1:1", b0);
    cbtest::TempDir cache;
    NodeAgent agent(cl.agent_options(1, cache.path()));
    auto [bytes, src] = agent.fetch_block(b0);
    REQUIRE(src == FetchSource::kRegistry);
    REQUIRE(agent.metrics().corrupt_fetches == 0);
  }

  SECTION("all sources exhausted raises FetchError and leaves no trace") {
    Cluster isolated;
    auto m2 = isolated.make_image("img-evil2", {{"app", blob(kBs, 'z')}});
    BlockId target = m2.find("/app")->blocks[0];
    isolated.registry_server.stop();  // registry down, no peers

    cbtest::TempDir cache;
    NodeAgent agent(isolated.agent_options(1, cache.path()));
    REQUIRE_THROWS_AS(agent.fetch_block(target), FetchError);
    REQUIRE_FALSE(agent.cache().has_block(target));
    for (const auto& h : agent.tracker().locate(target))
      REQUIRE(h.endpoint != agent.endpoint());
  }
}

TEST_CASE("fetch pool runs faults before hot before cold and dedups in flight") {
  std::mutex mu;
  std::vector<std::string> order;
  std::latch release(1);
  Digest32 blocker = sha256("blocker");
  std::atomic<int> calls{0};

  FetchPool pool(1, [&](const BlockId& id) {
    if (id == blocker) release.wait();
    ++calls;
    std::lock_guard<std::mutex> lk(mu);
    order.push_back(id.hex().substr(0, 4));
  });

  auto fb = pool.submit(blocker, FetchPool::kPriorityCold);
  // give the single worker time to start the blocker
  while (true) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
    if (fb.wait_for(std::chrono::seconds(0)) == std::future_status::timeout) break;
  }

  Digest32 cold = sha256("cold");
  Digest32 hot = sha256("hot");
  Digest32 fault = sha256("fault");
  auto fc = pool.submit(cold, FetchPool::kPriorityCold);
  auto fh = pool.submit(hot, FetchPool::kPriorityHot);
  auto ff = pool.submit(fault, FetchPool::kPriorityFault);
  // duplicate submit joins the queued task instead of refetching
  auto fc2 = pool.submit(cold, FetchPool::kPriorityCold);

  release.count_down();
  fb.get();
  fc.get();
  fc2.get();
  fh.get();
  ff.get();

  std::vector<std::string> want = {blocker.hex().substr(0, 4), fault.hex().substr(0, 4),
                                   hot.hex().substr(0, 4), cold.hex().substr(0, 4)};
  REQUIRE(order == want);
  REQUIRE(calls == 4);
  pool.stop();
}

TEST_CASE("fetch pool promotes a queued block when a fault arrives") {
  std::mutex mu;
  std::vector<std::string> order;
  std::latch release(1);
  Digest32 blocker = sha256("blocker2");

  FetchPool pool(1, [&](const BlockId& id) {
    if (id == blocker) release.wait();
    std::lock_guard<std::mutex> lk(mu);
    order.push_back(id.hex().substr(0, 4));
  });

  auto fb = pool.submit(blocker, FetchPool::kPriorityFault);
  while (fb.wait_for(std::chrono::milliseconds(1)) != std::future_status::timeout) {
  }

  Digest32 wanted = sha256("wanted");
  Digest32 other = sha256("other");
  pool.submit(wanted, FetchPool::kPriorityCold);
  auto fo = pool.submit(other, FetchPool::kPriorityHot);
  auto fw = pool.submit(wanted, FetchPool::kPriorityFault);  // promote past "other"

  release.count_down();
  fw.get();
  fo.get();
  fb.get();

  std::vector<std::string> want = {blocker.hex().substr(0, 4), wanted.hex().substr(0, 4),
                                   other.hex().substr(0, 4)};
  REQUIRE(order == want);
  pool.stop();
}

TEST_CASE("lazy start fetches exactly the distinct blocks accessed") {
  Cluster cl;
  auto m = cl.make_image("img-lazy", {{"app", blob(5 * kBs, 'l')}, {"conf", blob(kBs, 'c')}});
  std::vector<RawAccess> stream = {
      {1, "/app", 0}, {2, "/app", kBs}, {3, "/conf", 0}, {4, "/app", 10}, {5, "/app", 4 * kBs}};
  // distinct blocks touched: app:0, app:1, conf:0, app:4

  cbtest::TempDir cache;
  NodeAgent agent(cl.agent_options(1, cache.path()));
  auto handle = agent.start_container(m, nullptr, LaunchPolicy::kLazyOnly);
  auto st = handle.replay(stream, kDefaultHotWindowMs);
  REQUIRE(st.accesses == 5);
  REQUIRE(st.faults == 4);
  auto metrics = agent.metrics();
  REQUIRE(metrics.registry_fetches == 4);
  REQUIRE(metrics.peer_fetches == 0);
  // the untouched /app blocks were never pulled
  REQUIRE_FALSE(agent.cache().has_block(m.find("/app")->blocks[2]));
}

TEST_CASE("prefetch without a hot set falls back to lazy and records it") {
  Cluster cl;
  auto m = cl.make_image("img-fb", {{"app", blob(kBs, 'f')}});
  cbtest::TempDir cache;
  NodeAgent agent(cl.agent_options(1, cache.path()));
  auto handle = agent.start_container(m, nullptr, LaunchPolicy::kPrefetch);
  REQUIRE(handle.fell_back_lazy());
  REQUIRE(handle.effective_policy() == LaunchPolicy::kLazyOnly);
  REQUIRE(handle.hot_blocks() == 0);
}

TEST_CASE("recorded trace makes the second run fault-free in the window") {
  Cluster cl;
  auto m = cl.make_image("img-replay", {{"bin/app", blob(3 * kBs + 100, 'a')},
                                        {"lib/core", blob(2 * kBs, 'b')},
                                        {"data/bulk", blob(6 * kBs, 'd')}});
  std::vector<RawAccess> stream = {
      {50, "/bin/app", 0},        {80, "/bin/app", kBs},      {200, "/lib/core", 0},
      {900, "/lib/core", kBs},    {1500, "/bin/app", 3 * kBs}, {125000, "/data/bulk", 0},
      {126000, "/data/bulk", 3 * kBs},
  };

  // first run: lazy, records the trace and uploads it
  cbtest::TempDir cache_a;
  NodeAgent a(cl.agent_options(1, cache_a.path()));
  auto first = a.start_container(m, nullptr, LaunchPolicy::kPrefetch);
  REQUIRE(first.fell_back_lazy());
  first.replay(stream, kDefaultHotWindowMs);
  AccessTrace trace = record_trace(m, stream);
  a.tracker().put_trace(m.image_id, trace.dump());

  // second run on a fresh node: prefetch from the recorded hot set
  auto payload = a.tracker().try_get_trace(m.image_id);
  REQUIRE(payload.has_value());
  AccessTrace fetched = AccessTrace::parse(m.image_id, *payload);
  HotSet hs = derive_hotset(fetched, m);
  // in-window touches: bin/app blocks 0, 1, 3 and lib/core blocks 0, 1
  REQUIRE(hs.blocks.size() == 5);

  cbtest::TempDir cache_b;
  NodeAgent b(cl.agent_options(2, cache_b.path()));
  auto handle = b.start_container(m, &hs, LaunchPolicy::kPrefetch);
  REQUIRE_FALSE(handle.fell_back_lazy());
  REQUIRE(handle.hot_blocks() == hs.blocks.size());

  auto st = handle.replay(stream, kDefaultHotWindowMs);
  REQUIRE(st.in_window_faults == 0);

  // background streaming completes the image
  handle.wait_complete();
  REQUIRE(handle.image_complete());
  for (const auto& id : m.all_blocks()) REQUIRE(b.cache().has_block(id));
}

TEST_CASE("container reads return the original bytes") {
  Cluster cl;
  std::string app = blob(2 * kBs + 333, 'r');
  auto m = cl.make_image("img-read", {{"app", app}});
  cbtest::TempDir cache;
  NodeAgent agent(cl.agent_options(1, cache.path()));
  auto handle = agent.start_container(m, nullptr, LaunchPolicy::kLazyOnly);

  REQUIRE(handle.read("/app", 0, app.size()) == app);
  REQUIRE(handle.read("/app", kBs - 7, 20) == app.substr(kBs - 7, 20));
  REQUIRE(handle.read("/app", 2 * kBs, 333) == app.substr(2 * kBs, 333));
  REQUIRE(handle.read("/app", 5, 0).empty());
  REQUIRE_THROWS_AS(handle.read("/app", 0, app.size() + 1), RangeError);
  REQUIRE_THROWS_AS(handle.read("/nope", 0, 1), NotFoundError);
}
