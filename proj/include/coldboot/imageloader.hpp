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

#ifndef COLDBOOT_IMAGELOADER_HPP_
#define COLDBOOT_IMAGELOADER_HPP_

#include <atomic>
#include <condition_variable>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/blockservice.hpp"
#include "coldboot/blockstore.hpp"
#include "coldboot/rng.hpp"
#include "coldboot/tracker.hpp"

namespace coldboot {

constexpr int64_t kDefaultHotWindowMs = 120000;  // 2-minute hot window
constexpr size_t kDefaultStreamWorkers = 8;

// ---- access traces ----

// One observed read during container startup, before block mapping.
struct RawAccess {
  int64_t t_ms = 0;  // since container start
  std::string path;
  uint64_t offset = 0;
};

struct AccessEvent {
  int64_t t_ms = 0;
  std::string path;
  uint64_t block_index = 0;  // ordinal within the file

  bool operator==(const AccessEvent&) const = default;
};

struct AccessTrace {
  std::string image_id;
  std::vector<AccessEvent> events;

  // JSON lines, one event per line; image_id travels out of band.
  std::string dump() const {
    std::string out;
    for (const auto& e : events) {
      nlohmann::ordered_json j;
      j["t"] = e.t_ms;
      j["path"] = e.path;
      j["block"] = e.block_index;
      out += j.dump();
      out += '\n';
    }
    return out;
  }

  static AccessTrace parse(const std::string& image_id, std::string_view payload) {
    AccessTrace trace;
    trace.image_id = image_id;
    size_t pos = 0;
    int lineno = 0;
    while (pos < payload.size()) {
      size_t eol = payload.find('\n', pos);
      if (eol == std::string_view::npos) eol = payload.size();
      std::string_view line = payload.substr(pos, eol - pos);
      pos = eol + 1;
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("t") || !j.contains("path") || !j.contains("block"))
        throw TraceError("malformed trace line " + std::to_string(lineno));
      AccessEvent e;
      e.t_ms = j["t"].get<int64_t>();
      e.path = j["path"].get<std::string>();
      e.block_index = j["block"].get<uint64_t>();
      trace.events.push_back(std::move(e));
    }
    return trace;
  }
};

// Maps raw accesses to per-file block ordinals and collapses consecutive
// duplicates. Re-accesses of a block later in the stream are kept; full
// dedup happens in derive_hotset.
inline AccessTrace record_trace(const BlockManifest& manifest,
                                const std::vector<RawAccess>& stream) {
  AccessTrace trace;
  trace.image_id = manifest.image_id;
  for (const auto& a : stream) {
    const ManifestFile* f = manifest.find(a.path);
    if (f == nullptr) throw TraceError("access to unknown path " + a.path);
    if (a.offset >= f->size) throw TraceError("access beyond end of " + a.path);
    AccessEvent e;
    e.t_ms = a.t_ms;
    e.path = a.path;
    e.block_index = a.offset / manifest.block_size;
    if (!trace.events.empty()) {
      const AccessEvent& last = trace.events.back();
      if (last.path == e.path && last.block_index == e.block_index) continue;
    }
    trace.events.push_back(std::move(e));
  }
  return trace;
}

// ---- hot sets ----

struct HotSet {
  std::string image_id;
  int64_t window_ms = kDefaultHotWindowMs;
  std::vector<BlockId> blocks;  // first-access order, deduplicated

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["image_id"] = image_id;
    j["window_ms"] = window_ms;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : blocks) arr.push_back(b.hex());
    j["blocks"] = std::move(arr);
    return j;
  }

  std::string dump() const { return to_json().dump(2) + "\n"; }

  static HotSet from_json(const nlohmann::json& j) {
    HotSet hs;
    hs.image_id = j.at("image_id").get<std::string>();
    hs.window_ms = j.at("window_ms").get<int64_t>();
    for (const auto& b : j.at("blocks")) hs.blocks.push_back(Digest32::parse_hex(b.get<std::string>()));
    return hs;
  }

  static HotSet parse(std::string_view payload) {
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw TraceError("malformed hot set json");
    return from_json(j);
  }
};

// The manifest resolves (path, block_index) to content ids; blocks whose
// first access falls at t <= window are hot, in first-access order.
inline HotSet derive_hotset(const AccessTrace& trace, const BlockManifest& manifest,
                            int64_t window_ms = kDefaultHotWindowMs) {
  if (window_ms <= 0) throw TraceError("hot window must be positive");
  HotSet hs;
  hs.image_id = trace.image_id;
  hs.window_ms = window_ms;
  std::unordered_set<Digest32, Digest32Hash> seen;
  for (const auto& e : trace.events) {
    const ManifestFile* f = manifest.find(e.path);
    if (f == nullptr) throw TraceError("trace references unknown path " + e.path);
    if (e.block_index >= f->blocks.size())
      throw TraceError("trace block index out of range for " + e.path);
    const BlockId& id = f->blocks[e.block_index];
    if (!seen.insert(id).second) continue;  // first access governs
    if (e.t_ms <= window_ms) hs.blocks.push_back(id);
  }
  return hs;
}

// ---- block fetching ----

enum class FetchSource : uint8_t { kLocal = 0, kPeer = 1, kClusterCache = 2, kRegistry = 3 };

inline const char* fetch_source_name(FetchSource s) {
  switch (s) {
    case FetchSource::kLocal:
      return "local";
    case FetchSource::kPeer:
      return "peer";
    case FetchSource::kClusterCache:
      return "cluster_cache";
    default:
      return "registry";
  }
}

struct AgentMetrics {
  uint64_t local_hits = 0;
  uint64_t peer_fetches = 0;
  uint64_t cluster_cache_fetches = 0;
  uint64_t registry_fetches = 0;
  uint64_t corrupt_fetches = 0;  // responses discarded on digest mismatch
  uint64_t blocks_served = 0;    // GETs answered for other nodes
};

// Bounded worker pool ordered by (priority, submission order) with in-flight
// dedup: a block wanted by the fault path and the background streamer is
// fetched once. Lower priority value runs first.
class FetchPool {
 public:
  static constexpr int kPriorityFault = 0;
  static constexpr int kPriorityHot = 1;
  static constexpr int kPriorityCold = 2;

  FetchPool(size_t workers, std::function<void(const BlockId&)> fetch_fn)
      : fetch_fn_(std::move(fetch_fn)) {
    for (size_t i = 0; i < workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~FetchPool() { stop(); }
  FetchPool(const FetchPool&) = delete;
  FetchPool& operator=(const FetchPool&) = delete;

  std::shared_future<void> submit(const BlockId& id, int priority) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = tasks_.find(id);
    if (it != tasks_.end()) {
      auto& task = *it->second;
      if (!task.started && priority < task.best_priority) {
        task.best_priority = priority;
        queue_.push(Entry{priority, next_seq_++, id});
        cv_.notify_one();
      }
      return task.future;
    }
    auto task = std::make_shared<Task>();
    task->best_priority = priority;
    task->future = task->promise.get_future().share();
    tasks_.emplace(id, task);
    queue_.push(Entry{priority, next_seq_++, id});
    cv_.notify_one();
    return task->future;
  }

  void stop() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_)
      if (w.joinable()) w.join();
  }

 private:
  struct Task {
    int best_priority = 0;
    bool started = false;
    std::promise<void> promise;
    std::shared_future<void> future;
  };

  struct Entry {
    int priority;
    uint64_t seq;
    BlockId id;
    bool operator>(const Entry& o) const {
      if (priority != o.priority) return priority > o.priority;
      return seq > o.seq;
    }
  };

  void worker_loop() {
    for (;;) {
      std::shared_ptr<Task> task;
      BlockId id;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_ && queue_.empty()) return;
        Entry e = queue_.top();
        queue_.pop();
        auto it = tasks_.find(e.id);
        if (it == tasks_.end() || it->second->started) continue;  // stale duplicate
        task = it->second;
        task->started = true;
        id = e.id;
      }
      try {
        fetch_fn_(id);
        task->promise.set_value();
      } catch (...) {
        task->promise.set_exception(std::current_exception());
      }
      std::lock_guard<std::mutex> lk(mu_);
      tasks_.erase(id);
    }
  }

  std::function<void(const BlockId&)> fetch_fn_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue_;
  std::unordered_map<BlockId, std::shared_ptr<Task>, Digest32Hash> tasks_;
  uint64_t next_seq_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

class ContainerHandle;

enum class LaunchPolicy : uint8_t { kLazyOnly = 0, kPrefetch = 1 };

// Per-node loader daemon: local block cache, peer serving, tracker-guided
// fetching and the prefetch/streaming pool.
class NodeAgent {
 public:
  struct Options {
    uint32_t node_id = 0;
    fs::path cache_dir;
    std::string tracker_endpoint;
    std::string registry_endpoint;
    uint64_t seed = 0;
    size_t stream_workers = kDefaultStreamWorkers;
  };

  explicit NodeAgent(Options opt)
      : opt_(opt),
        cache_(opt.cache_dir),
        tracker_(opt.tracker_endpoint),
        rng_(mix_key(opt.seed, 0x9eefu, opt.node_id)),
        server_("127.0.0.1",
                [this](const BlockId& id) -> std::optional<std::string> {
                  if (!cache_.has_block(id)) return std::nullopt;
                  ++served_;
                  return cache_.get_block(id);
                }),
        pool_(opt.stream_workers, [this](const BlockId& id) { ensure_block(id); }) {}

  ~NodeAgent() {
    pool_.stop();
    server_.stop();
  }
  NodeAgent(const NodeAgent&) = delete;
  NodeAgent& operator=(const NodeAgent&) = delete;

  uint32_t node_id() const { return opt_.node_id; }
  const std::string& endpoint() const { return server_.endpoint(); }
  BlockStore& cache() { return cache_; }
  TrackerClient& tracker() { return tracker_; }

  AgentMetrics metrics() const {
    AgentMetrics m;
    m.local_hits = local_hits_;
    m.peer_fetches = peer_fetches_;
    m.cluster_cache_fetches = cluster_cache_fetches_;
    m.registry_fetches = registry_fetches_;
    m.corrupt_fetches = corrupt_fetches_;
    m.blocks_served = served_;
    return m;
  }

  // Verified fetch with peer > cluster cache > registry preference. The
  // block lands in the local cache and is announced before returning.
  std::pair<std::string, FetchSource> fetch_block(const BlockId& id) {
    if (cache_.has_block(id)) {
      ++local_hits_;
      return {cache_.get_block(id), FetchSource::kLocal};
    }

    std::vector<Holder> peers;
    std::vector<Holder> caches;
    for (auto& h : tracker_.locate(id)) {
      if (h.endpoint == endpoint()) continue;  // never fetch from ourselves
      (h.tier == HolderTier::kPeer ? peers : caches).push_back(std::move(h));
    }
    {
      std::lock_guard<std::mutex> lk(rng_mu_);
      rng_.shuffle(peers);
      rng_.shuffle(caches);
    }

    std::vector<std::pair<std::string, FetchSource>> candidates;
    for (auto& h : peers) candidates.emplace_back(h.endpoint, FetchSource::kPeer);
    for (auto& h : caches) candidates.emplace_back(h.endpoint, FetchSource::kClusterCache);
    if (!opt_.registry_endpoint.empty())
      candidates.emplace_back(opt_.registry_endpoint, FetchSource::kRegistry);

    for (const auto& [ep, source] : candidates) {
      std::string bytes;
      try {
        FetchedBlock fetched = RemoteBlocks(ep).get(id);
        if (fetched.digest != id || sha256(fetched.bytes) != id) {
          ++corrupt_fetches_;
          continue;
        }
        bytes = std::move(fetched.bytes);
      } catch (const std::exception&) {
        continue;  // unreachable or missing there; try the next source
      }
      switch (source) {
        case FetchSource::kPeer:
          ++peer_fetches_;
          break;
        case FetchSource::kClusterCache:
          ++cluster_cache_fetches_;
          break;
        default:
          ++registry_fetches_;
          break;
      }
      cache_.put_block(id, bytes);
      tracker_.announce(HolderTier::kPeer, opt_.node_id, endpoint(), id);
      return {std::move(bytes), source};
    }
    throw FetchError("block " + id.hex() + ": all sources exhausted");
  }

  void ensure_block(const BlockId& id) { (void)fetch_block(id); }

  ContainerHandle start_container(const BlockManifest& manifest, const HotSet* hotset,
                                  LaunchPolicy policy);

  FetchPool& pool() { return pool_; }

 private:
  friend class ContainerHandle;

  Options opt_;
  BlockStore cache_;
  TrackerClient tracker_;
  std::mutex rng_mu_;
  Rng rng_;
  std::atomic<uint64_t> local_hits_{0};
  std::atomic<uint64_t> peer_fetches_{0};
  std::atomic<uint64_t> cluster_cache_fetches_{0};
  std::atomic<uint64_t> registry_fetches_{0};
  std::atomic<uint64_t> corrupt_fetches_{0};
  std::atomic<uint64_t> served_{0};
  BlockServer server_;
  FetchPool pool_;
};

struct ReplayStats {
  uint64_t accesses = 0;
  uint64_t in_window_accesses = 0;
  uint64_t faults = 0;            // reads that blocked on a non-local block
  uint64_t in_window_faults = 0;  // of those, within the hot window
  uint64_t bytes_read = 0;
};

// The "container": an access replayer over one image on one node. Reads
// fault missing blocks at top priority; under the prefetch policy the
// handle exists only after all hot blocks are local, and a background
// streamer keeps pulling cold blocks until the image is complete.
class ContainerHandle {
 public:
  LaunchPolicy requested_policy() const { return requested_; }
  LaunchPolicy effective_policy() const { return effective_; }
  bool fell_back_lazy() const { return requested_ == LaunchPolicy::kPrefetch && effective_ == LaunchPolicy::kLazyOnly; }
  size_t hot_blocks() const { return hot_blocks_; }

  std::string read(const std::string& path, uint64_t offset, uint64_t length) {
    const ManifestFile* f = manifest_.find(path);
    if (f == nullptr) throw NotFoundError("no such file in image: " + path);
    if (offset > f->size || length > f->size - offset)
      throw RangeError("read beyond end of " + path);
    if (length == 0) return {};

    uint64_t bs = manifest_.block_size;
    uint64_t first = offset / bs;
    uint64_t last = (offset + length - 1) / bs;
    for (uint64_t i = first; i <= last; ++i) fault_in(f->blocks[i]);

    std::string out;
    out.reserve(length);
    for (uint64_t i = first; i <= last; ++i) {
      std::string block = agent_->cache_.get_block(f->blocks[i]);
      uint64_t begin = i == first ? offset - first * bs : 0;
      uint64_t end = i == last ? offset + length - 1 - i * bs + 1 : bs;
      out.append(block, begin, end - begin);
    }
    return out;
  }

  // Replays a recorded access stream, reading one block per access, and
  // counts the reads that had to wait on a remote fetch.
  ReplayStats replay(const std::vector<RawAccess>& stream, int64_t window_ms) {
    ReplayStats st;
    for (const auto& a : stream) {
      const ManifestFile* f = manifest_.find(a.path);
      if (f == nullptr) throw TraceError("access to unknown path " + a.path);
      uint64_t bs = manifest_.block_size;
      uint64_t index = a.offset / bs;
      if (index >= f->blocks.size()) throw TraceError("access beyond end of " + a.path);
      ++st.accesses;
      bool in_window = a.t_ms <= window_ms;
      if (in_window) ++st.in_window_accesses;
      bool local = agent_->cache_.has_block(f->blocks[index]);
      if (!local) {
        ++st.faults;
        if (in_window) ++st.in_window_faults;
      }
      uint64_t len = std::min(bs, f->size - index * bs);
      st.bytes_read += read(a.path, index * bs, len).size();
    }
    return st;
  }

  // Blocks until the background streamer holds the full image locally.
  void wait_complete() {
    for (auto& f : stream_futures_) f.get();
    stream_futures_.clear();
  }

  bool image_complete() const {
    for (const auto& id : manifest_.all_blocks())
      if (!agent_->cache_.has_block(id)) return false;
    return true;
  }

 private:
  friend class NodeAgent;

  ContainerHandle(NodeAgent* agent, BlockManifest manifest, LaunchPolicy requested,
                  LaunchPolicy effective, size_t hot_blocks,
                  std::vector<std::shared_future<void>> stream_futures)
      : agent_(agent),
        manifest_(std::move(manifest)),
        requested_(requested),
        effective_(effective),
        hot_blocks_(hot_blocks),
        stream_futures_(std::move(stream_futures)) {}

  void fault_in(const BlockId& id) {
    if (agent_->cache_.has_block(id)) return;
    agent_->pool_.submit(id, FetchPool::kPriorityFault).get();
  }

  NodeAgent* agent_;
  BlockManifest manifest_;
  LaunchPolicy requested_;
  LaunchPolicy effective_;
  size_t hot_blocks_ = 0;
  std::vector<std::shared_future<void>> stream_futures_;
};

inline ContainerHandle NodeAgent::start_container(const BlockManifest& manifest,
                                                  const HotSet* hotset, LaunchPolicy policy) {
  LaunchPolicy effective = policy;
  if (policy == LaunchPolicy::kPrefetch && hotset == nullptr)
    effective = LaunchPolicy::kLazyOnly;  // no recorded hot set yet; first run

  size_t hot_count = 0;
  std::vector<std::shared_future<void>> stream_futures;
  if (effective == LaunchPolicy::kPrefetch) {
    std::vector<std::shared_future<void>> hot_futures;
    std::unordered_set<Digest32, Digest32Hash> hot(hotset->blocks.begin(), hotset->blocks.end());
    hot_count = hotset->blocks.size();
    hot_futures.reserve(hot_count);
    for (const auto& id : hotset->blocks)
      hot_futures.push_back(pool_.submit(id, FetchPool::kPriorityHot));
    for (auto& f : hot_futures) f.get();  // the container starts hot-complete

    for (const auto& id : manifest.all_blocks())
      if (!hot.contains(id))
        stream_futures.push_back(pool_.submit(id, FetchPool::kPriorityCold));
  }
  return ContainerHandle(this, manifest, policy, effective, hot_count,
                         std::move(stream_futures));
}

}  // namespace coldboot

#endif  // COLDBOOT_IMAGELOADER_HPP_
