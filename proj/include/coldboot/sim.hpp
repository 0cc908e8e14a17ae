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

#ifndef COLDBOOT_SIM_HPP_
#define COLDBOOT_SIM_HPP_

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/digest.hpp"
#include "coldboot/profiler.hpp"
#include "coldboot/report.hpp"
#include "coldboot/rng.hpp"
#include "coldboot/util.hpp"

namespace coldboot {

// ---- event loop ----

// Discrete-event core over int64 virtual microseconds. Events fire in
// (time, insertion sequence) order, so a run is a pure function of its
// inputs; wall-clock time is never consulted.
class Sim {
 public:
  int64_t now_us() const { return now_; }

  void at(int64_t t_us, std::function<void()> fn) {
    heap_.push_back({std::max(t_us, now_), seq_++, std::move(fn)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
  }

  void after(int64_t dt_us, std::function<void()> fn) { at(now_ + dt_us, std::move(fn)); }

  void run() {
    while (!heap_.empty()) {
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      Event e = std::move(heap_.back());
      heap_.pop_back();
      now_ = e.time;
      e.fn();
    }
  }

 private:
  struct Event {
    int64_t time;
    uint64_t seq;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return std::tie(a.time, a.seq) > std::tie(b.time, b.seq);
    }
  };
  std::vector<Event> heap_;
  int64_t now_ = 0;
  uint64_t seq_ = 0;
};

// ---- shared links ----

// Fluid fair-share link: capacity splits evenly over active flows, and the
// collective rate drops by the penalty factor while concurrency exceeds the
// threshold. Completion order is deterministic (remaining bytes, flow id).
class FlowLink {
 public:
  FlowLink(Sim& sim, double bytes_per_sec, uint32_t fair_threshold = UINT32_MAX,
           double penalty = 1.0)
      : sim_(sim), rate_(bytes_per_sec), threshold_(fair_threshold), penalty_(penalty) {}

  void transfer(uint64_t bytes, std::function<void()> done) {
    advance();
    if (bytes == 0) {
      sim_.after(0, std::move(done));
      return;
    }
    flows_.push_back({next_id_++, static_cast<double>(bytes), bytes, std::move(done)});
    reschedule();
  }

  uint64_t delivered_bytes() const { return delivered_; }
  size_t active_flows() const { return flows_.size(); }

 private:
  struct Flow {
    uint64_t id;
    double remaining;
    uint64_t requested;
    std::function<void()> done;
  };

  double per_flow_rate() const {
    double r = rate_ / static_cast<double>(flows_.size());
    if (flows_.size() > threshold_) r /= penalty_;
    return r;
  }

  void advance() {
    int64_t dt = sim_.now_us() - last_update_;
    if (dt > 0 && !flows_.empty()) {
      double got = per_flow_rate() * static_cast<double>(dt) / 1e6;
      for (Flow& f : flows_) f.remaining = std::max(0.0, f.remaining - got);
    }
    last_update_ = sim_.now_us();
  }

  void reschedule() {
    ++generation_;
    if (flows_.empty()) return;
    double min_remaining = flows_.front().remaining;
    for (const Flow& f : flows_) min_remaining = std::min(min_remaining, f.remaining);
    auto dt = static_cast<int64_t>(std::ceil(min_remaining / per_flow_rate() * 1e6));
    sim_.after(std::max<int64_t>(dt, 0), [this, gen = generation_] {
      if (gen != generation_) return;  // membership changed; a newer event is scheduled
      advance();
      std::vector<Flow> finished;
      for (auto it = flows_.begin(); it != flows_.end();) {
        if (it->remaining <= 0.0) {
          finished.push_back(std::move(*it));
          it = flows_.erase(it);
        } else {
          ++it;
        }
      }
      std::sort(finished.begin(), finished.end(),
                [](const Flow& a, const Flow& b) { return a.id < b.id; });
      for (Flow& f : finished) {
        delivered_ += f.requested;
        f.done();
      }
      reschedule();
    });
  }

  Sim& sim_;
  double rate_;
  uint32_t threshold_;
  double penalty_;
  std::vector<Flow> flows_;
  int64_t last_update_ = 0;
  uint64_t next_id_ = 0;
  uint64_t generation_ = 0;
  uint64_t delivered_ = 0;
};

// Rate-limited shared source with `threshold` concurrent service slots and
// a FIFO overflow queue. A request that arrives into a backlog is served
// slower, compounding with how many full waves were already queued ahead of
// it: the repeated-throttling storm where late nodes see ever worse rates.
class SlottedSource {
 public:
  SlottedSource(Sim& sim, double bytes_per_sec, uint32_t threshold, double penalty)
      : sim_(sim), rate_(bytes_per_sec), threshold_(threshold), penalty_(penalty),
        free_slots_(threshold) {}

  void request(uint64_t bytes, double multiplier, std::function<void()> done) {
    uint32_t rounds = 0;
    if (free_slots_ == 0)
      rounds = static_cast<uint32_t>(waiting_.size() / threshold_) + 1;
    Req r{bytes, multiplier * (1.0 + penalty_ * rounds), std::move(done)};
    if (free_slots_ > 0) {
      --free_slots_;
      start(std::move(r));
    } else {
      waiting_.push_back(std::move(r));
    }
  }

 private:
  struct Req {
    uint64_t bytes;
    double mult;
    std::function<void()> done;
  };

  void start(Req r) {
    auto dur = static_cast<int64_t>(
        std::ceil(static_cast<double>(r.bytes) / rate_ * r.mult * 1e6));
    sim_.after(std::max<int64_t>(dur, 1), [this, done = std::move(r.done)]() mutable {
      done();
      if (!waiting_.empty()) {
        Req next = std::move(waiting_.front());
        waiting_.pop_front();
        start(std::move(next));
      } else {
        ++free_slots_;
      }
    });
  }

  Sim& sim_;
  double rate_;
  uint32_t threshold_;
  double penalty_;
  uint32_t free_slots_;
  std::deque<Req> waiting_;
};

// ---- scenario configuration ----

enum class ImagePolicy : uint8_t { kLazyOnly = 0, kPrefetch = 1 };
enum class EnvPolicy : uint8_t { kInstall = 0, kCache = 1 };
enum class CkptPolicy : uint8_t { kSequential = 0, kStriped = 1 };

inline std::string_view image_policy_name(ImagePolicy p) {
  return p == ImagePolicy::kLazyOnly ? "lazy_only" : "prefetch";
}
inline std::string_view env_policy_name(EnvPolicy p) {
  return p == EnvPolicy::kInstall ? "install" : "cache";
}
inline std::string_view ckpt_policy_name(CkptPolicy p) {
  return p == CkptPolicy::kSequential ? "sequential" : "striped";
}

inline ImagePolicy image_policy_from(std::string_view s) {
  if (s == "lazy_only") return ImagePolicy::kLazyOnly;
  if (s == "prefetch") return ImagePolicy::kPrefetch;
  throw ConfigError("unknown image policy: " + std::string(s));
}
inline EnvPolicy env_policy_from(std::string_view s) {
  if (s == "install") return EnvPolicy::kInstall;
  if (s == "cache") return EnvPolicy::kCache;
  throw ConfigError("unknown env policy: " + std::string(s));
}
inline CkptPolicy ckpt_policy_from(std::string_view s) {
  if (s == "sequential") return CkptPolicy::kSequential;
  if (s == "striped") return CkptPolicy::kStriped;
  throw ConfigError("unknown ckpt policy: " + std::string(s));
}

constexpr int64_t kDefaultEpochMs = 1700000000000;

struct RateLimit {
  uint32_t threshold = 8;  // concurrent full-rate requests
  double penalty = 1.25;   // service slowdown factor beyond the threshold
};

// Calibrated defaults model a heavy MOE job: a 28.62 GB image with a 2 GB
// hot set, a 500 MB dependency bundle, a 270 MB environment cache and an
// 8 GB per-node checkpoint shard.
struct ScenarioConfig {
  std::string name = "scenario";
  std::string job_id = "job-0";
  uint32_t nodes = 8;
  uint32_t gpus_per_node = 8;
  uint64_t seed = 1;
  int64_t epoch_ms = kDefaultEpochMs;
  uint32_t hot_updates = 0;
  int64_t training_ms = 14400000;       // for the report sidecar
  int64_t install_timeout_ms = 0;       // 0 disables the failure timeout

  struct ImageSpec {
    uint64_t total_bytes = 28620000000;
    uint64_t hot_bytes = 2000000000;
    uint64_t block_size = 1048576;
  } image;

  struct EnvSpec {
    uint64_t deps_bytes = 500000000;
    uint64_t cache_bytes = 270000000;
    int64_t install_compute_ms = 80000;
    int64_t restore_compute_ms = 20000;
  } env;

  struct CkptSpec {
    uint64_t bytes_per_node = 8000000000;
    uint64_t chunk_size = 1048576;
  } ckpt;

  struct NetSpec {
    double registry_bandwidth = 160000000;   // shared by all lazy fetches
    double peer_bandwidth = 80000000;        // per node, dedicated
    double source_bandwidth = 12500000;      // per package-source slot
    double store_bandwidth = 2000000000;     // shared snapshot store
    double hdfs_bandwidth = 100000000;       // per node per lane
    RateLimit rate_limit;
  } net;

  struct StageConstants {
    int64_t queue_base_ms = 90000;
    int64_t alloc_base_ms = 3000;
    int64_t container_start_ms = 5000;
    int64_t init_compute_ms = 60000;
    int64_t sync_per_node_ms = 300;  // cross-node handshake cost, scales with job
    int64_t hot_update_gap_ms = 600000;
  } stages;

  struct JitterSpec {
    double queue_sigma = 0.4;
    double image_sigma = 0.05;
    double install_sigma = 0.12;
    double restore_sigma = 0.01;
    double init_sigma = 0.05;
  } jitter;

  struct PolicySpec {
    ImagePolicy image = ImagePolicy::kLazyOnly;
    EnvPolicy env = EnvPolicy::kInstall;
    CkptPolicy ckpt = CkptPolicy::kSequential;
    uint32_t stripe_groups = 4;
    uint32_t read_width = 4;
  } policies;

  struct FaultSpec {
    std::map<uint32_t, double> slow_nodes;  // node -> slowdown factor
    std::set<uint32_t> corrupt_peers;
  } faults;

  void validate() const {
    if (nodes < 1) throw ConfigError("nodes must be >= 1");
    if (gpus_per_node < 1) throw ConfigError("gpus_per_node must be >= 1");
    for (double rate : {net.registry_bandwidth, net.peer_bandwidth, net.source_bandwidth,
                        net.store_bandwidth, net.hdfs_bandwidth})
      if (rate <= 0) throw ConfigError("all bandwidths must be positive");
    if (net.rate_limit.threshold < 1) throw ConfigError("rate limit threshold must be >= 1");
    if (net.rate_limit.penalty < 0) throw ConfigError("rate limit penalty must be >= 0");
    if (image.block_size == 0 || ckpt.chunk_size == 0)
      throw ConfigError("block and chunk sizes must be positive");
    if (image.hot_bytes == 0 || image.hot_bytes > image.total_bytes)
      throw ConfigError("hot set must be nonempty and within the image");
    if (policies.stripe_groups < 1 || policies.read_width < 1)
      throw ConfigError("striped policy needs groups >= 1 and width >= 1");
    for (double s : {jitter.queue_sigma, jitter.image_sigma, jitter.install_sigma,
                     jitter.restore_sigma, jitter.init_sigma})
      if (s < 0) throw ConfigError("jitter sigma must be >= 0");
    for (const auto& [node, factor] : faults.slow_nodes) {
      if (node >= nodes) throw ConfigError("slow_node target out of range");
      if (factor <= 0) throw ConfigError("slow_node factor must be positive");
    }
    for (uint32_t node : faults.corrupt_peers)
      if (node >= nodes) throw ConfigError("corrupt_peer target out of range");
    if (install_timeout_ms < 0) throw ConfigError("install timeout must be >= 0");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["job_id"] = job_id;
    j["nodes"] = nodes;
    j["gpus_per_node"] = gpus_per_node;
    j["seed"] = seed;
    j["epoch_ms"] = epoch_ms;
    j["hot_updates"] = hot_updates;
    j["training_ms"] = training_ms;
    j["install_timeout_ms"] = install_timeout_ms;
    j["image"] = {{"total_bytes", image.total_bytes},
                  {"hot_bytes", image.hot_bytes},
                  {"block_size", image.block_size}};
    j["env"] = {{"deps_bytes", env.deps_bytes},
                {"cache_bytes", env.cache_bytes},
                {"install_compute_ms", env.install_compute_ms},
                {"restore_compute_ms", env.restore_compute_ms}};
    j["ckpt"] = {{"bytes_per_node", ckpt.bytes_per_node}, {"chunk_size", ckpt.chunk_size}};
    j["net"] = {{"registry_bandwidth", net.registry_bandwidth},
                {"peer_bandwidth", net.peer_bandwidth},
                {"source_bandwidth", net.source_bandwidth},
                {"store_bandwidth", net.store_bandwidth},
                {"hdfs_bandwidth", net.hdfs_bandwidth},
                {"rate_limit",
                 {{"threshold", net.rate_limit.threshold}, {"penalty", net.rate_limit.penalty}}}};
    j["stages"] = {{"queue_base_ms", stages.queue_base_ms},
                   {"alloc_base_ms", stages.alloc_base_ms},
                   {"container_start_ms", stages.container_start_ms},
                   {"init_compute_ms", stages.init_compute_ms},
                   {"sync_per_node_ms", stages.sync_per_node_ms},
                   {"hot_update_gap_ms", stages.hot_update_gap_ms}};
    j["jitter"] = {{"queue_sigma", jitter.queue_sigma},
                   {"image_sigma", jitter.image_sigma},
                   {"install_sigma", jitter.install_sigma},
                   {"restore_sigma", jitter.restore_sigma},
                   {"init_sigma", jitter.init_sigma}};
    j["policies"] = {{"image", image_policy_name(policies.image)},
                     {"env", env_policy_name(policies.env)},
                     {"ckpt", ckpt_policy_name(policies.ckpt)},
                     {"stripe_groups", policies.stripe_groups},
                     {"read_width", policies.read_width}};
    nlohmann::ordered_json slow = nlohmann::ordered_json::object();
    for (const auto& [node, factor] : faults.slow_nodes) slow[std::to_string(node)] = factor;
    j["faults"] = {{"slow_nodes", std::move(slow)},
                   {"corrupt_peers", std::vector<uint32_t>(faults.corrupt_peers.begin(),
                                                           faults.corrupt_peers.end())}};
    return j;
  }

  static ScenarioConfig from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    auto get = [](const nlohmann::json& obj, const char* key, auto& out) {
      if (obj.contains(key)) out = obj.at(key).get<std::decay_t<decltype(out)>>();
    };
    get(j, "name", c.name);
    get(j, "job_id", c.job_id);
    get(j, "nodes", c.nodes);
    get(j, "gpus_per_node", c.gpus_per_node);
    get(j, "seed", c.seed);
    get(j, "epoch_ms", c.epoch_ms);
    get(j, "hot_updates", c.hot_updates);
    get(j, "training_ms", c.training_ms);
    get(j, "install_timeout_ms", c.install_timeout_ms);
    if (j.contains("image")) {
      const auto& o = j.at("image");
      get(o, "total_bytes", c.image.total_bytes);
      get(o, "hot_bytes", c.image.hot_bytes);
      get(o, "block_size", c.image.block_size);
    }
    if (j.contains("env")) {
      const auto& o = j.at("env");
      get(o, "deps_bytes", c.env.deps_bytes);
      get(o, "cache_bytes", c.env.cache_bytes);
      get(o, "install_compute_ms", c.env.install_compute_ms);
      get(o, "restore_compute_ms", c.env.restore_compute_ms);
    }
    if (j.contains("ckpt")) {
      const auto& o = j.at("ckpt");
      get(o, "bytes_per_node", c.ckpt.bytes_per_node);
      get(o, "chunk_size", c.ckpt.chunk_size);
    }
    if (j.contains("net")) {
      const auto& o = j.at("net");
      get(o, "registry_bandwidth", c.net.registry_bandwidth);
      get(o, "peer_bandwidth", c.net.peer_bandwidth);
      get(o, "source_bandwidth", c.net.source_bandwidth);
      get(o, "store_bandwidth", c.net.store_bandwidth);
      get(o, "hdfs_bandwidth", c.net.hdfs_bandwidth);
      if (o.contains("rate_limit")) {
        get(o.at("rate_limit"), "threshold", c.net.rate_limit.threshold);
        get(o.at("rate_limit"), "penalty", c.net.rate_limit.penalty);
      }
    }
    if (j.contains("stages")) {
      const auto& o = j.at("stages");
      get(o, "queue_base_ms", c.stages.queue_base_ms);
      get(o, "alloc_base_ms", c.stages.alloc_base_ms);
      get(o, "container_start_ms", c.stages.container_start_ms);
      get(o, "init_compute_ms", c.stages.init_compute_ms);
      get(o, "sync_per_node_ms", c.stages.sync_per_node_ms);
      get(o, "hot_update_gap_ms", c.stages.hot_update_gap_ms);
    }
    if (j.contains("jitter")) {
      const auto& o = j.at("jitter");
      get(o, "queue_sigma", c.jitter.queue_sigma);
      get(o, "image_sigma", c.jitter.image_sigma);
      get(o, "install_sigma", c.jitter.install_sigma);
      get(o, "restore_sigma", c.jitter.restore_sigma);
      get(o, "init_sigma", c.jitter.init_sigma);
    }
    if (j.contains("policies")) {
      const auto& o = j.at("policies");
      if (o.contains("image")) c.policies.image = image_policy_from(o.at("image").get<std::string>());
      if (o.contains("env")) c.policies.env = env_policy_from(o.at("env").get<std::string>());
      if (o.contains("ckpt")) c.policies.ckpt = ckpt_policy_from(o.at("ckpt").get<std::string>());
      get(o, "stripe_groups", c.policies.stripe_groups);
      get(o, "read_width", c.policies.read_width);
    }
    if (j.contains("faults")) {
      const auto& o = j.at("faults");
      if (o.contains("slow_nodes"))
        for (const auto& [key, value] : o.at("slow_nodes").items())
          c.faults.slow_nodes[static_cast<uint32_t>(std::stoul(key))] = value.get<double>();
      if (o.contains("corrupt_peers"))
        for (const auto& v : o.at("corrupt_peers"))
          c.faults.corrupt_peers.insert(v.get<uint32_t>());
    }
    return c;
  }

  static ScenarioConfig parse(std::string_view payload) {
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed scenario json");
    return from_json(j);
  }

  std::string config_hash() const { return sha256(to_json().dump()).hex(); }
};

// ---- fault injection ----

struct Fault {
  enum class Kind : uint8_t { kSlowNode = 0, kCorruptPeer = 1, kSourceThrottle = 2 };
  Kind kind = Kind::kSlowNode;
  uint32_t node = 0;
  double factor = 1.0;     // slow_node
  RateLimit limit;         // source_throttle
  int64_t timeout_ms = 0;  // source_throttle: enable the install failure timeout

  static Fault parse(std::string_view payload) {
    nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed fault json");
    Fault f;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "slow_node") {
      f.kind = Kind::kSlowNode;
      f.node = j.at("node").get<uint32_t>();
      f.factor = j.at("factor").get<double>();
    } else if (kind == "corrupt_peer") {
      f.kind = Kind::kCorruptPeer;
      f.node = j.at("node").get<uint32_t>();
    } else if (kind == "source_throttle") {
      f.kind = Kind::kSourceThrottle;
      if (j.contains("threshold")) f.limit.threshold = j.at("threshold").get<uint32_t>();
      if (j.contains("penalty")) f.limit.penalty = j.at("penalty").get<double>();
      if (j.contains("timeout_ms")) f.timeout_ms = j.at("timeout_ms").get<int64_t>();
    } else {
      throw ConfigError("unknown fault kind: " + kind);
    }
    return f;
  }
};

// Returns a config that reproduces the named pathology deterministically.
inline ScenarioConfig inject_fault(ScenarioConfig cfg, const Fault& fault) {
  switch (fault.kind) {
    case Fault::Kind::kSlowNode:
      if (fault.node >= cfg.nodes) throw ConfigError("slow_node target out of range");
      if (fault.factor <= 0) throw ConfigError("slow_node factor must be positive");
      cfg.faults.slow_nodes[fault.node] = fault.factor;
      break;
    case Fault::Kind::kCorruptPeer:
      if (fault.node >= cfg.nodes) throw ConfigError("corrupt_peer target out of range");
      cfg.faults.corrupt_peers.insert(fault.node);
      break;
    case Fault::Kind::kSourceThrottle:
      if (fault.limit.threshold < 1) throw ConfigError("throttle threshold must be >= 1");
      if (fault.limit.penalty < 0) throw ConfigError("throttle penalty must be >= 0");
      cfg.net.rate_limit = fault.limit;
      if (fault.timeout_ms > 0) cfg.install_timeout_ms = fault.timeout_ms;
      break;
  }
  return cfg;
}

// ---- scenario execution ----

struct NodeTimeline {
  std::array<int64_t, kStageCount> begin_us{};
  std::array<int64_t, kStageCount> end_us{};
  std::array<bool, kStageCount> has_begin{};
  std::array<bool, kStageCount> has_end{};
  bool failed = false;
};

struct EpisodeTimeline {
  EpisodeKind kind = EpisodeKind::kFullStartup;
  std::vector<NodeTimeline> nodes;
};

struct JobRun {
  std::string job_id;
  uint32_t nodes = 0;
  uint32_t gpus = 0;
  bool failed = false;
  std::vector<std::string> failures;
  std::vector<EpisodeTimeline> episodes;
  std::vector<StageEvent> events;  // sorted, profiler-ready
};

struct SimResult {
  ScenarioConfig cfg;
  JobRun job;
  std::string log_text;  // BOOTSTAGE lines
  JobMeta meta;
  nlohmann::ordered_json manifest;
};

namespace sim_detail {

enum : uint64_t {
  kDrawQueue = 1,
  kDrawAlloc = 2,
  kDrawImageStart = 3,
  kDrawPeerPick = 4,
  kDrawInstallFetch = 5,
  kDrawInstallCompute = 6,
  kDrawRestore = 7,
  kDrawCkpt = 8,
  kDrawInitCompute = 9,
};

struct RunState {
  const ScenarioConfig& cfg;
  Sim sim;
  uint64_t job_hash;

  double jitter(uint32_t ep, uint32_t node, uint64_t purpose, double sigma) const {
    Rng rng(mix_key(cfg.seed, job_hash, (static_cast<uint64_t>(ep) << 32) | node, purpose));
    return rng.lognormal(0.0, sigma);
  }

  double slow(uint32_t node) const {
    auto it = cfg.faults.slow_nodes.find(node);
    return it == cfg.faults.slow_nodes.end() ? 1.0 : it->second;
  }
};

inline int64_t scaled_us(int64_t base_ms, double mult) {
  return std::llround(static_cast<double>(base_ms) * 1000.0 * mult);
}

// Image Loading. Baseline lazy loading faults the hot set in block-sized
// requests against the shared registry; every extra node thins the fair
// share, so the stage grows with scale. Prefetch pulls the whole hot set
// from a dedicated peer, flat in the job size; a corrupt peer costs one
// wasted attempt before falling back to the registry.
inline std::vector<int64_t> run_image_stage(RunState& st, uint32_t ep, int64_t begin_us) {
  const ScenarioConfig& cfg = st.cfg;
  std::vector<int64_t> ends(cfg.nodes, 0);
  FlowLink registry(st.sim, cfg.net.registry_bandwidth, cfg.net.rate_limit.threshold,
                    cfg.net.rate_limit.penalty);

  auto finish = [&st, &ends, ep](uint32_t node) {
    double mult = st.jitter(ep, node, kDrawImageStart, st.cfg.jitter.image_sigma) * st.slow(node);
    ends[node] = st.sim.now_us() + scaled_us(st.cfg.stages.container_start_ms, mult);
  };

  // the chain and the links outlive sim.run() below, so plain references
  // inside the callbacks are safe
  std::function<void(uint32_t, uint64_t)> chain;
  uint64_t nblocks = ceil_div(cfg.image.hot_bytes, cfg.image.block_size);
  chain = [&st, &registry, &finish, &chain, nblocks](uint32_t node, uint64_t k) {
    if (k == nblocks) {
      finish(node);
      return;
    }
    const auto& img = st.cfg.image;
    uint64_t bytes = k + 1 == nblocks ? img.hot_bytes - (nblocks - 1) * img.block_size
                                      : img.block_size;
    bytes = static_cast<uint64_t>(std::llround(static_cast<double>(bytes) * st.slow(node)));
    registry.transfer(bytes, [&chain, node, k] { chain(node, k + 1); });
  };

  if (cfg.policies.image == ImagePolicy::kLazyOnly) {
    for (uint32_t n = 0; n < cfg.nodes; ++n)
      st.sim.at(begin_us, [&chain, n] { chain(n, 0); });
  } else {
    for (uint32_t n = 0; n < cfg.nodes; ++n) {
      st.sim.at(begin_us, [&st, &registry, &finish, n, ep] {
        const ScenarioConfig& c = st.cfg;
        double mult = st.jitter(ep, n, kDrawImageStart, c.jitter.image_sigma) * st.slow(n);
        auto peer_us = static_cast<int64_t>(std::ceil(
            static_cast<double>(c.image.hot_bytes) / c.net.peer_bandwidth * mult * 1e6));
        bool peer_corrupt = false;
        if (c.nodes > 1) {
          Rng rng(mix_key(c.seed, st.job_hash, (static_cast<uint64_t>(ep) << 32) | n,
                          kDrawPeerPick));
          auto pick = static_cast<uint32_t>(rng.below(c.nodes - 1));
          uint32_t peer = pick >= n ? pick + 1 : pick;
          peer_corrupt = c.faults.corrupt_peers.count(peer) != 0;
        }
        st.sim.after(peer_us, [&st, &registry, &finish, n, peer_corrupt] {
          if (!peer_corrupt) {
            finish(n);
            return;  // clean peer transfer
          }
          // checksum mismatch: discard the peer copy, refetch from the registry
          auto bytes = static_cast<uint64_t>(
              std::llround(static_cast<double>(st.cfg.image.hot_bytes) * st.slow(n)));
          registry.transfer(bytes, [&finish, n] { finish(n); });
        });
      });
    }
  }
  st.sim.run();
  return ends;
}

// Environment Setup. Baseline installs pull the dependency bundle through
// the rate-limited package source and then run the install script; the
// cached policy restores the snapshot from the shared store instead. The
// cross-node handshake cost grows with the job and is not optimized away.
inline std::vector<int64_t> run_env_stage(RunState& st, uint32_t ep, int64_t begin_us,
                                          std::vector<NodeTimeline>& nodes,
                                          std::vector<std::string>& failures) {
  const ScenarioConfig& cfg = st.cfg;
  std::vector<int64_t> ends(cfg.nodes, 0);
  int64_t sync_us = cfg.stages.sync_per_node_ms * 1000LL * cfg.nodes;
  // both links outlive sim.run() below; only one sees traffic
  SlottedSource source(st.sim, cfg.net.source_bandwidth, cfg.net.rate_limit.threshold,
                       cfg.net.rate_limit.penalty);
  FlowLink store(st.sim, cfg.net.store_bandwidth);

  if (cfg.policies.env == EnvPolicy::kInstall) {
    for (uint32_t n = 0; n < cfg.nodes; ++n) {
      st.sim.at(begin_us, [&st, &source, &ends, &nodes, &failures, n, ep, begin_us, sync_us] {
        const ScenarioConfig& c = st.cfg;
        double fetch_mult =
            st.jitter(ep, n, kDrawInstallFetch, c.jitter.install_sigma) * st.slow(n);
        source.request(c.env.deps_bytes, fetch_mult,
                       [&st, &ends, &nodes, &failures, n, ep, begin_us, sync_us] {
          const ScenarioConfig& c = st.cfg;
          int64_t waited_ms = (st.sim.now_us() - begin_us) / 1000;
          if (c.install_timeout_ms > 0 && waited_ms > c.install_timeout_ms) {
            nodes[n].failed = true;
            failures.push_back("node " + std::to_string(n) +
                               ": dependency download exceeded " +
                               std::to_string(c.install_timeout_ms) + " ms (took " +
                               std::to_string(waited_ms) + " ms)");
            return;
          }
          double mult =
              st.jitter(ep, n, kDrawInstallCompute, c.jitter.install_sigma) * st.slow(n);
          ends[n] = st.sim.now_us() + scaled_us(c.env.install_compute_ms, mult) + sync_us;
        });
      });
    }
  } else {
    for (uint32_t n = 0; n < cfg.nodes; ++n) {
      st.sim.at(begin_us, [&st, &store, &ends, n, ep, sync_us] {
        store.transfer(st.cfg.env.cache_bytes, [&st, &ends, n, ep, sync_us] {
          const ScenarioConfig& c = st.cfg;
          double mult = st.jitter(ep, n, kDrawRestore, c.jitter.restore_sigma) * st.slow(n);
          ends[n] = st.sim.now_us() + scaled_us(c.env.restore_compute_ms, mult) + sync_us;
        });
      });
    }
  }
  st.sim.run();
  return ends;
}

// Model Initialization: rank setup plus the checkpoint read, which runs on
// a per-node storage lane; striping multiplies the lanes.
inline std::vector<int64_t> run_init_stage(RunState& st, uint32_t ep, int64_t begin_us) {
  const ScenarioConfig& cfg = st.cfg;
  std::vector<int64_t> ends(cfg.nodes, 0);
  uint64_t nchunks = ceil_div(cfg.ckpt.bytes_per_node, cfg.ckpt.chunk_size);
  uint32_t lanes = cfg.policies.ckpt == CkptPolicy::kStriped
                       ? std::min(cfg.policies.read_width, cfg.policies.stripe_groups)
                       : 1;
  auto per_chunk_us = static_cast<int64_t>(
      std::ceil(static_cast<double>(cfg.ckpt.chunk_size) / cfg.net.hdfs_bandwidth * 1e6));
  int64_t ckpt_us = static_cast<int64_t>(ceil_div(nchunks, lanes)) * per_chunk_us;
  for (uint32_t n = 0; n < cfg.nodes; ++n) {
    double read_mult = st.jitter(ep, n, kDrawCkpt, cfg.jitter.init_sigma) * st.slow(n);
    double init_mult = st.jitter(ep, n, kDrawInitCompute, cfg.jitter.init_sigma) * st.slow(n);
    ends[n] = begin_us +
              std::llround(static_cast<double>(ckpt_us) * read_mult) +
              scaled_us(cfg.stages.init_compute_ms, init_mult);
  }
  return ends;
}

}  // namespace sim_detail

// Plays one job's startup episodes - a full startup, then any hot updates -
// against the configured cluster model and renders the result as
// profiler-ingestible events plus a reproducibility manifest.
inline SimResult run_scenario(const ScenarioConfig& cfg) {
  using namespace sim_detail;
  cfg.validate();
  RunState st{cfg, Sim{}, hash_str(cfg.job_id)};

  SimResult result;
  result.cfg = cfg;
  JobRun& job = result.job;
  job.job_id = cfg.job_id;
  job.nodes = cfg.nodes;
  job.gpus = cfg.nodes * cfg.gpus_per_node;

  int64_t t = 0;
  uint32_t episodes = 1 + cfg.hot_updates;
  for (uint32_t ep = 0; ep < episodes && !job.failed; ++ep) {
    EpisodeTimeline tl;
    tl.kind = ep == 0 ? EpisodeKind::kFullStartup : EpisodeKind::kHotUpdate;
    tl.nodes.resize(cfg.nodes);
    auto record = [&tl](Stage s, uint32_t node, int64_t begin, int64_t end, bool ended) {
      auto& node_tl = tl.nodes[node];
      size_t i = static_cast<size_t>(s);
      node_tl.begin_us[i] = begin;
      node_tl.has_begin[i] = true;
      node_tl.end_us[i] = end;
      node_tl.has_end[i] = ended;
    };

    if (ep == 0) {
      // scheduler phase: job-level, identical on every node
      int64_t queue_us = scaled_us(cfg.stages.queue_base_ms,
                                   st.jitter(ep, UINT32_MAX, kDrawQueue, cfg.jitter.queue_sigma));
      int64_t alloc_us = scaled_us(cfg.stages.alloc_base_ms,
                                   st.jitter(ep, UINT32_MAX, kDrawAlloc, cfg.jitter.queue_sigma));
      for (uint32_t n = 0; n < cfg.nodes; ++n) {
        record(Stage::kResourceQueuing, n, t, t + queue_us, true);
        record(Stage::kResourceAllocation, n, t + queue_us, t + queue_us + alloc_us, true);
      }
      t += queue_us + alloc_us;

      std::vector<int64_t> ends = run_image_stage(st, ep, t);
      for (uint32_t n = 0; n < cfg.nodes; ++n)
        record(Stage::kImageLoading, n, t, ends[n], true);
      t = *std::max_element(ends.begin(), ends.end());
    }

    std::vector<int64_t> env_ends = run_env_stage(st, ep, t, tl.nodes, job.failures);
    bool env_failed = false;
    for (uint32_t n = 0; n < cfg.nodes; ++n) {
      record(Stage::kEnvironmentSetup, n, t, env_ends[n], !tl.nodes[n].failed);
      env_failed = env_failed || tl.nodes[n].failed;
    }
    if (env_failed) {
      job.failed = true;
      job.episodes.push_back(std::move(tl));
      break;
    }
    t = *std::max_element(env_ends.begin(), env_ends.end());

    std::vector<int64_t> init_ends = run_init_stage(st, ep, t);
    for (uint32_t n = 0; n < cfg.nodes; ++n)
      record(Stage::kModelInitialization, n, t, init_ends[n], true);
    t = *std::max_element(init_ends.begin(), init_ends.end());

    job.episodes.push_back(std::move(tl));
    t += cfg.stages.hot_update_gap_ms * 1000;
  }

  // render events
  for (const EpisodeTimeline& tl : job.episodes) {
    for (uint32_t n = 0; n < cfg.nodes; ++n) {
      for (size_t s = 0; s < kStageCount; ++s) {
        if (!tl.nodes[n].has_begin[s]) continue;
        auto stage = static_cast<Stage>(s);
        job.events.push_back({cfg.epoch_ms + tl.nodes[n].begin_us[s] / 1000, cfg.job_id, n,
                              stage, Edge::kBegin});
        if (tl.nodes[n].has_end[s])
          job.events.push_back({cfg.epoch_ms + tl.nodes[n].end_us[s] / 1000, cfg.job_id, n,
                                stage, Edge::kEnd});
      }
    }
  }
  std::stable_sort(job.events.begin(), job.events.end(),
                   [](const StageEvent& a, const StageEvent& b) { return a.key() < b.key(); });
  for (const StageEvent& e : job.events) {
    result.log_text += format_event(e);
    result.log_text += '\n';
  }

  result.meta = {cfg.job_id, cfg.nodes, job.gpus, cfg.training_ms};
  result.manifest = {{"format", "coldboot-sim/1"},
                     {"name", cfg.name},
                     {"job", cfg.job_id},
                     {"seed", cfg.seed},
                     {"nodes", cfg.nodes},
                     {"gpus", job.gpus},
                     {"episodes", job.episodes.size()},
                     {"policies",
                      {{"image", image_policy_name(cfg.policies.image)},
                       {"env", env_policy_name(cfg.policies.env)},
                       {"ckpt", ckpt_policy_name(cfg.policies.ckpt)}}},
                     {"config_sha256", cfg.config_hash()},
                     {"outcome", job.failed ? "failed" : "ok"},
                     {"failures", job.failures}};
  return result;
}

// boot.log + jobs.json + manifest.json under dir
inline void write_run_files(const SimResult& result, const fs::path& dir) {
  ensure_dir(dir);
  write_file_atomic(dir / "boot.log", result.log_text);
  write_file_atomic(dir / "jobs.json", dump_jobs_meta({result.meta}));
  write_file_atomic(dir / "manifest.json", result.manifest.dump(2) + "\n");
}

}  // namespace coldboot

#endif  // COLDBOOT_SIM_HPP_
