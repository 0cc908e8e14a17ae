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

#ifndef COLDBOOT_PROFILER_HPP_
#define COLDBOOT_PROFILER_HPP_

#include <algorithm>
#include <array>
#include <charconv>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "coldboot/util.hpp"

namespace coldboot {

// ---- stage events ----

// The startup pipeline in execution order. Queuing and allocation happen
// before any GPU machine is held; the last three stages run on allocated
// nodes and end with a cross-node synchronization barrier.
enum class Stage : uint8_t {
  kResourceQueuing = 0,
  kResourceAllocation = 1,
  kImageLoading = 2,
  kEnvironmentSetup = 3,
  kModelInitialization = 4,
};

constexpr size_t kStageCount = 5;

constexpr std::array<Stage, kStageCount> kAllStages = {
    Stage::kResourceQueuing, Stage::kResourceAllocation, Stage::kImageLoading,
    Stage::kEnvironmentSetup, Stage::kModelInitialization};

inline std::string_view stage_name(Stage s) {
  static constexpr std::array<std::string_view, kStageCount> kNames = {
      "ResourceQueuing", "ResourceAllocation", "ImageLoading", "EnvironmentSetup",
      "ModelInitialization"};
  return kNames[static_cast<size_t>(s)];
}

inline std::optional<Stage> stage_from_name(std::string_view name) {
  for (Stage s : kAllStages)
    if (stage_name(s) == name) return s;
  return std::nullopt;
}

// Only the worker-phase stages hold GPU machines; they are also the ones
// that end at a barrier, so one slow node stalls the whole job.
constexpr bool stage_consumes_gpu(Stage s) { return s >= Stage::kImageLoading; }
constexpr bool stage_synchronizes(Stage s) { return s >= Stage::kImageLoading; }

enum class Edge : uint8_t { kBegin = 0, kEnd = 1 };

struct StageEvent {
  int64_t ts_ms = 0;  // unix milliseconds
  std::string job_id;
  uint32_t node_id = 0;
  Stage stage = Stage::kResourceQueuing;
  Edge edge = Edge::kBegin;

  bool operator==(const StageEvent&) const = default;

  // sort key: timestamp, then node, stage order, begin before end
  auto key() const { return std::tuple(ts_ms, node_id, stage, edge); }
};

inline std::string format_event(const StageEvent& e) {
  std::string s = "BOOTSTAGE ts=" + std::to_string(e.ts_ms) + " job=" + e.job_id +
                  " node=" + std::to_string(e.node_id) + " stage=";
  s += stage_name(e.stage);
  s += " edge=";
  s += e.edge == Edge::kBegin ? "begin" : "end";
  return s;
}

// ---- log parsing ----

struct ParseResult {
  std::vector<StageEvent> events;  // sorted by StageEvent::key
  uint64_t malformed_count = 0;
  std::vector<size_t> malformed_lines;  // 1-based line numbers
};

namespace profiler_detail {

inline bool take(std::string_view& s, std::string_view prefix) {
  if (!s.starts_with(prefix)) return false;
  s.remove_prefix(prefix.size());
  return true;
}

// next space-terminated token; the final field consumes the rest
inline std::optional<std::string_view> token(std::string_view& s, bool last) {
  if (last) {
    std::string_view t = s;
    s = {};
    return t.empty() ? std::nullopt : std::optional(t);
  }
  size_t sp = s.find(' ');
  if (sp == std::string_view::npos || sp == 0) return std::nullopt;
  std::string_view t = s.substr(0, sp);
  s.remove_prefix(sp + 1);
  return t;
}

template <typename Int>
inline bool parse_int(std::string_view t, Int& out) {
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc() && p == t.data() + t.size();
}

inline std::optional<StageEvent> parse_line(std::string_view line) {
  StageEvent e;
  if (!take(line, "BOOTSTAGE ")) return std::nullopt;
  if (!take(line, "ts=")) return std::nullopt;
  auto ts = token(line, false);
  if (!ts || !parse_int(*ts, e.ts_ms)) return std::nullopt;
  if (!take(line, "job=")) return std::nullopt;
  auto job = token(line, false);
  if (!job) return std::nullopt;
  e.job_id = *job;
  if (!take(line, "node=")) return std::nullopt;
  auto node = token(line, false);
  if (!node || !parse_int(*node, e.node_id)) return std::nullopt;
  if (!take(line, "stage=")) return std::nullopt;
  auto stage = token(line, false);
  if (!stage) return std::nullopt;
  auto s = stage_from_name(*stage);
  if (!s) return std::nullopt;
  e.stage = *s;
  if (!take(line, "edge=")) return std::nullopt;
  auto edge = token(line, true);
  if (!edge) return std::nullopt;
  if (*edge == "begin") e.edge = Edge::kBegin;
  else if (*edge == "end") e.edge = Edge::kEnd;
  else return std::nullopt;
  return e;
}

}  // namespace profiler_detail

// Parses a whole log. Malformed lines never abort the run: they are skipped
// and reported alongside the events. Blank lines are ignored entirely.
inline ParseResult parse_log(std::string_view text) {
  ParseResult out;
  size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.ends_with('\r')) line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    auto e = profiler_detail::parse_line(line);
    if (e) {
      out.events.push_back(std::move(*e));
    } else {
      ++out.malformed_count;
      out.malformed_lines.push_back(lineno);
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const StageEvent& a, const StageEvent& b) { return a.key() < b.key(); });
  return out;
}

// Thread-safe ingestion point; analysis always runs on an immutable sorted
// snapshot, never on the live buffer.
class EventLog {
 public:
  void append(StageEvent e) {
    std::lock_guard lock(mu_);
    events_.push_back(std::move(e));
  }

  void append_all(const std::vector<StageEvent>& events) {
    std::lock_guard lock(mu_);
    events_.insert(events_.end(), events.begin(), events.end());
  }

  std::vector<StageEvent> snapshot() const {
    std::vector<StageEvent> copy;
    {
      std::lock_guard lock(mu_);
      copy = events_;
    }
    std::stable_sort(copy.begin(), copy.end(),
                     [](const StageEvent& a, const StageEvent& b) { return a.key() < b.key(); });
    return copy;
  }

  // one formatted line per event, in snapshot order
  std::string dump() const {
    std::string out;
    for (const StageEvent& e : snapshot()) {
      out += format_event(e);
      out += '\n';
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::vector<StageEvent> events_;
};

// ---- durations ----

// A job's life is a sequence of startup episodes. A full startup walks all
// five stages; a hot update reruns only environment setup and model
// initialization.
enum class EpisodeKind : uint8_t { kFullStartup = 0, kHotUpdate = 1 };

inline std::string_view episode_kind_name(EpisodeKind k) {
  return k == EpisodeKind::kFullStartup ? "full_startup" : "hot_update";
}

struct StageSpan {
  int64_t begin_ms = 0;
  int64_t end_ms = 0;
  int64_t duration_ms() const { return end_ms - begin_ms; }
};

struct NodeStages {
  uint32_t node_id = 0;
  std::map<Stage, StageSpan> spans;         // complete stages only
  std::map<Stage, int64_t> barrier_waits;   // sync stages: job stage end - own end
  int64_t node_total_ms = 0;                // sum of own durations, waits excluded

  int64_t duration_ms(Stage s) const { return spans.at(s).duration_ms(); }
  bool has(Stage s) const { return spans.count(s) != 0; }
};

struct JobStageSpan {
  int64_t begin_ms = 0;  // earliest begin across nodes
  int64_t end_ms = 0;    // latest end across nodes
  int64_t span_ms() const { return end_ms - begin_ms; }
};

struct EpisodeDurations {
  std::string job_id;
  int episode = 0;  // per-job ordinal, 0-based
  EpisodeKind kind = EpisodeKind::kFullStartup;
  std::vector<NodeStages> nodes;           // sorted by node_id
  std::map<Stage, JobStageSpan> stage_spans;
  bool complete = false;          // every node finished model initialization
  int64_t submit_ms = 0;          // earliest begin edge in the episode
  int64_t training_begin_ms = 0;  // latest model-initialization end edge
  int64_t job_total_ms = 0;       // submit to training begin
};

struct IncompleteEntry {
  std::string job_id;
  uint32_t node_id = 0;
  int episode = 0;
  Stage stage = Stage::kResourceQueuing;
  std::string reason;
};

struct StageDurations {
  std::vector<EpisodeDurations> episodes;  // sorted by (job_id, episode)
  std::vector<IncompleteEntry> incomplete;
};

namespace profiler_detail {

struct RawSpan {
  bool begun = false, ended = false;
  int64_t begin_ms = 0, end_ms = 0;
};

struct RawEpisode {
  std::array<RawSpan, kStageCount> spans;
  int last_begun = -1;
  bool any = false;
};

}  // namespace profiler_detail

// Folds an event stream into per-episode durations. A begin edge for a
// stage at or before the last stage begun on that node opens a new episode;
// within an episode the pipeline order is strict. Begin edges without a
// matching end (and orphan ends) leave the stage out of all aggregates and
// produce an incomplete-report entry instead.
inline StageDurations compute_durations(const std::vector<StageEvent>& events) {
  using profiler_detail::RawEpisode;
  StageDurations out;

  std::map<std::pair<std::string, uint32_t>, std::vector<RawEpisode>> per_node;
  for (const StageEvent& e : events) {
    auto& episodes = per_node[{e.job_id, e.node_id}];
    if (episodes.empty()) episodes.emplace_back();
    RawEpisode* cur = &episodes.back();
    size_t s = static_cast<size_t>(e.stage);
    if (e.edge == Edge::kBegin) {
      if (cur->any && static_cast<int>(s) <= cur->last_begun) {
        episodes.emplace_back();
        cur = &episodes.back();
      }
      cur->spans[s].begun = true;
      cur->spans[s].begin_ms = e.ts_ms;
      cur->last_begun = static_cast<int>(s);
      cur->any = true;
    } else {
      if (cur->spans[s].begun && !cur->spans[s].ended) {
        cur->spans[s].ended = true;
        cur->spans[s].end_ms = e.ts_ms;
      } else {
        out.incomplete.push_back({e.job_id, e.node_id,
                                  static_cast<int>(episodes.size()) - 1, e.stage,
                                  "end without matching begin"});
      }
    }
  }

  // begun-but-never-ended spans
  for (const auto& [key, episodes] : per_node)
    for (size_t k = 0; k < episodes.size(); ++k)
      for (size_t s = 0; s < kStageCount; ++s) {
        const auto& span = episodes[k].spans[s];
        if (span.begun && !span.ended)
          out.incomplete.push_back({key.first, key.second, static_cast<int>(k),
                                    static_cast<Stage>(s), "begin without end"});
      }

  // regroup per job and align episodes across nodes by their ordinal
  std::map<std::string, std::map<uint32_t, const std::vector<RawEpisode>*>> per_job;
  for (const auto& [key, episodes] : per_node) per_job[key.first][key.second] = &episodes;

  for (const auto& [job_id, nodes] : per_job) {
    size_t count = 0;
    for (const auto& [_, eps] : nodes) count = std::max(count, eps->size());
    for (size_t k = 0; k < count; ++k) {
      EpisodeDurations ed;
      ed.job_id = job_id;
      ed.episode = static_cast<int>(k);
      bool full = false;
      bool all_initialized = true;
      int64_t submit = INT64_MAX, training_begin = INT64_MIN;

      for (const auto& [node_id, eps] : nodes) {
        if (k >= eps->size()) {
          all_initialized = false;
          continue;
        }
        const RawEpisode& raw = (*eps)[k];
        NodeStages ns;
        ns.node_id = node_id;
        for (size_t s = 0; s < kStageCount; ++s) {
          const auto& span = raw.spans[s];
          if (span.begun && s < static_cast<size_t>(Stage::kEnvironmentSetup)) full = true;
          if (!span.begun || !span.ended) continue;
          ns.spans[static_cast<Stage>(s)] = {span.begin_ms, span.end_ms};
          ns.node_total_ms += span.end_ms - span.begin_ms;
          submit = std::min(submit, span.begin_ms);
        }
        if (ns.has(Stage::kModelInitialization))
          training_begin = std::max(training_begin,
                                    ns.spans.at(Stage::kModelInitialization).end_ms);
        else
          all_initialized = false;
        ed.nodes.push_back(std::move(ns));
      }

      ed.kind = full ? EpisodeKind::kFullStartup : EpisodeKind::kHotUpdate;
      for (Stage s : kAllStages) {
        int64_t b = INT64_MAX, e = INT64_MIN;
        for (const NodeStages& ns : ed.nodes)
          if (ns.has(s)) {
            b = std::min(b, ns.spans.at(s).begin_ms);
            e = std::max(e, ns.spans.at(s).end_ms);
          }
        if (e >= b && b != INT64_MAX) ed.stage_spans[s] = {b, e};
      }
      for (Stage s : kAllStages) {
        if (!stage_synchronizes(s) || !ed.stage_spans.count(s)) continue;
        int64_t job_end = ed.stage_spans.at(s).end_ms;
        for (NodeStages& ns : ed.nodes)
          if (ns.has(s)) ns.barrier_waits[s] = job_end - ns.spans.at(s).end_ms;
      }
      ed.complete = all_initialized && !ed.nodes.empty();
      if (submit != INT64_MAX && training_begin != INT64_MIN) {
        ed.submit_ms = submit;
        ed.training_begin_ms = training_begin;
        ed.job_total_ms = training_begin - submit;
      } else {
        ed.complete = false;
      }
      out.episodes.push_back(std::move(ed));
    }
  }
  return out;
}

// ---- stragglers ----

struct StragglerStat {
  std::string job_id;
  int episode = 0;
  Stage stage = Stage::kEnvironmentSetup;
  uint32_t nodes = 0;
  int64_t max_ms = 0;
  int64_t median_ms = 0;  // lower median
  double max_median_ratio = 0;
};

// Max/Median of per-node stage durations, one entry per episode where at
// least one node completed the stage. The median is the lower median so
// integer inputs stay integers.
inline std::vector<StragglerStat> straggler_stats(const StageDurations& durations, Stage stage) {
  std::vector<StragglerStat> out;
  for (const EpisodeDurations& ed : durations.episodes) {
    std::vector<int64_t> values;
    for (const NodeStages& ns : ed.nodes)
      if (ns.has(stage)) values.push_back(ns.duration_ms(stage));
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    int64_t median = values[(values.size() - 1) / 2];
    if (median <= 0)
      throw MetricError("non-positive median duration for " + std::string(stage_name(stage)) +
                        " in job " + ed.job_id);
    StragglerStat st;
    st.job_id = ed.job_id;
    st.episode = ed.episode;
    st.stage = stage;
    st.nodes = static_cast<uint32_t>(values.size());
    st.max_ms = values.back();
    st.median_ms = median;
    st.max_median_ratio = static_cast<double>(st.max_ms) / static_cast<double>(median);
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace coldboot

#endif  // COLDBOOT_PROFILER_HPP_
