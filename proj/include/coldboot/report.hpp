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

#ifndef COLDBOOT_REPORT_HPP_
#define COLDBOOT_REPORT_HPP_

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coldboot/profiler.hpp"
#include "coldboot/svg.hpp"
#include "coldboot/util.hpp"

namespace coldboot {

// ---- job metadata sidecar ----

// What the logs cannot carry: how many servers and GPUs a job held and how
// long it actually trained once started.
struct JobMeta {
  std::string job_id;
  uint32_t nodes = 0;  // GPU servers
  uint32_t gpus = 0;
  int64_t training_ms = 0;  // total productive training time over the window

  nlohmann::ordered_json to_json() const {
    return {{"job", job_id}, {"nodes", nodes}, {"gpus", gpus}, {"training_ms", training_ms}};
  }

  static JobMeta from_json(const nlohmann::json& j) {
    JobMeta m;
    m.job_id = j.at("job").get<std::string>();
    m.nodes = j.at("nodes").get<uint32_t>();
    m.gpus = j.at("gpus").get<uint32_t>();
    m.training_ms = j.at("training_ms").get<int64_t>();
    return m;
  }
};

inline std::vector<JobMeta> parse_jobs_meta(std::string_view payload) {
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw ReportError("malformed jobs metadata json");
  std::vector<JobMeta> out;
  try {
    for (const auto& item : j) out.push_back(JobMeta::from_json(item));
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed jobs metadata: ") + e.what());
  }
  return out;
}

inline std::string dump_jobs_meta(const std::vector<JobMeta>& jobs) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& m : jobs) j.push_back(m.to_json());
  return j.dump(2) + "\n";
}

// ---- waste report ----

struct ReportOptions {
  // upper bucket edges for per-scale breakdowns, in GPUs; an overflow
  // bucket is appended
  std::vector<uint32_t> scale_edges = {100, 500, 1000, 5000};
  // dependency installation lives here, the usual straggler proxy
  Stage straggler_stage = Stage::kEnvironmentSetup;
};

struct JobRow {
  std::string job_id;
  uint32_t nodes = 0;
  uint32_t gpus = 0;
  uint64_t episodes = 0;
  uint64_t full_startups = 0;
  uint64_t hot_updates = 0;
  double training_hours = 0;  // server-hours
  double startup_hours = 0;   // server-hours, GPU-consuming stages + waits
  double startup_share = 0;
  double mean_job_total_s = 0;   // over complete episodes
  double mean_node_total_s = 0;  // over node-episodes
};

struct ScaleRow {
  std::string label;
  uint32_t lo = 0, hi = 0;  // gpu range, hi 0 means unbounded
  uint64_t jobs = 0;
  uint64_t episodes = 0;
  double training_hours = 0;
  double startup_hours = 0;
  double startup_share = 0;
  double mean_job_total_s = 0;
  double mean_max_median = 0;  // straggler ratio, mean over episodes
};

struct WasteReport {
  double training_server_hours = 0;
  double startup_server_hours = 0;
  double startup_share = 0;
  uint64_t jobs = 0;
  uint64_t episodes = 0;
  uint64_t full_startups = 0;
  uint64_t hot_updates = 0;
  // per stage, summed over all node-episodes
  std::array<double, kStageCount> stage_hours{};
  std::array<double, kStageCount> wait_hours{};
  std::vector<JobRow> job_rows;      // sorted by job id
  std::vector<ScaleRow> by_scale;    // bucket order, empty buckets included

  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
};

namespace report_detail {

constexpr double kMsPerHour = 3600000.0;

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline double share(double startup, double training) {
  double total = startup + training;
  return total > 0 ? startup / total : 0.0;
}

// Spans on one node must not overlap; an overlap means the log mixed two
// distinct runs and any report built from it would double-count hours.
inline void check_overlaps(const StageDurations& durations) {
  struct Flat {
    int64_t begin, end;
    Stage stage;
    int episode;
  };
  std::string conflicts;
  std::map<std::pair<std::string, uint32_t>, std::vector<Flat>> per_node;
  for (const EpisodeDurations& ed : durations.episodes)
    for (const NodeStages& ns : ed.nodes)
      for (const auto& [stage, span] : ns.spans)
        per_node[{ed.job_id, ns.node_id}].push_back(
            {span.begin_ms, span.end_ms, stage, ed.episode});
  for (auto& [key, spans] : per_node) {
    std::sort(spans.begin(), spans.end(), [](const Flat& a, const Flat& b) {
      return std::tie(a.begin, a.end) < std::tie(b.begin, b.end);
    });
    for (size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].begin < spans[i - 1].end) {
        if (!conflicts.empty()) conflicts += "; ";
        conflicts += "job " + key.first + " node " + std::to_string(key.second) + ": " +
                     std::string(stage_name(spans[i - 1].stage)) + " [" +
                     std::to_string(spans[i - 1].begin) + "," +
                     std::to_string(spans[i - 1].end) + ") overlaps " +
                     std::string(stage_name(spans[i].stage)) + " [" +
                     std::to_string(spans[i].begin) + "," + std::to_string(spans[i].end) + ")";
      }
    }
  }
  if (!conflicts.empty()) throw ReportError("overlapping spans: " + conflicts);
}

}  // namespace report_detail

// Splits the window's server-hours into training and startup overhead.
// Only the GPU-consuming stages (plus their barrier waits) count as
// startup waste; queuing and allocation happen before machines are held.
inline WasteReport cluster_report(const StageDurations& durations,
                                  const std::vector<JobMeta>& jobs,
                                  const ReportOptions& opt = {}) {
  using report_detail::kMsPerHour;
  report_detail::check_overlaps(durations);

  std::map<std::string, const JobMeta*> meta;
  for (const JobMeta& m : jobs) meta[m.job_id] = &m;
  for (const EpisodeDurations& ed : durations.episodes)
    if (!meta.count(ed.job_id)) throw ReportError("no metadata for job " + ed.job_id);

  // straggler ratio per (job, episode) for the per-scale breakdown
  std::map<std::pair<std::string, int>, double> ratios;
  for (const StragglerStat& st : straggler_stats(durations, opt.straggler_stage))
    ratios[{st.job_id, st.episode}] = st.max_median_ratio;

  WasteReport report;
  std::map<std::string, JobRow> rows;
  for (const JobMeta& m : jobs) {
    JobRow row;
    row.job_id = m.job_id;
    row.nodes = m.nodes;
    row.gpus = m.gpus;
    row.training_hours = static_cast<double>(m.nodes) *
                         (static_cast<double>(m.training_ms) / kMsPerHour);
    rows[m.job_id] = std::move(row);
  }

  std::map<std::string, std::pair<double, uint64_t>> job_totals;   // sum s, n episodes
  std::map<std::string, std::pair<double, uint64_t>> node_totals;  // sum s, n node-episodes
  for (const EpisodeDurations& ed : durations.episodes) {
    JobRow& row = rows.at(ed.job_id);
    ++row.episodes;
    if (ed.kind == EpisodeKind::kFullStartup) ++row.full_startups;
    else ++row.hot_updates;
    if (ed.complete) {
      job_totals[ed.job_id].first += static_cast<double>(ed.job_total_ms) / 1000.0;
      ++job_totals[ed.job_id].second;
    }
    for (const NodeStages& ns : ed.nodes) {
      node_totals[ed.job_id].first += static_cast<double>(ns.node_total_ms) / 1000.0;
      ++node_totals[ed.job_id].second;
      for (const auto& [stage, span] : ns.spans) {
        double hours = static_cast<double>(span.duration_ms()) / kMsPerHour;
        report.stage_hours[static_cast<size_t>(stage)] += hours;
        double wait = ns.barrier_waits.count(stage)
                          ? static_cast<double>(ns.barrier_waits.at(stage)) / kMsPerHour
                          : 0.0;
        report.wait_hours[static_cast<size_t>(stage)] += wait;
        if (stage_consumes_gpu(stage)) row.startup_hours += hours + wait;
      }
    }
  }

  for (auto& [job_id, row] : rows) {
    row.startup_share = report_detail::share(row.startup_hours, row.training_hours);
    if (auto it = job_totals.find(job_id); it != job_totals.end())
      row.mean_job_total_s = it->second.first / static_cast<double>(it->second.second);
    if (auto it = node_totals.find(job_id); it != node_totals.end())
      row.mean_node_total_s = it->second.first / static_cast<double>(it->second.second);
    report.training_server_hours += row.training_hours;
    report.startup_server_hours += row.startup_hours;
    ++report.jobs;
    report.episodes += row.episodes;
    report.full_startups += row.full_startups;
    report.hot_updates += row.hot_updates;
    report.job_rows.push_back(row);
  }
  report.startup_share =
      report_detail::share(report.startup_server_hours, report.training_server_hours);

  // per-scale buckets over GPU count
  uint32_t lo = 0;
  std::vector<std::pair<uint32_t, uint32_t>> ranges;
  for (uint32_t edge : opt.scale_edges) {
    ranges.emplace_back(lo, edge);
    lo = edge + 1;
  }
  ranges.emplace_back(lo, 0);
  for (auto [rlo, rhi] : ranges) {
    ScaleRow sr;
    sr.lo = rlo;
    sr.hi = rhi;
    sr.label = rhi == 0 ? ">" + std::to_string(rlo - 1)
                        : (rlo == 0 ? "<=" + std::to_string(rhi)
                                    : std::to_string(rlo) + "-" + std::to_string(rhi));
    report.by_scale.push_back(std::move(sr));
  }
  auto bucket_of = [&](uint32_t gpus) {
    for (size_t i = 0; i < report.by_scale.size(); ++i)
      if (report.by_scale[i].hi == 0 || gpus <= report.by_scale[i].hi) return i;
    return report.by_scale.size() - 1;
  };
  std::vector<std::pair<double, uint64_t>> bucket_job_total(report.by_scale.size());
  std::vector<std::pair<double, uint64_t>> bucket_ratio(report.by_scale.size());
  for (const JobRow& row : report.job_rows) {
    ScaleRow& sr = report.by_scale[bucket_of(row.gpus)];
    ++sr.jobs;
    sr.episodes += row.episodes;
    sr.training_hours += row.training_hours;
    sr.startup_hours += row.startup_hours;
  }
  for (const EpisodeDurations& ed : durations.episodes) {
    size_t b = bucket_of(rows.at(ed.job_id).gpus);
    if (ed.complete) {
      bucket_job_total[b].first += static_cast<double>(ed.job_total_ms) / 1000.0;
      ++bucket_job_total[b].second;
    }
    if (auto it = ratios.find({ed.job_id, ed.episode}); it != ratios.end()) {
      bucket_ratio[b].first += it->second;
      ++bucket_ratio[b].second;
    }
  }
  for (size_t i = 0; i < report.by_scale.size(); ++i) {
    ScaleRow& sr = report.by_scale[i];
    sr.startup_share = report_detail::share(sr.startup_hours, sr.training_hours);
    if (bucket_job_total[i].second)
      sr.mean_job_total_s =
          bucket_job_total[i].first / static_cast<double>(bucket_job_total[i].second);
    if (bucket_ratio[i].second)
      sr.mean_max_median = bucket_ratio[i].first / static_cast<double>(bucket_ratio[i].second);
  }
  return report;
}

inline nlohmann::ordered_json WasteReport::to_json() const {
  nlohmann::ordered_json j;
  j["totals"] = {{"training_server_hours", training_server_hours},
                 {"startup_server_hours", startup_server_hours},
                 {"startup_share", startup_share},
                 {"jobs", jobs},
                 {"episodes", episodes},
                 {"full_startups", full_startups},
                 {"hot_updates", hot_updates}};
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (Stage s : kAllStages)
    stages.push_back({{"stage", stage_name(s)},
                      {"duration_hours", stage_hours[static_cast<size_t>(s)]},
                      {"wait_hours", wait_hours[static_cast<size_t>(s)]},
                      {"consumes_gpu", stage_consumes_gpu(s)}});
  j["stages"] = std::move(stages);
  nlohmann::ordered_json jjobs = nlohmann::ordered_json::array();
  for (const JobRow& r : job_rows)
    jjobs.push_back({{"job", r.job_id},
                     {"nodes", r.nodes},
                     {"gpus", r.gpus},
                     {"episodes", r.episodes},
                     {"full_startups", r.full_startups},
                     {"hot_updates", r.hot_updates},
                     {"training_hours", r.training_hours},
                     {"startup_hours", r.startup_hours},
                     {"startup_share", r.startup_share},
                     {"mean_job_total_s", r.mean_job_total_s},
                     {"mean_node_total_s", r.mean_node_total_s}});
  j["jobs"] = std::move(jjobs);
  nlohmann::ordered_json scales = nlohmann::ordered_json::array();
  for (const ScaleRow& r : by_scale)
    scales.push_back({{"scale", r.label},
                      {"jobs", r.jobs},
                      {"episodes", r.episodes},
                      {"training_hours", r.training_hours},
                      {"startup_hours", r.startup_hours},
                      {"startup_share", r.startup_share},
                      {"mean_job_total_s", r.mean_job_total_s},
                      {"mean_max_median", r.mean_max_median}});
  j["by_scale"] = std::move(scales);
  return j;
}

inline std::string WasteReport::to_csv() const {
  using report_detail::num;
  std::string out;
  out += "section,training_server_hours,startup_server_hours,startup_share,jobs,episodes,"
         "full_startups,hot_updates\n";
  out += "totals," + num(training_server_hours) + "," + num(startup_server_hours) + "," +
         num(startup_share) + "," + std::to_string(jobs) + "," + std::to_string(episodes) +
         "," + std::to_string(full_startups) + "," + std::to_string(hot_updates) + "\n";
  out += "\nstage,duration_hours,wait_hours,consumes_gpu\n";
  for (Stage s : kAllStages) {
    out += std::string(stage_name(s)) + "," + num(stage_hours[static_cast<size_t>(s)]) + "," +
           num(wait_hours[static_cast<size_t>(s)]) + "," +
           (stage_consumes_gpu(s) ? "1" : "0") + "\n";
  }
  out += "\njob,nodes,gpus,episodes,full_startups,hot_updates,training_hours,startup_hours,"
         "startup_share,mean_job_total_s,mean_node_total_s\n";
  for (const JobRow& r : job_rows) {
    out += r.job_id + "," + std::to_string(r.nodes) + "," + std::to_string(r.gpus) + "," +
           std::to_string(r.episodes) + "," + std::to_string(r.full_startups) + "," +
           std::to_string(r.hot_updates) + "," + num(r.training_hours) + "," +
           num(r.startup_hours) + "," + num(r.startup_share) + "," + num(r.mean_job_total_s) +
           "," + num(r.mean_node_total_s) + "\n";
  }
  out += "\nscale,jobs,episodes,training_hours,startup_hours,startup_share,mean_job_total_s,"
         "mean_max_median\n";
  for (const ScaleRow& r : by_scale) {
    out += r.label + "," + std::to_string(r.jobs) + "," + std::to_string(r.episodes) + "," +
           num(r.training_hours) + "," + num(r.startup_hours) + "," + num(r.startup_share) +
           "," + num(r.mean_job_total_s) + "," + num(r.mean_max_median) + "\n";
  }
  return out;
}

// report.json + report.csv + the three standard charts
inline void write_report_files(const WasteReport& report, const fs::path& dir) {
  ensure_dir(dir);
  write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(dir / "report.csv", report.to_csv());

  write_file_atomic(dir / "gpu_hours.svg",
                    svg_bar_chart("GPU server-hours: training vs startup",
                                  {"training", "startup"},
                                  {{"server-hours",
                                    {report.training_server_hours, report.startup_server_hours}}},
                                  "server-hours"));

  std::vector<std::string> stage_labels;
  SvgSeries dur{"duration", {}};
  SvgSeries wait{"barrier wait", {}};
  for (Stage s : kAllStages) {
    stage_labels.emplace_back(stage_name(s));
    dur.values.push_back(report.stage_hours[static_cast<size_t>(s)]);
    wait.values.push_back(report.wait_hours[static_cast<size_t>(s)]);
  }
  write_file_atomic(dir / "stage_breakdown.svg",
                    svg_bar_chart("Startup overhead by stage", stage_labels, {dur, wait},
                                  "server-hours"));

  std::vector<std::string> scale_labels;
  SvgSeries ratio{"max/median", {}};
  for (const ScaleRow& r : report.by_scale) {
    scale_labels.push_back(r.label);
    ratio.values.push_back(r.mean_max_median);
  }
  write_file_atomic(dir / "straggler_by_scale.svg",
                    svg_line_chart("Straggler effect vs job scale (GPUs)", scale_labels,
                                   {ratio}, "max/median ratio"));
}

// ---- episode analysis files ----

inline nlohmann::ordered_json durations_to_json(const StageDurations& d) {
  nlohmann::ordered_json out;
  out["episodes"] = nlohmann::ordered_json::array();
  for (const EpisodeDurations& ed : d.episodes) {
    nlohmann::ordered_json ej;
    ej["job"] = ed.job_id;
    ej["episode"] = ed.episode;
    ej["kind"] = episode_kind_name(ed.kind);
    ej["complete"] = ed.complete;
    ej["submit_ms"] = ed.submit_ms;
    ej["training_begin_ms"] = ed.training_begin_ms;
    ej["job_total_ms"] = ed.job_total_ms;
    ej["stages"] = nlohmann::ordered_json::object();
    for (const auto& [stage, span] : ed.stage_spans)
      ej["stages"][std::string(stage_name(stage))] = {
          {"begin_ms", span.begin_ms}, {"end_ms", span.end_ms}, {"span_ms", span.span_ms()}};
    ej["nodes"] = nlohmann::ordered_json::array();
    for (const NodeStages& ns : ed.nodes) {
      nlohmann::ordered_json nj;
      nj["node"] = ns.node_id;
      nj["total_ms"] = ns.node_total_ms;
      nj["stages"] = nlohmann::ordered_json::object();
      for (const auto& [stage, span] : ns.spans) {
        nlohmann::ordered_json sj{{"duration_ms", span.duration_ms()}};
        auto wait = ns.barrier_waits.find(stage);
        if (wait != ns.barrier_waits.end()) sj["wait_ms"] = wait->second;
        nj["stages"][std::string(stage_name(stage))] = std::move(sj);
      }
      ej["nodes"].push_back(std::move(nj));
    }
    out["episodes"].push_back(std::move(ej));
  }
  out["incomplete"] = nlohmann::ordered_json::array();
  for (const IncompleteEntry& e : d.incomplete)
    out["incomplete"].push_back({{"job", e.job_id},
                                 {"node", e.node_id},
                                 {"episode", e.episode},
                                 {"stage", stage_name(e.stage)},
                                 {"reason", e.reason}});
  return out;
}

// one row per episode; absent stages render as empty cells
inline std::string durations_to_csv(const StageDurations& d) {
  std::string out = "job,episode,kind,complete,submit_ms,job_total_ms";
  for (Stage s : kAllStages) {
    out += ',';
    out += stage_name(s);
    out += "_span_ms";
  }
  out += '\n';
  for (const EpisodeDurations& ed : d.episodes) {
    out += ed.job_id + ',' + std::to_string(ed.episode) + ',';
    out += episode_kind_name(ed.kind);
    out += ed.complete ? ",1," : ",0,";
    out += std::to_string(ed.submit_ms) + ',' + std::to_string(ed.job_total_ms);
    for (Stage s : kAllStages) {
      out += ',';
      auto it = ed.stage_spans.find(s);
      if (it != ed.stage_spans.end()) out += std::to_string(it->second.span_ms());
    }
    out += '\n';
  }
  return out;
}

// durations.json + durations.csv + stage_spans.svg under dir
inline void write_analysis_files(const StageDurations& d, const fs::path& dir) {
  ensure_dir(dir);
  write_file_atomic(dir / "durations.json", durations_to_json(d).dump(2) + "\n");
  write_file_atomic(dir / "durations.csv", durations_to_csv(d));

  std::vector<std::string> labels;
  SvgSeries mean{"mean span", {}};
  for (Stage s : kAllStages) {
    labels.emplace_back(stage_name(s));
    double total = 0;
    size_t n = 0;
    for (const EpisodeDurations& ed : d.episodes) {
      auto it = ed.stage_spans.find(s);
      if (it == ed.stage_spans.end()) continue;
      total += static_cast<double>(it->second.span_ms()) / 1e3;
      ++n;
    }
    mean.values.push_back(n == 0 ? 0.0 : total / static_cast<double>(n));
  }
  write_file_atomic(dir / "stage_spans.svg",
                    svg_bar_chart("Mean job-level stage span", labels, {mean}, "seconds"));
}

}  // namespace coldboot

#endif  // COLDBOOT_REPORT_HPP_
