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
#include <thread>

#include "coldboot/report.hpp"
#include "coldboot/rng.hpp"
#include "support.hpp"

using namespace coldboot;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string line(int64_t ts, const std::string& job, uint32_t node, Stage s, Edge e) {
  return format_event({ts, job, node, s, e}) + "\n";
}

void emit_pair(std::string& log, const std::string& job, uint32_t node, Stage s, int64_t begin,
               int64_t end) {
  log += line(begin, job, node, s, Edge::kBegin);
  log += line(end, job, node, s, Edge::kEnd);
}

// One barrier-aligned full startup: queuing/allocation are scheduler-level
// (identical on every node), worker stages begin together and each next
// stage starts when the slowest node clears the barrier.
void aligned_job(std::string& log, Rng& rng, const std::string& job, uint32_t nodes,
                 int64_t t0, std::map<uint32_t, std::map<Stage, int64_t>>* durations = nullptr) {
  int64_t queue = 5000 + static_cast<int64_t>(rng.below(200000));
  int64_t alloc = 1000 + static_cast<int64_t>(rng.below(5000));
  for (uint32_t n = 0; n < nodes; ++n) {
    emit_pair(log, job, n, Stage::kResourceQueuing, t0, t0 + queue);
    emit_pair(log, job, n, Stage::kResourceAllocation, t0 + queue, t0 + queue + alloc);
    if (durations) {
      (*durations)[n][Stage::kResourceQueuing] = queue;
      (*durations)[n][Stage::kResourceAllocation] = alloc;
    }
  }
  int64_t begin = t0 + queue + alloc;
  for (Stage s : {Stage::kImageLoading, Stage::kEnvironmentSetup, Stage::kModelInitialization}) {
    int64_t latest = 0;
    for (uint32_t n = 0; n < nodes; ++n) {
      int64_t d = 20000 + static_cast<int64_t>(rng.below(120000));
      emit_pair(log, job, n, s, begin, begin + d);
      latest = std::max(latest, d);
      if (durations) (*durations)[n][s] = d;
    }
    begin += latest;
  }
}

}  // namespace

TEST_CASE("log lines parse field by field") {
  SECTION("a well-formed begin/end pair yields two events") {
    std::string log =
        "BOOTSTAGE ts=1700000000000 job=j-7 node=3 stage=ImageLoading edge=begin\n"
        "BOOTSTAGE ts=1700000031000 job=j-7 node=3 stage=ImageLoading edge=end\n";
    ParseResult r = parse_log(log);
    REQUIRE(r.malformed_count == 0);
    REQUIRE(r.events.size() == 2);
    REQUIRE(r.events[0].ts_ms == 1700000000000);
    REQUIRE(r.events[0].job_id == "j-7");
    REQUIRE(r.events[0].node_id == 3);
    REQUIRE(r.events[0].stage == Stage::kImageLoading);
    REQUIRE(r.events[0].edge == Edge::kBegin);
    REQUIRE(r.events[1].edge == Edge::kEnd);
  }

  SECTION("a garbage line is skipped and counted") {
    std::string log = line(5, "j", 0, Stage::kResourceQueuing, Edge::kBegin) +
                      "lost+found garbage here\n" +
                      line(9, "j", 0, Stage::kResourceQueuing, Edge::kEnd);
    ParseResult r = parse_log(log);
    REQUIRE(r.events.size() == 2);
    REQUIRE(r.malformed_count == 1);
    REQUIRE(r.malformed_lines == std::vector<size_t>{2});
  }

  SECTION("blank lines are ignored without being counted") {
    ParseResult r = parse_log("\n   \n" + line(5, "j", 0, Stage::kImageLoading, Edge::kBegin) +
                              "\t\n");
    REQUIRE(r.events.size() == 1);
    REQUIRE(r.malformed_count == 0);
  }

  SECTION("carriage returns are tolerated") {
    ParseResult r =
        parse_log("BOOTSTAGE ts=10 job=j node=0 stage=EnvironmentSetup edge=begin\r\n");
    REQUIRE(r.events.size() == 1);
    REQUIRE(r.malformed_count == 0);
  }

  SECTION("field damage of every sort is malformed") {
    for (const char* bad : {
             "BOOTSTAGE ts=x job=j node=0 stage=ImageLoading edge=begin",
             "BOOTSTAGE ts=10 job=j node=-1 stage=ImageLoading edge=begin",
             "BOOTSTAGE ts=10 job=j node=0 stage=ImageUnloading edge=begin",
             "BOOTSTAGE ts=10 job=j node=0 stage=ImageLoading edge=middle",
             "BOOTSTAGE ts=10 job=j node=0 stage=ImageLoading",
             "BOOTSTAGE ts=10  job=j node=0 stage=ImageLoading edge=begin",
             "BOOTSTAGE ts=10 job=j node=0 stage=ImageLoading edge=begin ",
             "BOOTSTAGE job=j ts=10 node=0 stage=ImageLoading edge=begin",
             "BOOTSTAGE ts=10 job= node=0 stage=ImageLoading edge=begin",
             "bootstage ts=10 job=j node=0 stage=ImageLoading edge=begin",
         }) {
      ParseResult r = parse_log(std::string(bad) + "\n");
      INFO(bad);
      REQUIRE(r.events.empty());
      REQUIRE(r.malformed_count == 1);
    }
  }
}

TEST_CASE("events roundtrip through format and parse") {
  Rng rng(77);
  std::vector<StageEvent> events;
  std::string log;
  for (int i = 0; i < 300; ++i) {
    StageEvent e;
    e.ts_ms = static_cast<int64_t>(rng.below(1000000));
    e.job_id = "job-" + std::to_string(rng.below(5));
    e.node_id = static_cast<uint32_t>(rng.below(16));
    e.stage = static_cast<Stage>(rng.below(kStageCount));
    e.edge = rng.below(2) ? Edge::kEnd : Edge::kBegin;
    log += format_event(e) + "\n";
    events.push_back(std::move(e));
  }
  // oracle: sort the source events with the same stable key
  std::stable_sort(events.begin(), events.end(),
                   [](const StageEvent& a, const StageEvent& b) { return a.key() < b.key(); });
  ParseResult r = parse_log(log);
  REQUIRE(r.malformed_count == 0);
  REQUIRE(r.events == events);
}

TEST_CASE("shuffled input parses to the same event order") {
  Rng rng(40);
  std::string log;
  aligned_job(log, rng, "job-a", 8, 1700000000000);
  aligned_job(log, rng, "job-b", 4, 1700000300000);

  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos < log.size()) {
    size_t nl = log.find('\n', pos);
    lines.push_back(log.substr(pos, nl - pos));
    pos = nl + 1;
  }
  std::string shuffled;
  rng.shuffle(lines);
  for (const auto& l : lines) shuffled += l + "\n";

  REQUIRE(parse_log(shuffled).events == parse_log(log).events);
}

TEST_CASE("durations add up on a single node") {
  // stages of 20/100/150 s
  std::string log;
  emit_pair(log, "j", 0, Stage::kImageLoading, 0, 20000);
  emit_pair(log, "j", 0, Stage::kEnvironmentSetup, 20000, 120000);
  emit_pair(log, "j", 0, Stage::kModelInitialization, 120000, 270000);
  StageDurations d = compute_durations(parse_log(log).events);
  REQUIRE(d.episodes.size() == 1);
  REQUIRE(d.incomplete.empty());
  const EpisodeDurations& ep = d.episodes[0];
  REQUIRE(ep.nodes.size() == 1);
  REQUIRE(ep.nodes[0].node_total_ms == 270000);
  REQUIRE(ep.nodes[0].duration_ms(Stage::kImageLoading) == 20000);
  REQUIRE(ep.complete);
  REQUIRE(ep.job_total_ms == 270000);
  REQUIRE(ep.training_begin_ms == 270000);
}

TEST_CASE("the fast node's barrier wait is the straggler's margin") {
  // two nodes finish environment setup at 60 s and 92 s
  std::string log;
  emit_pair(log, "j", 0, Stage::kEnvironmentSetup, 0, 60000);
  emit_pair(log, "j", 1, Stage::kEnvironmentSetup, 0, 92000);
  emit_pair(log, "j", 0, Stage::kModelInitialization, 92000, 100000);
  emit_pair(log, "j", 1, Stage::kModelInitialization, 92000, 101000);
  StageDurations d = compute_durations(parse_log(log).events);
  const EpisodeDurations& ep = d.episodes[0];
  REQUIRE(ep.nodes[0].barrier_waits.at(Stage::kEnvironmentSetup) == 32000);
  REQUIRE(ep.nodes[1].barrier_waits.at(Stage::kEnvironmentSetup) == 0);
  REQUIRE(ep.stage_spans.at(Stage::kEnvironmentSetup).span_ms() == 92000);
  REQUIRE(ep.kind == EpisodeKind::kHotUpdate);  // no stage before setup
}

TEST_CASE("incomplete stages are reported and excluded") {
  std::string log;
  emit_pair(log, "j", 0, Stage::kImageLoading, 0, 10000);
  log += line(10000, "j", 0, Stage::kEnvironmentSetup, Edge::kBegin);  // never ends
  log += line(500, "j", 1, Stage::kImageLoading, Edge::kEnd);          // orphan end
  StageDurations d = compute_durations(parse_log(log).events);
  REQUIRE(d.incomplete.size() == 2);
  REQUIRE(d.incomplete[0].reason == "end without matching begin");
  REQUIRE(d.incomplete[0].node_id == 1);
  REQUIRE(d.incomplete[1].reason == "begin without end");
  REQUIRE(d.incomplete[1].stage == Stage::kEnvironmentSetup);
  const EpisodeDurations& ep = d.episodes[0];
  for (const NodeStages& ns : ep.nodes) REQUIRE_FALSE(ns.has(Stage::kEnvironmentSetup));
  REQUIRE_FALSE(ep.complete);
}

TEST_CASE("a rerun of setup and initialization is a hot update episode") {
  std::string log;
  for (uint32_t n = 0; n < 2; ++n) {
    emit_pair(log, "j", n, Stage::kResourceQueuing, 0, 100);
    emit_pair(log, "j", n, Stage::kResourceAllocation, 100, 110);
    emit_pair(log, "j", n, Stage::kImageLoading, 110, n == 0 ? 150 : 170);
    emit_pair(log, "j", n, Stage::kEnvironmentSetup, 170, n == 0 ? 270 : 290);
    emit_pair(log, "j", n, Stage::kModelInitialization, 290, n == 0 ? 400 : 380);
  }
  // later, a hot update reruns only the last two stages
  for (uint32_t n = 0; n < 2; ++n) {
    emit_pair(log, "j", n, Stage::kEnvironmentSetup, 1000, n == 0 ? 1090 : 1100);
    emit_pair(log, "j", n, Stage::kModelInitialization, 1100, n == 0 ? 1180 : 1200);
  }
  StageDurations d = compute_durations(parse_log(log).events);
  REQUIRE(d.episodes.size() == 2);
  REQUIRE(d.episodes[0].kind == EpisodeKind::kFullStartup);
  REQUIRE(d.episodes[0].submit_ms == 0);
  REQUIRE(d.episodes[0].training_begin_ms == 400);
  REQUIRE(d.episodes[0].job_total_ms == 400);
  REQUIRE(d.episodes[1].kind == EpisodeKind::kHotUpdate);
  REQUIRE(d.episodes[1].episode == 1);
  REQUIRE(d.episodes[1].submit_ms == 1000);
  REQUIRE(d.episodes[1].job_total_ms == 200);
  REQUIRE(d.episodes[1].nodes[1].duration_ms(Stage::kEnvironmentSetup) == 100);
}

TEST_CASE("aligned logs satisfy the wait and total invariants") {
  Rng rng(91);
  for (int trial = 0; trial < 6; ++trial) {
    std::string log;
    std::map<uint32_t, std::map<Stage, int64_t>> expect;
    uint32_t nodes = 2 + static_cast<uint32_t>(rng.below(6));
    aligned_job(log, rng, "job", nodes, 1700000000000, &expect);
    StageDurations d = compute_durations(parse_log(log).events);
    REQUIRE(d.episodes.size() == 1);
    const EpisodeDurations& ep = d.episodes[0];
    REQUIRE(ep.nodes.size() == nodes);
    for (const NodeStages& ns : ep.nodes) {
      int64_t total = 0;
      for (Stage s : kAllStages) {
        REQUIRE(ns.duration_ms(s) == expect.at(ns.node_id).at(s));
        total += ns.duration_ms(s);
        if (stage_synchronizes(s)) {
          REQUIRE(ns.barrier_waits.at(s) >= 0);
          // own duration plus barrier wait covers the job-level stage span
          REQUIRE(ns.duration_ms(s) + ns.barrier_waits.at(s) ==
                  ep.stage_spans.at(s).span_ms());
        }
      }
      REQUIRE(ns.node_total_ms == total);
      REQUIRE(ns.node_total_ms <= ep.job_total_ms);
    }
  }
}

TEST_CASE("max over median quantifies the straggler margin") {
  auto durations_of = [](const std::vector<int64_t>& ends) {
    std::string log;
    for (uint32_t n = 0; n < ends.size(); ++n)
      emit_pair(log, "j", n, Stage::kEnvironmentSetup, 0, ends[n]);
    return compute_durations(parse_log(log).events);
  };

  SECTION("the slowest of {60, 60, 92} seconds is half again the median") {
    auto stats = straggler_stats(durations_of({60000, 60000, 92000}), Stage::kEnvironmentSetup);
    REQUIRE(stats.size() == 1);
    REQUIRE(stats[0].max_ms == 92000);
    REQUIRE(stats[0].median_ms == 60000);
    REQUIRE_THAT(stats[0].max_median_ratio, Catch::Matchers::WithinRel(92.0 / 60.0, 1e-12));
    REQUIRE(stats[0].nodes == 3);
  }

  SECTION("equal durations mean no straggler") {
    auto stats = straggler_stats(durations_of({5000, 5000, 5000, 5000}),
                                 Stage::kEnvironmentSetup);
    REQUIRE(stats[0].max_median_ratio == 1.0);
  }

  SECTION("even counts use the lower median") {
    auto stats = straggler_stats(durations_of({10000, 20000, 30000, 40000}),
                                 Stage::kEnvironmentSetup);
    REQUIRE(stats[0].median_ms == 20000);
  }

  SECTION("a thousand synthetic durations match the sort oracle") {
    Rng rng(5001);
    std::vector<int64_t> ends;
    for (int i = 0; i < 1000; ++i) ends.push_back(1 + static_cast<int64_t>(rng.below(100000)));
    auto stats = straggler_stats(durations_of(ends), Stage::kEnvironmentSetup);
    std::vector<int64_t> sorted = ends;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(stats[0].max_ms == sorted.back());
    REQUIRE(stats[0].median_ms == sorted[(sorted.size() - 1) / 2]);
    REQUIRE(stats[0].max_median_ratio ==
            static_cast<double>(sorted.back()) / static_cast<double>(sorted[499]));
  }

  SECTION("the ratio is invariant under uniform scaling") {
    std::vector<int64_t> ends = {3000, 7000, 11000, 13000, 29000};
    std::vector<int64_t> scaled;
    for (int64_t e : ends) scaled.push_back(e * 7);
    auto a = straggler_stats(durations_of(ends), Stage::kEnvironmentSetup);
    auto b = straggler_stats(durations_of(scaled), Stage::kEnvironmentSetup);
    REQUIRE(a[0].max_median_ratio == b[0].max_median_ratio);
  }

  SECTION("a zero median is an error") {
    REQUIRE_THROWS_AS(straggler_stats(durations_of({0, 0, 5000}), Stage::kEnvironmentSetup),
                      MetricError);
  }

  SECTION("episodes without the stage are skipped") {
    std::string log;
    emit_pair(log, "j", 0, Stage::kImageLoading, 0, 1000);
    auto stats = straggler_stats(compute_durations(parse_log(log).events),
                                 Stage::kEnvironmentSetup);
    REQUIRE(stats.empty());
  }
}

TEST_CASE("the waste report splits server-hours into training and startup") {
  // 10 servers, 0.1 h of startup each, then 2.9 h of training
  std::string log;
  for (uint32_t n = 0; n < 10; ++n) {
    emit_pair(log, "j", n, Stage::kImageLoading, 0, 100000);
    emit_pair(log, "j", n, Stage::kEnvironmentSetup, 100000, 280000);
    emit_pair(log, "j", n, Stage::kModelInitialization, 280000, 360000);
  }
  std::vector<JobMeta> meta = {{"j", 10, 80, static_cast<int64_t>(2.9 * 3600000)}};
  WasteReport report = cluster_report(compute_durations(parse_log(log).events), meta);

  REQUIRE_THAT(report.training_server_hours, Catch::Matchers::WithinRel(29.0, 1e-12));
  REQUIRE_THAT(report.startup_server_hours, Catch::Matchers::WithinRel(1.0, 1e-12));
  REQUIRE_THAT(report.startup_share, Catch::Matchers::WithinRel(1.0 / 30.0, 1e-12));
  REQUIRE(report.jobs == 1);
  REQUIRE(report.episodes == 1);
  REQUIRE(report.full_startups == 1);
  REQUIRE_THAT(report.stage_hours[static_cast<size_t>(Stage::kImageLoading)],
               Catch::Matchers::WithinRel(10 * 100000.0 / 3600000.0, 1e-12));
  REQUIRE(report.wait_hours[static_cast<size_t>(Stage::kEnvironmentSetup)] == 0.0);
  REQUIRE(report.job_rows.size() == 1);
  REQUIRE_THAT(report.job_rows[0].mean_job_total_s, Catch::Matchers::WithinRel(360.0, 1e-12));
  REQUIRE_THAT(report.job_rows[0].mean_node_total_s, Catch::Matchers::WithinRel(360.0, 1e-12));
}

TEST_CASE("queuing and allocation hours are tracked but not counted as waste") {
  std::string log;
  emit_pair(log, "j", 0, Stage::kResourceQueuing, 0, 3600000);  // an hour in queue
  emit_pair(log, "j", 0, Stage::kImageLoading, 3600000, 3636000);
  emit_pair(log, "j", 0, Stage::kEnvironmentSetup, 3636000, 3672000);
  emit_pair(log, "j", 0, Stage::kModelInitialization, 3672000, 3708000);
  std::vector<JobMeta> meta = {{"j", 1, 8, 3600000}};
  WasteReport report = cluster_report(compute_durations(parse_log(log).events), meta);
  REQUIRE_THAT(report.stage_hours[static_cast<size_t>(Stage::kResourceQueuing)],
               Catch::Matchers::WithinRel(1.0, 1e-12));
  // startup waste is the three worker stages only: 3 x 36 s = 0.03 h
  REQUIRE_THAT(report.startup_server_hours, Catch::Matchers::WithinRel(0.03, 1e-12));
}

TEST_CASE("report inputs are validated") {
  SECTION("overlapping spans on one node are rejected with the conflict") {
    std::string log;
    emit_pair(log, "j", 0, Stage::kImageLoading, 0, 100000);
    emit_pair(log, "j", 0, Stage::kEnvironmentSetup, 50000, 150000);
    emit_pair(log, "j", 0, Stage::kModelInitialization, 150000, 160000);
    std::vector<JobMeta> meta = {{"j", 1, 8, 1000}};
    REQUIRE_THROWS_WITH(cluster_report(compute_durations(parse_log(log).events), meta),
                        ContainsSubstring("overlaps") && ContainsSubstring("node 0"));
  }

  SECTION("a job without metadata is rejected") {
    std::string log;
    emit_pair(log, "mystery", 0, Stage::kImageLoading, 0, 1000);
    REQUIRE_THROWS_AS(cluster_report(compute_durations(parse_log(log).events), {}), ReportError);
  }

  SECTION("an empty window reports zero totals") {
    WasteReport report = cluster_report(compute_durations({}), {});
    REQUIRE(report.training_server_hours == 0.0);
    REQUIRE(report.startup_server_hours == 0.0);
    REQUIRE(report.startup_share == 0.0);
    REQUIRE(report.jobs == 0);
    REQUIRE(report.job_rows.empty());
    for (const ScaleRow& r : report.by_scale) REQUIRE(r.jobs == 0);
  }
}

TEST_CASE("jobs land in scale buckets by GPU count") {
  Rng rng(13);
  std::string log;
  aligned_job(log, rng, "small", 2, 0);
  aligned_job(log, rng, "large", 4, 0);
  std::vector<JobMeta> meta = {{"small", 2, 64, 3600000}, {"large", 4, 2048, 7200000}};
  WasteReport report = cluster_report(compute_durations(parse_log(log).events), meta);
  REQUIRE(report.by_scale.size() == 5);  // four edges plus overflow
  REQUIRE(report.by_scale[0].label == "<=100");
  REQUIRE(report.by_scale[0].jobs == 1);
  REQUIRE(report.by_scale[3].label == "1001-5000");
  REQUIRE(report.by_scale[3].jobs == 1);
  REQUIRE(report.by_scale[4].label == ">5000");
  REQUIRE(report.by_scale[4].jobs == 0);
  REQUIRE(report.by_scale[0].mean_max_median >= 1.0);
  // jobs metadata roundtrips through its sidecar format
  std::vector<JobMeta> back = parse_jobs_meta(dump_jobs_meta(meta));
  REQUIRE(back.size() == 2);
  REQUIRE(back[1].job_id == "large");
  REQUIRE(back[1].gpus == 2048);
  REQUIRE_THROWS_AS(parse_jobs_meta("{not a list}"), ReportError);
}

TEST_CASE("the same logs produce byte-identical reports") {
  Rng rng(505);
  std::string log;
  aligned_job(log, rng, "job-a", 6, 1700000000000);
  aligned_job(log, rng, "job-b", 3, 1700001000000);
  std::vector<JobMeta> meta = {{"job-a", 6, 48, 5400000}, {"job-b", 3, 24, 1800000}};

  WasteReport r1 = cluster_report(compute_durations(parse_log(log).events), meta);
  WasteReport r2 = cluster_report(compute_durations(parse_log(log).events), meta);
  REQUIRE(r1.to_json().dump(2) == r2.to_json().dump(2));
  REQUIRE(r1.to_csv() == r2.to_csv());

  cbtest::TempDir d1, d2;
  write_report_files(r1, d1.path());
  write_report_files(r2, d2.path());
  for (const char* name : {"report.json", "report.csv", "gpu_hours.svg", "stage_breakdown.svg",
                           "straggler_by_scale.svg"}) {
    INFO(name);
    REQUIRE(read_file(d1.path() / name) == read_file(d2.path() / name));
  }
  std::string svg = read_file(d1.path() / "gpu_hours.svg");
  REQUIRE_THAT(svg, ContainsSubstring("<svg") && ContainsSubstring("</svg>"));
}

TEST_CASE("the event log ingests concurrent appends") {
  EventLog log;
  std::vector<std::thread> threads;
  for (uint32_t n = 0; n < 8; ++n) {
    threads.emplace_back([&log, n] {
      for (int i = 0; i < 100; ++i)
        log.append({static_cast<int64_t>(i), "job", n, Stage::kEnvironmentSetup,
                    i % 2 ? Edge::kEnd : Edge::kBegin});
    });
  }
  for (auto& t : threads) t.join();
  std::vector<StageEvent> events = log.snapshot();
  REQUIRE(events.size() == 800);
  REQUIRE(std::is_sorted(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.key() < b.key();
  }));
  ParseResult r = parse_log(log.dump());
  REQUIRE(r.malformed_count == 0);
  REQUIRE(r.events == events);
}
