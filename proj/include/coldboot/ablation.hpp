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

#ifndef COLDBOOT_ABLATION_HPP_
#define COLDBOOT_ABLATION_HPP_

#include <string>
#include <vector>

#include "coldboot/sim.hpp"
#include "coldboot/svg.hpp"

namespace coldboot {

// ---- policy ablation ----

struct PolicyCell {
  std::string name;
  ScenarioConfig::PolicySpec policies;
};

// [{"name": "optimized", "image": "prefetch", "env": "cache", ...}, ...]
inline std::vector<PolicyCell> parse_policy_grid(std::string_view payload) {
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw ConfigError("policy grid must be a json array");
  std::vector<PolicyCell> grid;
  for (const auto& o : j) {
    PolicyCell cell;
    cell.name = o.at("name").get<std::string>();
    if (o.contains("image")) cell.policies.image = image_policy_from(o.at("image").get<std::string>());
    if (o.contains("env")) cell.policies.env = env_policy_from(o.at("env").get<std::string>());
    if (o.contains("ckpt")) cell.policies.ckpt = ckpt_policy_from(o.at("ckpt").get<std::string>());
    if (o.contains("stripe_groups")) cell.policies.stripe_groups = o.at("stripe_groups").get<uint32_t>();
    if (o.contains("read_width")) cell.policies.read_width = o.at("read_width").get<uint32_t>();
    grid.push_back(std::move(cell));
  }
  if (grid.empty()) throw ConfigError("policy grid is empty");
  return grid;
}

inline std::vector<PolicyCell> default_policy_grid() {
  PolicyCell baseline{"baseline", {}};
  PolicyCell optimized{"optimized",
                       {ImagePolicy::kPrefetch, EnvPolicy::kCache, CkptPolicy::kStriped, 4, 4}};
  return {baseline, optimized};
}

struct AblationOptions {
  std::vector<uint32_t> gpu_scales{16, 32, 48, 64, 128};
  uint32_t reps = 3;
};

struct AblationCell {
  std::string policy;
  uint32_t gpus = 0;
  uint32_t nodes = 0;
  uint32_t reps = 0;
  double e2e_s = 0;       // worker phase: image-loading begin to training begin
  double image_s = 0;     // job-level stage spans, mean over reps
  double env_s = 0;
  double init_s = 0;
  double env_max_median = 0;
};

struct AblationTable {
  std::vector<uint32_t> gpu_scales;
  std::vector<std::string> policies;
  std::vector<AblationCell> cells;  // policy-major, scales inner

  const AblationCell& at(std::string_view policy, uint32_t gpus) const {
    for (const AblationCell& c : cells)
      if (c.policy == policy && c.gpus == gpus) return c;
    throw MetricError("no ablation cell for " + std::string(policy) + " at " +
                      std::to_string(gpus) + " gpus");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["gpu_scales"] = gpu_scales;
    j["policies"] = policies;
    j["cells"] = nlohmann::ordered_json::array();
    for (const AblationCell& c : cells)
      j["cells"].push_back({{"policy", c.policy},
                            {"gpus", c.gpus},
                            {"nodes", c.nodes},
                            {"reps", c.reps},
                            {"e2e_s", c.e2e_s},
                            {"image_s", c.image_s},
                            {"env_s", c.env_s},
                            {"init_s", c.init_s},
                            {"env_max_median", c.env_max_median}});
    return j;
  }

  std::string to_csv() const {
    std::string out = "policy,gpus,nodes,reps,e2e_s,image_s,env_s,init_s,env_max_median\n";
    char buf[192];
    for (const AblationCell& c : cells) {
      std::snprintf(buf, sizeof(buf), "%s,%u,%u,%u,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    c.policy.c_str(), c.gpus, c.nodes, c.reps, c.e2e_s, c.image_s, c.env_s,
                    c.init_s, c.env_max_median);
      out += buf;
    }
    return out;
  }
};

// Sweeps each policy cell across the GPU scales, replaying every cell a few
// times with distinct seeds and averaging. Measurements are taken the same
// way production logs are read: the emitted events go through the profiler.
inline AblationTable run_ablation(const ScenarioConfig& base, const std::vector<PolicyCell>& grid,
                                  const AblationOptions& opt = {}) {
  if (opt.reps < 1) throw ConfigError("ablation reps must be >= 1");
  if (opt.gpu_scales.empty()) throw ConfigError("ablation needs at least one gpu scale");
  AblationTable table;
  table.gpu_scales = opt.gpu_scales;
  for (const PolicyCell& cell : grid) table.policies.push_back(cell.name);

  for (const PolicyCell& cell : grid) {
    for (uint32_t gpus : opt.gpu_scales) {
      uint32_t nodes = std::max<uint32_t>(1, gpus / base.gpus_per_node);
      AblationCell out;
      out.policy = cell.name;
      out.gpus = nodes * base.gpus_per_node;
      out.nodes = nodes;
      out.reps = opt.reps;
      for (uint32_t rep = 0; rep < opt.reps; ++rep) {
        ScenarioConfig cfg = base;
        cfg.policies = cell.policies;
        cfg.nodes = nodes;
        cfg.hot_updates = 0;
        cfg.install_timeout_ms = 0;
        cfg.name = cell.name;
        cfg.job_id = "ablate-" + cell.name + "-" + std::to_string(gpus) + "-r" +
                     std::to_string(rep);
        cfg.seed = mix_key(base.seed, hash_str(cell.name), gpus, rep);
        SimResult r = run_scenario(cfg);
        if (r.job.failed) throw MetricError("ablation scenario failed: " + cfg.job_id);

        ParseResult parsed = parse_log(r.log_text);
        StageDurations d = compute_durations(parsed.events);
        if (d.episodes.size() != 1 || !d.episodes[0].complete)
          throw MetricError("ablation scenario produced an incomplete episode: " + cfg.job_id);
        const EpisodeDurations& ed = d.episodes[0];
        out.image_s += static_cast<double>(ed.stage_spans.at(Stage::kImageLoading).span_ms()) / 1e3;
        out.env_s +=
            static_cast<double>(ed.stage_spans.at(Stage::kEnvironmentSetup).span_ms()) / 1e3;
        out.init_s +=
            static_cast<double>(ed.stage_spans.at(Stage::kModelInitialization).span_ms()) / 1e3;
        out.e2e_s += static_cast<double>(ed.training_begin_ms -
                                         ed.stage_spans.at(Stage::kImageLoading).begin_ms) /
                     1e3;
        out.env_max_median += straggler_stats(d, Stage::kEnvironmentSetup).at(0).max_median_ratio;
      }
      out.image_s /= opt.reps;
      out.env_s /= opt.reps;
      out.init_s /= opt.reps;
      out.e2e_s /= opt.reps;
      out.env_max_median /= opt.reps;
      table.cells.push_back(std::move(out));
    }
  }
  return table;
}

inline void write_ablation_files(const AblationTable& table, const fs::path& dir) {
  ensure_dir(dir);
  write_file_atomic(dir / "ablation.json", table.to_json().dump(2) + "\n");
  write_file_atomic(dir / "ablation.csv", table.to_csv());

  std::vector<std::string> labels;
  for (uint32_t g : table.gpu_scales) labels.push_back(std::to_string(g));
  auto series_of = [&](double AblationCell::* field) {
    std::vector<SvgSeries> out;
    for (const std::string& policy : table.policies) {
      SvgSeries s{policy, {}};
      for (const AblationCell& c : table.cells)
        if (c.policy == policy) s.values.push_back(c.*field);
      out.push_back(std::move(s));
    }
    return out;
  };
  write_file_atomic(dir / "e2e.svg", svg_line_chart("Startup end-to-end vs scale (GPUs)", labels,
                                                    series_of(&AblationCell::e2e_s), "seconds"));
  write_file_atomic(dir / "stage_image.svg",
                    svg_line_chart("Image loading vs scale (GPUs)", labels,
                                   series_of(&AblationCell::image_s), "seconds"));
  write_file_atomic(dir / "stage_env.svg",
                    svg_line_chart("Environment setup vs scale (GPUs)", labels,
                                   series_of(&AblationCell::env_s), "seconds"));
  write_file_atomic(dir / "stage_init.svg",
                    svg_line_chart("Model initialization vs scale (GPUs)", labels,
                                   series_of(&AblationCell::init_s), "seconds"));
  write_file_atomic(dir / "env_straggler.svg",
                    svg_line_chart("Environment-setup straggler vs scale (GPUs)", labels,
                                   series_of(&AblationCell::env_max_median), "max/median ratio"));
}

// ---- fleet-week synthesis ----

struct FleetClass {
  std::string name;
  uint32_t count = 1;
  uint32_t nodes = 1;
  uint32_t gpus_per_node = 8;
  uint32_t mean_full_startups = 1;  // restarts over the window
  uint32_t hot_updates = 0;         // per full startup
  double mean_training_hours = 4.0;
};

// A small/medium/large mix calibrated so startup overhead sits a few
// percent under the fleet's training hours, as a busy production week does.
inline std::vector<FleetClass> default_fleet_classes() {
  return {{"small", 60, 1, 8, 1, 0, 4.0},
          {"medium", 30, 4, 8, 2, 1, 12.0},
          {"large", 10, 16, 8, 4, 2, 40.0}};
}

struct FleetSpec {
  uint64_t seed = 1;
  int64_t epoch_ms = kDefaultEpochMs;
  ScenarioConfig base;  // cluster model; job shape fields are overridden per job
  std::vector<FleetClass> classes = default_fleet_classes();
};

struct FleetResult {
  std::string log_text;
  std::vector<JobMeta> jobs;
};

// Synthesizes one week of startup traffic: every job draws its restart
// count, training time and submit offset, then each startup replays the
// scenario at its own epoch. Restarts are spaced far enough apart that a
// job's own episodes never overlap.
inline FleetResult generate_fleet_week(const FleetSpec& spec) {
  spec.base.validate();
  FleetResult result;
  constexpr int64_t kWeekMs = 7LL * 24 * 3600 * 1000;
  for (const FleetClass& cls : spec.classes) {
    uint64_t cls_hash = hash_str(cls.name);
    for (uint32_t j = 0; j < cls.count; ++j) {
      Rng rng(mix_key(spec.seed, cls_hash, j, 0));
      uint32_t startups = cls.mean_full_startups <= 1
                              ? 1
                              : 1 + static_cast<uint32_t>(rng.below(2 * cls.mean_full_startups - 1));
      auto training_ms = static_cast<int64_t>(std::llround(
          cls.mean_training_hours * 3600e3 * rng.lognormal(0.0, 0.3)));
      int64_t submit_ms = static_cast<int64_t>(rng.below(kWeekMs * 6 / 7));
      int64_t restart_gap_ms = std::max<int64_t>(7200000, training_ms / startups);

      ScenarioConfig cfg = spec.base;
      cfg.nodes = cls.nodes;
      cfg.gpus_per_node = cls.gpus_per_node;
      cfg.hot_updates = cls.hot_updates;
      cfg.install_timeout_ms = 0;
      cfg.training_ms = training_ms;
      cfg.name = "fleet-" + cls.name;
      cfg.job_id = "fleet-" + cls.name + "-" + std::to_string(j);
      for (uint32_t k = 0; k < startups; ++k) {
        cfg.seed = mix_key(spec.seed, hash_str(cfg.job_id), k, 1);
        cfg.epoch_ms = spec.epoch_ms + submit_ms + static_cast<int64_t>(k) * restart_gap_ms;
        result.log_text += run_scenario(cfg).log_text;
      }
      result.jobs.push_back({cfg.job_id, cls.nodes, cls.nodes * cls.gpus_per_node, training_ms});
    }
  }
  return result;
}

inline void write_fleet_files(const FleetResult& result, const fs::path& dir) {
  ensure_dir(dir);
  write_file_atomic(dir / "boot.log", result.log_text);
  write_file_atomic(dir / "jobs.json", dump_jobs_meta(result.jobs));
}

}  // namespace coldboot

#endif  // COLDBOOT_ABLATION_HPP_
