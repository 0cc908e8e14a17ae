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

// coldboot: one binary for the whole toolkit. Every subcommand is a thin
// adapter over the library; flags override the --config file, which
// overrides built-in defaults (store root also falls back to the
// COLDBOOT_STORE environment variable). Exit codes: 0 ok, 1 operation
// error (one "error: <category>: <message>" line on stderr), 2 usage.

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coldboot/ablation.hpp"
#include "coldboot/blockstore.hpp"
#include "coldboot/envcache.hpp"
#include "coldboot/imageloader.hpp"
#include "coldboot/report.hpp"
#include "coldboot/sim.hpp"
#include "coldboot/stripedstore.hpp"

namespace {

using namespace coldboot;

nlohmann::json parse_json_file(const fs::path& path, const char* what) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded())
    throw ConfigError(std::string("malformed ") + what + " json: " + path.string());
  return j;
}

// resolved invocation context: flags > config file > environment > defaults
struct CliConfig {
  std::optional<std::string> store;
  std::optional<std::string> tracker;
  std::optional<std::string> out_dir;
  std::optional<int64_t> hot_window_ms;
  StripeConfig stripe;

  static CliConfig load(const std::string& path) {
    CliConfig c;
    if (path.empty()) return c;
    nlohmann::json j = parse_json_file(path, "cli config");
    if (j.contains("store")) c.store = j.at("store").get<std::string>();
    if (j.contains("tracker")) c.tracker = j.at("tracker").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("hot_window_ms")) c.hot_window_ms = j.at("hot_window_ms").get<int64_t>();
    if (j.contains("stripe")) {
      const auto& s = j.at("stripe");
      if (s.contains("chunk_size")) c.stripe.chunk_size = s.at("chunk_size").get<uint64_t>();
      if (s.contains("stripe_size")) c.stripe.stripe_size = s.at("stripe_size").get<uint64_t>();
      if (s.contains("groups")) c.stripe.groups = s.at("groups").get<uint32_t>();
      if (s.contains("replicas")) c.stripe.replicas = s.at("replicas").get<uint32_t>();
    }
    return c;
  }
};

struct Invocation {
  std::string config_path;
  std::optional<std::string> store_flag;
  std::optional<std::string> out_flag;
  std::optional<uint64_t> seed_flag;

  CliConfig cfg() const { return CliConfig::load(config_path); }

  fs::path store_root() const {
    if (store_flag) return *store_flag;
    if (auto c = cfg(); c.store) return *c.store;
    if (const char* env = std::getenv("COLDBOOT_STORE")) return env;
    return "coldboot-store";
  }

  fs::path out_dir(const char* fallback) const {
    if (out_flag) return *out_flag;
    if (auto c = cfg(); c.out_dir) return fs::path(*c.out_dir) / fallback;
    return fs::path("out") / fallback;
  }
};

std::vector<StageEvent> load_events(const fs::path& in) {
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& entry : fs::directory_iterator(in))
      if (entry.is_regular_file() && entry.path().extension() == ".log")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ReportError("no .log files under " + in.string());
  } else if (fs::exists(in)) {
    files.push_back(in);
  } else {
    throw ReportError("no such log input: " + in.string());
  }

  std::vector<StageEvent> events;
  for (const fs::path& f : files) {
    ParseResult r = parse_log(read_file(f));
    if (!r.malformed_lines.empty())
      std::fprintf(stderr, "warning: %zu malformed line(s) in %s\n", r.malformed_lines.size(),
                   f.string().c_str());
    events.insert(events.end(), r.events.begin(), r.events.end());
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const StageEvent& a, const StageEvent& b) { return a.key() < b.key(); });
  return events;
}

BlockManifest load_manifest_arg(const Invocation& inv, const std::string& manifest_path,
                                const std::string& image_id) {
  if (!manifest_path.empty()) return BlockManifest::parse(read_file(manifest_path));
  if (image_id.empty()) throw ConfigError("need --manifest or --image");
  BlockStore store(inv.store_root());
  return store.load_manifest(image_id);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"coldboot: container, environment and checkpoint startup acceleration"};
  app.require_subcommand(1);
  app.fallthrough();

  Invocation inv;
  app.add_option("--config", inv.config_path, "json config file with defaults")
      ->type_name("FILE");
  app.add_option_function<std::string>(
         "--store", [&inv](const std::string& v) { inv.store_flag = v; },
         "object store root (default: config file, then $COLDBOOT_STORE)")
      ->type_name("DIR");
  app.add_option_function<std::string>(
         "--out", [&inv](const std::string& v) { inv.out_flag = v; },
         "output directory for commands that write a result tree")
      ->type_name("DIR");

  // ---- image ----
  auto* image = app.add_subcommand("image", "content-addressed image store");
  image->require_subcommand(1);

  {
    auto* build = image->add_subcommand("build", "flatten layer dirs into a block image");
    auto spec_path = std::make_shared<std::string>();
    auto image_id = std::make_shared<std::string>();
    auto layers = std::make_shared<std::vector<std::string>>();
    auto block_size = std::make_shared<uint64_t>(kDefaultBlockSize);
    build->add_option("--spec", *spec_path, "layered image spec json")->type_name("FILE");
    build->add_option("--id", *image_id, "image id (with --layer)");
    build->add_option("--layer", *layers, "layer directory, lower first (repeatable)")
        ->type_name("DIR");
    build->add_option("--block-size", *block_size, "block size in bytes");
    build->callback([&inv, spec_path, image_id, layers, block_size] {
      LayeredImageSpec spec;
      if (!spec_path->empty()) {
        spec = LayeredImageSpec::from_json(parse_json_file(*spec_path, "image spec"));
      } else {
        if (image_id->empty() || layers->empty())
          throw ConfigError("image build needs --spec, or --id with at least one --layer");
        spec.image_id = *image_id;
        for (const std::string& dir : *layers) spec.layers.push_back({dir, {}});
      }
      BlockStore store(inv.store_root());
      BlockManifest m = store.build_image(spec, *block_size);
      store.save_manifest(m);
      std::printf("image %s files %zu blocks %llu\n", m.image_id.c_str(), m.files.size(),
                  static_cast<unsigned long long>(m.total_blocks));
    });
  }

  {
    auto* trace = image->add_subcommand("trace", "turn a raw access stream into a block trace");
    auto manifest_path = std::make_shared<std::string>();
    auto image_id = std::make_shared<std::string>();
    auto accesses = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("trace.jsonl");
    trace->add_option("--manifest", *manifest_path, "image manifest json")->type_name("FILE");
    trace->add_option("--image", *image_id, "image id to load from the store");
    trace->add_option("--accesses", *accesses, "json array of {t,path,offset}")
        ->required()
        ->type_name("FILE");
    trace->add_option("--out", *out, "output trace path");
    trace->callback([&inv, manifest_path, image_id, accesses, out] {
      BlockManifest m = load_manifest_arg(inv, *manifest_path, *image_id);
      std::vector<RawAccess> stream;
      for (const auto& a : parse_json_file(*accesses, "access stream"))
        stream.push_back({a.at("t").get<int64_t>(), a.at("path").get<std::string>(),
                          a.value("offset", 0ULL)});
      AccessTrace t = record_trace(m, stream);
      write_file_atomic(*out, t.dump());
      std::printf("trace %s events %zu\n", m.image_id.c_str(), t.events.size());
    });
  }

  {
    auto* hotset = image->add_subcommand("hotset", "derive the hot block set from a trace");
    auto manifest_path = std::make_shared<std::string>();
    auto image_id = std::make_shared<std::string>();
    auto trace_path = std::make_shared<std::string>();
    auto window = std::make_shared<int64_t>(0);
    auto out = std::make_shared<std::string>("hotset.json");
    hotset->add_option("--manifest", *manifest_path, "image manifest json")->type_name("FILE");
    hotset->add_option("--image", *image_id, "image id to load from the store");
    hotset->add_option("--trace", *trace_path, "trace jsonl")->required()->type_name("FILE");
    hotset->add_option("--window", *window, "hot window in ms (0 = config/default)");
    hotset->add_option("--out", *out, "output hotset path");
    hotset->callback([&inv, manifest_path, image_id, trace_path, window, out] {
      BlockManifest m = load_manifest_arg(inv, *manifest_path, *image_id);
      AccessTrace t = AccessTrace::parse(m.image_id, read_file(*trace_path));
      int64_t w = *window;
      if (w == 0) w = inv.cfg().hot_window_ms.value_or(kDefaultHotWindowMs);
      HotSet hs = derive_hotset(t, m, w);
      write_file_atomic(*out, hs.dump());
      std::printf("hotset %s window_ms %lld blocks %zu\n", m.image_id.c_str(),
                  static_cast<long long>(hs.window_ms), hs.blocks.size());
    });
  }

  // ---- env ----
  auto* env = app.add_subcommand("env", "environment snapshots");
  env->require_subcommand(1);

  {
    auto* snap = env->add_subcommand("snapshot", "capture a directory as a job-keyed snapshot");
    auto root = std::make_shared<std::string>();
    auto params_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("env.snap");
    snap->add_option("--root", *root, "environment directory")->required()->type_name("DIR");
    snap->add_option("--params", *params_path, "job params json")->required()->type_name("FILE");
    snap->add_option("--out", *out, "output snapshot path");
    snap->callback([root, params_path, out] {
      JobParams params = JobParams::parse(read_file(*params_path));
      DirScan empty;
      empty.root = *root;
      EnvSnapshot s = diff(empty, scan(*root), params.fingerprint());
      std::string bytes = s.serialize();
      write_file_atomic(*out, bytes);
      std::printf("snapshot %s files %zu bytes %zu\n", s.fingerprint.hex().substr(0, 12).c_str(),
                  s.files.size(), bytes.size());
    });
  }

  {
    auto* rst = env->add_subcommand("restore", "apply a snapshot to a directory");
    auto in = std::make_shared<std::string>();
    auto root = std::make_shared<std::string>();
    auto params_path = std::make_shared<std::string>();
    rst->add_option("--in", *in, "snapshot file")->required()->type_name("FILE");
    rst->add_option("--root", *root, "target directory")->required()->type_name("DIR");
    rst->add_option("--params", *params_path, "job params json")->required()->type_name("FILE");
    rst->callback([in, root, params_path] {
      JobParams params = JobParams::parse(read_file(*params_path));
      EnvSnapshot s = EnvSnapshot::parse(read_file(*in));
      ensure_dir(*root);
      restore(s, *root, params.fingerprint());
      std::printf("restored %s files %zu deleted %zu\n",
                  s.fingerprint.hex().substr(0, 12).c_str(), s.files.size(), s.deleted.size());
    });
  }

  // ---- ckpt ----
  auto* ckpt = app.add_subcommand("ckpt", "striped checkpoint store");
  ckpt->require_subcommand(1);

  {
    auto* put = ckpt->add_subcommand("put", "stripe a file into the store");
    auto file = std::make_shared<std::string>();
    auto id = std::make_shared<std::string>();
    auto map_out = std::make_shared<std::string>();
    auto chunk = std::make_shared<uint64_t>(0);
    auto groups = std::make_shared<uint32_t>(0);
    auto replicas = std::make_shared<uint32_t>(0);
    put->add_option("--file", *file, "input file")->required()->type_name("FILE");
    put->add_option("--id", *id, "checkpoint id")->required();
    put->add_option("--map-out", *map_out, "also write the chunk map here")->type_name("FILE");
    put->add_option("--chunk", *chunk, "chunk size override");
    put->add_option("--groups", *groups, "group count override");
    put->add_option("--replicas", *replicas, "replica count override");
    put->callback([&inv, file, id, map_out, chunk, groups, replicas] {
      StripeConfig cfg = inv.cfg().stripe;
      if (*chunk) {
        cfg.chunk_size = *chunk;
        if (cfg.stripe_size % cfg.chunk_size != 0) cfg.stripe_size = cfg.chunk_size * 4;
      }
      if (*groups) cfg.groups = *groups;
      if (*replicas) cfg.replicas = *replicas;
      StripedStore store(inv.store_root(), cfg);
      ChunkMap map = store.put_file(*id, read_file(*file));
      if (!map_out->empty()) write_file_atomic(*map_out, map.dump());
      std::printf("ckpt %s size %llu chunks %zu groups %u\n", map.file_id.c_str(),
                  static_cast<unsigned long long>(map.size), map.chunks.size(), map.groups);
    });
  }

  {
    auto* get = ckpt->add_subcommand("get", "reassemble a checkpoint to stdout or a file");
    auto map_path = std::make_shared<std::string>();
    auto id = std::make_shared<std::string>();
    auto width = std::make_shared<size_t>(0);
    auto out = std::make_shared<std::string>();
    get->add_option("--map", *map_path, "chunk map json")->type_name("FILE");
    get->add_option("--id", *id, "checkpoint id to look up in the store");
    get->add_option("--width", *width, "parallel read width (0 = store default)");
    get->add_option("--out", *out, "output file (default: stdout)")->type_name("FILE");
    get->callback([&inv, map_path, id, width, out] {
      StripedStore store(inv.store_root(), inv.cfg().stripe);
      ChunkMap map;
      if (!map_path->empty())
        map = ChunkMap::parse(read_file(*map_path));
      else if (!id->empty())
        map = store.load_map(*id);
      else
        throw ConfigError("ckpt get needs --map or --id");
      std::string bytes = store.get_file(map, *width);
      if (!out->empty()) {
        write_file_atomic(*out, bytes);
      } else {
        std::fwrite(bytes.data(), 1, bytes.size(), stdout);
        std::fflush(stdout);
      }
    });
  }

  // ---- sim ----
  auto* sim = app.add_subcommand("sim", "deterministic cluster startup simulator");
  sim->require_subcommand(1);

  {
    auto* run = sim->add_subcommand("run", "play one scenario and emit logs");
    auto scenario = std::make_shared<std::string>();
    run->add_option("--scenario", *scenario, "scenario json")->required()->type_name("FILE");
    run->add_option_function<uint64_t>(
        "--seed", [&inv](uint64_t v) { inv.seed_flag = v; }, "override the scenario seed");
    run->callback([&inv, scenario] {
      ScenarioConfig cfg = ScenarioConfig::parse(read_file(*scenario));
      if (inv.seed_flag) cfg.seed = *inv.seed_flag;
      SimResult r = run_scenario(cfg);
      fs::path dir = inv.out_dir("run");
      write_run_files(r, dir);
      std::printf("run %s nodes %u outcome %s episodes %zu out %s\n", r.job.job_id.c_str(),
                  r.job.nodes, r.job.failed ? "failed" : "ok", r.job.episodes.size(),
                  dir.string().c_str());
    });
  }

  {
    auto* ablate = sim->add_subcommand("ablate", "sweep policies across gpu scales");
    auto scenario = std::make_shared<std::string>();
    auto grid_path = std::make_shared<std::string>();
    auto reps = std::make_shared<uint32_t>(3);
    auto scales = std::make_shared<std::vector<uint32_t>>();
    ablate->add_option("--scenario", *scenario, "base scenario json")
        ->required()
        ->type_name("FILE");
    ablate->add_option("--grid", *grid_path, "policy grid json (default: baseline+optimized)")
        ->type_name("FILE");
    ablate->add_option("--reps", *reps, "repetitions per cell");
    ablate->add_option("--scales", *scales, "gpu scales (repeatable)");
    ablate->add_option_function<uint64_t>(
        "--seed", [&inv](uint64_t v) { inv.seed_flag = v; }, "override the scenario seed");
    ablate->callback([&inv, scenario, grid_path, reps, scales] {
      ScenarioConfig base = ScenarioConfig::parse(read_file(*scenario));
      if (inv.seed_flag) base.seed = *inv.seed_flag;
      std::vector<PolicyCell> grid = grid_path->empty()
                                         ? default_policy_grid()
                                         : parse_policy_grid(read_file(*grid_path));
      AblationOptions opt;
      opt.reps = *reps;
      if (!scales->empty()) opt.gpu_scales = *scales;
      AblationTable table = run_ablation(base, grid, opt);
      fs::path dir = inv.out_dir("ablation");
      write_ablation_files(table, dir);
      uint32_t largest = *std::max_element(opt.gpu_scales.begin(), opt.gpu_scales.end());
      for (const std::string& policy : table.policies) {
        const AblationCell& c = table.at(policy, largest);
        std::printf("ablate %s gpus %u e2e_s %.1f image_s %.1f env_s %.1f init_s %.1f\n",
                    policy.c_str(), c.gpus, c.e2e_s, c.image_s, c.env_s, c.init_s);
      }
      std::printf("ablation out %s\n", dir.string().c_str());
    });
  }

  {
    auto* inject = sim->add_subcommand("inject", "apply a fault to a scenario config");
    auto scenario = std::make_shared<std::string>();
    auto fault_path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    inject->add_option("--scenario", *scenario, "scenario json")->required()->type_name("FILE");
    inject->add_option("--fault", *fault_path, "fault json")->required()->type_name("FILE");
    inject->add_option("--out", *out, "output scenario path (default: stdout)")
        ->type_name("FILE");
    inject->callback([scenario, fault_path, out] {
      ScenarioConfig cfg = ScenarioConfig::parse(read_file(*scenario));
      cfg = inject_fault(cfg, Fault::parse(read_file(*fault_path)));
      std::string text = cfg.to_json().dump(2) + "\n";
      if (out->empty())
        std::fputs(text.c_str(), stdout);
      else
        write_file_atomic(*out, text);
    });
  }

  // ---- profile ----
  auto* profile = app.add_subcommand("profile", "startup log analysis");
  profile->require_subcommand(1);

  {
    auto* parse = profile->add_subcommand("parse", "normalize and sort a stage log");
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    parse->add_option("--in", *in, "log file or directory of .log files")
        ->required()
        ->type_name("PATH");
    parse->add_option("--out", *out, "output path (default: stdout)")->type_name("FILE");
    parse->callback([in, out] {
      std::string text;
      for (const StageEvent& e : load_events(*in)) {
        text += format_event(e);
        text += '\n';
      }
      if (out->empty())
        std::fputs(text.c_str(), stdout);
      else
        write_file_atomic(*out, text);
    });
  }

  {
    auto* analyze = profile->add_subcommand("analyze", "episode and stage durations");
    auto in = std::make_shared<std::string>();
    analyze->add_option("--in", *in, "log file or directory of .log files")
        ->required()
        ->type_name("PATH");
    analyze->callback([&inv, in] {
      StageDurations d = compute_durations(load_events(*in));
      fs::path dir = inv.out_dir("analysis");
      write_analysis_files(d, dir);
      size_t complete = 0;
      for (const EpisodeDurations& ed : d.episodes) complete += ed.complete ? 1 : 0;
      std::printf("analyze episodes %zu complete %zu incomplete_entries %zu out %s\n",
                  d.episodes.size(), complete, d.incomplete.size(), dir.string().c_str());
    });
  }

  {
    auto* report = profile->add_subcommand("report", "cluster-level waste report");
    auto in = std::make_shared<std::string>();
    auto jobs_path = std::make_shared<std::string>();
    report->add_option("--in", *in, "log file or directory of .log files")
        ->required()
        ->type_name("PATH");
    report->add_option("--jobs", *jobs_path, "jobs metadata json")
        ->required()
        ->type_name("FILE");
    report->callback([&inv, in, jobs_path] {
      StageDurations d = compute_durations(load_events(*in));
      WasteReport report = cluster_report(d, parse_jobs_meta(read_file(*jobs_path)));
      fs::path dir = inv.out_dir("report");
      write_report_files(report, dir);
      std::printf("report jobs %zu episodes %zu training_h %.2f startup_h %.2f share %.4f out %s\n",
                  report.jobs, report.episodes, report.training_server_hours,
                  report.startup_server_hours, report.startup_share, dir.string().c_str());
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const coldboot::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.message().c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
}
