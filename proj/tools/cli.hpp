#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "deltaflux/deltaflux.hpp"

namespace deltaflux::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kIoError = 2, kShapeError = 3, kCompareFailed = 4 };

struct Options {
  std::string config;
  std::string model;
  std::string weights;
  std::uint64_t seed = 0;
  std::string save_weights;
  std::string source = "synth:default";
  std::string schedule = "sparsebatch";
  std::size_t chunk = 8;
  std::size_t videos = 1;
  std::string trunc = "ibst";
  std::optional<double> target;
  std::string out = "deltaflux_out";
  bool dump_outputs = false;
  std::optional<double> tol;
  std::size_t repeat = 3;
  std::string against = "dense";
  std::string format;
};

inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DELTAFLUX_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = std::min(n, static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("DELTAFLUX_THREADS: not a number '") + env + "'");
    }
  }
  return n;
}

inline Schedule parse_schedule(const std::string& s) {
  if (s == "dense") return Schedule::dense;
  if (s == "vanilla") return Schedule::vanilla;
  if (s == "sparsebatch") return Schedule::sparsebatch;
  throw ConfigError("--schedule: expected dense, vanilla or sparsebatch, got '" + s + "'");
}

inline std::string read_text(const std::filesystem::path& p, const char* what) {
  std::ifstream in(p);
  if (!in) throw IoError(std::string(what) + ": cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Run-config file: one "key value" per line, '#' comments, plus a "trunc policy=... T=..." block.
// Explicit command-line flags win over the file.
inline void apply_config_file(Options& o, const CLI::App& app, std::string& trunc_line) {
  if (o.config.empty()) return;
  std::istringstream in(read_text(o.config, "--config"));
  std::string raw;
  int line_no = 0;
  auto given = [&](const char* flag) { return app.count(flag) > 0; };
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    std::istringstream ls(raw);
    std::string key, value;
    if (!(ls >> key)) continue;
    if (key == "trunc") {
      if (!given("--trunc")) trunc_line = raw;
      continue;
    }
    if (!(ls >> value)) throw ConfigError(o.config + " line " + std::to_string(line_no) + ": missing value for " + key);
    try {
      if (key == "model" && !given("--model")) o.model = value;
      else if (key == "weights" && !given("--weights")) o.weights = value;
      else if (key == "seed" && !given("--seed")) o.seed = std::stoull(value);
      else if (key == "source" && !given("--source")) o.source = value;
      else if (key == "schedule" && !given("--schedule")) o.schedule = value;
      else if (key == "chunk" && !given("--chunk")) o.chunk = std::stoul(value);
      else if (key == "videos" && !given("--videos")) o.videos = std::stoul(value);
      else if (key == "target-sparsity" && !given("--target-sparsity")) o.target = std::stod(value);
      else if (key == "out" && !given("--out")) o.out = value;
      else if (key == "tol" && !given("--tol")) o.tol = std::stod(value);
      else if (key == "repeat" && !given("--repeat")) o.repeat = std::stoul(value);
      else if (!(key == "model" || key == "weights" || key == "seed" || key == "source" || key == "schedule" ||
                 key == "chunk" || key == "videos" || key == "target-sparsity" || key == "out" || key == "tol" ||
                 key == "repeat")) {
        throw ConfigError(o.config + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError(o.config + " line " + std::to_string(line_no) + ": bad value '" + value + "' for " + key);
    }
  }
}

struct Setup {
  ModelGraph graph;
  std::vector<std::vector<DenseTensor>> videos;
  ControllerConfig controller;
  Schedule schedule = Schedule::sparsebatch;
};

inline std::vector<std::vector<DenseTensor>> load_videos(const std::string& source, std::size_t count) {
  if (count == 0) throw ConfigError("--videos must be >= 1");
  const auto colon = source.find(':');
  if (colon == std::string::npos) throw ConfigError("--source: expected dir:PATH, ten:PATH or synth:SPEC");
  const std::string kind = source.substr(0, colon), arg = source.substr(colon + 1);
  std::vector<std::vector<DenseTensor>> videos;
  if (kind == "synth") {
    const SyntheticSpec base = parse_synthetic_spec(arg);
    for (std::size_t v = 0; v < count; ++v) {
      SyntheticSpec s = base;
      s.seed = base.seed + v;
      videos.push_back(generate_synthetic(s));
    }
    return videos;
  }
  std::vector<DenseTensor> frames;
  if (kind == "dir") {
    frames = load_sequence(arg, false);
  } else if (kind == "ten") {
    if (std::filesystem::is_regular_file(arg)) {
      frames.push_back(load_tensor(arg));
    } else {
      frames = load_sequence(arg, true);
    }
  } else {
    throw ConfigError("--source: unknown kind '" + kind + "'");
  }
  // File sources feed the same sequence to every video.
  videos.assign(count, frames);
  return videos;
}

inline Setup build_setup(Options& o, const CLI::App& app) {
  std::string trunc_line;
  apply_config_file(o, app, trunc_line);
  if (o.model.empty()) throw ConfigError("--model is required");
  if (o.chunk == 0) throw ConfigError("--chunk must be >= 1");
  Setup s;
  s.schedule = parse_schedule(o.schedule);
  s.controller = trunc_line.empty() ? parse_trunc_spec(o.trunc) : parse_trunc_line(trunc_line);
  if (o.target) {
    s.controller.target = *o.target;
    s.controller.validate();
  }
  ModelGraph g = parse_model(read_text(o.model, "--model"));
  g = o.weights.empty() ? init_weights(std::move(g), o.seed) : load_weights(g, o.weights);
  if (!o.save_weights.empty()) save_weights(g, o.save_weights);
  s.graph = std::move(g);
  s.videos = load_videos(o.source, o.videos);
  if (s.videos.front().front().dims() != s.graph.input_dims()) {
    throw ShapeError("source frames are " + to_string(s.videos.front().front().dims()) + ", model input is " +
                     to_string(s.graph.input_dims()));
  }
  return s;
}

inline std::vector<ThresholdController> make_controllers(const Setup& s) {
  return std::vector<ThresholdController>(s.videos.size(), ThresholdController(s.graph, s.controller));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("short write to " + p.string());
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

inline void dump_outputs(const std::filesystem::path& dir, const RunResult& r) {
  ensure_dir(dir);
  for (std::size_t v = 0; v < r.outputs.size(); ++v) {
    for (std::size_t t = 0; t < r.outputs[v].size(); ++t) {
      std::ostringstream name;
      name << "v" << v << "_f" << std::setw(5) << std::setfill('0') << t << ".ten";
      save_tensor(r.outputs[v][t], dir / name.str());
    }
  }
}

inline int cmd_run(Options& o, const CLI::App& app, std::ostream& out) {
  Setup s = build_setup(o, app);
  auto ctls = make_controllers(s);
  RunResult r = run_videos(s.graph, s.videos, o.chunk, s.schedule, ctls, worker_threads());
  const std::filesystem::path dir(o.out);
  ensure_dir(dir);
  write_text(dir / "metrics.csv", metrics_csv(r.metrics));
  write_text(dir / "sparsity.csv", sparsity_csv(r.metrics));
  write_text(dir / "memory.csv", memory_csv(r.metrics.memory));
  RunSummary summary{s.schedule, s.videos.size(), s.videos.front().size(), o.chunk, &r.metrics};
  write_text(dir / "summary.csv", summary_csv_header() + summary_csv_row(summary));
  std::vector<ThresholdSnapshot> snaps;
  for (const auto& c : ctls) snaps.push_back(thresholds_snapshot(c));
  write_text(dir / "thresholds.csv", thresholds_csv(snaps));
  if (o.dump_outputs) dump_outputs(dir / "outputs", r);
  out << "schedule=" << schedule_name(s.schedule) << " videos=" << s.videos.size()
      << " frames=" << s.videos.front().size() << " pass_count=" << r.metrics.pass_count
      << " persistent_values=" << r.metrics.memory.persistent_buffer_values
      << " peak_transient_values=" << r.metrics.memory.peak_transient_values
      << " total_flops=" << r.metrics.total_flops() << " dense_flops=" << r.metrics.dense_flops()
      << " wall_ms=" << r.metrics.wall_ms << "\n";
  return kOk;
}

inline bool all_thresholds_zero(const ControllerConfig& c) {
  return c.policy == ThresholdPolicy::fixed && c.fixed_theta == 0.0;
}

// FLOP totals over diff frames only.
inline std::pair<std::uint64_t, std::uint64_t> diff_frame_flops(const RunMetrics& m) {
  std::uint64_t charged = 0, dense = 0;
  for (const auto& r : m.rows) {
    if (r.reference) continue;
    charged += r.flops_charged;
    dense += r.flops_dense_equiv;
  }
  return {charged, dense};
}

inline int cmd_compare(Options& o, const CLI::App& app, std::ostream& out) {
  if (o.against != "dense") throw ConfigError("--against: only 'dense' is supported");
  Setup s = build_setup(o, app);
  if (s.schedule == Schedule::dense) s.schedule = Schedule::sparsebatch;
  const std::size_t threads = worker_threads();
  auto ctls = make_controllers(s);
  std::vector<ThresholdController> unused;
  RunResult dense = run_videos(s.graph, s.videos, o.chunk, Schedule::dense, unused, threads);
  RunResult delta = run_videos(s.graph, s.videos, o.chunk, s.schedule, ctls, threads);
  double worst = 0.0;
  out << std::setprecision(6);
  for (std::size_t v = 0; v < s.videos.size(); ++v) {
    for (std::size_t t = 0; t < s.videos[v].size(); ++t) {
      const double e = max_relative_error(delta.outputs[v][t], dense.outputs[v][t]);
      worst = std::max(worst, e);
      out << "video " << v << " frame " << t << " max_rel_error " << e << "\n";
    }
  }
  const auto [charged, dense_equiv] = diff_frame_flops(delta.metrics);
  const double skip = dense_equiv == 0 ? 1.0 : 1.0 - static_cast<double>(charged) / static_cast<double>(dense_equiv);
  const bool gating = o.tol.has_value() || all_thresholds_zero(s.controller);
  const double tol = o.tol.value_or(1e-4);
  const bool pass = worst <= tol;
  out << "dense_flops " << dense.metrics.total_flops() << "\n"
      << "delta_flops " << delta.metrics.total_flops() << "\n"
      << "diff_frame_skip_ratio " << skip << "\n"
      << "max_rel_error " << worst << "\n"
      << (pass ? "PASS" : "FAIL") << " tol=" << tol << (gating ? "" : " (report-only)") << "\n";
  return pass || !gating ? kOk : kCompareFailed;
}

inline int cmd_bench(Options& o, const CLI::App& app, std::ostream& out) {
  Setup s = build_setup(o, app);
  if (o.repeat == 0) throw ConfigError("--repeat must be >= 1");
  const std::size_t threads = worker_threads();
  const std::size_t frames = s.videos.size() * s.videos.front().size();
  std::string csv =
      "schema_version,schedule,ms_per_frame_machine_dependent,charged_flops,dense_flops,conv_charged_flops,"
      "conv_dense_flops,persistent_values,peak_transient_values,pass_count\n";
  out << std::left << std::setw(12) << "schedule" << std::setw(14) << "ms/frame*" << std::setw(16) << "flops"
      << std::setw(16) << "dense_flops" << std::setw(14) << "persistent" << std::setw(16) << "peak_transient"
      << "passes\n";
  for (Schedule sched : {Schedule::dense, Schedule::vanilla, Schedule::sparsebatch}) {
    std::vector<double> walls;
    RunResult r;
    for (std::size_t i = 0; i <= o.repeat; ++i) {  // first iteration is warmup
      auto ctls = make_controllers(s);
      r = run_videos(s.graph, s.videos, o.chunk, sched, ctls, threads);
      if (i > 0) walls.push_back(r.metrics.wall_ms / static_cast<double>(frames));
    }
    std::sort(walls.begin(), walls.end());
    const double median = walls[walls.size() / 2];
    const auto& m = r.metrics;
    out << std::setw(12) << schedule_name(sched) << std::setw(14) << median << std::setw(16) << m.total_flops()
        << std::setw(16) << m.dense_flops() << std::setw(14) << m.memory.persistent_buffer_values << std::setw(16)
        << m.memory.peak_transient_values << m.pass_count << "\n";
    csv += std::to_string(kCsvSchemaVersion) + "," + std::string(schedule_name(sched)) + "," +
           detail::format_double(median) + "," + std::to_string(m.total_flops()) + "," +
           std::to_string(m.dense_flops()) + "," + std::to_string(m.flops_of(LayerKind::conv2d, true)) + "," +
           std::to_string(m.flops_of(LayerKind::conv2d, false)) + "," +
           std::to_string(m.memory.persistent_buffer_values) + "," +
           std::to_string(m.memory.peak_transient_values) + "," + std::to_string(m.pass_count) + "\n";
  }
  out << "* wall-clock columns are machine-dependent\n";
  const std::filesystem::path dir(o.out);
  ensure_dir(dir);
  write_text(dir / "bench.csv", csv);
  return kOk;
}

inline int cmd_gen(Options& o, std::ostream& out) {
  const auto videos = load_videos(o.source, o.videos);
  const std::filesystem::path dir(o.out);
  std::string fmt = o.format;
  const std::size_t c = videos.front().front().channels();
  if (fmt.empty()) fmt = c == 1 ? "pgm" : c == 3 ? "ppm" : "ten";
  if (fmt != "pgm" && fmt != "ppm" && fmt != "ten") throw ConfigError("--format: expected pgm, ppm or ten");
  if ((fmt == "pgm" && c != 1) || (fmt == "ppm" && c != 3)) {
    throw ShapeError("--format " + fmt + " cannot hold " + std::to_string(c) + " channels");
  }
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto vdir = videos.size() == 1 ? dir : dir / ("v" + std::to_string(v));
    ensure_dir(vdir);
    for (std::size_t t = 0; t < videos[v].size(); ++t) {
      std::ostringstream name;
      name << "frame_" << std::setw(5) << std::setfill('0') << t << "." << fmt;
      if (fmt == "ten") {
        save_tensor(videos[v][t], vdir / name.str());
      } else {
        save_pnm(videos[v][t], vdir / name.str());
      }
    }
  }
  out << "wrote " << videos.size() << " video(s) x " << videos.front().size() << " frames to " << dir.string() << "\n";
  return kOk;
}

inline void add_shared_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "run-config file (flags override it)");
  cmd->add_option("--model", o.model, "model config file");
  cmd->add_option("--weights", o.weights, "weight file (.dfw)");
  cmd->add_option("--seed", o.seed, "weight initialisation seed when --weights is absent");
  cmd->add_option("--save-weights", o.save_weights, "write the weights in use to this .dfw path");
  cmd->add_option("--source", o.source, "dir:PATH | ten:PATH | synth:NAME|SPEC");
  cmd->add_option("--schedule", o.schedule, "dense | vanilla | sparsebatch");
  cmd->add_option("--chunk", o.chunk, "frames per chunk (reference frame + diff frames)");
  cmd->add_option("--videos", o.videos, "number of videos in the batch");
  cmd->add_option("--trunc", o.trunc, "fixed:THETA | bst[:k=v,...] | ibst[:k=v,...]");
  cmd->add_option("--target-sparsity", o.target, "target sparsity T for bst/ibst");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_flag("--dump-outputs", o.dump_outputs, "write dense outputs as .ten files");
  cmd->add_option("--tol", o.tol, "max relative error tolerance (compare)");
  cmd->add_option("--repeat", o.repeat, "measured repetitions (bench)");
}

// Returns the process exit code. Diagnostics go to `err` as a single line.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"deltaflux: delta-computation CNN inference over video chunks"};
  app.require_subcommand(1);
  Options o;
  auto* run = app.add_subcommand("run", "run a schedule and write metrics");
  auto* compare = app.add_subcommand("compare", "compare a delta schedule against the dense oracle");
  auto* bench = app.add_subcommand("bench", "time and account dense, vanilla and sparsebatch");
  auto* gen = app.add_subcommand("gen", "write a synthetic sequence to disk");
  for (auto* c : {run, compare, bench}) add_shared_flags(c, o);
  compare->add_option("--against", o.against, "reference (dense)");
  gen->add_option("--source", o.source, "synth:NAME|SPEC, dir:PATH or ten:PATH");
  gen->add_option("--videos", o.videos, "number of videos");
  gen->add_option("--out", o.out, "output directory")->required();
  gen->add_option("--format", o.format, "pgm | ppm | ten (default by channel count)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "deltaflux: config error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(o, *run, out);
    if (compare->parsed()) return cmd_compare(o, *compare, out);
    if (bench->parsed()) return cmd_bench(o, *bench, out);
    if (gen->parsed()) return cmd_gen(o, out);
  } catch (const ShapeError& e) {
    err << "deltaflux: shape error: " << e.what() << "\n";
    return kShapeError;
  } catch (const IoError& e) {
    err << "deltaflux: io error: " << e.what() << "\n";
    return kIoError;
  } catch (const Error& e) {
    err << "deltaflux: config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "deltaflux: io error: " << e.what() << "\n";
    return kIoError;
  }
  return kConfigError;
}

}  // namespace deltaflux::cli
