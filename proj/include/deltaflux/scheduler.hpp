#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "deltaflux/controller.hpp"
#include "deltaflux/delta.hpp"
#include "deltaflux/dense.hpp"
#include "deltaflux/model.hpp"

namespace deltaflux {

enum class Schedule { dense, vanilla, sparsebatch };

inline std::string_view schedule_name(Schedule s) {
  switch (s) {
    case Schedule::dense: return "dense";
    case Schedule::vanilla: return "vanilla";
    case Schedule::sparsebatch: return "sparsebatch";
  }
  return "?";
}

// Contiguous frames sharing one reference; frames[0] is the reference frame.
struct FrameChunk {
  std::vector<DenseTensor> frames;

  std::size_t size() const { return frames.size(); }

  void validate(const Dims& expected) const {
    if (frames.empty()) throw ShapeError("empty frame chunk");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (frames[t].dims() != expected) {
        throw ShapeError("frame " + std::to_string(t) + " is " + to_string(frames[t].dims()) + ", model expects " +
                         to_string(expected));
      }
    }
  }
};

struct BufferRecord {
  std::size_t layer = 0;
  std::string role;  // "subtraction", "accumulation" or "nonlinear"
  bool persistent = false;
  std::size_t values = 0;

  friend bool operator==(const BufferRecord&, const BufferRecord&) = default;
};

struct MemoryReport {
  std::size_t persistent_buffer_values = 0;
  std::size_t peak_transient_values = 0;  // per video stream
  std::vector<BufferRecord> per_site_breakdown;

  friend bool operator==(const MemoryReport&, const MemoryReport&) = default;
};

// Counts the values held by delta-pipeline state buffers as they are allocated and released.
class BufferLedger {
 public:
  void hold_persistent(std::size_t layer, std::string role, std::size_t values) {
    persistent_ += values;
    add_record(layer, std::move(role), true, values);
  }

  void acquire_transient(std::size_t layer, std::string role, std::size_t values) {
    live_ += values;
    peak_ = std::max(peak_, live_);
    add_record(layer, std::move(role), false, values);
  }

  void release_transient(std::size_t values) { live_ -= values; }

  std::size_t live_transient() const { return live_; }

  MemoryReport report() const {
    MemoryReport r;
    r.persistent_buffer_values = persistent_;
    r.peak_transient_values = peak_;
    for (const auto& [key, values] : records_) {
      r.per_site_breakdown.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), values});
    }
    return r;
  }

 private:
  void add_record(std::size_t layer, std::string role, bool persistent, std::size_t values) {
    auto& slot = records_[{layer, std::move(role), persistent}];
    slot = std::max(slot, values);
  }

  std::size_t persistent_ = 0;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::map<std::tuple<std::size_t, std::string, bool>, std::size_t> records_;
};

// Combines per-video reports: persistent values and breakdown add up, transient peak is per stream.
inline MemoryReport merge_reports(const std::vector<MemoryReport>& parts) {
  MemoryReport out;
  std::map<std::tuple<std::size_t, std::string, bool>, std::size_t> sums;
  for (const auto& r : parts) {
    out.persistent_buffer_values += r.persistent_buffer_values;
    out.peak_transient_values = std::max(out.peak_transient_values, r.peak_transient_values);
    for (const auto& b : r.per_site_breakdown) sums[{b.layer, b.role, b.persistent}] += b.values;
  }
  for (const auto& [key, values] : sums) {
    out.per_site_breakdown.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), values});
  }
  return out;
}

// Closed-form state-buffer accounting; must match what the runs allocate.
inline MemoryReport account_memory(const ModelGraph& g, Schedule schedule, std::size_t video_count) {
  if (schedule == Schedule::dense) return {};
  BufferLedger one;
  one.hold_persistent(0, "subtraction", g.input_dims().values());
  for (std::size_t i = 1; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    if (!is_nonlinear(l)) continue;
    const std::size_t v = l.in.values() + l.out.values();
    if (schedule == Schedule::vanilla) {
      one.hold_persistent(i, "nonlinear", v);
    } else {
      one.acquire_transient(i, "nonlinear", v);
      one.release_transient(v);
    }
  }
  one.hold_persistent(g.size() - 1, "accumulation", g.output_dims().values());
  return merge_reports(std::vector<MemoryReport>(video_count, one.report()));
}

// One row per (video, frame, layer).
struct LayerFrameMetric {
  std::size_t video = 0;
  std::size_t frame = 0;
  std::size_t layer = 0;
  LayerKind kind = LayerKind::input;
  double sparsity = 0.0;
  std::uint64_t flops_charged = 0;
  std::uint64_t flops_dense_equiv = 0;
  double threshold = 0.0;
  bool reference = false;  // row of a chunk's reference frame (dense work)
};

struct RunMetrics {
  std::vector<LayerFrameMetric> rows;
  std::size_t pass_count = 0;
  std::size_t chunk_count = 0;
  MemoryReport memory;
  double wall_ms = 0.0;

  std::uint64_t total_flops() const {
    std::uint64_t s = 0;
    for (const auto& r : rows) s += r.flops_charged;
    return s;
  }
  std::uint64_t dense_flops() const {
    std::uint64_t s = 0;
    for (const auto& r : rows) s += r.flops_dense_equiv;
    return s;
  }
  std::uint64_t flops_of(LayerKind k, bool charged, bool diff_frames_only = false) const {
    std::uint64_t s = 0;
    for (const auto& r : rows) {
      if (r.kind != k || (diff_frames_only && r.reference)) continue;
      s += charged ? r.flops_charged : r.flops_dense_equiv;
    }
    return s;
  }

  void sort_rows() {
    std::sort(rows.begin(), rows.end(), [](const LayerFrameMetric& a, const LayerFrameMetric& b) {
      return std::tie(a.video, a.frame, a.layer) < std::tie(b.video, b.frame, b.layer);
    });
  }
};

// Called after every nonlinear truncation step with the site's updated state. Runs on worker
// threads when several videos run in parallel.
using StateProbe = std::function<void(std::size_t video, std::size_t frame, std::size_t layer, const LayerSpec& l,
                                      const NonlinearState& st, float theta)>;

struct RunResult {
  std::vector<std::vector<DenseTensor>> outputs;  // [video][frame]
  std::vector<std::vector<PixelMask>> output_masks;  // pixels the frame's update touched; all set on reference frames
  RunMetrics metrics;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline LayerFrameMetric reference_row(std::size_t video, std::size_t frame, std::size_t layer, const LayerSpec& l,
                                      double theta) {
  const std::uint64_t dense = dense_layer_flops(l);
  return {video, frame, layer, l.kind, 0.0, dense, dense, theta, true};
}

inline PixelMask full_mask(const Dims& d) { return PixelMask(d.h, d.w, true); }

struct VideoRun {
  std::vector<DenseTensor> outputs;
  std::vector<PixelMask> masks;
  std::vector<LayerFrameMetric> rows;
  MemoryReport memory;
};

// SparseBatch for one video: the outer loop walks layers, the inner loop walks frames.
// Nonlinear state lives only while its layer's frame loop runs.
inline VideoRun sparsebatch_video(const ModelGraph& g, const FrameChunk& chunk, ThresholdController& ctl,
                                  std::size_t video, std::size_t frame_offset, const StateProbe& probe) {
  chunk.validate(g.input_dims());
  const std::size_t frames = chunk.size();
  const std::size_t n = g.size();
  VideoRun run;
  BufferLedger ledger;

  SubtractionBuffer sub{chunk.frames[0]};
  ledger.hold_persistent(0, "subtraction", sub.state.size());

  std::vector<DeltaTensor> cur(frames - 1);
  run.rows.push_back(reference_row(video, frame_offset, 0, g.layer(0), ctl.theta(0)));
  for (std::size_t t = 1; t < frames; ++t) {
    const float theta = ctl.theta(0);
    cur[t - 1] = subtract(chunk.frames[t], sub, theta);
    const double s = cur[t - 1].sparsity();
    ctl.observe(0, s);
    run.rows.push_back({video, frame_offset + t, 0, LayerKind::input, s, 0, 0, theta});
  }

  // Reference-frame activations travel with the batch; add sources keep theirs until joined.
  DenseTensor ref_act = chunk.frames[0];
  std::map<std::size_t, DenseTensor> ref_keep;
  std::map<std::size_t, std::vector<DeltaTensor>> delta_keep;
  if (g.is_add_source(0)) {
    ref_keep[0] = ref_act;
    delta_keep[0] = cur;
  }

  for (std::size_t i = 1; i < n; ++i) {
    const LayerSpec& l = g.layer(i);
    const DenseTensor* ref_aux = l.kind == LayerKind::add ? &ref_keep.at(l.add_ref) : nullptr;
    DenseTensor ref_out = dense_layer_apply(l, ref_act, ref_aux);
    run.rows.push_back(reference_row(video, frame_offset, i, l, ctl.theta(i)));
    const std::uint64_t dense = dense_layer_flops(l);

    if (is_nonlinear(l)) {
      NonlinearState st = make_nonlinear_state(ref_act, ref_out);
      ledger.acquire_transient(i, "nonlinear", st.values());
      for (std::size_t t = 1; t < frames; ++t) {
        const float theta = ctl.theta(i);
        FlopCounter f;
        cur[t - 1] = delta_nonlinear(l, cur[t - 1], st, theta, &f);
        if (probe) probe(video, frame_offset + t, i, l, st, theta);
        const double s = cur[t - 1].sparsity();
        ctl.observe(i, s);
        run.rows.push_back({video, frame_offset + t, i, l.kind, s, f.charged, dense, theta});
      }
      ledger.release_transient(st.values());
    } else {
      for (std::size_t t = 1; t < frames; ++t) {
        FlopCounter f;
        const DeltaTensor* aux = l.kind == LayerKind::add ? &delta_keep.at(l.add_ref)[t - 1] : nullptr;
        cur[t - 1] = delta_linear_layer(l, cur[t - 1], aux, &f);
        run.rows.push_back({video, frame_offset + t, i, l.kind, cur[t - 1].sparsity(), f.charged, dense, 0.0});
      }
    }
    ref_act = std::move(ref_out);
    if (g.is_add_source(i)) {
      ref_keep[i] = ref_act;
      delta_keep[i] = cur;
    }
  }

  AccumulationBuffer acc{ref_act};
  ledger.hold_persistent(n - 1, "accumulation", acc.state.size());
  run.outputs.reserve(frames);
  run.outputs.push_back(acc.state);
  run.masks.push_back(full_mask(acc.state.dims()));
  for (std::size_t t = 1; t < frames; ++t) {
    run.outputs.push_back(accumulate(cur[t - 1], acc));
    run.masks.push_back(cur[t - 1].mask);
  }
  run.memory = ledger.report();
  return run;
}

// Per-video persistent pipeline used by the vanilla schedule: every nonlinear layer keeps
// its own state across frame passes.
class PersistentPipeline {
 public:
  PersistentPipeline(const ModelGraph& g, const DenseTensor& reference, BufferLedger& ledger) : g_(&g) {
    DenseRun dense = dense_forward(g, reference);
    sub_.state = reference;
    ledger.hold_persistent(0, "subtraction", sub_.state.size());
    states_.resize(g.size());
    for (std::size_t i = 1; i < g.size(); ++i) {
      if (!is_nonlinear(g.layer(i))) continue;
      states_[i] = make_nonlinear_state(dense.intermediates[i - 1], dense.intermediates[i]);
      ledger.hold_persistent(i, "nonlinear", states_[i].values());
    }
    acc_.state = dense.output;
    ledger.hold_persistent(g.size() - 1, "accumulation", acc_.state.size());
  }

  const DenseTensor& output() const { return acc_.state; }
  const PixelMask& last_mask() const { return last_mask_; }

  const DenseTensor& step(const DenseTensor& frame, ThresholdController& ctl, std::size_t video, std::size_t frame_no,
                          std::vector<LayerFrameMetric>& rows, const StateProbe& probe = {}) {
    const ModelGraph& g = *g_;
    std::vector<DeltaTensor> layer_deltas(g.size());
    const float theta0 = ctl.theta(0);
    layer_deltas[0] = subtract(frame, sub_, theta0);
    const double s0 = layer_deltas[0].sparsity();
    ctl.observe(0, s0);
    rows.push_back({video, frame_no, 0, LayerKind::input, s0, 0, 0, theta0});
    for (std::size_t i = 1; i < g.size(); ++i) {
      const LayerSpec& l = g.layer(i);
      FlopCounter f;
      double theta = 0.0;
      if (is_nonlinear(l)) {
        const float th = ctl.theta(i);
        theta = th;
        layer_deltas[i] = delta_nonlinear(l, layer_deltas[i - 1], states_[i], th, &f);
        if (probe) probe(video, frame_no, i, l, states_[i], th);
        ctl.observe(i, layer_deltas[i].sparsity());
      } else {
        const DeltaTensor* aux = l.kind == LayerKind::add ? &layer_deltas[l.add_ref] : nullptr;
        layer_deltas[i] = delta_linear_layer(l, layer_deltas[i - 1], aux, &f);
      }
      rows.push_back({video, frame_no, i, l.kind, layer_deltas[i].sparsity(), f.charged, dense_layer_flops(l), theta});
      // Inputs that no later add joins can go.
      if (!g.is_add_source(i - 1)) layer_deltas[i - 1] = DeltaTensor();
    }
    last_mask_ = layer_deltas.back().mask;
    return accumulate(layer_deltas.back(), acc_);
  }

 private:
  const ModelGraph* g_;
  SubtractionBuffer sub_;
  AccumulationBuffer acc_;
  std::vector<NonlinearState> states_;
  PixelMask last_mask_;
};

inline void check_controllers(std::size_t videos, const std::vector<ThresholdController>& ctls) {
  if (ctls.size() != videos) {
    throw ShapeError("need one threshold controller per video: " + std::to_string(videos) + " videos, " +
                     std::to_string(ctls.size()) + " controllers");
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// SparseBatch over one or more videos (one chunk each); each video runs independently.
inline RunResult run_sparsebatch(const ModelGraph& g, const std::vector<FrameChunk>& chunks,
                                 std::vector<ThresholdController>& ctls, std::size_t threads = 1,
                                 std::size_t frame_offset = 0, const StateProbe& probe = {}) {
  if (chunks.empty()) throw ShapeError("no videos to run");
  detail::check_controllers(chunks.size(), ctls);
  for (const auto& c : chunks) c.validate(g.input_dims());
  const auto start = std::chrono::steady_clock::now();
  std::vector<detail::VideoRun> runs(chunks.size());
  detail::parallel_for(chunks.size(), threads, [&](std::size_t v) {
    runs[v] = detail::sparsebatch_video(g, chunks[v], ctls[v], v, frame_offset, probe);
  });
  RunResult out;
  std::vector<MemoryReport> reports;
  for (auto& r : runs) {
    out.outputs.push_back(std::move(r.outputs));
    out.output_masks.push_back(std::move(r.masks));
    out.metrics.rows.insert(out.metrics.rows.end(), r.rows.begin(), r.rows.end());
    reports.push_back(std::move(r.memory));
  }
  out.metrics.memory = merge_reports(reports);
  out.metrics.pass_count = 1;
  out.metrics.chunk_count = 1;
  out.metrics.sort_rows();
  out.metrics.wall_ms = detail::elapsed_ms(start);
  return out;
}

inline RunResult run_sparsebatch(const ModelGraph& g, const FrameChunk& chunk, ThresholdController& ctl) {
  std::vector<ThresholdController> ctls{ctl};
  RunResult r = run_sparsebatch(g, std::vector<FrameChunk>{chunk}, ctls);
  ctl = ctls.front();
  return r;
}

// Micro-batch schedule: pass t processes frame t of every video against persistent per-layer state.
inline RunResult run_vanilla(const ModelGraph& g, const std::vector<FrameChunk>& chunks,
                             std::vector<ThresholdController>& ctls, std::size_t threads = 1,
                             std::size_t frame_offset = 0, const StateProbe& probe = {}) {
  if (chunks.empty()) throw ShapeError("no videos to run");
  detail::check_controllers(chunks.size(), ctls);
  for (const auto& c : chunks) c.validate(g.input_dims());
  const std::size_t frames = chunks.front().size();
  for (const auto& c : chunks) {
    if (c.size() != frames) throw ShapeError("vanilla schedule needs equal chunk lengths across videos");
  }
  const auto start = std::chrono::steady_clock::now();
  const std::size_t videos = chunks.size();
  std::vector<BufferLedger> ledgers(videos);
  std::vector<std::vector<LayerFrameMetric>> rows(videos);
  std::vector<std::unique_ptr<detail::PersistentPipeline>> pipes(videos);
  RunResult out;
  out.outputs.resize(videos);
  out.output_masks.resize(videos);

  detail::parallel_for(videos, threads, [&](std::size_t v) {
    pipes[v] = std::make_unique<detail::PersistentPipeline>(g, chunks[v].frames[0], ledgers[v]);
    out.outputs[v].push_back(pipes[v]->output());
    out.output_masks[v].push_back(detail::full_mask(g.output_dims()));
    for (std::size_t i = 0; i < g.size(); ++i) {
      rows[v].push_back(detail::reference_row(v, frame_offset, i, g.layer(i), ctls[v].theta(i)));
    }
  });
  for (std::size_t t = 1; t < frames; ++t) {
    detail::parallel_for(videos, threads, [&](std::size_t v) {
      out.outputs[v].push_back(pipes[v]->step(chunks[v].frames[t], ctls[v], v, frame_offset + t, rows[v], probe));
      out.output_masks[v].push_back(pipes[v]->last_mask());
    });
  }

  std::vector<MemoryReport> reports;
  for (std::size_t v = 0; v < videos; ++v) {
    out.metrics.rows.insert(out.metrics.rows.end(), rows[v].begin(), rows[v].end());
    reports.push_back(ledgers[v].report());
  }
  out.metrics.memory = merge_reports(reports);
  out.metrics.pass_count = frames;
  out.metrics.chunk_count = 1;
  out.metrics.sort_rows();
  out.metrics.wall_ms = detail::elapsed_ms(start);
  return out;
}

// Dense baseline: every frame through dense_forward.
inline RunResult run_dense(const ModelGraph& g, const std::vector<FrameChunk>& chunks, std::size_t threads = 1,
                           std::size_t frame_offset = 0) {
  if (chunks.empty()) throw ShapeError("no videos to run");
  for (const auto& c : chunks) c.validate(g.input_dims());
  const auto start = std::chrono::steady_clock::now();
  RunResult out;
  out.outputs.resize(chunks.size());
  out.output_masks.resize(chunks.size());
  std::vector<std::vector<LayerFrameMetric>> rows(chunks.size());
  detail::parallel_for(chunks.size(), threads, [&](std::size_t v) {
    for (std::size_t t = 0; t < chunks[v].size(); ++t) {
      out.outputs[v].push_back(dense_forward(g, chunks[v].frames[t]).output);
      out.output_masks[v].push_back(detail::full_mask(g.output_dims()));
      for (std::size_t i = 0; i < g.size(); ++i) {
        rows[v].push_back(detail::reference_row(v, frame_offset + t, i, g.layer(i), 0.0));
      }
    }
  });
  for (auto& r : rows) out.metrics.rows.insert(out.metrics.rows.end(), r.begin(), r.end());
  out.metrics.pass_count = 1;
  out.metrics.chunk_count = 1;
  out.metrics.sort_rows();
  out.metrics.wall_ms = detail::elapsed_ms(start);
  return out;
}

// Splits each video into chunks of `chunk_len` frames (the last may be shorter) and runs them
// in order. Controllers carry across chunks; delta state does not.
inline RunResult run_videos(const ModelGraph& g, const std::vector<std::vector<DenseTensor>>& videos,
                            std::size_t chunk_len, Schedule schedule, std::vector<ThresholdController>& ctls,
                            std::size_t threads = 1) {
  if (videos.empty()) throw ShapeError("no videos to run");
  if (chunk_len == 0) throw ConfigError("chunk length must be positive");
  const std::size_t frames = videos.front().size();
  for (const auto& v : videos) {
    if (v.size() != frames || frames == 0) throw ShapeError("all videos need the same nonzero frame count");
  }
  RunResult out;
  out.outputs.resize(videos.size());
  out.output_masks.resize(videos.size());
  std::vector<MemoryReport> reports;
  double wall = 0.0;
  for (std::size_t start = 0; start < frames; start += chunk_len) {
    const std::size_t len = std::min(chunk_len, frames - start);
    std::vector<FrameChunk> chunks(videos.size());
    for (std::size_t v = 0; v < videos.size(); ++v) {
      chunks[v].frames.assign(videos[v].begin() + static_cast<std::ptrdiff_t>(start),
                              videos[v].begin() + static_cast<std::ptrdiff_t>(start + len));
    }
    RunResult part;
    switch (schedule) {
      case Schedule::dense: part = run_dense(g, chunks, threads, start); break;
      case Schedule::vanilla: part = run_vanilla(g, chunks, ctls, threads, start); break;
      case Schedule::sparsebatch: part = run_sparsebatch(g, chunks, ctls, threads, start); break;
    }
    for (std::size_t v = 0; v < videos.size(); ++v) {
      for (auto& o : part.outputs[v]) out.outputs[v].push_back(std::move(o));
      for (auto& m : part.output_masks[v]) out.output_masks[v].push_back(std::move(m));
    }
    out.metrics.rows.insert(out.metrics.rows.end(), part.metrics.rows.begin(), part.metrics.rows.end());
    out.metrics.pass_count = std::max(out.metrics.pass_count, part.metrics.pass_count);
    ++out.metrics.chunk_count;
    wall += part.metrics.wall_ms;
    reports.push_back(part.metrics.memory);
  }
  // Chunks run one after another, so the footprint is the largest single chunk's.
  for (const auto& r : reports) {
    if (r.persistent_buffer_values >= out.metrics.memory.persistent_buffer_values) out.metrics.memory = r;
  }
  out.metrics.sort_rows();
  out.metrics.wall_ms = wall;
  return out;
}

}  // namespace deltaflux
