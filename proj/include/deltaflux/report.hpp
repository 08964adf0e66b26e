#pragma once

#include <map>
#include <string>
#include <vector>

#include "deltaflux/controller.hpp"
#include "deltaflux/scheduler.hpp"

namespace deltaflux {

// Every CSV row starts with this; bump it on any column change.
inline constexpr int kCsvSchemaVersion = 1;

inline std::string metrics_csv(const RunMetrics& m) {
  std::string out =
      "schema_version,video,frame,layer,kind,sparsity,flops_charged,flops_dense_equiv,threshold\n";
  for (const auto& r : m.rows) {
    out += std::to_string(kCsvSchemaVersion) + "," + std::to_string(r.video) + "," + std::to_string(r.frame) + "," +
           std::to_string(r.layer) + "," + std::string(kind_name(r.kind)) + "," + detail::format_double(r.sparsity) +
           "," + std::to_string(r.flops_charged) + "," + std::to_string(r.flops_dense_equiv) + "," +
           detail::format_double(r.threshold) + "\n";
  }
  return out;
}

struct RunSummary {
  Schedule schedule = Schedule::sparsebatch;
  std::size_t videos = 0;
  std::size_t frames = 0;
  std::size_t chunk = 0;
  const RunMetrics* metrics = nullptr;
};

inline std::string summary_csv_header() {
  return "schema_version,schedule,videos,frames,chunk,pass_count,chunks,persistent_values,peak_transient_values,"
         "total_flops,dense_flops,wall_ms\n";
}

// wall_ms is the only machine-dependent column.
inline std::string summary_csv_row(const RunSummary& s) {
  const RunMetrics& m = *s.metrics;
  return std::to_string(kCsvSchemaVersion) + "," + std::string(schedule_name(s.schedule)) + "," +
         std::to_string(s.videos) + "," + std::to_string(s.frames) + "," + std::to_string(s.chunk) + "," +
         std::to_string(m.pass_count) + "," + std::to_string(m.chunk_count) + "," +
         std::to_string(m.memory.persistent_buffer_values) + "," + std::to_string(m.memory.peak_transient_values) +
         "," + std::to_string(m.total_flops()) + "," + std::to_string(m.dense_flops()) + "," +
         detail::format_double(m.wall_ms) + "\n";
}

// Wide per-layer sparsity matrix: one row per (video, layer), one column per frame.
inline std::string sparsity_csv(const RunMetrics& m) {
  std::map<std::pair<std::size_t, std::size_t>, std::map<std::size_t, double>> cells;
  std::map<std::size_t, LayerKind> kinds;
  std::size_t max_frame = 0;
  for (const auto& r : m.rows) {
    cells[{r.video, r.layer}][r.frame] = r.sparsity;
    kinds[r.layer] = r.kind;
    max_frame = std::max(max_frame, r.frame);
  }
  std::string out = "schema_version,video,layer,kind";
  for (std::size_t f = 0; f <= max_frame; ++f) out += ",f" + std::to_string(f);
  out += "\n";
  for (const auto& [key, frames] : cells) {
    out += std::to_string(kCsvSchemaVersion) + "," + std::to_string(key.first) + "," + std::to_string(key.second) +
           "," + std::string(kind_name(kinds[key.second]));
    for (std::size_t f = 0; f <= max_frame; ++f) {
      auto it = frames.find(f);
      out += "," + (it == frames.end() ? std::string() : detail::format_double(it->second));
    }
    out += "\n";
  }
  return out;
}

inline std::string memory_csv(const MemoryReport& r) {
  std::string out = "schema_version,layer,role,persistent,values\n";
  for (const auto& b : r.per_site_breakdown) {
    out += std::to_string(kCsvSchemaVersion) + "," + std::to_string(b.layer) + "," + b.role + "," +
           (b.persistent ? "1" : "0") + "," + std::to_string(b.values) + "\n";
  }
  return out;
}

}  // namespace deltaflux
