#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "urvfl/experiment.hpp"

namespace urvfl {

/// Output directory: `URVFL_OUTPUT_DIR` when set, else `fallback`.
[[nodiscard]] std::filesystem::path output_root(const std::filesystem::path& fallback);

/// Writes report.jsonl, trace.csv, detection.csv, summary.csv and
/// snapshot.json into `dir` (created if missing); embeddings.csv when the
/// config asks for it.
void emit_report(const RunOutput& run, const std::filesystem::path& dir);

void write_report_jsonl(const MetricsReport& report, const std::filesystem::path& path);
[[nodiscard]] MetricsReport read_report_jsonl(const std::filesystem::path& path);
void write_trace_csv(const MetricsReport& report, const std::filesystem::path& path);
void write_detection_csv(const MetricsReport& report, const std::filesystem::path& path);

[[nodiscard]] nlohmann::json network_to_json(const Network& net);
[[nodiscard]] Network network_from_json(const nlohmann::json& j);
void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& path);
[[nodiscard]] ModelSnapshot load_snapshot(const std::filesystem::path& path);

/// Every report.jsonl below `dir`, sorted by path.
[[nodiscard]] std::vector<MetricsReport> collect_reports(const std::filesystem::path& dir);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

/// Directory name for one run: label and seed made filesystem-safe.
[[nodiscard]] std::string run_directory_name(const MetricsReport& report);

}  // namespace urvfl
