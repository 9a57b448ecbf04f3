#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "urvfl/error.hpp"
#include "urvfl/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace urvfl;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

// "0,0.5,1" or "[0.2,0.8],[0.5,0.5]" parse as JSON; bare words become strings.
std::vector<json> parse_values(const std::string& text) {
  try {
    auto arr = json::parse("[" + text + "]");
    return {arr.begin(), arr.end()};
  } catch (const json::exception&) {
  }
  std::vector<json> out;
  std::string token;
  std::stringstream ss(text);
  while (std::getline(ss, token, ',')) {
    try {
      out.push_back(json::parse(token));
    } catch (const json::exception&) {
      out.emplace_back(token);
    }
  }
  return out;
}

void print_summary(const std::vector<SummaryRow>& rows) {
  std::string last;
  for (const auto& r : rows) {
    if (r.label != last) {
      std::printf("%s\n", r.label.c_str());
      last = r.label;
    }
    std::printf("  %-28s %14.6g +- %-12.4g (n=%zu)\n", r.metric.c_str(), r.mean, r.std, r.n);
  }
}

void emit_all(const std::vector<RunOutput>& runs, const fs::path& root) {
  std::vector<MetricsReport> reports;
  for (const auto& r : runs) {
    const auto dir = root / run_directory_name(r.report);
    emit_report(r, dir);
    std::printf("wrote %s\n", dir.string().c_str());
    reports.push_back(r.report);
  }
  const auto rows = summarize(reports);
  write_summary_csv(rows, root / "aggregate.csv");
  print_summary(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertical federated learning attack simulator"};
  app.require_subcommand(1);
  std::string out_dir = "results";
  unsigned threads = 0;

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run every seed of a config");
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("--out", out_dir, "Output directory (URVFL_OUTPUT_DIR overrides)");
  run->add_option("--threads", threads, "Worker threads, 0 = all cores");

  std::string axis, values;
  auto* sw = app.add_subcommand("sweep", "Run a config across values of one parameter");
  sw->add_option("config", config_path, "JSON config file")->required();
  sw->add_option("--axis", axis, "Dotted config path, e.g. defense.noise_sigma")->required();
  sw->add_option("--values", values, "Comma-separated JSON values")->required();
  sw->add_option("--out", out_dir, "Output directory (URVFL_OUTPUT_DIR overrides)");
  sw->add_option("--threads", threads, "Worker threads, 0 = all cores");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Aggregate the reports below a directory");
  rep->add_option("dir", report_dir, "Directory holding run outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    const fs::path root = output_root(out_dir);
    if (*run) {
      emit_all(run_all_seeds(load_config(config_path), threads), root);
    } else if (*sw) {
      auto vals = parse_values(values);
      emit_all(sweep(load_config(config_path), axis, vals, threads), root);
    } else if (*rep) {
      auto reports = collect_reports(report_dir);
      if (reports.empty()) throw Error("no report.jsonl found below " + report_dir);
      const auto rows = summarize(reports);
      write_summary_csv(rows, fs::path(report_dir) / "aggregate.csv");
      print_summary(rows);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kOk;
}
