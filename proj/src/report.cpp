#include "urvfl/report.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "urvfl/error.hpp"

namespace urvfl {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path output_root(const fs::path& fallback) {
  if (const char* env = std::getenv("URVFL_OUTPUT_DIR"); env && *env) return fs::path(env);
  return fallback;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

std::optional<double> opt_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

Decision decision_from(const std::string& s) {
  if (s == "detected") return Decision::detected;
  if (s == "undetected") return Decision::undetected;
  throw ParseError("unknown decision '" + s + "'");
}

}  // namespace

void write_report_jsonl(const MetricsReport& r, const fs::path& path) {
  const json p = r.payload();
  auto out = open_out(path);
  json assumptions = json::array();
  const auto& det = r.config.contains("detection") ? r.config["detection"] : json::object();
  for (const char* d : {"splitguard", "gradient_scrutinizer"}) {
    if (det.contains(d) && det[d].value("enabled", false)) {
      // Passive clients hold no labels, so the detectors are handed them.
      assumptions.push_back("detectors read batch labels through an oracle label channel");
      break;
    }
  }
  out << json{{"record", "header"}, {"label", p["label"]}, {"mode", p["mode"]}, {"seed", p["seed"]},
              {"config", p["config"]}, {"assumptions", assumptions}}
             .dump()
      << '\n';
  for (const auto& row : p["trace"]) {
    json j = row;
    j["record"] = "round";
    out << j.dump() << '\n';
  }
  for (const auto& ev : p["detection"]) {
    json j = ev;
    j["record"] = "detection";
    out << j.dump() << '\n';
  }
  out << json{{"record", "summary"},
              {"final_metrics", p["final_metrics"]},
              {"grad_norms", p["grad_norms"]},
              {"wall_clock_seconds", r.wall_clock_seconds}}
             .dump()
      << '\n';
}

MetricsReport read_report_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  MetricsReport r;
  std::string line;
  std::size_t lineno = 0;
  bool header = false, summary = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "header") {
        r.label = j.at("label").get<std::string>();
        r.mode = mode_from_string(j.at("mode").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config = j.at("config");
        header = true;
      } else if (kind == "round") {
        TraceRow t;
        t.round = j.at("round").get<std::size_t>();
        t.loss = j.at("loss").get<double>();
        t.recon_loss = opt_double(j.at("recon_loss"));
        t.malicious_loss = opt_double(j.at("malicious_loss"));
        t.dac_loss = opt_double(j.at("dac_loss"));
        t.fake_batch = j.at("fake_batch").get<bool>();
        t.grad_norm_mean = j.at("grad_norm_mean").get<double>();
        t.emb_cos = opt_double(j.at("emb_cos"));
        r.trace.push_back(t);
      } else if (kind == "detection") {
        r.detection.push_back({j.at("round").get<std::size_t>(), j.at("detector").get<std::string>(),
                               j.at("client").get<std::size_t>(), j.at("score").get<double>(),
                               j.at("trailing_mean").get<double>(),
                               decision_from(j.at("decision").get<std::string>())});
      } else if (kind == "summary") {
        for (const auto& m : j.at("final_metrics"))
          r.final_metrics.emplace_back(m.at(0).get<std::string>(), m.at(1).get<double>());
        r.grad_norms.rounds = j.at("grad_norms").get<std::vector<std::vector<double>>>();
        r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        summary = true;
      } else {
        throw ParseError("unknown record '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header || !summary) throw ParseError(path.string() + ": missing header or summary record");
  return r;
}

void write_trace_csv(const MetricsReport& r, const fs::path& path) {
  auto out = open_out(path);
  out << "round,loss,recon_loss,malicious_loss,dac_loss,fake_batch,grad_norm_mean,emb_cos\n";
  for (const auto& t : r.trace) {
    out << t.round << ',' << t.loss << ',' << cell(t.recon_loss) << ',' << cell(t.malicious_loss) << ','
        << cell(t.dac_loss) << ',' << (t.fake_batch ? 1 : 0) << ',' << t.grad_norm_mean << ',' << cell(t.emb_cos)
        << '\n';
  }
}

void write_detection_csv(const MetricsReport& r, const fs::path& path) {
  auto out = open_out(path);
  out << "round,detector,score,trailing_mean,decision,client\n";
  for (const auto& e : r.detection) {
    out << e.round << ',' << e.detector << ',' << e.score << ',' << e.trailing_mean << ',' << to_string(e.decision)
        << ',' << e.client << '\n';
  }
}

json network_to_json(const Network& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    if (l.kind == LayerSpec::Kind::affine) {
      layers.push_back({{"kind", "affine"}, {"in", l.in}, {"out", l.out}});
    } else {
      layers.push_back({{"kind", "activation"}, {"activation", to_string(l.activation)}});
    }
  }
  json params = json::array();
  for (const auto& p : net.parameters()) params.push_back({{"shape", p.shape}, {"values", p.values}});
  return {{"layers", layers}, {"parameters", params}};
}

Network network_from_json(const json& j) {
  try {
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      if (l.at("kind") == "affine") {
        s.kind = LayerSpec::Kind::affine;
        s.in = l.at("in").get<std::size_t>();
        s.out = l.at("out").get<std::size_t>();
      } else {
        s.kind = LayerSpec::Kind::activation;
        s.activation = activation_from_string(l.at("activation").get<std::string>());
      }
      layers.push_back(s);
    }
    std::vector<Tensor> params;
    for (const auto& p : j.at("parameters"))
      params.emplace_back(p.at("shape").get<std::vector<std::size_t>>(), p.at("values").get<std::vector<double>>());
    return Network(std::move(layers), std::move(params));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed network: ") + e.what());
  }
}

void save_snapshot(const ModelSnapshot& s, const fs::path& path) {
  json j = json::object();
  for (const auto& [name, net] : s.networks) j[name] = network_to_json(net);
  auto out = open_out(path);
  out << j.dump() << '\n';
}

ModelSnapshot load_snapshot(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  ModelSnapshot s;
  for (const auto& [name, net] : j.items()) s.networks.emplace(name, network_from_json(net));
  return s;
}

void emit_report(const RunOutput& run, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  write_report_jsonl(run.report, dir / "report.jsonl");
  write_trace_csv(run.report, dir / "trace.csv");
  write_detection_csv(run.report, dir / "detection.csv");
  write_summary_csv(summarize({run.report}), dir / "summary.csv");
  save_snapshot(run.snapshot, dir / "snapshot.json");
  const auto& cfg = run.report.config;
  if (cfg.contains("report") && cfg["report"].value("export_embeddings", false) &&
      run.test_target_embeddings.numel() > 0) {
    auto out = open_out(dir / "embeddings.csv");
    const auto& t = run.test_target_embeddings;
    const auto& e = run.test_encoder_embeddings;
    out << "source,row";
    for (std::size_t k = 0; k < t.cols(); ++k) out << ",e" << k;
    out << '\n';
    const std::pair<const char*, const Tensor*> sources[] = {{"target", &t}, {"encoder", &e}};
    for (const auto& [name, m] : sources) {
      for (std::size_t i = 0; i < m->rows(); ++i) {
        out << name << ',' << i;
        for (double v : m->row(i)) out << ',' << v;
        out << '\n';
      }
    }
  }
}

std::vector<MetricsReport> collect_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "report.jsonl") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<MetricsReport> out;
  for (const auto& p : paths) out.push_back(read_report_jsonl(p));
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const fs::path& path) {
  auto out = open_out(path);
  out << "label,metric,n,mean,std\n";
  for (const auto& r : rows) {
    std::string label = r.label;
    if (label.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : label) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      label = q + "\"";
    }
    out << label << ',' << r.metric << ',' << r.n << ',' << r.mean << ',' << r.std << '\n';
  }
}

std::string run_directory_name(const MetricsReport& r) {
  std::string s;
  for (char c : r.label) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '=') ? c : '_';
  return s + "/seed_" + std::to_string(r.seed);
}

}  // namespace urvfl
