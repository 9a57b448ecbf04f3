#include "urvfl/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "urvfl/error.hpp"

namespace urvfl {

using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::honest: return "honest";
    case Mode::urvfl: return "urvfl";
    case Mode::urvfl_sync: return "urvfl_sync";
    case Mode::plain_discriminator: return "plain_discriminator";
  }
  return "honest";
}

Mode mode_from_string(const std::string& s) {
  if (s == "honest") return Mode::honest;
  if (s == "urvfl") return Mode::urvfl;
  if (s == "urvfl_sync") return Mode::urvfl_sync;
  if (s == "plain_discriminator") return Mode::plain_discriminator;
  throw ConfigError("unknown mode '" + s + "'");
}

bool is_attack(Mode m) { return m != Mode::honest; }

AttackVariant attack_variant(Mode m) {
  switch (m) {
    case Mode::urvfl_sync: return AttackVariant::urvfl_sync;
    case Mode::plain_discriminator: return AttackVariant::plain_discriminator;
    default: return AttackVariant::urvfl;
  }
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  need(schema_version == kSchemaVersion, "schema_version must be " + std::to_string(kSchemaVersion));
  need(!seeds.empty(), "seeds must not be empty");
  need(control == "none" || control == "label_shuffle", "control must be 'none' or 'label_shuffle'");
  need(control == "none" || is_attack(mode), "label_shuffle control needs an attack mode");

  need(dataset.source == "synthetic" || dataset.source == "csv", "dataset.source must be 'synthetic' or 'csv'");
  if (dataset.source == "synthetic") {
    need(dataset.classes >= 2, "dataset.classes must be >= 2");
    need(dataset.dims >= 2, "dataset.dims must be >= 2");
    need(dataset.per_class >= 2, "dataset.per_class must be >= 2");
    need(dataset.separation > 0.0, "dataset.separation must be positive");
  } else {
    need(!dataset.csv_path.empty(), "dataset.csv_path is required for csv sources");
    need(splits.aux_ratio > 0.0 || !is_attack(mode),
         "splits.aux_ratio 0 (out-of-distribution aux) needs a synthetic dataset");
  }

  const auto& f = partition.fractions;
  need(f.size() >= 2, "partition.fractions needs the adversary plus at least one passive client");
  bool nonneg = true;
  for (double v : f) nonneg = nonneg && v >= 0.0;
  need(nonneg, "partition.fractions must be non-negative");
  need(std::abs(std::accumulate(f.begin(), f.end(), 0.0) - 1.0) < 1e-9, "partition.fractions must sum to 1");
  if (dataset.source == "synthetic" && f.size() >= 2 && nonneg) {
    // Every passive client must end up with at least one column.
    double acc = f[0];
    std::size_t prev = static_cast<std::size_t>(std::llround(acc * static_cast<double>(dataset.dims)));
    bool ok = true;
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
      acc += f[i];
      const auto next = static_cast<std::size_t>(std::llround(acc * static_cast<double>(dataset.dims)));
      ok = ok && next > prev;
      prev = next;
    }
    ok = ok && dataset.dims > prev;
    need(ok, "partition leaves a passive client without columns for dataset.dims=" +
                 std::to_string(dataset.dims));
  }

  need(splits.aux_ratio >= 0.0, "splits.aux_ratio must be >= 0");
  need(splits.test_fraction > 0.0 && splits.test_fraction < 1.0, "splits.test_fraction must lie in (0, 1)");

  need(model.embedding_dim >= 1, "model.embedding_dim must be >= 1");
  for (const auto* v : {&model.bottom_hidden, &model.top_hidden, &model.decoder_hidden, &model.dac_hidden})
    for (auto w : *v) need(w >= 1, "hidden widths must be >= 1");

  need(training.rounds >= 1, "training.rounds must be >= 1");
  need(training.batch_size >= 1, "training.batch_size must be >= 1");
  need(training.aux_batch_size >= 1, "training.aux_batch_size must be >= 1");
  need(mode != Mode::urvfl || training.pretrain_epochs >= 1, "urvfl requires training.pretrain_epochs >= 1");
  for (double lr : {training.lr.passive, training.lr.top, training.lr.adversary, training.lr.encoder,
                    training.lr.decoder, training.lr.dac})
    need(lr >= 0.0 && std::isfinite(lr), "learning rates must be finite and non-negative");

  const auto& sg = detection.splitguard;
  need(sg.fake_probability >= 0.0 && sg.fake_probability < 1.0, "splitguard.fake_probability must lie in [0, 1)");
  need(sg.window >= 1, "splitguard.window must be >= 1");
  need(sg.regular_window >= 2, "splitguard.regular_window must be >= 2");
  need(sg.threshold >= 0.0 && sg.threshold <= 1.0, "splitguard.threshold must lie in [0, 1]");
  need(detection.scrutinizer.threshold >= 0.0 && detection.scrutinizer.threshold <= 1.0,
       "gradient_scrutinizer.threshold must lie in [0, 1]");

  need(defense.nopeek_alpha >= 0.0 && defense.nopeek_alpha <= 1.0, "defense.nopeek_alpha must lie in [0, 1]");
  need(defense.noise_sigma >= 0.0, "defense.noise_sigma must be >= 0");
  need(!defense.dp_epsilon || *defense.dp_epsilon > 0.0, "defense.dp_epsilon must be positive");
  need(defense.dp_clip > 0.0, "defense.dp_clip must be positive");
  need(report.trace_every >= 1, "report.trace_every must be >= 1");

  return errs;
}

namespace {

void throw_if_any(const std::vector<std::string>& errs) {
  if (errs.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ConfigError(msg);
}

}  // namespace

void ExperimentConfig::validate() const { throw_if_any(problems()); }

json to_json(const ExperimentConfig& c) {
  json eps = nullptr;
  if (c.defense.dp_epsilon) {
    eps = std::isinf(*c.defense.dp_epsilon) ? json("inf") : json(*c.defense.dp_epsilon);
  }
  return json{
      {"schema_version", c.schema_version},
      {"mode", to_string(c.mode)},
      {"seeds", c.seeds},
      {"control", c.control},
      {"dataset",
       {{"source", c.dataset.source},
        {"classes", c.dataset.classes},
        {"dims", c.dataset.dims},
        {"per_class", c.dataset.per_class},
        {"separation", c.dataset.separation},
        {"csv_path", c.dataset.csv_path},
        {"label_column", c.dataset.label_column},
        {"seed", c.dataset.seed ? json(*c.dataset.seed) : json(nullptr)}}},
      {"partition", {{"fractions", c.partition.fractions}, {"permute", c.partition.permute}}},
      {"splits", {{"aux_ratio", c.splits.aux_ratio}, {"test_fraction", c.splits.test_fraction}}},
      {"model",
       {{"bottom_hidden", c.model.bottom_hidden},
        {"embedding_dim", c.model.embedding_dim},
        {"top_hidden", c.model.top_hidden},
        {"decoder_hidden", c.model.decoder_hidden},
        {"dac_hidden", c.model.dac_hidden},
        {"activation", to_string(c.model.activation)}}},
      {"training",
       {{"optimizer", to_string(c.training.optimizer)},
        {"rounds", c.training.rounds},
        {"batch_size", c.training.batch_size},
        {"aux_batch_size", c.training.aux_batch_size},
        {"pretrain_epochs", c.training.pretrain_epochs},
        {"lr",
         {{"passive", c.training.lr.passive},
          {"top", c.training.lr.top},
          {"adversary", c.training.lr.adversary},
          {"encoder", c.training.lr.encoder},
          {"decoder", c.training.lr.decoder},
          {"dac", c.training.lr.dac}}}}},
      {"detection",
       {{"splitguard",
         {{"enabled", c.detection.splitguard.enabled},
          {"threshold", c.detection.splitguard.threshold},
          {"window", c.detection.splitguard.window},
          {"warmup_rounds", c.detection.splitguard.warmup_rounds},
          {"fake_probability", c.detection.splitguard.fake_probability},
          {"regular_window", c.detection.splitguard.regular_window}}},
        {"gradient_scrutinizer",
         {{"enabled", c.detection.scrutinizer.enabled}, {"threshold", c.detection.scrutinizer.threshold}}}}},
      {"defense",
       {{"nopeek_alpha", c.defense.nopeek_alpha},
        {"noise_sigma", c.defense.noise_sigma},
        {"dp_epsilon", eps},
        {"dp_clip", c.defense.dp_clip}}},
      {"report", {{"trace_every", c.report.trace_every}, {"export_embeddings", c.report.export_embeddings}}},
  };
}

namespace {

// Reads keys from one JSON object, tracking which were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path, std::vector<std::string>& errs)
      : j_(j.is_object() ? j : empty()), path_(std::move(path)), errs_(errs) {
    if (!j.is_object()) errs_.push_back(where() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      // json converts -3 to a huge unsigned value without complaint.
      if (!v.is_number_unsigned()) return fail(where(key) + " must be a non-negative integer");
    } else if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number()) return fail(where(key) + " must be a number");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(where(key) + ": wrong type (" + std::string(e.what()) + ")");
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) return fail(where(key) + " must be an array");
    std::vector<T> tmp;
    for (const auto& e : v) {
      if (!e.is_number()) return fail(where(key) + " must contain numbers");
      if constexpr (std::is_unsigned_v<T>) {
        if (!e.is_number_integer() || e.get<long long>() < 0)
          return fail(where(key) + " must contain non-negative integers");
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), path_.empty() ? key : path_ + "." + key, errs_);
  }

  [[nodiscard]] const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) errs_.push_back("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

  void fail(std::string msg) { errs_.push_back(std::move(msg)); }

  [[nodiscard]] std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errs_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("schema_version is required");
  ExperimentConfig c;
  std::vector<std::string> errs;
  Section root(j, "", errs);
  root.get("schema_version", c.schema_version);
  throw_if_any(errs);
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
  }
  std::string mode = to_string(c.mode);
  root.get("mode", mode);
  try {
    c.mode = mode_from_string(mode);
  } catch (const ConfigError& e) {
    errs.push_back(e.what());
  }
  root.get_list("seeds", c.seeds);
  root.get("control", c.control);

  auto ds = root.sub("dataset");
  ds.get("source", c.dataset.source);
  ds.get("classes", c.dataset.classes);
  ds.get("dims", c.dataset.dims);
  ds.get("per_class", c.dataset.per_class);
  ds.get("separation", c.dataset.separation);
  ds.get("csv_path", c.dataset.csv_path);
  ds.get("label_column", c.dataset.label_column);
  if (const json* v = ds.raw("seed"); v && !v->is_null()) {
    if (v->is_number_unsigned()) {
      c.dataset.seed = v->get<std::uint64_t>();
    } else {
      errs.push_back("dataset.seed must be a non-negative integer or null");
    }
  }
  ds.finish();

  auto pt = root.sub("partition");
  pt.get_list("fractions", c.partition.fractions);
  pt.get("permute", c.partition.permute);
  pt.finish();

  auto sp = root.sub("splits");
  sp.get("aux_ratio", c.splits.aux_ratio);
  sp.get("test_fraction", c.splits.test_fraction);
  sp.finish();

  auto md = root.sub("model");
  md.get_list("bottom_hidden", c.model.bottom_hidden);
  md.get("embedding_dim", c.model.embedding_dim);
  md.get_list("top_hidden", c.model.top_hidden);
  md.get_list("decoder_hidden", c.model.decoder_hidden);
  md.get_list("dac_hidden", c.model.dac_hidden);
  std::string act = to_string(c.model.activation);
  md.get("activation", act);
  try {
    c.model.activation = activation_from_string(act);
  } catch (const Error&) {
    errs.push_back("model.activation: unknown activation '" + act + "'");
  }
  md.finish();

  auto tr = root.sub("training");
  std::string opt = to_string(c.training.optimizer);
  tr.get("optimizer", opt);
  try {
    c.training.optimizer = optimizer_from_string(opt);
  } catch (const Error&) {
    errs.push_back("training.optimizer: unknown optimizer '" + opt + "'");
  }
  tr.get("rounds", c.training.rounds);
  tr.get("batch_size", c.training.batch_size);
  tr.get("aux_batch_size", c.training.aux_batch_size);
  tr.get("pretrain_epochs", c.training.pretrain_epochs);
  auto lr = tr.sub("lr");
  lr.get("passive", c.training.lr.passive);
  lr.get("top", c.training.lr.top);
  lr.get("adversary", c.training.lr.adversary);
  lr.get("encoder", c.training.lr.encoder);
  lr.get("decoder", c.training.lr.decoder);
  lr.get("dac", c.training.lr.dac);
  lr.finish();
  tr.finish();

  auto dt = root.sub("detection");
  auto sg = dt.sub("splitguard");
  sg.get("enabled", c.detection.splitguard.enabled);
  sg.get("threshold", c.detection.splitguard.threshold);
  sg.get("window", c.detection.splitguard.window);
  sg.get("warmup_rounds", c.detection.splitguard.warmup_rounds);
  sg.get("fake_probability", c.detection.splitguard.fake_probability);
  sg.get("regular_window", c.detection.splitguard.regular_window);
  sg.finish();
  auto gs = dt.sub("gradient_scrutinizer");
  gs.get("enabled", c.detection.scrutinizer.enabled);
  gs.get("threshold", c.detection.scrutinizer.threshold);
  gs.finish();
  dt.finish();

  auto df = root.sub("defense");
  df.get("nopeek_alpha", c.defense.nopeek_alpha);
  df.get("noise_sigma", c.defense.noise_sigma);
  if (const json* e = df.raw("dp_epsilon")) {
    if (e->is_null()) {
      c.defense.dp_epsilon.reset();
    } else if (e->is_string() && e->get<std::string>() == "inf") {
      c.defense.dp_epsilon = std::numeric_limits<double>::infinity();
    } else if (e->is_number()) {
      c.defense.dp_epsilon = e->get<double>();
    } else {
      errs.push_back("defense.dp_epsilon must be null, a number, or \"inf\"");
    }
  }
  df.get("dp_clip", c.defense.dp_clip);
  df.finish();

  auto rp = root.sub("report");
  rp.get("trace_every", c.report.trace_every);
  rp.get("export_embeddings", c.report.export_embeddings);
  rp.finish();

  root.finish();
  // Fields that failed to parse keep their (valid) defaults.
  for (auto& e : c.problems()) errs.push_back(std::move(e));
  throw_if_any(errs);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig with_override(const ExperimentConfig& c, const std::string& path, const json& value) {
  json j = to_json(c);
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty sweep axis");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw ConfigError("sweep axis '" + path + "' does not name a config key");
    }
    node = &(*node)[parts[i]];
  }
  *node = value;
  return config_from_json(j);
}

}  // namespace urvfl
