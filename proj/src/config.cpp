#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "evcog/errors.hpp"
#include "evcog/pipeline.hpp"

extern char** environ;

namespace evcog {

DistSpec CorpusVariant::spec() const {
  DistSpec s;
  if (dist == "ecological") s = DistSpec::ecological();
  else if (dist == "uniform") s = DistSpec::uniform();
  else throw ConfigError("eqgen.variants." + name + ".dist: expected ecological|uniform, got '" + dist + "'");
  s.sign_ablation = sign_ablation;
  s.remove_answers = remove_answers;
  return s;
}

PipelineConfig::PipelineConfig() {
  variants = {{"ecological", "ecological", false, false},
              {"ablated", "ecological", true, false},
              {"uniform", "uniform", false, false}};
}

void PipelineConfig::validate(bool check_paths) const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                      std::to_string(schema_version));
  }
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  if (n_equations < 1) throw ConfigError("eqgen.n_equations: must be >= 1");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (v.name.empty()) throw ConfigError("eqgen.variants: every variant needs a name");
    if (v.name == "untrained") throw ConfigError("eqgen.variants." + v.name + ": name is reserved");
    if (!names.insert(v.name).second) throw ConfigError("eqgen.variants." + v.name + ": duplicate name");
    try {
      v.spec().validate();
    } catch (const ConfigError& e) {
      throw ConfigError("eqgen.variants." + v.name + "." + e.what());
    }
  }
  model.validate();
  train.validate();
  std::set<std::string> ds;
  for (const auto& d : datasets) {
    if (d.name.empty()) throw ConfigError("datasets: every dataset needs a name");
    if (!ds.insert(d.name).second) throw ConfigError("datasets." + d.name + ": duplicate name");
    if (d.source == Source::Surrogate) throw ConfigError("datasets." + d.name + ".source: use the surrogates section");
    if (check_paths && !std::filesystem::exists(d.path)) {
      throw ConfigError("datasets." + d.name + ".path: file '" + d.path.string() + "' not found");
    }
  }
  for (const auto& s : surrogates) {
    if (s.name.empty()) throw ConfigError("surrogates: every entry needs a name");
    if (!ds.insert(s.name).second) throw ConfigError("surrogates." + s.name + ": duplicate dataset name");
    if (s.n_problems < 2) throw ConfigError("surrogates." + s.name + ".n_problems: must be >= 2");
    try {
      if (s.domain == Domain::Risky) s.pt.validate();
      else s.hyperbolic.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("surrogates." + s.name + "." + e.what());
    }
  }
  if (probe.cv_folds < 2) throw ConfigError("probe.cv_folds: must be >= 2");
  if (probe.options.lambda && !(*probe.options.lambda >= 0.0)) throw ConfigError("probe.lambda: must be >= 0");
  for (double l : probe.options.lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("probe.lambda_grid: values must be >= 0");
  }
  if (!(probe.options.inner_validation_fraction > 0.0 && probe.options.inner_validation_fraction < 1.0)) {
    throw ConfigError("probe.inner_validation_fraction: must lie in (0, 1)");
  }
  if (baselines.mlp_cv_folds < 0 || baselines.mlp_cv_folds == 1) {
    throw ConfigError("baselines.mlp_cv_folds: must be 0 (off) or >= 2");
  }
  if (baselines.starts < 1) throw ConfigError("baselines.starts: must be >= 1");
  if (baselines.mlp_config.hidden_units < 1) throw ConfigError("baselines.mlp_config.hidden_units: must be >= 1");
  if (!(baselines.mlp_config.learning_rate > 0.0)) {
    throw ConfigError("baselines.mlp_config.learning_rate: must be > 0");
  }
  if (analyze.n_test < 1) throw ConfigError("analyze.n_test: must be >= 1");
  if (analyze.mds_restarts < 1) throw ConfigError("analyze.mds_restarts: must be >= 1");
  for (double d : {bases.year, bases.month, bases.day}) {
    if (!(d > 0.0 && d <= 1.0)) throw ConfigError("ingest.discount: factors must lie in (0, 1]");
  }
}

namespace {

const std::set<std::string> kTopLevel = {"schema_version", "seed",    "out_dir",  "stages",   "eqgen",
                                         "model",          "train",   "datasets", "surrogates", "ingest",
                                         "probe",          "baselines", "analyze", "sweep"};

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

void check_keys(const nlohmann::json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected a mapping");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(path + "." + k + ": unknown field");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : c.variants) {
    variants.push_back(
        {{"name", v.name}, {"dist", v.dist}, {"sign_ablation", v.sign_ablation}, {"remove_answers", v.remove_answers}});
  }
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : c.datasets) {
    datasets.push_back({{"name", d.name}, {"source", to_string(d.source)}, {"path", d.path.string()}});
  }
  nlohmann::json surrogates = nlohmann::json::array();
  for (const auto& s : c.surrogates) {
    nlohmann::json e = {{"name", s.name},
                        {"domain", to_string(s.domain)},
                        {"n_problems", s.n_problems},
                        {"n_observations", s.n_observations}};
    if (s.domain == Domain::Risky) e["pt"] = s.pt;
    else e["hyperbolic"] = s.hyperbolic;
    surrogates.push_back(e);
  }
  nlohmann::json prob_dists = nlohmann::json::array();
  for (const auto& b : c.sweep.prob_dists) prob_dists.push_back({b.a, b.b});
  nlohmann::json train = c.train;
  train.erase("seed");
  j = {{"schema_version", c.schema_version},
       {"seed", c.seed},
       {"out_dir", c.out_dir.string()},
       {"stages",
        {{"eqgen", c.stages.eqgen},
         {"train", c.stages.train},
         {"ingest", c.stages.ingest},
         {"probe", c.stages.probe},
         {"baselines", c.stages.baselines},
         {"analyze", c.stages.analyze}}},
       {"eqgen", {{"n_equations", c.n_equations}, {"variants", variants}, {"include_untrained", c.include_untrained}}},
       {"model", c.model},
       {"train", train},
       {"datasets", datasets},
       {"surrogates", surrogates},
       {"ingest",
        {{"keep_feedback", c.keep_feedback},
         {"discount", {{"year", c.bases.year}, {"month", c.bases.month}, {"day", c.bases.day}}}}},
       {"probe",
        {{"cv_folds", c.probe.cv_folds},
         {"pooling", to_string(c.probe.pooling)},
         {"penalty", to_string(c.probe.options.penalty)},
         {"lambda", c.probe.options.lambda ? nlohmann::json(*c.probe.options.lambda) : nlohmann::json(nullptr)},
         {"lambda_grid", c.probe.options.lambda_grid},
         {"inner_validation_fraction", c.probe.options.inner_validation_fraction},
         {"newton_max_iterations", c.probe.options.newton_max_iterations},
         {"l1_max_iterations", c.probe.options.l1_max_iterations},
         {"tolerance", c.probe.options.tolerance}}},
       {"baselines",
        {{"behavioral", c.baselines.behavioral},
         {"ev", c.baselines.ev},
         {"mlp", c.baselines.mlp},
         {"mlp_cv_folds", c.baselines.mlp_cv_folds},
         {"starts", c.baselines.starts},
         {"mlp_config",
          {{"hidden_units", c.baselines.mlp_config.hidden_units},
           {"learning_rate", c.baselines.mlp_config.learning_rate},
           {"max_epochs", c.baselines.mlp_config.max_epochs},
           {"patience", c.baselines.mlp_config.patience},
           {"holdout_fraction", c.baselines.mlp_config.holdout_fraction}}}}},
       {"analyze",
        {{"curves", c.analyze.curves},
         {"accuracy", c.analyze.accuracy},
         {"n_test", c.analyze.n_test},
         {"mds_restarts", c.analyze.mds_restarts}}},
       {"sweep",
        {{"hidden_sizes", c.sweep.hidden_sizes},
         {"data_quantities", c.sweep.data_quantities},
         {"prob_dists", prob_dists},
         {"value_exponents", c.sweep.value_exponents}}}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  check_keys(j, "config", kTopLevel);
  c.schema_version = field(j, "schema_version", "config", c.schema_version);
  c.seed = field(j, "seed", "config", c.seed);
  c.out_dir = field(j, "out_dir", "config", c.out_dir.string());

  if (j.contains("stages")) {
    const auto& s = j.at("stages");
    check_keys(s, "stages", {"eqgen", "train", "ingest", "probe", "baselines", "analyze"});
    c.stages.eqgen = field(s, "eqgen", "stages", c.stages.eqgen);
    c.stages.train = field(s, "train", "stages", c.stages.train);
    c.stages.ingest = field(s, "ingest", "stages", c.stages.ingest);
    c.stages.probe = field(s, "probe", "stages", c.stages.probe);
    c.stages.baselines = field(s, "baselines", "stages", c.stages.baselines);
    c.stages.analyze = field(s, "analyze", "stages", c.stages.analyze);
  }
  if (j.contains("eqgen")) {
    const auto& e = j.at("eqgen");
    check_keys(e, "eqgen", {"n_equations", "variants", "include_untrained"});
    c.n_equations = field(e, "n_equations", "eqgen", c.n_equations);
    c.include_untrained = field(e, "include_untrained", "eqgen", c.include_untrained);
    if (e.contains("variants")) {
      c.variants.clear();
      for (const auto& v : e.at("variants")) {
        check_keys(v, "eqgen.variants", {"name", "dist", "sign_ablation", "remove_answers"});
        CorpusVariant cv;
        cv.name = field<std::string>(v, "name", "eqgen.variants", "");
        cv.dist = field<std::string>(v, "dist", "eqgen.variants." + cv.name, cv.dist);
        cv.sign_ablation = field(v, "sign_ablation", "eqgen.variants." + cv.name, false);
        cv.remove_answers = field(v, "remove_answers", "eqgen.variants." + cv.name, false);
        c.variants.push_back(cv);
      }
    }
  }
  try {
    if (j.contains("model")) {
      check_keys(j.at("model"), "model",
                 {"hidden_size", "layers", "heads", "context_length", "vocab_size", "dropout", "use_bias",
                  "tie_embeddings"});
      c.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("train")) {
      check_keys(j.at("train"), "train",
                 {"batch_size", "learning_rate", "betas", "weight_decay", "eps", "val_every_epochs",
                  "plateau_patience", "plateau_min_delta", "max_epochs", "micro_batch", "max_steps",
                  "max_wall_seconds"});
      c.train = j.at("train").get<TrainConfig>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model/train: ") + e.what());
  }
  c.train.seed = c.seed;
  if (j.contains("datasets")) {
    for (const auto& d : j.at("datasets")) {
      check_keys(d, "datasets", {"name", "source", "path"});
      DatasetEntry entry;
      entry.source = parse_source(field<std::string>(d, "source", "datasets", ""));
      entry.name = field<std::string>(d, "name", "datasets", to_string(entry.source));
      entry.path = field<std::string>(d, "path", "datasets." + entry.name, "");
      c.datasets.push_back(entry);
    }
  }
  if (j.contains("surrogates")) {
    for (const auto& s : j.at("surrogates")) {
      check_keys(s, "surrogates", {"name", "domain", "n_problems", "n_observations", "pt", "hyperbolic"});
      SurrogateEntry entry;
      entry.name = field<std::string>(s, "name", "surrogates", "");
      const std::string path = "surrogates." + entry.name;
      entry.domain = parse_domain(field<std::string>(s, "domain", path, "risky"));
      entry.n_problems = field(s, "n_problems", path, entry.n_problems);
      entry.n_observations = field(s, "n_observations", path, entry.n_observations);
      entry.pt = field(s, "pt", path, entry.pt);
      entry.hyperbolic = field(s, "hyperbolic", path, entry.hyperbolic);
      c.surrogates.push_back(entry);
    }
  }
  if (j.contains("ingest")) {
    const auto& g = j.at("ingest");
    check_keys(g, "ingest", {"keep_feedback", "discount"});
    c.keep_feedback = field(g, "keep_feedback", "ingest", c.keep_feedback);
    if (g.contains("discount")) {
      const auto& d = g.at("discount");
      check_keys(d, "ingest.discount", {"year", "month", "day"});
      c.bases.year = field(d, "year", "ingest.discount", c.bases.year);
      c.bases.month = field(d, "month", "ingest.discount", c.bases.month);
      c.bases.day = field(d, "day", "ingest.discount", c.bases.day);
    }
  }
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    check_keys(p, "probe",
               {"cv_folds", "pooling", "penalty", "lambda", "lambda_grid", "inner_validation_fraction",
                "newton_max_iterations", "l1_max_iterations", "tolerance"});
    auto& o = c.probe.options;
    c.probe.cv_folds = field(p, "cv_folds", "probe", c.probe.cv_folds);
    c.probe.pooling = parse_pooling(field<std::string>(p, "pooling", "probe", "equals"));
    o.penalty = parse_penalty(field<std::string>(p, "penalty", "probe", "l1"));
    if (p.contains("lambda") && !p.at("lambda").is_null()) o.lambda = field(p, "lambda", "probe", 0.0);
    o.lambda_grid = field(p, "lambda_grid", "probe", o.lambda_grid);
    o.inner_validation_fraction = field(p, "inner_validation_fraction", "probe", o.inner_validation_fraction);
    o.newton_max_iterations = field(p, "newton_max_iterations", "probe", o.newton_max_iterations);
    o.l1_max_iterations = field(p, "l1_max_iterations", "probe", o.l1_max_iterations);
    o.tolerance = field(p, "tolerance", "probe", o.tolerance);
  }
  c.probe.options.seed = c.seed;
  if (j.contains("baselines")) {
    const auto& b = j.at("baselines");
    check_keys(b, "baselines", {"behavioral", "ev", "mlp", "mlp_cv_folds", "starts", "mlp_config"});
    c.baselines.behavioral = field(b, "behavioral", "baselines", c.baselines.behavioral);
    c.baselines.ev = field(b, "ev", "baselines", c.baselines.ev);
    c.baselines.mlp = field(b, "mlp", "baselines", c.baselines.mlp);
    c.baselines.mlp_cv_folds = field(b, "mlp_cv_folds", "baselines", c.baselines.mlp_cv_folds);
    c.baselines.starts = field(b, "starts", "baselines", c.baselines.starts);
    if (b.contains("mlp_config")) {
      const auto& m = b.at("mlp_config");
      check_keys(m, "baselines.mlp_config", {"hidden_units", "learning_rate", "max_epochs", "patience", "holdout_fraction"});
      auto& mc = c.baselines.mlp_config;
      mc.hidden_units = field(m, "hidden_units", "baselines.mlp_config", mc.hidden_units);
      mc.learning_rate = field(m, "learning_rate", "baselines.mlp_config", mc.learning_rate);
      mc.max_epochs = field(m, "max_epochs", "baselines.mlp_config", mc.max_epochs);
      mc.patience = field(m, "patience", "baselines.mlp_config", mc.patience);
      mc.holdout_fraction = field(m, "holdout_fraction", "baselines.mlp_config", mc.holdout_fraction);
    }
  }
  c.baselines.mlp_config.seed = c.seed;
  if (j.contains("analyze")) {
    const auto& a = j.at("analyze");
    check_keys(a, "analyze", {"curves", "accuracy", "n_test", "mds_restarts"});
    c.analyze.curves = field(a, "curves", "analyze", c.analyze.curves);
    c.analyze.accuracy = field(a, "accuracy", "analyze", c.analyze.accuracy);
    c.analyze.n_test = field(a, "n_test", "analyze", c.analyze.n_test);
    c.analyze.mds_restarts = field(a, "mds_restarts", "analyze", c.analyze.mds_restarts);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, "sweep", {"hidden_sizes", "data_quantities", "prob_dists", "value_exponents"});
    c.sweep.hidden_sizes = field(s, "hidden_sizes", "sweep", c.sweep.hidden_sizes);
    c.sweep.data_quantities = field(s, "data_quantities", "sweep", c.sweep.data_quantities);
    c.sweep.value_exponents = field(s, "value_exponents", "sweep", c.sweep.value_exponents);
    if (s.contains("prob_dists")) {
      c.sweep.prob_dists.clear();
      for (const auto& p : s.at("prob_dists")) {
        auto ab = p.get<std::vector<double>>();
        if (ab.size() != 2) throw ConfigError("sweep.prob_dists: each entry is [a, b]");
        c.sweep.prob_dists.push_back({ab[0], ab[1]});
      }
    }
  }
}

namespace {

nlohmann::json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s.empty() || s == "~" || s == "null") return nullptr;
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ei == std::errc() && pi == s.data() + s.size()) return i;
  double d = 0.0;
  auto [pd, ed] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ed == std::errc() && pd == s.data() + s.size()) return d;
  return s;
}

nlohmann::json node_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      auto a = nlohmann::json::array();
      for (const auto& e : n) a.push_back(node_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      auto o = nlohmann::json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = node_to_json(kv.second);
      return o;
    }
  }
  return nullptr;
}

const std::set<std::string> kReservedEnv = {"EVCOG_DEVICE", "EVCOG_ACCEPTANCE_TIER1", "EVCOG_LOG_LEVEL"};

}  // namespace

nlohmann::json yaml_to_json(const std::string& yaml_text) {
  try {
    auto j = node_to_json(YAML::Load(yaml_text));
    return j.is_null() ? nlohmann::json::object() : j;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: invalid YAML: ") + e.what());
  }
}

void apply_env_overrides(nlohmann::json& config, const std::vector<std::pair<std::string, std::string>>& env) {
  for (const auto& [name, value] : env) {
    if (name == "EVCOG_DEVICE") {
      if (value != "cpu") throw ConfigError("EVCOG_DEVICE: only 'cpu' is supported, got '" + value + "'");
      continue;
    }
    if (name.rfind("EVCOG_", 0) != 0 || kReservedEnv.count(name)) continue;
    std::string rest = name.substr(6);
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::vector<std::string> path;
    std::size_t pos = 0;
    while (true) {
      auto next = rest.find("__", pos);
      path.push_back(rest.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    nlohmann::json* node = &config;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->is_object()) throw ConfigError(name + ": cannot override inside a non-mapping field");
      node = &(*node)[path[i]];
      if (node->is_null()) *node = nlohmann::json::object();
    }
    if (!node->is_object()) throw ConfigError(name + ": cannot override inside a non-mapping field");
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    (*node)[path.back()] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
}

std::vector<std::pair<std::string, std::string>> evcog_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    std::string kv = *e;
    if (kv.rfind("EVCOG_", 0) != 0) continue;
    auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, bool use_environment, bool check_paths) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    j = yaml_to_json(buf.str());
  }
  if (use_environment) apply_env_overrides(j, evcog_environment());
  PipelineConfig c = j.get<PipelineConfig>();
  // Relative dataset paths resolve against the config file's directory.
  if (!path.empty()) {
    for (auto& d : c.datasets) {
      if (d.path.is_relative()) d.path = path.parent_path() / d.path;
    }
  }
  c.validate(check_paths);
  return c;
}

}  // namespace evcog
