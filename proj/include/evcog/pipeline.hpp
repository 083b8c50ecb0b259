#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcog/analysis.hpp"
#include "evcog/behavioral.hpp"
#include "evcog/choicesets.hpp"
#include "evcog/eqgen.hpp"
#include "evcog/model.hpp"
#include "evcog/probe.hpp"
#include "evcog/report.hpp"
#include "evcog/trainer.hpp"

namespace evcog {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "evcog/0.1";

struct CorpusVariant {
  std::string name;
  std::string dist = "ecological";  // ecological | uniform
  bool sign_ablation = false;
  bool remove_answers = false;

  DistSpec spec() const;
};

struct DatasetEntry {
  std::string name;
  Source source = Source::Choices13k;
  std::filesystem::path path;
};

struct SurrogateEntry {
  std::string name;
  Domain domain = Domain::Risky;
  std::size_t n_problems = 5000;
  std::size_t n_observations = 20;
  PTParams pt{0.8, 0.8, 2.25, 0.6, 5.0};
  HyperbolicParams hyperbolic{0.05, 2.0};
};

struct StageToggles {
  bool eqgen = true;
  bool train = true;
  bool ingest = true;
  bool probe = true;
  bool baselines = true;
  bool analyze = false;
};

struct ProbeSettings {
  int cv_folds = 10;
  Pooling pooling = Pooling::EqualsToken;
  ProbeOptions options;
};

struct BaselineSettings {
  bool behavioral = true;  // PT on risky, hyperbolic on intertemporal
  bool ev = true;
  bool mlp = true;
  int mlp_cv_folds = 10;
  MLPConfig mlp_config;
  int starts = 8;
};

struct AnalyzeSettings {
  bool curves = true;
  bool accuracy = true;
  std::size_t n_test = 20000;
  int mds_restarts = 64;
};

struct PipelineConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  StageToggles stages;
  std::size_t n_equations = 100000;
  std::vector<CorpusVariant> variants;
  bool include_untrained = true;
  ModelConfig model;
  TrainConfig train;
  DiscountBases bases;
  bool keep_feedback = false;
  std::vector<DatasetEntry> datasets;
  std::vector<SurrogateEntry> surrogates;
  ProbeSettings probe;
  BaselineSettings baselines;
  AnalyzeSettings analyze;
  SweepGrid sweep = SweepGrid::size_by_quantity();

  PipelineConfig();
  // Throws ConfigError naming the field path. With check_paths, dataset files
  // must exist.
  void validate(bool check_paths = true) const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

// Parses YAML into JSON (scalars typed as bool, integer, float or string).
nlohmann::json yaml_to_json(const std::string& yaml_text);

// EVCOG_A__B=v sets config path a.b (lower-cased) to v parsed as JSON, or as
// a string when it is not valid JSON. EVCOG_DEVICE only accepts "cpu".
void apply_env_overrides(nlohmann::json& config, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> evcog_environment();

// Reads a YAML config, applies environment overrides and validates.
PipelineConfig load_pipeline_config(const std::filesystem::path& path, bool use_environment = true,
                                    bool check_paths = true);

struct StageOutcome {
  enum class Status { Ran, Cached, Failed, Skipped };
  std::string stage;
  std::string item;
  Status status = Status::Ran;
  std::string message;
};
std::string to_string(StageOutcome::Status s);

struct PipelineResult {
  ComparisonReport report;
  std::vector<StageOutcome> stages;
  bool ok() const;
  nlohmann::json summary() const;
};

using LogFn = std::function<void(const std::string&)>;

// Runs the enabled stages in dependency order under config.out_dir:
//   corpora/ checkpoints/ datasets/ fits/ analysis/ report/ cache/
// Each stage item is skipped when its cache key (hash of its inputs and the
// code version) matches the stored one and its outputs exist. A failed item
// marks its dependents Skipped; independent items continue.
PipelineResult run_pipeline(const PipelineConfig& config, const LogFn& log = {});

}  // namespace evcog
