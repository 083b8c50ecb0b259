#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "evcog/errors.hpp"
#include "evcog/pipeline.hpp"
#include "evcog/report.hpp"

using namespace evcog;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("evcog_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

FitResult fake_fit(double r2, bool cv) {
  FitResult f;
  f.observed_rates = {0.1, 0.2, 0.3};
  f.r2_insample = r2;
  f.r2_insample_adjusted = r2 - 0.01;
  f.has_cv = cv;
  f.r2_cv_mean = cv ? r2 / 3.0 : 0.0;
  f.r2_cv_se = cv ? 0.1 / 7.0 : 0.0;
  return f;
}

// A configuration small enough to run every stage in a few seconds.
PipelineConfig tiny_config(const fs::path& out) {
  PipelineConfig c;
  c.out_dir = out;
  c.seed = 5;
  c.n_equations = 600;
  c.model.hidden_size = 8;
  c.model.layers = 1;
  c.model.heads = 2;
  c.model.dropout = 0.0;
  c.train.batch_size = 32;
  c.train.val_every_epochs = 1;
  c.train.max_steps = 4;
  c.train.seed = c.seed;
  SurrogateEntry risky;
  risky.name = "risky";
  risky.n_problems = 60;
  SurrogateEntry later;
  later.name = "later";
  later.domain = Domain::Intertemporal;
  later.n_problems = 60;
  c.surrogates = {risky, later};
  c.probe.cv_folds = 3;
  c.probe.options.lambda = 0.01;
  c.baselines.starts = 1;
  c.baselines.mlp_cv_folds = 3;
  c.baselines.mlp_config.hidden_units = 4;
  c.baselines.mlp_config.max_epochs = 50;
  return c;
}

}  // namespace

TEST_CASE("config validation names the field path") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate(false));

  auto j = nlohmann::json(c);
  j["model"]["dropout"] = 1.0;
  CHECK_THROWS_WITH_AS(j.get<PipelineConfig>().validate(false), doctest::Contains("dropout"), ConfigError);

  j = nlohmann::json(c);
  j["probe"]["bogus"] = 1;
  CHECK_THROWS_WITH_AS(j.get<PipelineConfig>(), doctest::Contains("probe.bogus"), ConfigError);

  j = nlohmann::json(c);
  j["eqgen"]["variants"] = {{{"name", "x"}, {"dist", "zipf"}}};
  CHECK_THROWS_WITH_AS(j.get<PipelineConfig>().validate(false), doctest::Contains("eqgen.variants.x.dist"),
                       ConfigError);

  j = nlohmann::json(c);
  j["schema_version"] = 2;
  CHECK_THROWS_AS(j.get<PipelineConfig>().validate(false), ConfigError);

  PipelineConfig missing;
  missing.datasets.push_back({"c13k", Source::Choices13k, "/nonexistent/c13k.csv"});
  CHECK_THROWS_WITH_AS(missing.validate(true), doctest::Contains("datasets.c13k.path"), ConfigError);
  CHECK_NOTHROW(missing.validate(false));
}

TEST_CASE("config JSON round trip and seed propagation") {
  PipelineConfig c = tiny_config("runs/x");
  c.probe.options.lambda.reset();
  const auto j = nlohmann::json(c);
  const auto back = j.get<PipelineConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.train.seed == c.seed);
  CHECK(back.probe.options.seed == c.seed);
  CHECK(back.baselines.mlp_config.seed == c.seed);
}

TEST_CASE("YAML scalars are typed and quoted scalars stay strings") {
  auto j = yaml_to_json("seed: 12\nout_dir: \"007\"\nmodel: {dropout: 0.1, use_bias: true}\nlist: [1, a]\n");
  CHECK(j["seed"].is_number_integer());
  CHECK(j["out_dir"] == "007");
  CHECK(j["model"]["dropout"].get<double>() == doctest::Approx(0.1));
  CHECK(j["model"]["use_bias"] == true);
  CHECK(j["list"][1] == "a");
  CHECK(yaml_to_json("").is_object());
  CHECK_THROWS_AS(yaml_to_json("a: [1, 2"), ConfigError);
}

TEST_CASE("environment overrides") {
  nlohmann::json j = {{"model", {{"hidden_size", 320}}}};
  apply_env_overrides(j, {{"EVCOG_MODEL__HIDDEN_SIZE", "64"},
                          {"EVCOG_OUT_DIR", "runs/env"},
                          {"EVCOG_DEVICE", "cpu"},
                          {"EVCOG_LOG_LEVEL", "debug"},
                          {"OTHER", "1"}});
  CHECK(j["model"]["hidden_size"] == 64);
  CHECK(j["out_dir"] == "runs/env");
  CHECK_FALSE(j.contains("log_level"));
  CHECK(j.get<PipelineConfig>().model.hidden_size == 64);
  CHECK_THROWS_WITH_AS(apply_env_overrides(j, {{"EVCOG_DEVICE", "cuda"}}), doctest::Contains("EVCOG_DEVICE"),
                       ConfigError);
}

TEST_CASE("report rendering") {
  ComparisonReport one;
  one.add("arithmetic-gpt", "ecological", "choices13k", fake_fit(0.7, true));
  const auto csv = render_report(one, ReportFormat::Csv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.rfind("model,training_data,dataset,n,", 0) == 0);

  ComparisonReport empty;
  CHECK_THROWS_AS(render_report(empty, ReportFormat::Text), UsageError);
  CHECK_THROWS_AS(parse_report_format("pdf"), UsageError);
  CHECK(parse_report_format("svg") == ReportFormat::Svg);

  ComparisonReport r;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const char* model : {"arithmetic-gpt", "mlp", "ev-logit"}) {
    for (const char* ds : {"choices13k", "gershman20"}) r.add(model, "x", ds, fake_fit(u(rng), model[0] != 'e'));
  }
  const auto back = report_from_csv(render_report(r, ReportFormat::Csv));
  const auto from_json = nlohmann::json::parse(render_report(back, ReportFormat::Json)).get<ComparisonReport>();
  REQUIRE(from_json.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(from_json.rows[i].model_tag == r.rows[i].model_tag);
    for (const auto& [ds, s] : r.rows[i].scores) {
      const auto& t = from_json.rows[i].scores.at(ds);
      CHECK(std::abs(t.r2_insample - s.r2_insample) <= 1e-12);
      CHECK(std::abs(t.r2_insample_adjusted - s.r2_insample_adjusted) <= 1e-12);
      CHECK(std::abs(t.r2_cv_mean - s.r2_cv_mean) <= 1e-12);
      CHECK(std::abs(t.r2_cv_se - s.r2_cv_se) <= 1e-12);
      CHECK(t.has_cv == s.has_cv);
      CHECK(t.n_problems == s.n_problems);
    }
  }

  const auto text = render_report(r, ReportFormat::Text);
  std::istringstream lines(text);
  std::string header, line;
  std::getline(lines, header);
  for (int i = 0; i < 4 && std::getline(lines, line); ++i) CHECK(line.size() == header.size());
  const auto svg = render_report(r, ReportFormat::Svg);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(render_report(r, ReportFormat::Svg) == svg);
}

TEST_CASE("pipeline with only eqgen writes corpora and no report rows") {
  const auto dir = scratch("eqgen");
  PipelineConfig c = tiny_config(dir);
  c.stages = {true, false, false, false, false, false};
  const auto result = run_pipeline(c);
  CHECK(result.ok());
  CHECK(result.report.rows.empty());
  for (const auto& v : c.variants) {
    CHECK(fs::exists(dir / "corpora" / (v.name + ".txt")));
    CHECK(fs::exists(dir / "corpora" / (v.name + ".meta.json")));
  }
  CHECK_FALSE(fs::exists(dir / "report"));
}

TEST_CASE("full tiny pipeline, then a rerun that hits every cache") {
  const auto dir = scratch("full");
  PipelineConfig c = tiny_config(dir);
  const auto first = run_pipeline(c);
  for (const auto& s : first.stages) CHECK_MESSAGE(s.status == StageOutcome::Status::Ran, s.stage, " ", s.item);
  REQUIRE(first.ok());
  // three trained variants plus the untrained model, behavioral, EV-logit, MLP
  CHECK(first.report.rows.size() == 7);
  const auto report_csv = slurp(dir / "report" / "report.csv");

  // Report numbers are the FitResult artifact numbers.
  const auto fit = nlohmann::json::parse(slurp(dir / "fits" / "mlp__risky.json")).get<FitResult>();
  const auto& row = *std::find_if(first.report.rows.begin(), first.report.rows.end(),
                                  [](const ReportRow& r) { return r.model_tag == "mlp"; });
  CHECK(row.scores.at("risky").r2_cv_mean == fit.r2_cv_mean);
  CHECK(report_from_csv(report_csv).rows[0].scores.at("risky").r2_insample ==
        first.report.rows[0].scores.at("risky").r2_insample);

  const auto second = run_pipeline(c);
  for (const auto& s : second.stages) CHECK_MESSAGE(s.status == StageOutcome::Status::Cached, s.stage, " ", s.item);
  CHECK(slurp(dir / "report" / "report.csv") == report_csv);
  CHECK(nlohmann::json(second.report) == nlohmann::json(first.report));

  // Changing a probe setting reruns only the probes and the report.
  c.probe.options.lambda = 0.02;
  const auto third = run_pipeline(c);
  for (const auto& s : third.stages) {
    const bool rerun = s.stage == "probe" || s.stage == "report";
    CHECK_MESSAGE((s.status == StageOutcome::Status::Ran) == rerun, s.stage, " ", s.item);
  }
}

TEST_CASE("a failing dataset skips its dependents and the rest continue") {
  const auto dir = scratch("failure");
  PipelineConfig c = tiny_config(dir);
  c.variants.resize(1);
  c.include_untrained = false;
  c.surrogates.resize(1);
  const auto csv = dir / "broken.csv";
  std::ofstream(csv) << "id,a_x1,a_p1,a_x2,a_p2,b_x1,b_p1,b_x2,b_p2,amb_a,amb_b,rate_a,n,feedback\n"
                     << "r1,10,0.5,,,0,1,,,0,0,0.4,20,0\n";
  c.datasets.push_back({"broken", Source::Choices13k, csv});
  const auto result = run_pipeline(c);
  CHECK_FALSE(result.ok());
  std::map<std::string, StageOutcome::Status> by_item;
  for (const auto& s : result.stages) by_item[s.stage + "/" + s.item] = s.status;
  CHECK(by_item.at("ingest/broken") == StageOutcome::Status::Failed);
  CHECK(by_item.at("probe/ecological__broken") == StageOutcome::Status::Skipped);
  CHECK(by_item.at("baselines/mlp__broken") == StageOutcome::Status::Skipped);
  CHECK(by_item.at("probe/ecological__risky") == StageOutcome::Status::Ran);
  CHECK(result.report.datasets() == std::vector<std::string>{"risky"});
}
