// evcog command-line interface. Logs go to stderr, artifacts under --out.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "evcog/analysis.hpp"
#include "evcog/behavioral.hpp"
#include "evcog/checkpoint.hpp"
#include "evcog/choicesets.hpp"
#include "evcog/eqgen.hpp"
#include "evcog/errors.hpp"
#include "evcog/pipeline.hpp"
#include "evcog/probe.hpp"
#include "evcog/report.hpp"
#include "evcog/trainer.hpp"

namespace fs = std::filesystem;
using namespace evcog;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  std::string config;
  bool json = false;
  std::string log_level = "info";
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
}

// Config file settings (if any) with the global seed applied.
PipelineConfig settings(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config, true, false);
  if (g.seed_set) {
    c.seed = g.seed;
    c.train.seed = g.seed;
    c.probe.options.seed = g.seed;
    c.baselines.mlp_config.seed = g.seed;
  }
  c.out_dir = g.out;
  return c;
}

void emit(const Globals& g, const nlohmann::json& result, const std::string& human) {
  if (g.json) {
    std::cout << result.dump(2) << "\n";
  } else if (!human.empty()) {
    std::cout << human;
  }
}

std::string fit_summary(const FitResult& f) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s on %s: R2 %.4f (adjusted %.4f)", f.model_tag.c_str(), f.dataset_tag.c_str(),
                f.r2_insample, f.r2_insample_adjusted);
  std::string s = buf;
  if (f.has_cv) {
    std::snprintf(buf, sizeof buf, ", CV R2 %.4f (SE %.4f)", f.r2_cv_mean, f.r2_cv_se);
    s += buf;
  }
  return s + "\n";
}

void save_fit(const FitResult& f, const fs::path& dir, const std::string& stem) {
  write_text(dir / (stem + ".json"), nlohmann::json(f).dump(2) + "\n");
  write_text(dir / (stem + ".predictions.csv"), f.predictions_csv());
}

Eigen::MatrixXd read_matrix_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("'" + p.string() + "': non-numeric cell '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError("'" + p.string() + "': ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("'" + p.string() + "': no rows");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::vector<ChoiceProblem> problems_in(const fs::path& p) {
  return read_problems_jsonl(fs::is_directory(p) ? p / "problems.jsonl" : p);
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("evcog");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");

  CLI::App app{"evcog: arithmetic-trained transformers and choice-model baselines"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "YAML config file");
  app.add_flag("--json", g.json, "Machine-readable output on stdout");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error")->envname("EVCOG_LOG_LEVEL");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate an equation corpus");
  std::string gen_dist = "ecological", gen_name;
  std::size_t gen_n = 100000;
  bool gen_ablate = false, gen_remove = false;
  gen->add_option("--dist", gen_dist, "ecological|uniform");
  gen->add_option("-n,--n-equations", gen_n, "Number of equations");
  gen->add_flag("--sign-ablation", gen_ablate, "Flip the sign of every result");
  gen->add_flag("--remove-answers", gen_remove, "Drop right-hand sides");
  gen->add_option("--name", gen_name, "Corpus file stem (default: the distribution)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  std::string tr_corpus, tr_name = "model";
  bool tr_untrained = false;
  tr->add_option("--corpus", tr_corpus, "Corpus text file");
  tr->add_option("--name", tr_name, "Checkpoint stem");
  tr->add_flag("--untrained", tr_untrained, "Write a freshly initialized checkpoint");

  // ingest
  auto* in = app.add_subcommand("ingest", "Load a human choice CSV, stylize it and save JSONL");
  std::string in_source, in_path;
  bool in_keep = false;
  in->add_option("--source", in_source, "choices13k|cpc18|gershman20|agrawal23")->required();
  in->add_option("--in", in_path, "CSV file")->required()->check(CLI::ExistingFile);
  in->add_flag("--keep-feedback", in_keep, "Keep feedback trials");

  // probe
  auto* pr = app.add_subcommand("probe", "Fit and cross-validate the logistic probe");
  std::string pr_ckpt, pr_problems, pr_embeddings, pr_penalty, pr_pooling;
  int pr_cv = 0;
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint");
  pr->add_option("--embeddings", pr_embeddings, "External embeddings JSONL instead of a checkpoint");
  pr->add_option("--problems", pr_problems, "Ingested dataset directory or problems.jsonl")->required();
  pr->add_option("--cv", pr_cv, "Folds (default from config, 10)");
  pr->add_option("--penalty", pr_penalty, "l1|none");
  pr->add_option("--pooling", pr_pooling, "equals|mean");

  // baseline
  auto* bl = app.add_subcommand("baseline", "Fit a classical baseline");
  std::string bl_model, bl_problems;
  bl->add_option("--model", bl_model, "pt|hyperbolic|ev|mlp")->required();
  bl->add_option("--problems", bl_problems, "Ingested dataset directory or problems.jsonl")->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "Implicit curves, arithmetic accuracy and sweeps");
  an->require_subcommand(1);
  auto* an_curves = an->add_subcommand("curves", "Implicit probability, value and discount curves");
  std::string an_ckpt, an_kind = "all", an_embeddings;
  an_curves->add_option("--ckpt", an_ckpt, "Checkpoint");
  an_curves->add_option("--kind", an_kind, "probability|value|discount|all");
  an_curves->add_option("--embeddings", an_embeddings, "CSV of embeddings aligned with the grid (single kind)");
  auto* an_acc = an->add_subcommand("accuracy", "Arithmetic accuracy on fresh test equations");
  std::string acc_dist = "ecological";
  std::size_t acc_n = 20000;
  an_acc->add_option("--ckpt", an_ckpt, "Checkpoint")->required();
  an_acc->add_option("--test-dist", acc_dist, "ecological|uniform");
  an_acc->add_option("--n-test", acc_n, "Test equations");
  auto* an_sweep = an->add_subcommand("sweep", "Train and probe every cell of the configured sweep grid");
  std::vector<std::string> sweep_data;
  std::string sweep_grid = "config";
  an_sweep->add_option("--problems", sweep_data, "Ingested dataset directories")->required();
  an_sweep->add_option("--grid", sweep_grid, "config|size|distribution");

  // run
  auto* run = app.add_subcommand("run", "Run the configured pipeline");

  // report
  auto* rp = app.add_subcommand("report", "Render a comparison report");
  std::string rp_in, rp_format = "text", rp_out;
  rp->add_option("--in", rp_in, "report.json or report.csv")->required()->check(CLI::ExistingFile);
  rp->add_option("--format", rp_format, "csv|json|text|svg");
  rp->add_option("--output", rp_out, "File to write (default: stdout)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  const auto info = [](const std::string& m) { spdlog::info("{}", m); };

  try {
    const fs::path out = g.out;
    if (gen->parsed()) {
      const auto cfg = settings(g);
      CorpusVariant v{gen_name.empty() ? gen_dist : gen_name, gen_dist, gen_ablate, gen_remove};
      const auto spec = v.spec();
      spec.validate();
      auto corpus = generate_corpus(spec, gen_n, cfg.seed, static_cast<std::size_t>(cfg.model.context_length));
      fs::create_directories(out);
      write_corpus(corpus, out / (v.name + ".txt"));
      const auto meta = corpus_metadata(spec, gen_n, cfg.seed, corpus.stats);
      write_text(out / (v.name + ".meta.json"), meta.dump(2) + "\n");
      emit(g, {{"corpus", (out / (v.name + ".txt")).string()}, {"metadata", meta}},
           "wrote " + std::to_string(corpus.records.size()) + " equations to " + (out / (v.name + ".txt")).string() + "\n");
    } else if (tr->parsed()) {
      const auto cfg = settings(g);
      cfg.model.validate();
      ModelCheckpoint ckpt;
      nlohmann::json result;
      if (tr_untrained) {
        Gpt<float> model(cfg.model);
        model.init_weights(cfg.seed);
        ckpt = ModelCheckpoint::from_model(model, {{"variant", "untrained"}});
      } else {
        if (tr_corpus.empty()) throw UsageError("train: --corpus is required unless --untrained is given");
        auto r = train(cfg.model, cfg.train, read_corpus_lines(tr_corpus), [](const ValidationPoint& p) {
          spdlog::info("epoch {} train {:.4f} val {:.4f}", p.epoch, p.train_loss, p.val_loss);
        });
        ckpt = r.checkpoint;
        write_text(out / (tr_name + ".log.csv"), r.log.to_csv());
        result["stop_reason"] = to_string(r.log.stop_reason);
        result["steps"] = r.log.steps;
        result["best_val_loss"] = r.log.best_val_loss;
      }
      fs::create_directories(out);
      save_checkpoint(ckpt, out / (tr_name + ".bin"));
      result["checkpoint"] = (out / (tr_name + ".bin")).string();
      result["hash"] = ckpt.hash();
      emit(g, result, "wrote " + (out / (tr_name + ".bin")).string() + "\n");
    } else if (in->parsed()) {
      const auto cfg = settings(g);
      IngestReport rep;
      auto problems = load_dataset(parse_source(in_source), in_path, &rep);
      std::size_t removed = 0;
      if (!in_keep) problems = filter_feedback(problems, &removed);
      auto st = stylize_all(problems, cfg.bases, static_cast<std::size_t>(cfg.model.context_length));
      if (!st.overflow_ids.empty()) {
        throw StylizationOverflowError(st.overflow_ids.front(),
                                       std::to_string(st.overflow_ids.size()) + " problems overflow the context");
      }
      fs::create_directories(out);
      write_problems_jsonl(problems, out / "problems.jsonl");
      write_stylized_jsonl(st.stylized, out / "stylized.jsonl");
      nlohmann::json r = {{"source", in_source}, {"rows", rep.rows}, {"problems", problems.size()},
                          {"pooled_rows", rep.pooled_rows}, {"feedback_removed", removed}};
      write_text(out / "ingest.json", r.dump(2) + "\n");
      emit(g, r, "ingested " + std::to_string(problems.size()) + " problems into " + out.string() + "\n");
    } else if (pr->parsed()) {
      auto cfg = settings(g);
      if (!pr_penalty.empty()) cfg.probe.options.penalty = parse_penalty(pr_penalty);
      if (!pr_pooling.empty()) cfg.probe.pooling = parse_pooling(pr_pooling);
      if (pr_cv > 0) cfg.probe.cv_folds = pr_cv;
      const auto problems = problems_in(pr_problems);
      std::vector<EmbeddingSet> emb;
      std::string model_tag = "arithmetic-gpt";
      if (!pr_embeddings.empty()) {
        emb = import_external_embeddings(pr_embeddings);
        model_tag = "external";
      } else {
        if (pr_ckpt.empty()) throw UsageError("probe: give --ckpt or --embeddings");
        const auto ckpt = load_checkpoint(pr_ckpt);
        const auto dir = fs::is_directory(pr_problems) ? fs::path(pr_problems) : fs::path(pr_problems).parent_path();
        const auto stylized = fs::exists(dir / "stylized.jsonl")
                                  ? read_stylized_jsonl(dir / "stylized.jsonl")
                                  : stylize_all(problems, cfg.bases, static_cast<std::size_t>(ckpt.config.context_length)).stylized;
        emb = embed_all(ckpt.to_model(), stylized, ckpt.hash(), cfg.probe.pooling);
      }
      bool grouped = false;
      for (const auto& p : problems) grouped = grouped || p.group != p.id;
      FitResult fit = fit_probe(emb, problems, cfg.probe.options);
      FitResult cv = cross_validate(emb, problems, {cfg.probe.cv_folds, grouped, cfg.probe.options});
      fit.has_cv = true;
      fit.r2_cv_mean = cv.r2_cv_mean;
      fit.r2_cv_se = cv.r2_cv_se;
      fit.r2_cv_folds = cv.r2_cv_folds;
      fit.fold_assignments = cv.fold_assignments;
      fit.diagnostics["cv"] = cv.diagnostics;
      fit.model_tag = model_tag;
      fit.dataset_tag = fs::path(pr_problems).filename().string();
      save_fit(fit, out, "probe");
      emit(g, nlohmann::json(fit), fit_summary(fit));
    } else if (bl->parsed()) {
      const auto cfg = settings(g);
      const auto problems = problems_in(bl_problems);
      FitResult fit;
      if (bl_model == "mlp") {
        fit = fit_mlp(problems, cfg.baselines.mlp_config, cfg.baselines.mlp_cv_folds);
      } else {
        BehavioralFitOptions o;
        o.starts = cfg.baselines.starts;
        o.seed = cfg.seed;
        o.bases = cfg.bases;
        fit = fit_behavioral(parse_behavioral_model(bl_model), problems, o);
      }
      fit.dataset_tag = fs::path(bl_problems).filename().string();
      save_fit(fit, out, bl_model);
      emit(g, nlohmann::json(fit), fit_summary(fit));
    } else if (an_curves->parsed()) {
      const auto cfg = settings(g);
      MdsOptions mo;
      mo.restarts = cfg.analyze.mds_restarts;
      mo.seed = cfg.seed;
      std::vector<CurveKind> kinds;
      if (an_kind == "all") kinds = {CurveKind::Probability, CurveKind::Value, CurveKind::Discount};
      else kinds = {parse_curve_kind(an_kind)};
      if (!an_embeddings.empty() && kinds.size() != 1) {
        throw UsageError("analyze curves: --embeddings needs a single --kind");
      }
      std::optional<Gpt<float>> model;
      if (an_embeddings.empty()) {
        if (an_ckpt.empty()) throw UsageError("analyze curves: give --ckpt or --embeddings");
        model.emplace(load_checkpoint(an_ckpt).to_model());
      }
      nlohmann::json result = nlohmann::json::object();
      std::string human;
      for (auto kind : kinds) {
        auto curve = model ? implicit_curve(*model, kind, mo)
                           : implicit_curve_from_embeddings(kind, read_matrix_csv(an_embeddings), mo);
        nlohmann::json doc = {{"kind", to_string(kind)}, {"stress", curve.stress}};
        try {
          curve.fitted_params = fit_implicit(curve, cfg.seed);
          doc["fit"] = curve.fitted_params;
        } catch (const FitError& e) {
          doc["fit_error"] = e.what();
        }
        write_text(out / ("curve_" + to_string(kind) + ".csv"), curve.to_csv());
        write_text(out / ("curve_" + to_string(kind) + ".json"), doc.dump(2) + "\n");
        result[to_string(kind)] = doc;
        human += to_string(kind) + ": " + (doc.contains("fit") ? doc["fit"].dump() : doc["fit_error"].dump()) + "\n";
      }
      emit(g, result, human);
    } else if (an_acc->parsed()) {
      const auto model = load_checkpoint(an_ckpt).to_model();
      const auto spec = acc_dist == "uniform" ? DistSpec::uniform() : acc_dist == "ecological"
                                                    ? DistSpec::ecological()
                                                    : throw UsageError("--test-dist: expected ecological|uniform");
      const auto rep = arithmetic_accuracy(model, spec, acc_dist, acc_n);
      write_text(out / ("accuracy_" + acc_dist + ".json"), rep.to_json().dump(2) + "\n");
      char buf[160];
      std::snprintf(buf, sizeof buf, "correct probability %.4f (SE %.4f), integer match %.4f\n",
                    rep.correct_probability, rep.correct_probability_se, rep.integer_match_rate);
      emit(g, rep.to_json(), buf);
    } else if (an_sweep->parsed()) {
      const auto cfg = settings(g);
      SweepGrid grid = sweep_grid == "size"           ? SweepGrid::size_by_quantity()
                       : sweep_grid == "distribution" ? SweepGrid::distribution_grid()
                       : sweep_grid == "config"       ? cfg.sweep
                                                      : throw UsageError("--grid: expected config|size|distribution");
      SweepConfig sc;
      sc.model = cfg.model;
      sc.train = cfg.train;
      sc.corpus_seed = cfg.seed;
      sc.cv = {cfg.probe.cv_folds, false, cfg.probe.options};
      sc.bases = cfg.bases;
      for (const auto& d : sweep_data) {
        SweepDataset ds{fs::path(d).filename().string(), problems_in(d)};
        for (const auto& p : ds.problems) ds.grouped = ds.grouped || p.group != p.id;
        sc.datasets.push_back(std::move(ds));
      }
      auto table = run_sweep(grid, sc, out, info);
      write_text(out / "sweep.csv", table.to_csv());
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : table.rows) {
        rows.push_back({{"cell", r.cell}, {"dataset", r.dataset}, {"status", r.status}, {"r2_cv_mean", r.r2_cv_mean},
                        {"r2_cv_se", r.r2_cv_se}});
      }
      emit(g, {{"rows", rows}, {"cells_resumed", table.cells_resumed}}, table.to_text());
      for (const auto& r : table.rows) {
        if (r.status != "ok") return 1;
      }
    } else if (run->parsed()) {
      if (g.config.empty()) throw UsageError("run: --config is required");
      auto cfg = load_pipeline_config(g.config);
      if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.train.seed = g.seed;
        cfg.probe.options.seed = g.seed;
        cfg.baselines.mlp_config.seed = g.seed;
      }
      if (app.get_option("--out")->count() > 0) cfg.out_dir = g.out;
      const auto result = run_pipeline(cfg, info);
      std::string human;
      if (!result.report.rows.empty()) human = render_report(result.report, ReportFormat::Text);
      emit(g, result.summary(), human);
      return result.ok() ? 0 : 1;
    } else if (rp->parsed()) {
      const auto text = read_text(rp_in);
      const ComparisonReport report = fs::path(rp_in).extension() == ".csv"
                                          ? report_from_csv(text)
                                          : nlohmann::json::parse(text).get<ComparisonReport>();
      const auto rendered = render_report(report, parse_report_format(rp_format));
      if (rp_out.empty()) {
        std::cout << rendered;
      } else {
        write_text(rp_out, rendered);
      }
    }
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
