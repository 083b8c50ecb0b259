#include "evcog/pipeline.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "evcog/checkpoint.hpp"
#include "evcog/errors.hpp"
#include "evcog/hash.hpp"

namespace evcog {

std::string to_string(StageOutcome::Status s) {
  switch (s) {
    case StageOutcome::Status::Ran: return "ran";
    case StageOutcome::Status::Cached: return "cached";
    case StageOutcome::Status::Failed: return "failed";
    case StageOutcome::Status::Skipped: return "skipped";
  }
  return "?";
}

bool PipelineResult::ok() const {
  for (const auto& s : stages) {
    if (s.status == StageOutcome::Status::Failed || s.status == StageOutcome::Status::Skipped) return false;
  }
  return true;
}

nlohmann::json PipelineResult::summary() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& s : stages) {
    nlohmann::json e = {{"stage", s.stage}, {"item", s.item}, {"status", to_string(s.status)}};
    if (!s.message.empty()) e["message"] = s.message;
    items.push_back(e);
  }
  return {{"ok", ok()}, {"stages", items}, {"report_rows", report.rows.size()}};
}

namespace {

namespace fs = std::filesystem;
using Status = StageOutcome::Status;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

std::string file_digest(const fs::path& p) { return sha256_file(p); }

class Runner {
 public:
  Runner(const PipelineConfig& config, const LogFn& log) : c_(config), log_(log), root_(config.out_dir) {}

  // Runs `fn` unless its cache key is current. Returns true when the outputs
  // are available afterwards.
  template <typename Fn>
  bool item(const std::string& stage, const std::string& name, bool deps_ok, const std::function<nlohmann::json()>& inputs,
            const std::vector<fs::path>& outputs, Fn&& fn) {
    StageOutcome o;
    o.stage = stage;
    o.item = name;
    if (!deps_ok) {
      o.status = Status::Skipped;
      o.message = "an upstream item failed";
      record(o);
      return false;
    }
    const auto key_path = root_ / "cache" / (stage + "__" + name + ".key");
    try {
      const nlohmann::json key_doc = {{"code_version", kCodeVersion}, {"stage", stage}, {"item", name},
                                      {"inputs", inputs()}};
      const std::string key = sha256_hex(key_doc.dump());
      bool hit = fs::exists(key_path) && read_file(key_path) == key;
      for (const auto& p : outputs) hit = hit && fs::exists(p);
      if (hit) {
        o.status = Status::Cached;
        record(o);
        return true;
      }
      fs::remove(key_path);
      fn();
      write_file(key_path, key);
      o.status = Status::Ran;
    } catch (const std::exception& e) {
      o.status = Status::Failed;
      o.message = e.what();
    }
    record(o);
    return o.status != Status::Failed;
  }

  void record(const StageOutcome& o) {
    if (log_) {
      log_(o.stage + " " + o.item + ": " + to_string(o.status) + (o.message.empty() ? "" : " (" + o.message + ")"));
    }
    outcomes_.push_back(o);
  }

  const fs::path& root() const { return root_; }
  std::vector<StageOutcome>& outcomes() { return outcomes_; }

 private:
  const PipelineConfig& c_;
  const LogFn& log_;
  fs::path root_;
  std::vector<StageOutcome> outcomes_;
};

struct ModelItem {
  std::string name;  // variant name or "untrained"
  fs::path checkpoint;
  bool ok = false;
};

struct DatasetItem {
  std::string name;
  fs::path dir;
  bool ok = false;
};

fs::path fit_path(const fs::path& root, const std::string& kind, const std::string& model, const std::string& ds) {
  return root / "fits" / (kind + (model.empty() ? "" : "__" + model) + "__" + ds + ".json");
}

void save_fit(const FitResult& fit, const fs::path& path) {
  write_file(path, nlohmann::json(fit).dump(2) + "\n");
  auto csv = path;
  csv.replace_extension(".predictions.csv");
  write_file(csv, fit.predictions_csv());
}

FitResult load_fit(const fs::path& path) { return nlohmann::json::parse(read_file(path)).get<FitResult>(); }

bool is_grouped(const std::vector<ChoiceProblem>& problems) {
  for (const auto& p : problems) {
    if (p.group != p.id) return true;
  }
  return false;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const LogFn& log) {
  config.validate(config.stages.ingest);
  Runner run(config, log);
  const fs::path& root = run.root();
  fs::create_directories(root);
  write_file(root / "config.resolved.json", nlohmann::json(config).dump(2) + "\n");
  const auto context = static_cast<std::size_t>(config.model.context_length);

  // eqgen
  std::map<std::string, bool> corpus_ok;
  for (const auto& v : config.variants) {
    const auto txt = root / "corpora" / (v.name + ".txt");
    const auto meta = root / "corpora" / (v.name + ".meta.json");
    if (!config.stages.eqgen) {
      corpus_ok[v.name] = fs::exists(txt);
      continue;
    }
    corpus_ok[v.name] = run.item(
        "eqgen", v.name, true,
        [&] { return nlohmann::json{{"spec", v.spec()}, {"n", config.n_equations}, {"seed", config.seed}, {"context", context}}; },
        {txt, meta}, [&] {
          const auto spec = v.spec();
          auto corpus = generate_corpus(spec, config.n_equations, config.seed, context);
          fs::create_directories(txt.parent_path());
          write_corpus(corpus, txt);
          write_file(meta, corpus_metadata(spec, config.n_equations, config.seed, corpus.stats).dump(2) + "\n");
        });
  }

  // train
  std::vector<ModelItem> models;
  if (config.stages.train) {
    fs::create_directories(root / "checkpoints");
    for (const auto& v : config.variants) {
      ModelItem m{v.name, root / "checkpoints" / (v.name + ".bin")};
      const auto txt = root / "corpora" / (v.name + ".txt");
      const auto log_csv = root / "checkpoints" / (v.name + ".log.csv");
      m.ok = run.item(
          "train", v.name, corpus_ok[v.name],
          [&] {
            return nlohmann::json{{"corpus", file_digest(txt)}, {"model", config.model}, {"train", config.train}};
          },
          {m.checkpoint, log_csv}, [&] {
            auto result = train(config.model, config.train, read_corpus_lines(txt), [&](const ValidationPoint& p) {
              if (log) {
                log("train " + v.name + ": epoch " + std::to_string(p.epoch) + " val " + std::to_string(p.val_loss));
              }
            });
            result.checkpoint.metadata["variant"] = v.name;
            result.checkpoint.metadata["distribution"] = v.spec();
            save_checkpoint(result.checkpoint, m.checkpoint);
            write_file(log_csv, result.log.to_csv());
          });
      models.push_back(m);
    }
    if (config.include_untrained) {
      ModelItem m{"untrained", root / "checkpoints" / "untrained.bin"};
      m.ok = run.item(
          "train", "untrained", true, [&] { return nlohmann::json{{"model", config.model}, {"seed", config.seed}}; },
          {m.checkpoint}, [&] {
            Gpt<float> model(config.model);
            model.init_weights(config.seed);
            save_checkpoint(ModelCheckpoint::from_model(model, {{"variant", "untrained"}}), m.checkpoint);
          });
      models.push_back(m);
    }
  }

  // ingest
  std::vector<DatasetItem> datasets;
  if (config.stages.ingest) {
    const auto stylize_and_save = [&](const std::vector<ChoiceProblem>& problems, const fs::path& dir,
                                      nlohmann::json info) {
      auto st = stylize_all(problems, config.bases, context);
      info["overflow"] = st.overflow_ids.size();
      if (!st.overflow_ids.empty()) {
        throw StylizationOverflowError(st.overflow_ids.front(),
                                       std::to_string(st.overflow_ids.size()) + " problems overflow the context");
      }
      fs::create_directories(dir);
      write_problems_jsonl(problems, dir / "problems.jsonl");
      write_stylized_jsonl(st.stylized, dir / "stylized.jsonl");
      write_file(dir / "ingest.json", info.dump(2) + "\n");
    };
    for (const auto& d : config.datasets) {
      DatasetItem item{d.name, root / "datasets" / d.name};
      item.ok = run.item(
          "ingest", d.name, true,
          [&] {
            return nlohmann::json{{"source", to_string(d.source)}, {"file", file_digest(d.path)},
                                  {"keep_feedback", config.keep_feedback},
                                  {"bases", {config.bases.year, config.bases.month, config.bases.day}},
                                  {"context", context}};
          },
          {item.dir / "problems.jsonl", item.dir / "stylized.jsonl", item.dir / "ingest.json"}, [&] {
            IngestReport rep;
            auto problems = load_dataset(d.source, d.path, &rep);
            std::size_t removed = 0;
            if (!config.keep_feedback) problems = filter_feedback(problems, &removed);
            stylize_and_save(problems, item.dir,
                             {{"source", to_string(d.source)}, {"rows", rep.rows}, {"problems", problems.size()},
                              {"pooled_rows", rep.pooled_rows}, {"feedback_removed", removed}});
          });
      datasets.push_back(item);
    }
    for (const auto& s : config.surrogates) {
      DatasetItem item{s.name, root / "datasets" / s.name};
      const SurrogateModel model = s.domain == Domain::Risky ? SurrogateModel(s.pt) : SurrogateModel(s.hyperbolic);
      const double temperature = s.domain == Domain::Risky ? s.pt.temperature : s.hyperbolic.temperature;
      item.ok = run.item(
          "ingest", s.name, true,
          [&] {
            nlohmann::json params = s.domain == Domain::Risky ? nlohmann::json(s.pt) : nlohmann::json(s.hyperbolic);
            return nlohmann::json{{"domain", to_string(s.domain)}, {"n_problems", s.n_problems},
                                  {"n_observations", s.n_observations}, {"params", params}, {"seed", config.seed},
                                  {"bases", {config.bases.year, config.bases.month, config.bases.day}},
                                  {"context", context}};
          },
          {item.dir / "problems.jsonl", item.dir / "stylized.jsonl", item.dir / "ingest.json"}, [&] {
            auto data = generate_surrogate(s.domain, s.n_problems, model,
                                           {temperature, s.n_observations, config.seed});
            nlohmann::json info = {{"source", "surrogate"}, {"problems", data.problems.size()}};
            if (s.n_observations > 0) {
              info["noise_ceiling"] = noise_ceiling(data.true_rates, static_cast<double>(s.n_observations));
            }
            stylize_and_save(data.problems, item.dir, info);
          });
      datasets.push_back(item);
    }
  }

  // probe
  std::map<std::pair<std::string, std::string>, bool> probe_ok;
  if (config.stages.probe && config.stages.train && config.stages.ingest) {
    for (const auto& m : models) {
      std::optional<Gpt<float>> model;
      std::string hash;
      for (const auto& d : datasets) {
        const auto out = fit_path(root, "probe", m.name, d.name);
        probe_ok[{m.name, d.name}] = run.item(
            "probe", m.name + "__" + d.name, m.ok && d.ok,
            [&] {
              return nlohmann::json{{"checkpoint", file_digest(m.checkpoint)},
                                    {"problems", file_digest(d.dir / "problems.jsonl")},
                                    {"stylized", file_digest(d.dir / "stylized.jsonl")},
                                    {"probe", nlohmann::json(config)["probe"]},
                                    {"seed", config.seed}};
            },
            {out}, [&] {
              if (!model) {
                auto ckpt = load_checkpoint(m.checkpoint);
                hash = ckpt.hash();
                model.emplace(ckpt.to_model());
              }
              const auto problems = read_problems_jsonl(d.dir / "problems.jsonl");
              const auto stylized = read_stylized_jsonl(d.dir / "stylized.jsonl");
              const auto emb = embed_all(*model, stylized, hash, config.probe.pooling);
              FitResult fit = fit_probe(emb, problems, config.probe.options);
              CvOptions cv{config.probe.cv_folds, is_grouped(problems), config.probe.options};
              FitResult cvfit = cross_validate(emb, problems, cv);
              fit.has_cv = true;
              fit.r2_cv_mean = cvfit.r2_cv_mean;
              fit.r2_cv_se = cvfit.r2_cv_se;
              fit.r2_cv_folds = cvfit.r2_cv_folds;
              fit.fold_assignments = cvfit.fold_assignments;
              fit.diagnostics["cv"] = cvfit.diagnostics;
              fit.model_tag = "arithmetic-gpt";
              fit.dataset_tag = d.name;
              fit.params["checkpoint"] = hash;
              fit.params["variant"] = m.name;
              save_fit(fit, out);
            });
      }
    }
  }

  // baselines
  struct BaselineFit {
    std::string kind;  // file prefix
    std::string model_tag;
    std::string dataset;
  };
  std::vector<BaselineFit> baseline_fits;
  if (config.stages.baselines && config.stages.ingest) {
    for (const auto& d : datasets) {
      const auto problems_path = d.dir / "problems.jsonl";
      const auto inputs_for = [&](const nlohmann::json& settings) {
        return [&, settings] {
          return nlohmann::json{{"problems", file_digest(problems_path)}, {"settings", settings}, {"seed", config.seed}};
        };
      };
      const auto domain = [&] { return read_problems_jsonl(problems_path).front().domain; };
      if (config.baselines.behavioral) {
        const auto out = fit_path(root, "behavioral", "", d.name);
        if (run.item("baselines", "behavioral__" + d.name, d.ok,
                     inputs_for({{"starts", config.baselines.starts}, {"bases", {config.bases.year, config.bases.month, config.bases.day}}}),
                     {out}, [&] {
                       const auto problems = read_problems_jsonl(problems_path);
                       BehavioralFitOptions o;
                       o.starts = config.baselines.starts;
                       o.seed = config.seed;
                       o.bases = config.bases;
                       const auto kind = domain() == Domain::Risky ? BehavioralModel::PT : BehavioralModel::Hyperbolic;
                       auto fit = fit_behavioral(kind, problems, o);
                       fit.dataset_tag = d.name;
                       save_fit(fit, out);
                     })) {
          baseline_fits.push_back({"behavioral", "pt/hyperbolic", d.name});
        }
      }
      if (config.baselines.ev) {
        const auto out = fit_path(root, "ev", "", d.name);
        if (run.item("baselines", "ev__" + d.name, d.ok,
                     inputs_for({{"starts", config.baselines.starts}, {"bases", {config.bases.year, config.bases.month, config.bases.day}}}),
                     {out}, [&] {
                       BehavioralFitOptions o;
                       o.starts = config.baselines.starts;
                       o.seed = config.seed;
                       o.bases = config.bases;
                       auto fit = fit_behavioral(BehavioralModel::EVLogit, read_problems_jsonl(problems_path), o);
                       fit.dataset_tag = d.name;
                       save_fit(fit, out);
                     })) {
          baseline_fits.push_back({"ev", "ev-logit", d.name});
        }
      }
      if (config.baselines.mlp) {
        const auto out = fit_path(root, "mlp", "", d.name);
        if (run.item("baselines", "mlp__" + d.name, d.ok,
                     inputs_for(nlohmann::json(config)["baselines"]), {out}, [&] {
                       auto mc = config.baselines.mlp_config;
                       mc.seed = config.seed;
                       auto fit = fit_mlp(read_problems_jsonl(problems_path), mc, config.baselines.mlp_cv_folds);
                       fit.dataset_tag = d.name;
                       save_fit(fit, out);
                     })) {
          baseline_fits.push_back({"mlp", "mlp", d.name});
        }
      }
    }
  }

  // analyze
  if (config.stages.analyze && config.stages.train) {
    for (const auto& m : models) {
      const auto dir = root / "analysis" / m.name;
      const auto settings = nlohmann::json(config)["analyze"];
      if (config.analyze.curves) {
        for (auto kind : {CurveKind::Probability, CurveKind::Value, CurveKind::Discount}) {
          const auto name = to_string(kind);
          const auto csv = dir / ("curve_" + name + ".csv");
          const auto json = dir / ("curve_" + name + ".json");
          run.item(
              "analyze", m.name + "__curve_" + name, m.ok,
              [&] { return nlohmann::json{{"checkpoint", file_digest(m.checkpoint)}, {"settings", settings}, {"seed", config.seed}}; },
              {csv, json}, [&] {
                const auto model = load_checkpoint(m.checkpoint).to_model();
                MdsOptions mo;
                mo.restarts = config.analyze.mds_restarts;
                mo.seed = config.seed;
                auto curve = implicit_curve(model, kind, mo);
                nlohmann::json doc = {{"kind", name}, {"stress", curve.stress}};
                try {
                  curve.fitted_params = fit_implicit(curve, config.seed);
                  doc["fit"] = curve.fitted_params;
                } catch (const FitError& e) {
                  doc["fit_error"] = e.what();
                }
                write_file(csv, curve.to_csv());
                write_file(json, doc.dump(2) + "\n");
              });
        }
      }
      if (config.analyze.accuracy) {
        const auto out = dir / "accuracy.json";
        run.item(
            "analyze", m.name + "__accuracy", m.ok,
            [&] { return nlohmann::json{{"checkpoint", file_digest(m.checkpoint)}, {"settings", settings}}; }, {out},
            [&] {
              const auto model = load_checkpoint(m.checkpoint).to_model();
              nlohmann::json doc = nlohmann::json::object();
              doc["ecological"] = arithmetic_accuracy(model, DistSpec::ecological(), "ecological", config.analyze.n_test).to_json();
              doc["uniform"] = arithmetic_accuracy(model, DistSpec::uniform(), "uniform", config.analyze.n_test).to_json();
              write_file(out, doc.dump(2) + "\n");
            });
      }
    }
  }

  // report
  PipelineResult result;
  for (const auto& m : models) {
    for (const auto& d : datasets) {
      if (!probe_ok[{m.name, d.name}]) continue;
      const auto training = m.name;
      result.report.add("arithmetic-gpt", training, d.name, load_fit(fit_path(root, "probe", m.name, d.name)));
    }
  }
  for (const auto& b : baseline_fits) {
    result.report.add(b.model_tag, "choice data", b.dataset, load_fit(fit_path(root, b.kind, "", b.dataset)));
  }
  if (!result.report.rows.empty()) {
    const auto report_dir = root / "report";
    const auto json_text = nlohmann::json(result.report).dump(2) + "\n";
    std::vector<fs::path> outputs;
    for (auto f : {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text, ReportFormat::Svg}) {
      outputs.push_back(report_dir / ("report." + extension(f)));
    }
    run.item(
        "report", "report", true, [&] { return nlohmann::json{{"report", sha256_hex(json_text)}}; }, outputs, [&] {
          write_file(outputs[0], json_text);
          write_file(outputs[1], render_report(result.report, ReportFormat::Csv));
          write_file(outputs[2], render_report(result.report, ReportFormat::Text));
          write_file(outputs[3], render_report(result.report, ReportFormat::Svg));
        });
  }
  result.stages = std::move(run.outcomes());
  write_file(root / "pipeline_summary.json", result.summary().dump(2) + "\n");
  return result;
}

}  // namespace evcog
