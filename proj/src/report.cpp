#include "evcog/report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "evcog/errors.hpp"

namespace evcog {

void ComparisonReport::add(const std::string& model_tag, const std::string& training_data_tag,
                           const std::string& dataset, const FitResult& fit) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& r) {
    return r.model_tag == model_tag && r.training_data_tag == training_data_tag;
  });
  if (it == rows.end()) {
    rows.push_back({model_tag, training_data_tag, {}});
    it = rows.end() - 1;
  }
  DatasetScore s;
  s.n_problems = fit.observed_rates.size();
  s.r2_insample = fit.r2_insample;
  s.r2_insample_adjusted = fit.r2_insample_adjusted;
  s.has_cv = fit.has_cv;
  s.r2_cv_mean = fit.r2_cv_mean;
  s.r2_cv_se = fit.r2_cv_se;
  it->scores[dataset] = s;
}

std::vector<std::string> ComparisonReport::datasets() const {
  std::set<std::string> names;
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.scores) names.insert(k);
  }
  return {names.begin(), names.end()};
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
  j = nlohmann::json::object();
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [name, s] : row.scores) {
      scores[name] = {{"n", s.n_problems},
                      {"r2_insample", s.r2_insample},
                      {"r2_insample_adjusted", s.r2_insample_adjusted},
                      {"has_cv", s.has_cv},
                      {"r2_cv_mean", s.r2_cv_mean},
                      {"r2_cv_se", s.r2_cv_se}};
    }
    j["rows"].push_back({{"model", row.model_tag}, {"training_data", row.training_data_tag}, {"scores", scores}});
  }
}

void from_json(const nlohmann::json& j, ComparisonReport& r) {
  r.rows.clear();
  for (const auto& row : j.at("rows")) {
    ReportRow out{row.at("model").get<std::string>(), row.at("training_data").get<std::string>(), {}};
    for (const auto& [name, s] : row.at("scores").items()) {
      DatasetScore d;
      d.n_problems = s.value("n", std::size_t{0});
      d.r2_insample = s.at("r2_insample").get<double>();
      d.r2_insample_adjusted = s.at("r2_insample_adjusted").get<double>();
      d.has_cv = s.at("has_cv").get<bool>();
      d.r2_cv_mean = s.at("r2_cv_mean").get<double>();
      d.r2_cv_se = s.at("r2_cv_se").get<double>();
      out.scores[name] = d;
    }
    r.rows.push_back(std::move(out));
  }
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  if (s == "text" || s == "txt") return ReportFormat::Text;
  if (s == "svg") return ReportFormat::Svg;
  throw UsageError("unknown report format '" + s + "' (expected csv|json|text|svg)");
}

std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv:
      return "csv";
    case ReportFormat::Json:
      return "json";
    case ReportFormat::Text:
      return "txt";
    case ReportFormat::Svg:
      return "svg";
  }
  return "out";
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string render_csv(const ComparisonReport& r) {
  std::ostringstream out;
  out << "model,training_data,dataset,n,r2_insample,r2_insample_adjusted,has_cv,r2_cv_mean,r2_cv_se\n";
  for (const auto& row : r.rows) {
    for (const auto& [name, s] : row.scores) {
      out << csv::quote(row.model_tag) << ',' << csv::quote(row.training_data_tag) << ',' << csv::quote(name) << ','
          << s.n_problems << ',' << num(s.r2_insample) << ',' << num(s.r2_insample_adjusted) << ','
          << (s.has_cv ? 1 : 0) << ',' << num(s.r2_cv_mean) << ',' << num(s.r2_cv_se) << '\n';
    }
  }
  return out.str();
}

std::string render_text(const ComparisonReport& r) {
  const auto names = r.datasets();
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"model", "training data"};
  for (const auto& n : names) {
    header.push_back(n + " R2%");
    header.push_back(n + " CV R2% (SE)");
  }
  cells.push_back(header);
  for (const auto& row : r.rows) {
    std::vector<std::string> line = {row.model_tag, row.training_data_tag};
    for (const auto& n : names) {
      auto it = row.scores.find(n);
      if (it == row.scores.end()) {
        line.push_back("-");
        line.push_back("-");
        continue;
      }
      line.push_back(pct(it->second.r2_insample_adjusted));
      line.push_back(it->second.has_cv ? pct(it->second.r2_cv_mean) + " (" + pct(it->second.r2_cv_se) + ")" : "-");
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string text;
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const auto& v = cells[i][c];
      if (c > 0) text += "  ";
      // Text columns left aligned, numbers right aligned.
      if (c < 2) text += v + std::string(width[c] - v.size(), ' ');
      else text += std::string(width[c] - v.size(), ' ') + v;
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out << text << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  out << "R2%: in-sample adjusted R2. CV: k-fold cross-validated squared Pearson r.\n";
  return out.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string render_svg(const ComparisonReport& r) {
  static const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                   "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  const auto names = r.datasets();
  const int bar = 18, gap = 24, left = 60, top = 30, plot_h = 240, legend_h = 20 * static_cast<int>(r.rows.size());
  const int group_w = bar * static_cast<int>(r.rows.size()) + gap;
  const int width = left + group_w * static_cast<int>(names.size()) + 20;
  const int height = top + plot_h + 40 + legend_h + 10;
  std::ostringstream out;
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">In-sample adjusted R2 by model and dataset</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h - plot_h * t / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%d\" y1=\"%.1f\" x2=\"%d\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%d\" y=\"%.1f\" text-anchor=\"end\">%d%%</text>\n",
                  left, y, width - 10, y, left - 6, y + 4, 25 * t);
    out << buf;
  }
  for (std::size_t g = 0; g < names.size(); ++g) {
    const int x0 = left + static_cast<int>(g) * group_w + gap / 2;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      auto it = r.rows[i].scores.find(names[g]);
      if (it == r.rows[i].scores.end()) continue;
      const double v = std::clamp(it->second.r2_insample_adjusted, 0.0, 1.0);
      const double h = plot_h * v;
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%d\" y=\"%.1f\" width=\"%d\" height=\"%.1f\" fill=\"%s\"><title>%s: %.1f%%</title></rect>\n",
                    x0 + static_cast<int>(i) * bar, top + plot_h - h, bar - 2, h, kPalette[i % 10],
                    xml_escape(r.rows[i].model_tag).c_str(), 100 * v);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">%s</text>\n",
                  x0 + bar * static_cast<int>(r.rows.size()) / 2, top + plot_h + 16, xml_escape(names[g]).c_str());
    out << buf;
  }
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const int y = top + plot_h + 36 + 20 * static_cast<int>(i);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%d\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%d\" y=\"%d\">%s (%s)</text>\n",
                  left, y, kPalette[i % 10], left + 18, y + 10, xml_escape(r.rows[i].model_tag).c_str(),
                  xml_escape(r.rows[i].training_data_tag).c_str());
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace

std::string render_report(const ComparisonReport& report, ReportFormat format) {
  if (report.rows.empty()) throw UsageError("cannot render an empty report");
  switch (format) {
    case ReportFormat::Csv:
      return render_csv(report);
    case ReportFormat::Json:
      return nlohmann::json(report).dump(2) + "\n";
    case ReportFormat::Text:
      return render_text(report);
    case ReportFormat::Svg:
      return render_svg(report);
  }
  throw UsageError("unknown report format");
}

ComparisonReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report csv: missing header");
  auto header = csv::split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(csv::trim(header[i]))] = i;
  for (const char* need : {"model", "training_data", "dataset", "n", "r2_insample", "r2_insample_adjusted", "has_cv",
                           "r2_cv_mean", "r2_cv_se"}) {
    if (!col.count(need)) throw FormatError(std::string("report csv: missing column '") + need + "'");
  }
  ComparisonReport r;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = csv::split_line(line);
    if (f.size() != header.size()) throw FormatError("report csv: line " + std::to_string(line_no) + " has wrong arity");
    auto number = [&](const char* name) {
      auto v = csv::parse_double(f[col[name]]);
      if (!v) throw FormatError("report csv: line " + std::to_string(line_no) + ", column '" + name + "'");
      return *v;
    };
    FitResult fit;
    fit.r2_insample = number("r2_insample");
    fit.r2_insample_adjusted = number("r2_insample_adjusted");
    fit.has_cv = number("has_cv") != 0.0;
    fit.r2_cv_mean = number("r2_cv_mean");
    fit.r2_cv_se = number("r2_cv_se");
    fit.observed_rates.resize(static_cast<std::size_t>(number("n")));
    r.add(f[col["model"]], f[col["training_data"]], f[col["dataset"]], fit);
  }
  return r;
}

}  // namespace evcog
