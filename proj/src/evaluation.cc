// Copyright 2026 The sipred Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sipred/evaluation.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "sipred/error.h"
#include "sipred/stats.h"
#include "sipred/util.h"

namespace sipred {

std::string_view ErrorVarDefinitionName(ErrorVarDefinition d) {
  switch (d) {
    case ErrorVarDefinition::kSquaredError01: return "squared_error_01";
    case ErrorVarDefinition::kError01: return "error_01";
    case ErrorVarDefinition::kError100: return "error_100";
  }
  return "?";
}

ErrorVarDefinition ParseErrorVarDefinition(std::string_view name) {
  for (auto d : {ErrorVarDefinition::kSquaredError01, ErrorVarDefinition::kError01,
                 ErrorVarDefinition::kError100})
    if (ErrorVarDefinitionName(d) == name) return d;
  throw InvalidArgument("unknown Var definition '" + std::string(name) + "'");
}

std::string_view GroupKindName(GroupKind k) {
  return k == GroupKind::kSystem ? "system" : "listener";
}

namespace {

struct Matched {
  std::vector<const Prediction*> preds;
  std::vector<const UtteranceRecord*> records;
};

Matched Match(const std::vector<Prediction>& predictions,
              const std::vector<UtteranceRecord>& records) {
  std::map<std::string, const UtteranceRecord*> by_id;
  for (const auto& r : records) by_id[r.utterance_id] = &r;
  Matched m;
  std::vector<std::string> unmatched;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.utterance_id);
    if (it == by_id.end()) {
      unmatched.push_back(p.utterance_id);
      continue;
    }
    m.preds.push_back(&p);
    m.records.push_back(it->second);
  }
  if (!unmatched.empty()) {
    std::string msg = "predictions without a matching record:";
    for (size_t i = 0; i < unmatched.size() && i < 20; ++i) msg += " " + unmatched[i];
    if (unmatched.size() > 20)
      msg += " ... (" + std::to_string(unmatched.size()) + " total)";
    throw InvalidArgument(msg);
  }
  return m;
}

}  // namespace

MetricSummary Score(const std::vector<Prediction>& predictions,
                    const std::vector<UtteranceRecord>& records,
                    ErrorVarDefinition var_definition) {
  Matched m = Match(predictions, records);
  const size_t n = m.preds.size();
  if (n < 2) throw InvalidArgument("scoring needs at least 2 predictions");
  std::vector<double> pred(n), truth(n), err01(n), sq01(n);
  double sq = 0.0;
  for (size_t i = 0; i < n; ++i) {
    pred[i] = 100.0 * m.preds[i]->i_hat;
    truth[i] = m.records[i]->correctness;
    const double e = pred[i] - truth[i];
    sq += e * e;
    err01[i] = e / 100.0;
    sq01[i] = err01[i] * err01[i];
  }
  MetricSummary s;
  s.n = n;
  s.rmse = std::sqrt(sq / static_cast<double>(n));
  s.var_definition = var_definition;
  switch (var_definition) {
    case ErrorVarDefinition::kSquaredError01: s.error_var = Variance(sq01); break;
    case ErrorVarDefinition::kError01: s.error_var = Variance(err01); break;
    case ErrorVarDefinition::kError100: s.error_var = 1e4 * Variance(err01); break;
  }
  s.spearman = Spearman(pred, truth);
  s.pearson = Pearson(pred, truth);
  return s;
}

std::set<std::string> GroupIds(const std::vector<UtteranceRecord>& records,
                               GroupKind kind) {
  std::set<std::string> ids;
  for (const auto& r : records)
    ids.insert(kind == GroupKind::kSystem ? r.system_id : r.listener_id);
  return ids;
}

GroupBreakdown Breakdown(const std::vector<Prediction>& predictions,
                         const std::vector<UtteranceRecord>& records, GroupKind kind,
                         const std::set<std::string>& training_groups) {
  Matched m = Match(predictions, records);
  if (m.preds.empty()) throw InvalidArgument("breakdown over an empty prediction set");
  struct Acc {
    double pred = 0.0, truth = 0.0;
    size_t n = 0;
  };
  std::map<std::string, Acc> groups;
  for (size_t i = 0; i < m.preds.size(); ++i) {
    const auto& r = *m.records[i];
    Acc& a = groups[kind == GroupKind::kSystem ? r.system_id : r.listener_id];
    a.pred += 100.0 * m.preds[i]->i_hat;
    a.truth += r.correctness;
    a.n++;
  }
  GroupBreakdown b;
  b.kind = kind;
  for (const auto& [id, a] : groups)
    b.rows.push_back({id, a.pred / a.n, a.truth / a.n, a.n,
                      training_groups.count(id) == 0});
  std::stable_sort(b.rows.begin(), b.rows.end(), [](const auto& x, const auto& y) {
    if (x.mean_true != y.mean_true) return x.mean_true > y.mean_true;
    return x.group_id < y.group_id;
  });
  return b;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string Opt(const std::optional<double>& v) {
  return v ? FormatFixed(*v, 4) : std::string("nan");
}

std::string XmlEscape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string F1(double v) { return FormatFixed(v, 1); }

// Paired bars: predicted (left, green) and true (right, brown) per group.
std::string BreakdownSvg(const GroupBreakdown& b) {
  const double bar = 10.0, gap = 8.0, left = 50.0, top = 30.0, height = 200.0;
  const double width = left + 20.0 + b.rows.size() * (2 * bar + gap);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << F1(width)
    << "\" height=\"" << F1(top + height + 80) << "\">\n";
  s << "<text x=\"" << F1(left) << "\" y=\"18\" font-size=\"12\">"
    << GroupKindName(b.kind)
    << "-wise correctness: predicted (green) vs true (brown); unseen groups in bold"
    << "</text>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = top + height * (1.0 - tick / 100.0);
    s << "<line x1=\"" << F1(left - 4) << "\" y1=\"" << F1(y) << "\" x2=\""
      << F1(width - 10) << "\" y2=\"" << F1(y) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << F1(left - 8) << "\" y=\"" << F1(y + 4)
      << "\" font-size=\"9\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  for (size_t i = 0; i < b.rows.size(); ++i) {
    const auto& r = b.rows[i];
    const double x = left + 10.0 + i * (2 * bar + gap);
    const double hp = height * std::clamp(r.mean_predicted, 0.0, 100.0) / 100.0;
    const double ht = height * std::clamp(r.mean_true, 0.0, 100.0) / 100.0;
    s << "<rect x=\"" << F1(x) << "\" y=\"" << F1(top + height - hp) << "\" width=\""
      << F1(bar) << "\" height=\"" << F1(hp) << "\" fill=\"#4a9a4a\"/>\n";
    s << "<rect x=\"" << F1(x + bar) << "\" y=\"" << F1(top + height - ht)
      << "\" width=\"" << F1(bar) << "\" height=\"" << F1(ht)
      << "\" fill=\"#8b5a2b\"/>\n";
    const double lx = x + bar, ly = top + height + 8;
    s << "<text x=\"" << F1(lx) << "\" y=\"" << F1(ly) << "\" font-size=\"9\""
      << (r.unseen_in_training ? " font-weight=\"bold\"" : "")
      << " transform=\"rotate(60 " << F1(lx) << " " << F1(ly) << ")\">"
      << XmlEscape(r.group_id) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string HistogramSvg(const CorrectnessHistogram& h) {
  const double left = 50.0, top = 30.0, height = 160.0, plot_w = 400.0;
  size_t max_count = 1;
  for (const auto& b : h.bins) max_count = std::max(max_count, b.count);
  const double lower_top = top + height + 60.0;
  const double bar_w = h.listener_means.empty()
                           ? 0.0
                           : plot_w / static_cast<double>(h.listener_means.size());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << F1(left + plot_w + 30)
    << "\" height=\"" << F1(lower_top + height + 70) << "\">\n";
  s << "<text x=\"" << F1(left) << "\" y=\"18\" font-size=\"12\">"
    << "Correctness distribution (count per bin)</text>\n";
  for (const auto& b : h.bins) {
    const double x = left + plot_w * b.low / 100.0;
    const double w = plot_w * (b.high - b.low) / 100.0;
    const double bh = height * static_cast<double>(b.count) / max_count;
    s << "<rect x=\"" << F1(x) << "\" y=\"" << F1(top + height - bh) << "\" width=\""
      << F1(std::max(w - 1.0, 0.5)) << "\" height=\"" << F1(bh)
      << "\" fill=\"#4a6fa5\"/>\n";
  }
  s << "<text x=\"" << F1(left) << "\" y=\"" << F1(top + height + 16)
    << "\" font-size=\"9\">0</text>\n";
  s << "<text x=\"" << F1(left + plot_w) << "\" y=\"" << F1(top + height + 16)
    << "\" font-size=\"9\" text-anchor=\"end\">100</text>\n";
  s << "<text x=\"" << F1(left) << "\" y=\"" << F1(lower_top - 12)
    << "\" font-size=\"12\">Mean correctness per listener</text>\n";
  for (size_t i = 0; i < h.listener_means.size(); ++i) {
    const auto& l = h.listener_means[i];
    const double bh = height * std::clamp(l.mean_correctness, 0.0, 100.0) / 100.0;
    const double x = left + i * bar_w;
    s << "<rect x=\"" << F1(x) << "\" y=\"" << F1(lower_top + height - bh)
      << "\" width=\"" << F1(std::max(bar_w - 1.0, 0.5)) << "\" height=\"" << F1(bh)
      << "\" fill=\"#8b5a2b\"/>\n";
    const double lx = x + bar_w / 2, ly = lower_top + height + 8;
    s << "<text x=\"" << F1(lx) << "\" y=\"" << F1(ly)
      << "\" font-size=\"8\" transform=\"rotate(60 " << F1(lx) << " " << F1(ly)
      << ")\">" << XmlEscape(l.listener_id) << "</text>\n";
  }
  const double my = lower_top + height * (1.0 - h.overall_mean / 100.0);
  s << "<line x1=\"" << F1(left) << "\" y1=\"" << F1(my) << "\" x2=\""
    << F1(left + plot_w) << "\" y2=\"" << F1(my)
    << "\" stroke=\"black\" stroke-dasharray=\"2,2\"/>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace

void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<NamedSummary>& summaries) {
  std::string out = "model_name,rmse,var,spearman,pearson,n\n";
  for (const auto& [name, s] : summaries)
    out += CsvField(name) + "," + FormatFixed(s.rmse, 4) + "," +
           FormatFixed(s.error_var, 6) + "," + Opt(s.spearman) + "," + Opt(s.pearson) +
           "," + std::to_string(s.n) + "\n";
  WriteFileAtomic(path, out);
}

void WriteBreakdownCsv(const std::filesystem::path& path, const GroupBreakdown& b) {
  std::string out = "group_kind,group_id,mean_pred,mean_true,n,unseen\n";
  for (const auto& r : b.rows)
    out += std::string(GroupKindName(b.kind)) + "," + CsvField(r.group_id) + "," +
           FormatFixed(r.mean_predicted, 4) + "," + FormatFixed(r.mean_true, 4) + "," +
           std::to_string(r.n) + "," + (r.unseen_in_training ? "1" : "0") + "\n";
  WriteFileAtomic(path, out);
}

ReportBundle RenderReport(const std::vector<NamedSummary>& summaries,
                          const std::vector<GroupBreakdown>& breakdowns,
                          const std::optional<CorrectnessHistogram>& histogram,
                          const std::filesystem::path& out_dir) {
  ReportBundle bundle;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create report directory '" + out_dir.string() +
                  "': " + ec.message());

  auto metrics = out_dir / "metrics.csv";
  WriteMetricsCsv(metrics, summaries);
  bundle.files.push_back(metrics);

  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [name, s] : summaries) {
    nlohmann::ordered_json row;
    row["model_name"] = name;
    row["rmse"] = s.rmse;
    row["var"] = s.error_var;
    row["var_definition"] = std::string(ErrorVarDefinitionName(s.var_definition));
    row["spearman"] = s.spearman ? nlohmann::ordered_json(*s.spearman) : nlohmann::ordered_json(nullptr);
    row["pearson"] = s.pearson ? nlohmann::ordered_json(*s.pearson) : nlohmann::ordered_json(nullptr);
    row["correlation_defined"] = s.spearman.has_value() && s.pearson.has_value();
    row["n"] = s.n;
    if (!row["correlation_defined"].get<bool>())
      bundle.warnings.push_back(
          "model " + name +
          ": correlation undefined (constant predictions or labels), written as nan");
    j.push_back(row);
  }
  auto metrics_json = out_dir / "metrics.json";
  WriteFileAtomic(metrics_json, j.dump(2) + "\n");
  bundle.files.push_back(metrics_json);

  if (breakdowns.empty())
    bundle.warnings.push_back("no group breakdowns given; writing metrics table only");
  for (const auto& b : breakdowns) {
    const std::string stem = "breakdown_" + std::string(GroupKindName(b.kind));
    auto csv = out_dir / (stem + ".csv");
    auto svg = out_dir / (stem + ".svg");
    WriteBreakdownCsv(csv, b);
    WriteFileAtomic(svg, BreakdownSvg(b));
    bundle.files.push_back(csv);
    bundle.files.push_back(svg);
  }
  if (histogram) {
    auto csv = out_dir / "correctness_histogram.csv";
    auto means = out_dir / "listener_means.csv";
    auto svg = out_dir / "correctness_histogram.svg";
    WriteHistogramCsv(csv, *histogram);
    WriteListenerMeansCsv(means, *histogram);
    WriteFileAtomic(svg, HistogramSvg(*histogram));
    bundle.files.insert(bundle.files.end(), {csv, means, svg});
  }
  return bundle;
}

void WritePredictionsCsv(const std::filesystem::path& path,
                         const std::vector<Prediction>& predictions) {
  std::string out = "utterance_id,i_hat,left,right\n";
  for (const auto& p : predictions)
    // shortest round-trip form, so report sees the exact doubles
    out += CsvField(p.utterance_id) + "," + fmt::format("{}", p.i_hat) + "," +
           fmt::format("{}", p.left) + "," +
           (p.right ? fmt::format("{}", *p.right) : std::string()) + "\n";
  WriteFileAtomic(path, out);
}

std::vector<Prediction> ReadPredictionsCsv(const std::filesystem::path& path) {
  std::istringstream in(ReadTextFile(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("utterance_id,i_hat", 0) != 0)
    throw IoError("'" + path.string() + "' is not a predictions CSV");
  std::vector<Prediction> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 4)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      std::optional<double> right;
      if (!f[3].empty()) right = std::stod(f[3]);
      Prediction p = CombineChannels(f[0], std::stod(f[2]), right);
      out.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

}  // namespace sipred
