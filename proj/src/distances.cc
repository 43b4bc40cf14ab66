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

#include "sipred/distances.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "sipred/error.h"
#include "sipred/parallel.h"
#include "sipred/stats.h"
#include "sipred/util.h"

namespace sipred {

std::string_view DistanceMeasureName(DistanceMeasure m) {
  switch (m) {
    case DistanceMeasure::kFe: return "d_FE";
    case DistanceMeasure::kOl: return "d_OL";
    case DistanceMeasure::kSg: return "d_SG";
  }
  return "?";
}

DistanceMeasure MeasureFor(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kFe: return DistanceMeasure::kFe;
    case FeatureKind::kOl: return DistanceMeasure::kOl;
    case FeatureKind::kSpec: break;
  }
  return DistanceMeasure::kSg;
}

namespace {

double OverlapMse(const Matrix& ref, const Matrix& test, Eigen::Index lag) {
  // ref[t] against test[t + lag].
  const Eigen::Index r0 = std::max<Eigen::Index>(0, -lag);
  const Eigen::Index t0 = r0 + lag;
  const Eigen::Index len = std::min(ref.rows() - r0, test.rows() - t0);
  if (len <= 0) throw InvalidArgument("representations do not overlap after alignment");
  return (ref.middleRows(r0, len) - test.middleRows(t0, len)).squaredNorm() /
         (static_cast<double>(len) * static_cast<double>(ref.cols()));
}

Eigen::Index BestLag(const Matrix& ref, const Matrix& test, int max_lag) {
  Eigen::Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  // Visit 0, -1, +1, -2, +2, ... so ties resolve to the smallest shift.
  for (int step = 0; step <= 2 * max_lag; ++step) {
    const Eigen::Index lag = step == 0 ? 0 : (step % 2 ? -(step + 1) / 2 : step / 2);
    const Eigen::Index r0 = std::max<Eigen::Index>(0, -lag);
    const Eigen::Index t0 = r0 + lag;
    const Eigen::Index len = std::min(ref.rows() - r0, test.rows() - t0);
    if (len <= 0) continue;
    double score = 0.0;
    for (Eigen::Index i = 0; i < len; ++i) score += ref.row(r0 + i).dot(test.row(t0 + i));
    score /= static_cast<double>(len);
    if (score > best_score) {
      best_score = score;
      best = lag;
    }
  }
  return best;
}

}  // namespace

double MseDistance(const Matrix& ref, const Matrix& test, const AlignmentOptions& align) {
  if (ref.cols() != test.cols())
    throw ShapeMismatch("cannot compare representations with F=" +
                        std::to_string(ref.cols()) + " and F=" +
                        std::to_string(test.cols()));
  if (ref.cols() == 0 || ref.rows() == 0 || test.rows() == 0)
    throw InvalidArgument("empty representation");
  const Eigen::Index lag = align.lag_search ? BestLag(ref, test, align.max_lag_frames) : 0;
  return OverlapMse(ref, test, lag);
}

double MseDistance(const FeatureMatrix& ref, const FeatureMatrix& test,
                   const AlignmentOptions& align) {
  if (ref.kind != test.kind)
    throw InvalidArgument("cannot compare " + std::string(FeatureKindName(ref.kind)) +
                          " with " + std::string(FeatureKindName(test.kind)) +
                          " features");
  return MseDistance(ref.values, test.values, align);
}

// ---------------------------------------------------------------------------

DistanceStudy RunDistanceStudy(
    const std::vector<UtteranceRecord>& records,
    const std::vector<std::shared_ptr<const FeatureBackend>>& backends,
    const std::set<SignalKind>& signal_kinds, const DistanceStudyOptions& opts) {
  AudioLoader load = opts.load_audio;
  if (!load) {
    const int rate = opts.spectrogram.sample_rate;
    load = [rate](const std::filesystem::path& p) { return LoadWaveform(p, rate); };
  }

  std::vector<const UtteranceRecord*> ordered;
  for (const auto& r : records) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) {
    return a->utterance_id < b->utterance_id;
  });

  struct Slot {
    std::vector<DistanceResult> results;
    std::optional<StudyDiagnostic> diagnostic;
  };
  std::vector<Slot> slots(ordered.size());

  ParallelFor(ordered.size(), opts.jobs, [&](size_t i) {
    const UtteranceRecord& r = *ordered[i];
    Slot& slot = slots[i];
    if (!r.clean_audio) {
      slot.diagnostic = StudyDiagnostic{r.utterance_id, "no clean reference; skipped"};
      return;
    }
    try {
      const Channel ch = Channel::kLeft;
      Waveform clean = load(*r.clean_audio);
      FeatureMatrix ref_sg = ExtractSpectrogram(clean, ch, opts.spectrogram);
      std::vector<std::pair<FeatureMatrix, FeatureMatrix>> ref_sssr;
      for (const auto& b : backends)
        ref_sssr.emplace_back(ExtractFe(*b, clean, ch), ExtractOl(*b, clean, ch));

      std::vector<DistanceResult> out;
      for (SignalKind kind : signal_kinds) {
        Waveform test = load(r.audio_for(kind));
        auto push = [&](const std::string& rep, DistanceMeasure m,
                        const std::string& backend, double v) {
          out.push_back({r.utterance_id, rep, m, kind, backend, v});
        };
        push("SPEC", DistanceMeasure::kSg, std::string(kSpectrogramBackendId),
             MseDistance(ref_sg, ExtractSpectrogram(test, ch, opts.spectrogram),
                         opts.align));
        for (size_t b = 0; b < backends.size(); ++b) {
          const auto& id = backends[b]->descriptor().backend_id;
          push(id, DistanceMeasure::kFe, id,
               MseDistance(ref_sssr[b].first, ExtractFe(*backends[b], test, ch),
                           opts.align));
          push(id, DistanceMeasure::kOl, id,
               MseDistance(ref_sssr[b].second, ExtractOl(*backends[b], test, ch),
                           opts.align));
        }
      }
      slot.results = std::move(out);
    } catch (const std::exception& e) {
      slot.diagnostic = StudyDiagnostic{r.utterance_id, e.what()};
    }
  });

  DistanceStudy study;
  for (auto& s : slots) {
    for (auto& res : s.results) study.results.push_back(std::move(res));
    if (s.diagnostic) study.diagnostics.push_back(std::move(*s.diagnostic));
  }
  return study;
}

std::vector<CorrelationRow> CorrelateWithCorrectness(
    const std::vector<DistanceResult>& results,
    const std::vector<UtteranceRecord>& records) {
  std::map<std::string, double> correctness;
  for (const auto& r : records) correctness[r.utterance_id] = r.correctness;

  using Key = std::tuple<std::string, DistanceMeasure, SignalKind>;
  std::vector<Key> order;
  std::map<Key, std::vector<std::pair<std::string, double>>> groups;
  for (const auto& res : results) {
    Key k{res.representation, res.measure, res.signal_kind};
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.emplace_back(res.utterance_id, res.value);
  }

  std::vector<CorrelationRow> rows;
  for (const auto& k : order) {
    auto pairs = groups[k];
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> d, c;
    for (const auto& [id, v] : pairs) {
      auto it = correctness.find(id);
      if (it == correctness.end()) continue;
      d.push_back(v);
      c.push_back(it->second);
    }
    CorrelationRow row;
    std::tie(row.representation, row.measure, row.signal_kind) = k;
    row.n = d.size();
    row.spearman = Spearman(d, c);
    row.pearson = Pearson(d, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

void WriteDistanceCsv(const std::filesystem::path& path,
                      const std::vector<DistanceResult>& results) {
  std::string out = "utterance_id,representation,measure,signal_kind,value\n";
  for (const auto& r : results)
    out += CsvField(r.utterance_id) + "," + CsvField(r.representation) + "," +
           std::string(DistanceMeasureName(r.measure)) + "," +
           std::string(SignalKindName(r.signal_kind)) + "," +
           FormatFixed(r.value, 10) + "\n";
  WriteFileAtomic(path, out);
}

void WriteCorrelationCsv(const std::filesystem::path& path,
                         const std::vector<CorrelationRow>& rows) {
  std::string out = "representation,measure,signal_kind,spearman,pearson,n\n";
  auto fmt = [](const std::optional<double>& v) {
    return v ? FormatFixed(*v, 6) : std::string("nan");
  };
  for (const auto& r : rows)
    out += CsvField(r.representation) + "," +
           std::string(DistanceMeasureName(r.measure)) + "," +
           std::string(SignalKindName(r.signal_kind)) + "," + fmt(r.spearman) + "," +
           fmt(r.pearson) + "," + std::to_string(r.n) + "\n";
  WriteFileAtomic(path, out);
}

}  // namespace sipred
