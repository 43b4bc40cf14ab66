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

#ifndef SIPRED_DISTANCES_H_
#define SIPRED_DISTANCES_H_

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sipred/corpus.h"
#include "sipred/features.h"

namespace sipred {

/// d_FE, d_OL: MSE between SSSR encoder / output representations.
/// d_SG: MSE between magnitude spectrograms.
enum class DistanceMeasure { kFe, kOl, kSg };
std::string_view DistanceMeasureName(DistanceMeasure m);  // "d_FE", ...
DistanceMeasure MeasureFor(FeatureKind kind);

struct AlignmentOptions {
  // Default: truncate both inputs to the shorter T with zero lag.
  // With lag_search, the test sequence is shifted by the lag in
  // [-max_lag, max_lag] frames that maximises the mean frame-wise inner
  // product over the overlap, and the MSE is taken over that overlap.
  bool lag_search = false;
  int max_lag_frames = 10;
};

/// (1 / (T F)) * sum_t sum_f (ref[t,f] - test[t,f])^2 over the aligned
/// overlap. Throws ShapeMismatch on F mismatch and InvalidArgument on an
/// empty overlap.
double MseDistance(const Matrix& ref, const Matrix& test,
                   const AlignmentOptions& align = {});

/// Also requires both matrices to have the same feature kind.
double MseDistance(const FeatureMatrix& ref, const FeatureMatrix& test,
                   const AlignmentOptions& align = {});

struct DistanceResult {
  std::string utterance_id;
  std::string representation;  // "SPEC" or the backend id
  DistanceMeasure measure = DistanceMeasure::kSg;
  SignalKind signal_kind = SignalKind::kEnhanced;
  std::string backend_id;
  double value = 0.0;
};

struct StudyDiagnostic {
  std::string utterance_id;
  std::string message;
};

struct DistanceStudy {
  std::vector<DistanceResult> results;
  std::vector<StudyDiagnostic> diagnostics;
};

/// Resolves an audio locator to a waveform at the study sample rate.
using AudioLoader = std::function<Waveform(const std::filesystem::path&)>;

struct DistanceStudyOptions {
  AudioLoader load_audio;  // default: LoadWaveform(path, 16000)
  SpectrogramOptions spectrogram;
  AlignmentOptions align;
  int jobs = 1;
};

// Computes, for every record and requested test signal, d_SG plus d_FE and
// d_OL for each backend, between the clean reference and the test signal.
// Only the left (first) channel is used. Records without a clean reference
// are skipped with a diagnostic, and so is a record whose audio or features
// fail; the study continues. Results are ordered by utterance_id, then
// signal kind, then d_SG followed by (d_FE, d_OL) per backend.
DistanceStudy RunDistanceStudy(
    const std::vector<UtteranceRecord>& records,
    const std::vector<std::shared_ptr<const FeatureBackend>>& backends,
    const std::set<SignalKind>& signal_kinds,
    const DistanceStudyOptions& opts = {});

struct CorrelationRow {
  std::string representation;
  DistanceMeasure measure = DistanceMeasure::kSg;
  SignalKind signal_kind = SignalKind::kEnhanced;
  std::optional<double> spearman;  // nullopt: undefined (constant input)
  std::optional<double> pearson;
  size_t n = 0;
  bool defined() const { return spearman.has_value() && pearson.has_value(); }
};

/// One row per (representation, measure, signal kind), in first-seen order of
/// `results`. Pairs are matched to correctness by utterance_id and reduced in
/// utterance_id order. Rows with fewer than 2 pairs or a constant input are
/// returned with undefined correlations.
std::vector<CorrelationRow> CorrelateWithCorrectness(
    const std::vector<DistanceResult>& results,
    const std::vector<UtteranceRecord>& records);

/// Columns: utterance_id, representation, measure, signal_kind, value.
void WriteDistanceCsv(const std::filesystem::path& path,
                      const std::vector<DistanceResult>& results);
/// Columns: representation, measure, signal_kind, spearman, pearson, n.
/// Undefined correlations are written as "nan".
void WriteCorrelationCsv(const std::filesystem::path& path,
                         const std::vector<CorrelationRow>& rows);

}  // namespace sipred

#endif  // SIPRED_DISTANCES_H_
