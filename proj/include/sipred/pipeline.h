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

#ifndef SIPRED_PIPELINE_H_
#define SIPRED_PIPELINE_H_

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipred/corpus.h"
#include "sipred/distances.h"
#include "sipred/evaluation.h"
#include "sipred/features.h"
#include "sipred/predictor.h"
#include "sipred/training.h"

namespace sipred {

/// Version string recorded in run manifests.
std::string VersionString();

struct BackendSpec {
  std::string id;
  std::string type = "mock";  // "mock" or "plugin"
  MockBackendOptions mock;
  std::filesystem::path library;  // plugin only
  nlohmann::json options = nlohmann::json::object();
};

struct RunPaths {
  std::filesystem::path manifest;
  std::filesystem::path audio_root;
  std::filesystem::path cache_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> test_manifest;
  std::optional<std::filesystem::path> listeners;
};

// Optional overrides of the architecture derived from the feature dimension.
struct ModelOverrides {
  std::optional<int> blstm_layers;
  std::optional<int> hidden;
  std::optional<int> attention_hidden;
};

struct RunConfig {
  Track track = Track::kClosed;
  SignalKind signal_kind = SignalKind::kEnhanced;
  FeatureBinding binding;
  RunPaths paths;
  AudioLayout layout;  // audio_root mirrors paths.audio_root
  std::vector<BackendSpec> backends;
  SpectrogramOptions spectrogram;
  ModelOverrides model;
  double validation_fraction = 0.1;
  SplitMode split_mode = SplitMode::kUniform;
  TrainConfig train;  // seed, signal_kind and binding mirror the fields above
  ErrorVarDefinition var_definition = ErrorVarDefinition::kSquaredError01;
  int histogram_bins = 20;
  std::string model_name;  // defaults to the binding string
  std::vector<SignalKind> distance_signal_kinds = {SignalKind::kEnhanced,
                                                   SignalKind::kHls};
  AlignmentOptions align;
  uint64_t seed = 0;
  int jobs = 1;

  /// Parses and validates; relative paths resolve against base_dir.
  static RunConfig FromJson(const nlohmann::json& j,
                            const std::filesystem::path& base_dir);
  static RunConfig Load(const std::filesystem::path& path);
  /// Every field, defaults included.
  nlohmann::ordered_json ToJson() const;
  /// Re-derives mirrored fields after overrides and checks invariants,
  /// including that the manifest and audio root exist.
  void Finalize();
};

// Command-line overrides, applied before Finalize().
struct RunOverrides {
  std::optional<std::string> track;
  std::optional<std::string> signal_kind;
  std::optional<std::string> binding;
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
};
void ApplyOverrides(RunConfig& config, const RunOverrides& o);

struct ItemFailure {
  std::string utterance_id;
  std::string message;
};

struct ExtractSummary {
  size_t utterances = 0;
  size_t written = 0;  // new cache entries
  size_t skipped = 0;  // valid entries already present
  std::vector<ItemFailure> failures;
  bool ok() const { return failures.empty(); }
};

struct DistanceSummary {
  std::filesystem::path distances_csv;
  std::filesystem::path correlations_csv;
  size_t rows = 0;
  std::vector<CorrelationRow> correlations;
  std::vector<ItemFailure> failures;
  bool ok() const { return failures.empty(); }
};

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path log_csv;
  std::filesystem::path run_manifest;
  TrainLog log;
  size_t parameter_count = 0;
};

struct EvaluateSummary {
  std::filesystem::path predictions_csv;
  MetricSummary metrics;
  ReportBundle report;
};

struct ReportSummary {
  std::vector<NamedSummary> metrics;
  ReportBundle report;
};

// Subcommands. Diagnostics go to `log`; nothing is written outside
// paths.cache_dir and paths.out_dir.
ExtractSummary CmdExtract(const RunConfig& config, std::ostream& log);
DistanceSummary CmdDistanceStudy(const RunConfig& config, std::ostream& log);
TrainSummary CmdTrain(const RunConfig& config, std::ostream& log);
EvaluateSummary CmdEvaluate(const RunConfig& config,
                            const std::optional<std::filesystem::path>& checkpoint,
                            std::ostream& log);
// `predictions` holds (model_name, predictions CSV) pairs; group breakdowns
// are drawn for the first model.
ReportSummary CmdReport(
    const RunConfig& config,
    const std::vector<std::pair<std::string, std::filesystem::path>>& predictions,
    std::ostream& log);

// Output locations under paths.out_dir.
std::filesystem::path DefaultCheckpointPath(const RunConfig& config);

}  // namespace sipred

#endif  // SIPRED_PIPELINE_H_
