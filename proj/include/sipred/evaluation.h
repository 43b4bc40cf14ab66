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

#ifndef SIPRED_EVALUATION_H_
#define SIPRED_EVALUATION_H_

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sipred/corpus.h"
#include "sipred/predictor.h"

namespace sipred {

/// How the "Var" column is computed. The default is the variance of the
/// per-utterance squared error on the 0-1 scale.
enum class ErrorVarDefinition {
  kSquaredError01,  // Var[(i_hat - i)^2], fractions
  kError01,         // Var[i_hat - i], fractions
  kError100,        // Var[i_hat - i], percentage points
};
std::string_view ErrorVarDefinitionName(ErrorVarDefinition d);
ErrorVarDefinition ParseErrorVarDefinition(std::string_view name);

struct MetricSummary {
  double rmse = 0.0;       // percentage points
  double error_var = 0.0;  // see var_definition
  std::optional<double> spearman;  // nullopt: undefined (constant input)
  std::optional<double> pearson;
  size_t n = 0;
  ErrorVarDefinition var_definition = ErrorVarDefinition::kSquaredError01;
};

/// Matches predictions to records by utterance_id and scores them on the
/// 0-100 scale. Throws InvalidArgument listing unmatched ids, or when fewer
/// than two pairs are scored.
MetricSummary Score(const std::vector<Prediction>& predictions,
                    const std::vector<UtteranceRecord>& records,
                    ErrorVarDefinition var_definition =
                        ErrorVarDefinition::kSquaredError01);

enum class GroupKind { kSystem, kListener };
std::string_view GroupKindName(GroupKind k);

struct GroupRow {
  std::string group_id;
  double mean_predicted = 0.0;  // percent
  double mean_true = 0.0;       // percent
  size_t n = 0;
  bool unseen_in_training = false;
};

struct GroupBreakdown {
  GroupKind kind = GroupKind::kSystem;
  std::vector<GroupRow> rows;  // descending mean_true, ties by group_id
};

GroupBreakdown Breakdown(const std::vector<Prediction>& predictions,
                         const std::vector<UtteranceRecord>& records,
                         GroupKind kind, const std::set<std::string>& training_groups);

/// Group ids of `kind` present in `records`.
std::set<std::string> GroupIds(const std::vector<UtteranceRecord>& records,
                               GroupKind kind);

struct NamedSummary {
  std::string model_name;
  MetricSummary summary;
};

struct ReportBundle {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// Writes into out_dir:
//   metrics.csv            model_name,rmse,var,spearman,pearson,n (one row per model)
//   metrics.json           the same plus the Var definition and undefined flags
//   breakdown_<kind>.csv   group_kind,group_id,mean_pred,mean_true,n,unseen
//   breakdown_<kind>.svg   paired bars, predicted vs true, per group
//   correctness_histogram.{csv,svg}, listener_means.csv   if a histogram is given
// Throws IoError naming the path on failure.
ReportBundle RenderReport(const std::vector<NamedSummary>& summaries,
                          const std::vector<GroupBreakdown>& breakdowns,
                          const std::optional<CorrectnessHistogram>& histogram,
                          const std::filesystem::path& out_dir);

void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<NamedSummary>& summaries);
void WriteBreakdownCsv(const std::filesystem::path& path, const GroupBreakdown& b);

/// Columns: utterance_id, i_hat, left, right (fractions).
void WritePredictionsCsv(const std::filesystem::path& path,
                         const std::vector<Prediction>& predictions);
std::vector<Prediction> ReadPredictionsCsv(const std::filesystem::path& path);

}  // namespace sipred

#endif  // SIPRED_EVALUATION_H_
