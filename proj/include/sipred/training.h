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

#ifndef SIPRED_TRAINING_H_
#define SIPRED_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipred/corpus.h"
#include "sipred/feature_cache.h"
#include "sipred/predictor.h"

namespace sipred {

struct TrainConfig {
  int max_epochs = 100;
  int batch_size = 8;
  double learning_rate = 1e-4;
  int patience = 10;
  uint64_t seed = 0;
  std::string loss = "mse";
  SignalKind signal_kind = SignalKind::kEnhanced;
  FeatureBinding binding;
  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Also score the training set (better-ear rule) after every epoch.
  bool eval_train_each_epoch = false;

  void Validate() const;
  nlohmann::ordered_json ToJson() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig FromJson(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean channel-summed loss per utterance
  double validation_rmse = 0.0;  // 0-100 scale, better-ear rule
  std::optional<double> train_rmse;  // 0-100 scale, if requested
  double wall_time_s = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
  std::filesystem::path final_checkpoint;
};

/// Per-channel features of one utterance: {left} or {left, right}.
using FeatureProvider =
    std::function<std::vector<FeatureMatrix>(const UtteranceRecord&)>;

/// Reads features from a populated cache. Mono utterances yield one entry.
FeatureProvider CacheFeatureProvider(FeatureCache cache, SignalKind signal,
                                     FeatureBinding binding);

/// Squared error of the sigmoid output against `target`, summed over the
/// channels that are present. Throws ShapeMismatch on F mismatch and
/// InvalidArgument if target is outside [0, 1].
double ChannelSummedLoss(const PredictorModel& model, const FeatureMatrix& left,
                         const FeatureMatrix* right, double target);

/// Observation points for tests and diagnostics.
struct TrainHooks {
  // Every training utterance: per-channel losses and the summed loss that was
  // back-propagated.
  std::function<void(const std::string& utterance_id,
                     const std::vector<double>& channel_losses, double summed)>
      on_train_utterance;
  // Every validation utterance: per-channel predictions and the combined one.
  std::function<void(const Prediction&)> on_validation_prediction;
  std::function<void(const EpochRecord&)> on_epoch_end;
};

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void Step(Vector& params, const Vector& grad);
  int steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  int t_ = 0;
};

struct TrainResult {
  PredictorModel model;  // parameters of best_epoch
  TrainLog log;
};

// Mini-batch training on the channel-summed loss. After each epoch the
// validation set is scored with the better-ear rule on the 0-100 scale;
// training stops after `patience` epochs without a strict improvement. The
// best-epoch parameters are returned and, if `checkpoint_path` is set,
// written there whenever the best changes.
TrainResult Train(const PredictorModel& initial, const DatasetSplit& split,
                  const TrainConfig& cfg, const FeatureProvider& features,
                  const TrainHooks& hooks = {},
                  const std::optional<std::filesystem::path>& checkpoint_path =
                      std::nullopt);

/// Predictions for `records` with the better-ear rule.
std::vector<Prediction> PredictRecords(const PredictorModel& model,
                                       const std::vector<UtteranceRecord>& records,
                                       const FeatureProvider& features);

/// Columns: epoch, train_loss, validation_rmse, train_rmse, wall_time_s.
void WriteTrainLogCsv(const std::filesystem::path& path, const TrainLog& log);

}  // namespace sipred

#endif  // SIPRED_TRAINING_H_
