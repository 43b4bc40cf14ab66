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

#ifndef SIPRED_PREDICTOR_H_
#define SIPRED_PREDICTOR_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sipred/audio.h"
#include "sipred/features.h"

namespace sipred {

// Network: features (T x F) -> BLSTM -> BLSTM -> attention pooling -> 1 unit
// -> sigmoid.
//
// Each BLSTM direction has `hidden` = floor(F/2) units with PyTorch-style
// gates (i, f, g, o) and two bias vectors; layer 2 consumes the 2*hidden
// concatenated outputs of layer 1. The pooling head scores every frame
// embedding e_t (D = 2*hidden) with a two-layer feed-forward net
//   a_t = w2 . relu(W1 e_t + b1) + b2,   W1: (2D x D)
// softmax-normalises the scores over time, pools p = sum_t alpha_t e_t and
// maps p to the output logit with one more affine layer.
struct ModelConfig {
  int feature_dim = 0;
  int blstm_layers = 2;
  int hidden = 0;            // per direction
  int attention_hidden = 0;  // width of the frame-scoring layer

  static ModelConfig ForFeatureDim(int feature_dim);
  int embed_dim() const { return 2 * hidden; }
  void Validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Number of trainable parameters; a pure function of the config.
size_t ParameterCount(const ModelConfig& config);

/// Published reference sizes for the spectrogram model and the model on
/// 1024-dimensional SSSR output features.
inline constexpr size_t kReferenceParamsSpectrogram = 923906;
inline constexpr size_t kReferenceParamsXlsrOutput = 14701570;

struct ParameterSegment {
  std::string name;  // e.g. "blstm0.fwd.w_ih", "pool.w1", "out.b"
  size_t offset = 0;
  int rows = 0;
  int cols = 1;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

class PredictorModel {
 public:
  /// Deterministic initialisation from `seed`. Throws InvalidArgument if
  /// feature_dim < 1.
  static PredictorModel Build(int feature_dim, uint64_t seed);
  static PredictorModel Build(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParameterSegment>& segments() const { return segments_; }
  const ParameterSegment& segment(const std::string& name) const;
  const Vector& parameters() const { return params_; }
  /// Replaces the parameter vector; throws on a length mismatch or
  /// non-finite values.
  void set_parameters(Vector params);
  size_t parameter_count() const { return static_cast<size_t>(params_.size()); }

  const FeatureBinding& binding() const { return binding_; }
  void set_binding(FeatureBinding b) { binding_ = std::move(b); }
  uint64_t init_seed() const { return init_seed_; }
  std::optional<uint64_t> training_seed() const { return training_seed_; }
  void set_training_seed(uint64_t s) { training_seed_ = s; }

  /// Predicted correctness fraction, strictly inside (0, 1) for finite input.
  /// `feats` is T x F with T >= 1. Throws ShapeMismatch on F mismatch.
  double Predict(const Matrix& feats) const;

  /// Runs forward and backward passes. `output_grad` maps the prediction y
  /// to dLoss/dy; the resulting dLoss/dparams is added to `grad` (resized
  /// and zeroed if empty). Returns y.
  double AccumulateGradient(const Matrix& feats,
                            const std::function<double(double)>& output_grad,
                            Vector& grad) const;

 private:
  PredictorModel() = default;
  void Layout();

  ModelConfig config_;
  std::vector<ParameterSegment> segments_;
  Vector params_;
  FeatureBinding binding_;
  uint64_t init_seed_ = 0;
  std::optional<uint64_t> training_seed_;
};

/// Single-channel forward pass; checks F against the model.
double ForwardChannel(const PredictorModel& model, const FeatureMatrix& feats);

struct Prediction {
  std::string utterance_id;
  double i_hat = 0.0;  // fraction; max over channels
  double left = 0.0;
  std::optional<double> right;
};

/// Better-ear rule: i_hat = max(left, right); mono input uses left only.
Prediction CombineChannels(std::string utterance_id, double left,
                           std::optional<double> right);

/// Forward pass per channel, combined by CombineChannels.
Prediction PredictFeatures(const PredictorModel& model, const std::string& utterance_id,
                           const FeatureMatrix& left,
                           const FeatureMatrix* right = nullptr);

/// Extracts features for every channel of `w` and applies PredictFeatures.
/// Failures are rethrown as Error naming the utterance.
Prediction PredictUtterance(const PredictorModel& model, const Waveform& w,
                            const FeatureExtractor& extractor,
                            const std::string& utterance_id);

// Checkpoint container, little-endian:
//   "SIPM" | u32 version (1) | u32 reserved | u64 header length H |
//   H bytes of JSON header (config, binding, seeds, segment table) |
//   parameter_count float64 values.
void SaveCheckpoint(const std::filesystem::path& path, const PredictorModel& model);
PredictorModel LoadCheckpoint(const std::filesystem::path& path);

}  // namespace sipred

#endif  // SIPRED_PREDICTOR_H_
