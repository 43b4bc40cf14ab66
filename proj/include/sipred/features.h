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

#ifndef SIPRED_FEATURES_H_
#define SIPRED_FEATURES_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sipred/audio.h"

namespace sipred {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// SPEC: STFT magnitude. FE: output of the SSSR convolutional encoder.
/// OL: output of the SSSR transformer stage.
enum class FeatureKind { kSpec, kFe, kOl };
std::string_view FeatureKindName(FeatureKind k);  // "spec", "fe", "ol"
FeatureKind ParseFeatureKind(std::string_view name);

inline constexpr std::string_view kSpectrogramBackendId = "spec";

/// T x F representation of one audio channel.
struct FeatureMatrix {
  Matrix values;                   // rows = frames, cols = features
  std::vector<double> frame_times; // seconds, one per row
  FeatureKind kind = FeatureKind::kSpec;
  std::string backend_id;
  Channel source_channel = Channel::kLeft;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }

  /// Throws ShapeMismatch/InvalidArgument when T or F is zero, frame_times
  /// disagrees with T, or a value is non-finite.
  void Validate() const;
};

// ---------------------------------------------------------------------------
// Spectrogram

struct SpectrogramOptions {
  int sample_rate = 16000;
  double window_ms = 20.0;
  double hop_ms = 10.0;
  int fft_size = 1024;

  int window_samples() const;
  int hop_samples() const;
  int num_bins() const { return fft_size / 2 + 1; }
};

/// Magnitude STFT with a periodic Hann window, no centering or padding:
/// T = floor((N - window) / hop) + 1, F = fft_size / 2 + 1.
FeatureMatrix ExtractSpectrogram(const Waveform& w, Channel channel,
                                 const SpectrogramOptions& opts = {});

// ---------------------------------------------------------------------------
// SSSR backends

struct BackendDescriptor {
  std::string backend_id;
  int fe_dim = 0;
  int ol_dim = 0;
  int frame_hop = 0;          // input samples per output frame
  int receptive_field = 0;    // input samples seen by the first frame
  int expected_sample_rate = 16000;
  std::string ol_tap;         // which hidden state the OL stage returns

  int dim(FeatureKind kind) const;
  /// floor((n - receptive_field) / frame_hop) + 1, or 0 if n is too short.
  int64_t FrameCount(int64_t n) const;
  void Validate() const;
};

/// Descriptors of the pretrained backbones the pipeline knows about. Their
/// implementations are plug-ins; see BackendRegistry.
const std::vector<BackendDescriptor>& KnownBackends();
std::optional<BackendDescriptor> FindKnownBackend(std::string_view backend_id);

/// A frozen SSSR feature extractor. Implementations must be immutable after
/// construction so one instance can serve parallel workers.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  /// Identifies the weights; part of every feature cache key.
  virtual std::string Fingerprint() const = 0;
  /// Convolutional encoder: samples -> T x fe_dim.
  virtual Matrix Encode(std::span<const double> samples) const = 0;
  /// Transformer stage: T x fe_dim -> T' x ol_dim.
  virtual Matrix Contextualize(const Matrix& fe) const = 0;
};

/// Both functions check the sample rate and enforce the registry shape;
/// a wrong F is a hard ShapeMismatch.
FeatureMatrix ExtractFe(const FeatureBackend& backend, const Waveform& w,
                        Channel channel);
FeatureMatrix ExtractOl(const FeatureBackend& backend, const Waveform& w,
                        Channel channel);

struct MockBackendOptions {
  std::string backend_id = "mock";
  uint64_t seed = 7;
  int fe_dim = 512;
  int ol_dim = 768;
  int hop = 320;
  int hidden_channels = 32;
  int sample_rate = 16000;
};

// Deterministic stand-in for a pretrained backbone.
//
// Encoder: two strided 1-D convolutions with tanh activations.
//   layer 1: 1 -> hidden_channels, kernel 2*s, stride s
//   layer 2: hidden_channels -> fe_dim, kernel hop/s, stride hop/s
// where s is the largest divisor of hop not exceeding hop/4. The receptive
// field is hop + s (400 samples for hop 320, as in wav2vec2).
// Transformer stand-in: one frame-wise affine map fe_dim -> ol_dim, so OL has
// exactly as many frames as FE.
class MockBackend final : public FeatureBackend {
 public:
  explicit MockBackend(const MockBackendOptions& opts);

  const BackendDescriptor& descriptor() const override { return desc_; }
  std::string Fingerprint() const override;
  Matrix Encode(std::span<const double> samples) const override;
  Matrix Contextualize(const Matrix& fe) const override;

  const MockBackendOptions& options() const { return opts_; }
  int layer1_stride() const { return stride1_; }
  int layer1_kernel() const { return 2 * stride1_; }
  int layer2_kernel() const { return kernel2_; }
  const RowMatrix& conv1_weight() const { return w1_; }   // C1 x k1
  const Vector& conv1_bias() const { return b1_; }
  const RowMatrix& conv2_weight() const { return w2_; }   // fe x (k2*C1), tap-major
  const Vector& conv2_bias() const { return b2_; }
  const RowMatrix& ol_weight() const { return wo_; }      // ol x fe
  const Vector& ol_bias() const { return bo_; }

 private:
  MockBackendOptions opts_;
  BackendDescriptor desc_;
  int stride1_ = 1;
  int kernel2_ = 1;
  RowMatrix w1_, w2_, wo_;
  Vector b1_, b2_, bo_;
};

/// Maps backend ids to loaded backends. Mocks are registered directly; real
/// backbones come from plug-in libraries declared in the run configuration.
class BackendRegistry {
 public:
  /// Environment variable naming the root directory for backend model files.
  static constexpr const char* kModelRootEnv = "SIPRED_MODEL_ROOT";

  /// Registers (or replaces) a deterministic mock backend.
  BackendDescriptor RegisterMock(const MockBackendOptions& opts);

  /// Declares a plug-in shared library that provides `backend_id`. The
  /// library is loaded lazily on first Resolve.
  void DeclarePlugin(const std::string& backend_id,
                     const std::filesystem::path& library,
                     const std::string& options_json = "{}");

  void Register(std::shared_ptr<const FeatureBackend> backend);

  /// Throws BackendUnavailable(kNotInstalled) for an unknown or undeclared id
  /// and BackendUnavailable(kLoadFailed) when a declared plug-in cannot be
  /// loaded or reports the wrong dimensions.
  std::shared_ptr<const FeatureBackend> Resolve(const std::string& backend_id);

  bool Contains(const std::string& backend_id) const;

 private:
  struct PluginSpec {
    std::filesystem::path library;
    std::string options_json;
  };
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const FeatureBackend>> loaded_;
  std::map<std::string, PluginSpec> plugins_;
};

// Plug-in ABI. A backend library exports
//   extern "C" sipred::FeatureBackend* sipred_create_backend(
//       const char* backend_id, const char* model_root,
//       const char* options_json, char* error, size_t error_len);
// returning nullptr (and filling `error`) on failure. Ownership passes to
// the caller, which destroys it with `delete`.
using CreateBackendFn = FeatureBackend* (*)(const char*, const char*,
                                            const char*, char*, size_t);
inline constexpr const char* kCreateBackendSymbol = "sipred_create_backend";

// ---------------------------------------------------------------------------
// Bindings

/// What a model consumes: the spectrogram, or one stage of one backend.
struct FeatureBinding {
  std::string backend_id{kSpectrogramBackendId};
  FeatureKind kind = FeatureKind::kSpec;

  bool is_spectrogram() const { return kind == FeatureKind::kSpec; }
  /// "spec", or "<backend>:fe" / "<backend>:ol".
  std::string ToString() const;
  static FeatureBinding Parse(std::string_view text);
  friend bool operator==(const FeatureBinding&, const FeatureBinding&) = default;
};

/// A binding resolved against concrete components.
class FeatureExtractor {
 public:
  FeatureExtractor(FeatureBinding binding,
                   std::shared_ptr<const FeatureBackend> backend,
                   SpectrogramOptions spec_opts = {});

  const FeatureBinding& binding() const { return binding_; }
  int sample_rate() const;
  int feature_dim() const;
  /// Identifies binding, parameters and weights for cache keys.
  std::string Fingerprint() const;
  FeatureMatrix operator()(const Waveform& w, Channel channel) const;

 private:
  FeatureBinding binding_;
  std::shared_ptr<const FeatureBackend> backend_;
  SpectrogramOptions spec_opts_;
};

FeatureExtractor MakeExtractor(const FeatureBinding& binding,
                               BackendRegistry& registry,
                               const SpectrogramOptions& spec_opts = {});

}  // namespace sipred

#endif  // SIPRED_FEATURES_H_
