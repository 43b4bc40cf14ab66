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

#include <dlfcn.h>

#include <cmath>
#include <cstdlib>

#include <nlohmann/json.hpp>

#include "sipred/error.h"
#include "sipred/features.h"
#include "sipred/rng.h"
#include "sipred/util.h"

namespace sipred {

std::string_view FeatureKindName(FeatureKind k) {
  switch (k) {
    case FeatureKind::kSpec: return "spec";
    case FeatureKind::kFe: return "fe";
    case FeatureKind::kOl: return "ol";
  }
  return "?";
}

FeatureKind ParseFeatureKind(std::string_view name) {
  if (name == "spec") return FeatureKind::kSpec;
  if (name == "fe") return FeatureKind::kFe;
  if (name == "ol") return FeatureKind::kOl;
  throw InvalidArgument("unknown feature kind '" + std::string(name) + "'");
}

void FeatureMatrix::Validate() const {
  if (values.rows() < 1 || values.cols() < 1)
    throw ShapeMismatch("feature matrix must have T >= 1 and F >= 1");
  if (static_cast<Eigen::Index>(frame_times.size()) != values.rows())
    throw ShapeMismatch("frame_times has " + std::to_string(frame_times.size()) +
                        " entries for " + std::to_string(values.rows()) +
                        " frames");
  if (!values.allFinite()) throw InvalidArgument("feature matrix has non-finite values");
}

// ---------------------------------------------------------------------------

int BackendDescriptor::dim(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kFe: return fe_dim;
    case FeatureKind::kOl: return ol_dim;
    case FeatureKind::kSpec: break;
  }
  throw InvalidArgument("SSSR backends do not produce spectrograms");
}

int64_t BackendDescriptor::FrameCount(int64_t n) const {
  if (n < receptive_field) return 0;
  return (n - receptive_field) / frame_hop + 1;
}

void BackendDescriptor::Validate() const {
  if (backend_id.empty()) throw InvalidArgument("backend id is empty");
  if (fe_dim <= 0 || ol_dim <= 0)
    throw InvalidArgument("backend " + backend_id + ": dimensions must be positive");
  if (frame_hop <= 0 || receptive_field <= 0 || expected_sample_rate <= 0)
    throw InvalidArgument("backend " + backend_id + ": framing must be positive");
}

const std::vector<BackendDescriptor>& KnownBackends() {
  // wav2vec2-style encoders: 7 conv layers, total stride 320, receptive
  // field 400 samples at 16 kHz.
  static const std::vector<BackendDescriptor> kKnown = {
      {"xlsr", 512, 1024, 320, 400, 16000, "final transformer layer (post layer norm)"},
      {"hubert", 512, 768, 320, 400, 16000, "final transformer layer"},
  };
  return kKnown;
}

std::optional<BackendDescriptor> FindKnownBackend(std::string_view backend_id) {
  for (const auto& d : KnownBackends())
    if (d.backend_id == backend_id) return d;
  return std::nullopt;
}

namespace {

FeatureMatrix ExtractStage(const FeatureBackend& backend, const Waveform& w,
                           Channel channel, FeatureKind kind) {
  const auto& d = backend.descriptor();
  if (w.sample_rate() != d.expected_sample_rate)
    throw InvalidArgument("backend " + d.backend_id + " expects " +
                          std::to_string(d.expected_sample_rate) +
                          " Hz audio, got " + std::to_string(w.sample_rate()) +
                          " Hz; resample first");
  auto x = w.samples(channel);
  if (d.FrameCount(static_cast<int64_t>(x.size())) < 1)
    throw InvalidArgument("audio of " + std::to_string(x.size()) +
                          " samples is shorter than the receptive field of " +
                          d.backend_id);
  // known ids are held to the registry table, whatever the backend claims
  const auto known = FindKnownBackend(d.backend_id);
  const int fe_dim = known ? known->fe_dim : d.fe_dim;
  const int ol_dim = known ? known->ol_dim : d.ol_dim;
  Matrix values = backend.Encode(x);
  if (values.cols() != fe_dim)
    throw ShapeMismatch("backend " + d.backend_id + " FE stage returned F=" +
                        std::to_string(values.cols()) + ", registry says " +
                        std::to_string(fe_dim));
  if (kind == FeatureKind::kOl) {
    values = backend.Contextualize(values);
    if (values.cols() != ol_dim)
      throw ShapeMismatch("backend " + d.backend_id + " OL stage returned F=" +
                          std::to_string(values.cols()) + ", registry says " +
                          std::to_string(ol_dim));
  }
  FeatureMatrix fm;
  fm.kind = kind;
  fm.backend_id = d.backend_id;
  fm.source_channel = channel;
  fm.frame_times.resize(values.rows());
  for (Eigen::Index t = 0; t < values.rows(); ++t)
    fm.frame_times[t] =
        (static_cast<double>(t) * d.frame_hop + 0.5 * d.receptive_field) /
        d.expected_sample_rate;
  fm.values = std::move(values);
  fm.Validate();
  return fm;
}

}  // namespace

FeatureMatrix ExtractFe(const FeatureBackend& backend, const Waveform& w,
                        Channel channel) {
  return ExtractStage(backend, w, channel, FeatureKind::kFe);
}

FeatureMatrix ExtractOl(const FeatureBackend& backend, const Waveform& w,
                        Channel channel) {
  return ExtractStage(backend, w, channel, FeatureKind::kOl);
}

// ---------------------------------------------------------------------------
// Mock backend

namespace {

void FillNormal(RowMatrix& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = stddev * rng.Normal();
}

void FillNormal(Vector& v, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.Normal();
}

}  // namespace

MockBackend::MockBackend(const MockBackendOptions& opts) : opts_(opts) {
  if (opts.fe_dim <= 0 || opts.ol_dim <= 0 || opts.hop <= 0 ||
      opts.hidden_channels <= 0 || opts.sample_rate <= 0)
    throw InvalidArgument("mock backend dimensions and hop must be positive");
  stride1_ = 1;
  for (int d = 1; d <= opts.hop / 4; ++d)
    if (opts.hop % d == 0) stride1_ = d;
  kernel2_ = opts.hop / stride1_;

  desc_.backend_id = opts.backend_id;
  desc_.fe_dim = opts.fe_dim;
  desc_.ol_dim = opts.ol_dim;
  desc_.frame_hop = opts.hop;
  desc_.receptive_field = opts.hop + stride1_;
  desc_.expected_sample_rate = opts.sample_rate;
  desc_.ol_tap = "frame-wise affine map of FE";
  desc_.Validate();

  const int k1 = 2 * stride1_;
  const int c1 = opts.hidden_channels;
  Rng rng = Rng::Stream(opts.seed, "mock-backend");
  w1_.resize(c1, k1);
  b1_.resize(c1);
  w2_.resize(opts.fe_dim, static_cast<Eigen::Index>(kernel2_) * c1);
  b2_.resize(opts.fe_dim);
  wo_.resize(opts.ol_dim, opts.fe_dim);
  bo_.resize(opts.ol_dim);
  FillNormal(w1_, rng, 4.0 / std::sqrt(k1));
  FillNormal(b1_, rng, 0.1);
  FillNormal(w2_, rng, 1.0 / std::sqrt(static_cast<double>(kernel2_) * c1));
  FillNormal(b2_, rng, 0.1);
  FillNormal(wo_, rng, 1.0 / std::sqrt(opts.fe_dim));
  FillNormal(bo_, rng, 0.1);
}

std::string MockBackend::Fingerprint() const {
  nlohmann::json j = {{"type", "mock"},          {"id", opts_.backend_id},
                      {"seed", opts_.seed},      {"fe_dim", opts_.fe_dim},
                      {"ol_dim", opts_.ol_dim},  {"hop", opts_.hop},
                      {"hidden", opts_.hidden_channels},
                      {"sample_rate", opts_.sample_rate}};
  return j.dump();
}

Matrix MockBackend::Encode(std::span<const double> samples) const {
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t frames = desc_.FrameCount(n);
  if (frames < 1)
    throw InvalidArgument("input shorter than the mock receptive field");
  const int k1 = 2 * stride1_;
  const int c1 = opts_.hidden_channels;
  // Only the layer-1 frames consumed by layer 2 are computed.
  const int64_t t1 = frames * kernel2_;

  RowMatrix patches(t1, k1);
  for (int64_t t = 0; t < t1; ++t)
    for (int k = 0; k < k1; ++k) patches(t, k) = samples[t * stride1_ + k];
  RowMatrix h1 = ((patches * w1_.transpose()).rowwise() + b1_.transpose())
                     .array()
                     .tanh()
                     .matrix();
  // Stride == kernel in layer 2, so its input frames are a reshape of h1.
  Eigen::Map<const RowMatrix> x2(h1.data(), frames,
                                 static_cast<Eigen::Index>(kernel2_) * c1);
  Matrix fe = ((x2 * w2_.transpose()).rowwise() + b2_.transpose())
                  .array()
                  .tanh()
                  .matrix();
  return fe;
}

Matrix MockBackend::Contextualize(const Matrix& fe) const {
  if (fe.cols() != opts_.fe_dim)
    throw ShapeMismatch("mock OL stage expects F=" + std::to_string(opts_.fe_dim));
  return (fe * wo_.transpose()).rowwise() + bo_.transpose();
}

// ---------------------------------------------------------------------------
// Registry

namespace {

// Keeps a dlopen handle alive for as long as the backend it produced.
class PluginBackend final : public FeatureBackend {
 public:
  PluginBackend(std::shared_ptr<void> handle, std::unique_ptr<FeatureBackend> impl)
      : impl_(std::move(impl)), handle_(std::move(handle)) {}
  ~PluginBackend() override { impl_.reset(); }

  const BackendDescriptor& descriptor() const override { return impl_->descriptor(); }
  std::string Fingerprint() const override { return impl_->Fingerprint(); }
  Matrix Encode(std::span<const double> s) const override { return impl_->Encode(s); }
  Matrix Contextualize(const Matrix& fe) const override {
    return impl_->Contextualize(fe);
  }

 private:
  std::unique_ptr<FeatureBackend> impl_;
  std::shared_ptr<void> handle_;
};

std::shared_ptr<const FeatureBackend> LoadPlugin(
    const std::string& backend_id, const std::filesystem::path& library,
    const std::string& options_json) {
  using Reason = BackendUnavailable::Reason;
  if (!std::filesystem::exists(library))
    throw BackendUnavailable(Reason::kNotInstalled,
                             "backend '" + backend_id + "' is not installed: '" +
                                 library.string() + "' does not exist");
  void* raw = dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (raw == nullptr) {
    const char* err = dlerror();
    throw BackendUnavailable(Reason::kLoadFailed,
                             "backend '" + backend_id + "' failed to load: " +
                                 (err ? err : "unknown dlopen error"));
  }
  std::shared_ptr<void> handle(raw, [](void* h) { dlclose(h); });
  auto create = reinterpret_cast<CreateBackendFn>(dlsym(raw, kCreateBackendSymbol));
  if (create == nullptr)
    throw BackendUnavailable(Reason::kLoadFailed,
                             "backend '" + backend_id + "' library lacks symbol " +
                                 kCreateBackendSymbol);
  const char* root = std::getenv(BackendRegistry::kModelRootEnv);
  char error[512] = {0};
  std::unique_ptr<FeatureBackend> impl(create(backend_id.c_str(), root ? root : "",
                                              options_json.c_str(), error,
                                              sizeof(error)));
  if (!impl)
    throw BackendUnavailable(Reason::kLoadFailed, "backend '" + backend_id +
                                                      "' failed to initialize: " +
                                                      error);
  const auto& d = impl->descriptor();
  if (d.backend_id != backend_id)
    throw BackendUnavailable(Reason::kLoadFailed,
                             "plug-in for '" + backend_id + "' reports id '" +
                                 d.backend_id + "'");
  if (auto known = FindKnownBackend(backend_id)) {
    if (d.fe_dim != known->fe_dim || d.ol_dim != known->ol_dim)
      throw BackendUnavailable(Reason::kLoadFailed,
                               "plug-in for '" + backend_id +
                                   "' has dimensions (" + std::to_string(d.fe_dim) +
                                   ", " + std::to_string(d.ol_dim) +
                                   ") that differ from the registry");
  }
  return std::make_shared<PluginBackend>(std::move(handle), std::move(impl));
}

}  // namespace

BackendDescriptor BackendRegistry::RegisterMock(const MockBackendOptions& opts) {
  auto mock = std::make_shared<MockBackend>(opts);
  BackendDescriptor d = mock->descriptor();
  Register(std::move(mock));
  return d;
}

void BackendRegistry::DeclarePlugin(const std::string& backend_id,
                                    const std::filesystem::path& library,
                                    const std::string& options_json) {
  std::lock_guard<std::mutex> lock(mu_);
  plugins_[backend_id] = {library, options_json};
  loaded_.erase(backend_id);
}

void BackendRegistry::Register(std::shared_ptr<const FeatureBackend> backend) {
  backend->descriptor().Validate();
  std::lock_guard<std::mutex> lock(mu_);
  loaded_[backend->descriptor().backend_id] = std::move(backend);
}

bool BackendRegistry::Contains(const std::string& backend_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return loaded_.count(backend_id) > 0 || plugins_.count(backend_id) > 0;
}

std::shared_ptr<const FeatureBackend> BackendRegistry::Resolve(
    const std::string& backend_id) {
  std::lock_guard<std::mutex> lock(mu_);
  if (auto it = loaded_.find(backend_id); it != loaded_.end()) return it->second;
  auto p = plugins_.find(backend_id);
  if (p == plugins_.end())
    throw BackendUnavailable(
        BackendUnavailable::Reason::kNotInstalled,
        "backend '" + backend_id +
            "' is not installed; declare a plug-in library for it in the run "
            "configuration");
  auto backend = LoadPlugin(backend_id, p->second.library, p->second.options_json);
  loaded_[backend_id] = backend;
  return backend;
}

// ---------------------------------------------------------------------------
// Bindings

std::string FeatureBinding::ToString() const {
  if (is_spectrogram()) return std::string(kSpectrogramBackendId);
  return backend_id + ":" + std::string(FeatureKindName(kind));
}

FeatureBinding FeatureBinding::Parse(std::string_view text) {
  if (text == kSpectrogramBackendId) return {};
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw InvalidArgument("binding '" + std::string(text) +
                          "' must be 'spec' or '<backend>:fe|ol'");
  FeatureBinding b;
  b.backend_id = std::string(text.substr(0, colon));
  b.kind = ParseFeatureKind(text.substr(colon + 1));
  if (b.kind == FeatureKind::kSpec)
    throw InvalidArgument("binding '" + std::string(text) +
                          "': spectrograms are bound as plain 'spec'");
  return b;
}

FeatureExtractor::FeatureExtractor(FeatureBinding binding,
                                   std::shared_ptr<const FeatureBackend> backend,
                                   SpectrogramOptions spec_opts)
    : binding_(std::move(binding)),
      backend_(std::move(backend)),
      spec_opts_(spec_opts) {
  if (!binding_.is_spectrogram() && !backend_)
    throw InvalidArgument("binding " + binding_.ToString() + " needs a backend");
}

int FeatureExtractor::sample_rate() const {
  return binding_.is_spectrogram() ? spec_opts_.sample_rate
                                   : backend_->descriptor().expected_sample_rate;
}

int FeatureExtractor::feature_dim() const {
  return binding_.is_spectrogram() ? spec_opts_.num_bins()
                                   : backend_->descriptor().dim(binding_.kind);
}

std::string FeatureExtractor::Fingerprint() const {
  nlohmann::json j;
  j["binding"] = binding_.ToString();
  if (binding_.is_spectrogram()) {
    j["sample_rate"] = spec_opts_.sample_rate;
    j["window_ms"] = spec_opts_.window_ms;
    j["hop_ms"] = spec_opts_.hop_ms;
    j["fft_size"] = spec_opts_.fft_size;
    j["window"] = "hann-periodic";
    j["scale"] = "magnitude";
  } else {
    j["backend"] = backend_->Fingerprint();
  }
  return j.dump();
}

FeatureMatrix FeatureExtractor::operator()(const Waveform& w, Channel channel) const {
  switch (binding_.kind) {
    case FeatureKind::kSpec: return ExtractSpectrogram(w, channel, spec_opts_);
    case FeatureKind::kFe: return ExtractFe(*backend_, w, channel);
    case FeatureKind::kOl: return ExtractOl(*backend_, w, channel);
  }
  throw InvalidArgument("unknown feature kind");
}

FeatureExtractor MakeExtractor(const FeatureBinding& binding,
                               BackendRegistry& registry,
                               const SpectrogramOptions& spec_opts) {
  if (binding.is_spectrogram()) return FeatureExtractor(binding, nullptr, spec_opts);
  return FeatureExtractor(binding, registry.Resolve(binding.backend_id), spec_opts);
}

}  // namespace sipred
