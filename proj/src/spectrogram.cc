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

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "sipred/error.h"
#include "sipred/features.h"

namespace sipred {

namespace {

// FFTW planning is not thread-safe; executing an existing plan on new arrays
// is. Plans are created once per size and kept for the process lifetime.
fftw_plan PlanFor(int n) {
  static std::mutex mu;
  static std::map<int, fftw_plan> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  if (p == nullptr) throw Error("FFTW could not plan size " + std::to_string(n));
  plans.emplace(n, p);
  return p;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

int SpectrogramOptions::window_samples() const {
  return static_cast<int>(std::lround(window_ms * 1e-3 * sample_rate));
}

int SpectrogramOptions::hop_samples() const {
  return static_cast<int>(std::lround(hop_ms * 1e-3 * sample_rate));
}

FeatureMatrix ExtractSpectrogram(const Waveform& w, Channel channel,
                                 const SpectrogramOptions& opts) {
  if (w.sample_rate() != opts.sample_rate)
    throw InvalidArgument("spectrogram expects " +
                          std::to_string(opts.sample_rate) + " Hz audio, got " +
                          std::to_string(w.sample_rate()) + " Hz; resample first");
  const int win = opts.window_samples();
  const int hop = opts.hop_samples();
  const int nfft = opts.fft_size;
  if (win < 1 || hop < 1 || nfft < win)
    throw InvalidArgument("invalid STFT configuration");
  auto x = w.samples(channel);
  const int64_t n = static_cast<int64_t>(x.size());
  if (n < win)
    throw InvalidArgument("audio of " + std::to_string(n) +
                          " samples is shorter than one " + std::to_string(win) +
                          "-sample window");
  const int64_t frames = (n - win) / hop + 1;
  const int bins = opts.num_bins();

  std::vector<double> window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  fftw_plan plan = PlanFor(nfft);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(nfft));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(bins));

  FeatureMatrix fm;
  fm.values.resize(frames, bins);
  fm.frame_times.resize(frames);
  fm.kind = FeatureKind::kSpec;
  fm.backend_id = std::string(kSpectrogramBackendId);
  fm.source_channel = channel;
  for (int64_t t = 0; t < frames; ++t) {
    double* buf = in.get();
    const double* src = x.data() + t * hop;
    for (int i = 0; i < win; ++i) buf[i] = src[i] * window[i];
    std::fill(buf + win, buf + nfft, 0.0);
    fftw_execute_dft_r2c(plan, buf, out.get());
    for (int k = 0; k < bins; ++k)
      fm.values(t, k) = std::hypot(out.get()[k][0], out.get()[k][1]);
    fm.frame_times[t] = (static_cast<double>(t) * hop + 0.5 * win) / w.sample_rate();
  }
  return fm;
}

}  // namespace sipred
