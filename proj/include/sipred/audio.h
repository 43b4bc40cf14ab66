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

#ifndef SIPRED_AUDIO_H_
#define SIPRED_AUDIO_H_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sipred {

enum class Channel { kLeft = 0, kRight = 1 };

std::string_view ChannelName(Channel c);
Channel ParseChannel(std::string_view name);

/// Multi-channel audio. Channel 0 is always the left ear.
class Waveform {
 public:
  Waveform() = default;
  /// Throws InvalidArgument unless 1 or 2 equal-length, non-empty channels
  /// and a positive sample rate are given.
  Waveform(std::vector<std::vector<double>> channels, int sample_rate);

  int sample_rate() const { return sample_rate_; }
  size_t num_channels() const { return channels_.size(); }
  size_t length() const { return channels_.empty() ? 0 : channels_[0].size(); }
  double duration_s() const {
    return static_cast<double>(length()) / sample_rate_;
  }

  bool has_channel(Channel c) const {
    return static_cast<size_t>(c) < channels_.size();
  }
  /// Throws InvalidArgument if the channel is absent.
  std::span<const double> samples(Channel c) const;
  const std::vector<std::vector<double>>& channels() const { return channels_; }

  /// Left first: {left} for mono, {left, right} for stereo.
  std::vector<Channel> channel_labels() const;

 private:
  std::vector<std::vector<double>> channels_;
  int sample_rate_ = 0;
};

enum class PcmFormat { kInt16, kInt24, kInt32, kFloat32 };

/// Decodes a RIFF/WAVE file (integer or float PCM, 1-2 channels).
Waveform ReadWav(const std::filesystem::path& path);
/// Decodes an in-memory RIFF/WAVE image; `name` only appears in errors.
Waveform DecodeWav(std::span<const unsigned char> bytes, std::string_view name);

void WriteWav(const std::filesystem::path& path, const Waveform& w,
              PcmFormat format = PcmFormat::kFloat32);

// Band-limited windowed-sinc resampler. The kernel is a Kaiser-windowed sinc
// with `half_taps` zero crossings on each side at the lower of the two rates,
// cut off at `rolloff` times the lower Nyquist frequency.
struct ResamplerOptions {
  int half_taps = 32;
  double rolloff = 0.945;
  double kaiser_beta = 8.6;
};

/// Output length is ceil(n * target / source). Identity when rates match.
std::vector<double> ResampleChannel(std::span<const double> x, int source_rate,
                                    int target_rate,
                                    const ResamplerOptions& opts = {});

Waveform Resample(const Waveform& w, int target_rate,
                  const ResamplerOptions& opts = {});

/// Reads a WAV file and resamples it to `target_rate`. Errors name the path.
Waveform LoadWaveform(const std::filesystem::path& path, int target_rate);

}  // namespace sipred

#endif  // SIPRED_AUDIO_H_
