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

#include "sipred/audio.h"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "sipred/error.h"

namespace sipred {

std::string_view ChannelName(Channel c) {
  return c == Channel::kLeft ? "left" : "right";
}

Channel ParseChannel(std::string_view name) {
  if (name == "left") return Channel::kLeft;
  if (name == "right") return Channel::kRight;
  throw InvalidArgument("unknown channel '" + std::string(name) + "'");
}

Waveform::Waveform(std::vector<std::vector<double>> channels, int sample_rate)
    : channels_(std::move(channels)), sample_rate_(sample_rate) {
  if (channels_.empty() || channels_.size() > 2)
    throw InvalidArgument("waveform must have 1 or 2 channels, got " +
                          std::to_string(channels_.size()));
  if (sample_rate_ <= 0) throw InvalidArgument("sample rate must be positive");
  if (channels_[0].empty()) throw InvalidArgument("waveform is empty");
  for (const auto& ch : channels_)
    if (ch.size() != channels_[0].size())
      throw InvalidArgument("waveform channels differ in length");
}

std::span<const double> Waveform::samples(Channel c) const {
  if (!has_channel(c))
    throw InvalidArgument("waveform has no " + std::string(ChannelName(c)) +
                          " channel");
  return channels_[static_cast<size_t>(c)];
}

std::vector<Channel> Waveform::channel_labels() const {
  if (channels_.size() == 2) return {Channel::kLeft, Channel::kRight};
  return {Channel::kLeft};
}

// ---------------------------------------------------------------------------
// RIFF/WAVE

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint16_t ReadU16(const unsigned char* p) { return p[0] | (p[1] << 8); }
uint32_t ReadU32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}

void PutU16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}
void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

double DecodeSample(const unsigned char* p, uint16_t format, int bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      float f;
      uint32_t u = ReadU32(p);
      std::memcpy(&f, &u, 4);
      return f;
    }
    uint64_t u = uint64_t(ReadU32(p)) | (uint64_t(ReadU32(p + 4)) << 32);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<int16_t>(ReadU16(p)) / 32768.0;
    case 24: {
      int32_t v = (int32_t(p[0]) << 8) | (int32_t(p[1]) << 16) |
                  (int32_t(p[2]) << 24);
      return (v >> 8) / 8388608.0;
    }
    default:
      return static_cast<int32_t>(ReadU32(p)) / 2147483648.0;
  }
}

}  // namespace

Waveform DecodeWav(std::span<const unsigned char> bytes, std::string_view name) {
  auto fail = [&](const std::string& why) -> IoError {
    return IoError("cannot decode '" + std::string(name) + "': " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    uint32_t size = ReadU32(chunk + 4);
    size_t body = pos + 8;
    size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw fail("truncated fmt chunk");
      format = ReadU16(chunk + 8);
      channels = ReadU16(chunk + 10);
      rate = ReadU32(chunk + 12);
      block_align = ReadU16(chunk + 20);
      bits = ReadU16(chunk + 22);
      if (format == kFormatExtensible) {
        if (size < 40 || avail < 40) throw fail("truncated extensible fmt");
        format = ReadU16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<size_t>(size, avail);
    }
    pos = body + size + (size & 1);
  }
  if (format == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (format != kFormatPcm && format != kFormatFloat)
    throw fail("unsupported sample format " + std::to_string(format));
  if (channels < 1 || channels > 2)
    throw fail("unsupported channel count " + std::to_string(channels));
  bool bits_ok = format == kFormatFloat
                     ? (bits == 32 || bits == 64)
                     : (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  if (!bits_ok) throw fail("unsupported bit depth " + std::to_string(bits));
  if (rate == 0) throw fail("zero sample rate");
  const size_t bytes_per_sample = bits / 8;
  if (block_align != bytes_per_sample * channels) throw fail("bad block align");

  const size_t frames = data_size / block_align;
  if (frames == 0) throw fail("zero-length audio");
  std::vector<std::vector<double>> out(channels, std::vector<double>(frames));
  for (size_t i = 0; i < frames; ++i)
    for (size_t c = 0; c < channels; ++c)
      out[c][i] = DecodeSample(data + i * block_align + c * bytes_per_sample,
                               format, bits);
  return Waveform(std::move(out), static_cast<int>(rate));
}

Waveform ReadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return DecodeWav(bytes, path.string());
}

void WriteWav(const std::filesystem::path& path, const Waveform& w,
              PcmFormat format) {
  uint16_t bits = 32, tag = kFormatPcm;
  switch (format) {
    case PcmFormat::kInt16: bits = 16; break;
    case PcmFormat::kInt24: bits = 24; break;
    case PcmFormat::kInt32: bits = 32; break;
    case PcmFormat::kFloat32: bits = 32; tag = kFormatFloat; break;
  }
  const uint16_t channels = static_cast<uint16_t>(w.num_channels());
  const uint16_t block = channels * bits / 8;
  const uint32_t data_size = static_cast<uint32_t>(w.length() * block);

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  PutU32(out, 36 + data_size);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, tag);
  PutU16(out, channels);
  PutU32(out, static_cast<uint32_t>(w.sample_rate()));
  PutU32(out, static_cast<uint32_t>(w.sample_rate()) * block);
  PutU16(out, block);
  PutU16(out, bits);
  out += "data";
  PutU32(out, data_size);
  for (size_t i = 0; i < w.length(); ++i) {
    for (size_t c = 0; c < channels; ++c) {
      double x = w.channels()[c][i];
      if (format == PcmFormat::kFloat32) {
        float f = static_cast<float>(x);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        PutU32(out, u);
        continue;
      }
      x = std::clamp(x, -1.0, 1.0);
      if (format == PcmFormat::kInt16) {
        auto v = static_cast<int16_t>(std::lround(std::min(x * 32768.0, 32767.0)));
        PutU16(out, static_cast<uint16_t>(v));
      } else if (format == PcmFormat::kInt24) {
        auto v = static_cast<int32_t>(std::lround(std::min(x * 8388608.0, 8388607.0)));
        out.push_back(char(v & 0xff));
        out.push_back(char((v >> 8) & 0xff));
        out.push_back(char((v >> 16) & 0xff));
      } else {
        auto v = static_cast<int32_t>(
            std::llround(std::min(x * 2147483648.0, 2147483647.0)));
        PutU32(out, static_cast<uint32_t>(v));
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Resampling

std::vector<double> ResampleChannel(std::span<const double> x, int source_rate,
                                    int target_rate,
                                    const ResamplerOptions& opts) {
  if (source_rate <= 0 || target_rate <= 0)
    throw InvalidArgument("sample rates must be positive");
  if (source_rate == target_rate) return {x.begin(), x.end()};

  const int g = std::gcd(source_rate, target_rate);
  const int64_t up = target_rate / g;    // output step count per cycle
  const int64_t down = source_rate / g;  // input step count per cycle
  // Kernel cutoff relative to the input Nyquist.
  const double scale = std::min(1.0, static_cast<double>(target_rate) / source_rate);
  const double cutoff = opts.rolloff * scale;
  const double half_width = opts.half_taps / scale;  // in input samples
  const double i0_beta = std::cyl_bessel_i(0.0, opts.kaiser_beta);

  auto kernel = [&](double t) {
    if (std::abs(t) >= half_width) return 0.0;
    double r = t / half_width;
    double w = std::cyl_bessel_i(0.0, opts.kaiser_beta * std::sqrt(1.0 - r * r)) /
               i0_beta;
    double a = M_PI * cutoff * t;
    double sinc = a == 0.0 ? 1.0 : std::sin(a) / a;
    return cutoff * sinc * w;
  };

  // One filter per output phase; phase p sits at fractional input offset
  // (p * down mod up) / up.
  const int64_t taps = static_cast<int64_t>(std::ceil(half_width)) * 2 + 1;
  const int64_t left = static_cast<int64_t>(std::ceil(half_width));
  std::vector<std::vector<double>> phases(up, std::vector<double>(taps));
  for (int64_t p = 0; p < up; ++p) {
    double frac = static_cast<double>((p * down) % up) / up;
    for (int64_t k = 0; k < taps; ++k) phases[p][k] = kernel(frac - (k - left));
  }

  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t out_len = (n * up + down - 1) / down;
  std::vector<double> y(out_len);
  for (int64_t m = 0; m < out_len; ++m) {
    const int64_t base = (m * down) / up;
    const auto& h = phases[m % up];
    double acc = 0.0;
    for (int64_t k = 0; k < taps; ++k) {
      int64_t idx = base + k - left;
      if (idx < 0 || idx >= n) continue;
      acc += x[idx] * h[k];
    }
    y[m] = acc;
  }
  return y;
}

Waveform Resample(const Waveform& w, int target_rate,
                  const ResamplerOptions& opts) {
  if (w.sample_rate() == target_rate) return w;
  std::vector<std::vector<double>> out;
  out.reserve(w.num_channels());
  for (const auto& ch : w.channels())
    out.push_back(ResampleChannel(ch, w.sample_rate(), target_rate, opts));
  return Waveform(std::move(out), target_rate);
}

Waveform LoadWaveform(const std::filesystem::path& path, int target_rate) {
  return Resample(ReadWav(path), target_rate);
}

}  // namespace sipred
