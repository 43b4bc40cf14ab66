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

#include "sipred/feature_cache.h"

#include <cstring>

#include <nlohmann/json.hpp>

#include "sipred/error.h"
#include "sipred/util.h"

namespace sipred {

namespace {

constexpr char kMagic[4] = {'S', 'I', 'P', 'F'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kDtypeF64 = 1;
constexpr size_t kHeaderSize = 32;

void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutF64(std::string& out, double d) {
  uint64_t u;
  std::memcpy(&u, &d, 8);
  PutU64(out, u);
}
uint64_t GetU64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
uint32_t GetU32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}
double GetF64(const unsigned char* p) {
  uint64_t u = GetU64(p);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

std::filesystem::path SidecarPath(const std::filesystem::path& feat) {
  auto p = feat;
  p.replace_extension(".json");
  return p;
}

std::string SafeName(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ||
            c == '.')
               ? c
               : '_';
  return out;
}

}  // namespace

void WriteFeatureFile(const std::filesystem::path& path, const FeatureMatrix& fm) {
  fm.Validate();
  const uint64_t t = fm.frames(), f = fm.dim();
  std::string out;
  out.reserve(kHeaderSize + 8 * (t * f + t));
  out.append(kMagic, 4);
  PutU32(out, kVersion);
  PutU32(out, kDtypeF64);
  PutU32(out, 0);
  PutU64(out, t);
  PutU64(out, f);
  for (uint64_t r = 0; r < t; ++r)
    for (uint64_t c = 0; c < f; ++c) PutF64(out, fm.values(r, c));
  for (double ts : fm.frame_times) PutF64(out, ts);
  WriteFileAtomic(path, out);
}

FeatureMatrix ReadFeatureFile(const std::filesystem::path& path) {
  const std::string raw = ReadTextFile(path);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  auto bad = [&](const std::string& why) {
    return IoError("corrupt feature file '" + path.string() + "': " + why);
  };
  if (raw.size() < kHeaderSize || std::memcmp(p, kMagic, 4) != 0)
    throw bad("bad magic");
  if (GetU32(p + 4) != kVersion) throw bad("unsupported version");
  if (GetU32(p + 8) != kDtypeF64) throw bad("unsupported dtype");
  const uint64_t t = GetU64(p + 16), f = GetU64(p + 24);
  if (t == 0 || f == 0 || raw.size() != kHeaderSize + 8 * (t * f + t))
    throw bad("size does not match header");
  FeatureMatrix fm;
  fm.values.resize(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f));
  const unsigned char* q = p + kHeaderSize;
  for (uint64_t r = 0; r < t; ++r)
    for (uint64_t c = 0; c < f; ++c, q += 8) fm.values(r, c) = GetF64(q);
  fm.frame_times.resize(t);
  for (uint64_t r = 0; r < t; ++r, q += 8) fm.frame_times[r] = GetF64(q);

  auto sidecar = SidecarPath(path);
  if (std::filesystem::exists(sidecar)) {
    auto meta = nlohmann::json::parse(ReadTextFile(sidecar));
    fm.kind = ParseFeatureKind(meta.at("kind").get<std::string>());
    fm.backend_id = meta.at("backend_id").get<std::string>();
    fm.source_channel = ParseChannel(meta.at("channel").get<std::string>());
    auto shape = meta.at("shape").get<std::vector<uint64_t>>();
    if (shape.size() != 2 || shape[0] != t || shape[1] != f)
      throw bad("sidecar shape disagrees with tensor header");
  }
  return fm;
}

std::filesystem::path FeatureCache::EntryPath(SignalKind signal,
                                              const std::string& utterance_id,
                                              Channel channel,
                                              const FeatureBinding& binding) const {
  return root_ / std::string(SignalKindName(signal)) / SafeName(binding.backend_id) /
         std::string(FeatureKindName(binding.kind)) /
         (SafeName(utterance_id) + "." + std::string(ChannelName(channel)) + ".feat");
}

std::string FeatureCache::ContentKey(const std::string& audio_sha256,
                                     const std::string& extractor_fingerprint) {
  return Sha256Hex(audio_sha256 + "\n" + extractor_fingerprint);
}

bool FeatureCache::IsValid(SignalKind signal, const std::string& utterance_id,
                           Channel channel, const FeatureBinding& binding,
                           const std::string& key) const {
  auto feat = EntryPath(signal, utterance_id, channel, binding);
  auto sidecar = SidecarPath(feat);
  if (!std::filesystem::exists(feat) || !std::filesystem::exists(sidecar)) return false;
  try {
    auto meta = nlohmann::json::parse(ReadTextFile(sidecar));
    return meta.value("key", std::string()) == key;
  } catch (const std::exception&) {
    return false;
  }
}

void FeatureCache::Store(SignalKind signal, const std::string& utterance_id,
                         Channel channel, const FeatureBinding& binding,
                         const std::string& key, int hop,
                         const FeatureMatrix& fm) const {
  auto feat = EntryPath(signal, utterance_id, channel, binding);
  WriteFeatureFile(feat, fm);
  nlohmann::ordered_json meta;
  meta["shape"] = {fm.frames(), fm.dim()};
  meta["dtype"] = "f64";
  meta["backend_id"] = fm.backend_id;
  meta["kind"] = std::string(FeatureKindName(fm.kind));
  meta["hop"] = hop;
  meta["channel"] = std::string(ChannelName(channel));
  meta["utterance_id"] = utterance_id;
  meta["signal_kind"] = std::string(SignalKindName(signal));
  meta["key"] = key;
  // Sidecar last: an entry only counts as valid once both files exist.
  WriteFileAtomic(SidecarPath(feat), meta.dump(2) + "\n");
}

bool FeatureCache::Contains(SignalKind signal, const std::string& utterance_id,
                            Channel channel, const FeatureBinding& binding) const {
  auto feat = EntryPath(signal, utterance_id, channel, binding);
  return std::filesystem::exists(feat) && std::filesystem::exists(SidecarPath(feat));
}

FeatureMatrix FeatureCache::Load(SignalKind signal, const std::string& utterance_id,
                                 Channel channel,
                                 const FeatureBinding& binding) const {
  if (!Contains(signal, utterance_id, channel, binding))
    throw CacheMiss("no cached " + binding.ToString() + " features for " +
                    utterance_id + " (" + std::string(ChannelName(channel)) + ", " +
                    std::string(SignalKindName(signal)) + ") under '" +
                    root_.string() + "'");
  return ReadFeatureFile(EntryPath(signal, utterance_id, channel, binding));
}

}  // namespace sipred
