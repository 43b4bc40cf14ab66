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

#ifndef SIPRED_FEATURE_CACHE_H_
#define SIPRED_FEATURE_CACHE_H_

#include <filesystem>
#include <optional>
#include <string>

#include "sipred/corpus.h"
#include "sipred/features.h"

namespace sipred {

// Binary tensor container (.feat), little-endian:
//
//   offset  size  field
//   0       4     magic "SIPF"
//   4       4     u32 format version (1)
//   8       4     u32 dtype (1 = float64)
//   12      4     u32 reserved, zero
//   16      8     u64 frames T
//   24      8     u64 feature dim F
//   32      8*T*F values, row-major (frame by frame)
//   ...     8*T   frame times in seconds
//
// Every .feat file has a JSON sidecar (.json) carrying shape, dtype,
// backend_id, kind, hop, channel and the content key it was computed from.
void WriteFeatureFile(const std::filesystem::path& path, const FeatureMatrix& fm);
/// Reads values and frame times; kind/backend/channel come from the sidecar.
FeatureMatrix ReadFeatureFile(const std::filesystem::path& path);

/// On-disk feature store with one entry per
/// (signal kind, utterance, channel, backend, kind).
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path EntryPath(SignalKind signal, const std::string& utterance_id,
                                  Channel channel,
                                  const FeatureBinding& binding) const;

  /// Content key: SHA-256 over the audio bytes and the extractor fingerprint.
  static std::string ContentKey(const std::string& audio_sha256,
                                const std::string& extractor_fingerprint);

  /// True when an entry exists and was computed from `key`.
  bool IsValid(SignalKind signal, const std::string& utterance_id, Channel channel,
               const FeatureBinding& binding, const std::string& key) const;

  void Store(SignalKind signal, const std::string& utterance_id, Channel channel,
             const FeatureBinding& binding, const std::string& key, int hop,
             const FeatureMatrix& fm) const;

  /// Throws CacheMiss if the entry is absent.
  FeatureMatrix Load(SignalKind signal, const std::string& utterance_id,
                     Channel channel, const FeatureBinding& binding) const;

  bool Contains(SignalKind signal, const std::string& utterance_id, Channel channel,
                const FeatureBinding& binding) const;

 private:
  std::filesystem::path root_;
};

}  // namespace sipred

#endif  // SIPRED_FEATURE_CACHE_H_
