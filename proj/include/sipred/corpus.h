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

#ifndef SIPRED_CORPUS_H_
#define SIPRED_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sipred/audio.h"

namespace sipred {

enum class Track { kClosed, kOpen };
std::string_view TrackName(Track t);
Track ParseTrack(std::string_view name);

/// Which processed signal a model or distance study consumes: the hearing-aid
/// output, or that output after the (external) hearing-loss simulation.
enum class SignalKind { kEnhanced, kHls };
std::string_view SignalKindName(SignalKind k);
SignalKind ParseSignalKind(std::string_view name);

struct Audiogram {
  Channel ear = Channel::kLeft;
  std::vector<double> frequencies_hz;
  std::vector<double> thresholds_db_hl;

  /// Throws InvalidArgument on non-increasing/non-positive frequencies or a
  /// length mismatch.
  void Validate() const;
};

struct UtteranceRecord {
  std::string utterance_id;
  std::string listener_id;
  std::string system_id;
  std::string scene_id;
  std::filesystem::path enhanced_audio;
  std::optional<std::filesystem::path> hls_audio;
  std::optional<std::filesystem::path> clean_audio;
  double correctness = 0.0;  // percent, [0, 100]
  std::optional<Audiogram> audiogram_left;
  std::optional<Audiogram> audiogram_right;

  /// Locator of the requested test signal; throws if it is not available.
  const std::filesystem::path& audio_for(SignalKind kind) const;
};

/// File-name templates that map CPC1 trial fields onto audio locators,
/// relative to an audio root. Placeholders: {signal}, {scene}, {listener},
/// {system}. An empty template disables that signal.
struct AudioLayout {
  std::filesystem::path audio_root;
  std::string enhanced = "{signal}.wav";
  std::string hls = "{signal}_HL-output.wav";
  std::string clean = "{scene}_target_anechoic.wav";
};

struct ManifestDiagnostic {
  std::string utterance_id;
  std::string message;
};

struct ManifestLoad {
  Track track = Track::kClosed;
  std::vector<UtteranceRecord> records;
  std::vector<ManifestDiagnostic> rejected;
  std::vector<std::string> warnings;
};

/// Reads a CPC1-style JSON array of trials (signal, scene, listener, system,
/// correctness). Records missing a required field are rejected with a
/// diagnostic; an unparseable file throws IoError. `listeners_path`, if
/// given, is a CPC1 listener metadata file supplying audiograms.
ManifestLoad LoadManifest(const std::filesystem::path& path, Track track,
                          const AudioLayout& layout,
                          const std::optional<std::filesystem::path>&
                              listeners_path = std::nullopt);

/// Same as LoadManifest on an in-memory document.
ManifestLoad ParseManifest(std::string_view json_text, Track track,
                           const AudioLayout& layout,
                           std::string_view source_name = "<memory>");

// ---------------------------------------------------------------------------

enum class SplitMode {
  kUniform,          // uniform random over utterances (default)
  kListenerDisjoint  // whole listeners moved to validation
};

struct DatasetSplit {
  std::vector<UtteranceRecord> train;
  std::vector<UtteranceRecord> validation;
  std::vector<UtteranceRecord> test;
  Track track = Track::kClosed;
  uint64_t seed = 0;
};

/// Number of validation records drawn from a pool of `n`:
/// ceil(fraction * n), clamped so both partitions are non-empty when n >= 2.
size_t ValidationCount(size_t n, double fraction);

/// Splits `records` into train/validation. Deterministic under `seed`.
/// Throws InvalidArgument unless 0 < fraction < 1 and records is non-empty.
/// Partition order follows the input order within each side.
DatasetSplit MakeSplit(const std::vector<UtteranceRecord>& records,
                       double validation_fraction, uint64_t seed,
                       SplitMode mode = SplitMode::kUniform);

/// Maps a 0-100 correctness to [0, 1]. Throws InvalidArgument out of range.
double NormalizeCorrectness(double percent);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  size_t count = 0;
};

struct ListenerMean {
  std::string listener_id;
  double mean_correctness = 0.0;
  size_t n = 0;
};

struct CorrectnessHistogram {
  std::vector<HistogramBin> bins;           // partitions [0, 100]
  std::vector<ListenerMean> listener_means;  // sorted by listener_id
  double overall_mean = 0.0;
};

/// Equal-width bins over [0, 100]; the last bin is closed so 100 is counted.
CorrectnessHistogram ComputeCorrectnessHistogram(
    const std::vector<UtteranceRecord>& records, int bin_count);

void WriteHistogramCsv(const std::filesystem::path& path,
                       const CorrectnessHistogram& h);
void WriteListenerMeansCsv(const std::filesystem::path& path,
                           const CorrectnessHistogram& h);

}  // namespace sipred

#endif  // SIPRED_CORPUS_H_
