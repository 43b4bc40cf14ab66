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

#include "sipred/corpus.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "sipred/error.h"
#include "sipred/rng.h"
#include "sipred/util.h"

namespace sipred {

using nlohmann::json;

std::string_view TrackName(Track t) {
  return t == Track::kClosed ? "closed" : "open";
}

Track ParseTrack(std::string_view name) {
  if (name == "closed") return Track::kClosed;
  if (name == "open") return Track::kOpen;
  throw InvalidArgument("unknown track '" + std::string(name) +
                        "' (expected closed or open)");
}

std::string_view SignalKindName(SignalKind k) {
  return k == SignalKind::kEnhanced ? "enhanced" : "hls";
}

SignalKind ParseSignalKind(std::string_view name) {
  if (name == "enhanced") return SignalKind::kEnhanced;
  if (name == "hls") return SignalKind::kHls;
  throw InvalidArgument("unknown signal kind '" + std::string(name) +
                        "' (expected enhanced or hls)");
}

void Audiogram::Validate() const {
  if (frequencies_hz.size() != thresholds_db_hl.size())
    throw InvalidArgument("audiogram has " +
                          std::to_string(frequencies_hz.size()) +
                          " frequencies but " +
                          std::to_string(thresholds_db_hl.size()) +
                          " thresholds");
  for (size_t i = 0; i < frequencies_hz.size(); ++i) {
    if (!(frequencies_hz[i] > 0))
      throw InvalidArgument("audiogram frequency must be positive");
    if (i > 0 && !(frequencies_hz[i] > frequencies_hz[i - 1]))
      throw InvalidArgument("audiogram frequencies must be strictly increasing");
  }
}

const std::filesystem::path& UtteranceRecord::audio_for(SignalKind kind) const {
  if (kind == SignalKind::kEnhanced) return enhanced_audio;
  if (!hls_audio)
    throw InvalidArgument("utterance " + utterance_id +
                          " has no hearing-loss-simulated audio");
  return *hls_audio;
}

// ---------------------------------------------------------------------------
// Manifest adapter. Only this section knows the CPC1 field names.

namespace {

std::string Expand(std::string_view tmpl, const UtteranceRecord& r) {
  std::string out;
  for (size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      size_t close = tmpl.find('}', i);
      if (close == std::string_view::npos)
        throw InvalidArgument("unterminated placeholder in '" +
                              std::string(tmpl) + "'");
      std::string_view key = tmpl.substr(i + 1, close - i - 1);
      if (key == "signal") out += r.utterance_id;
      else if (key == "scene") out += r.scene_id;
      else if (key == "listener") out += r.listener_id;
      else if (key == "system") out += r.system_id;
      else
        throw InvalidArgument("unknown placeholder {" + std::string(key) +
                              "} in '" + std::string(tmpl) + "'");
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

std::filesystem::path Locate(const AudioLayout& layout, const std::string& rel) {
  std::filesystem::path p(rel);
  return p.is_absolute() ? p : layout.audio_root / p;
}

std::optional<std::string> StringField(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

ManifestLoad ParseManifest(std::string_view json_text, Track track,
                           const AudioLayout& layout,
                           std::string_view source_name) {
  ManifestLoad result;
  result.track = track;
  std::string text(json_text);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    result.warnings.push_back("manifest '" + std::string(source_name) +
                              "' is empty");
    return result;
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("cannot parse manifest '" + std::string(source_name) +
                  "': " + e.what());
  }
  if (!doc.is_array())
    throw IoError("manifest '" + std::string(source_name) +
                  "' must be a JSON array of trials");
  if (doc.empty())
    result.warnings.push_back("manifest '" + std::string(source_name) +
                              "' contains no trials");

  std::unordered_set<std::string> seen;
  for (size_t idx = 0; idx < doc.size(); ++idx) {
    const json& t = doc[idx];
    std::string id = "#" + std::to_string(idx);
    if (!t.is_object()) {
      result.rejected.push_back({id, "trial is not an object"});
      continue;
    }
    auto signal = StringField(t, "signal");
    if (signal) id = *signal;
    std::vector<std::string> missing;
    if (!signal) missing.push_back("signal");
    auto listener = StringField(t, "listener");
    if (!listener) missing.push_back("listener");
    auto system = StringField(t, "system");
    if (!system) missing.push_back("system");
    auto c = t.find("correctness");
    if (c == t.end() || !c->is_number()) missing.push_back("correctness");
    if (!missing.empty()) {
      std::string msg = "missing field(s):";
      for (const auto& m : missing) msg += " " + m;
      result.rejected.push_back({id, msg});
      continue;
    }
    double correctness = c->get<double>();
    if (!(correctness >= 0.0 && correctness <= 100.0)) {
      result.rejected.push_back(
          {id, "correctness " + FormatFixed(correctness, 3) + " outside [0,100]"});
      continue;
    }
    if (!seen.insert(*signal).second) {
      result.rejected.push_back({id, "duplicate signal id"});
      continue;
    }

    UtteranceRecord r;
    r.utterance_id = *signal;
    r.listener_id = *listener;
    r.system_id = *system;
    r.scene_id = StringField(t, "scene").value_or("");
    r.correctness = correctness;
    try {
      // Explicit locators override the layout templates.
      if (auto e = StringField(t, "enhanced_audio")) {
        r.enhanced_audio = Locate(layout, *e);
      } else {
        r.enhanced_audio = Locate(layout, Expand(layout.enhanced, r));
      }
      if (auto h = StringField(t, "hls_audio")) {
        r.hls_audio = Locate(layout, *h);
      } else if (!layout.hls.empty()) {
        r.hls_audio = Locate(layout, Expand(layout.hls, r));
      }
      if (auto cl = StringField(t, "clean_audio")) {
        r.clean_audio = Locate(layout, *cl);
      } else if (!layout.clean.empty() &&
                 (!r.scene_id.empty() ||
                  layout.clean.find("{scene}") == std::string::npos)) {
        r.clean_audio = Locate(layout, Expand(layout.clean, r));
      }
    } catch (const InvalidArgument& e) {
      result.rejected.push_back({id, e.what()});
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

namespace {

void AttachAudiograms(const std::filesystem::path& listeners_path,
                      ManifestLoad& load) {
  json doc;
  try {
    doc = json::parse(ReadTextFile(listeners_path));
  } catch (const json::parse_error& e) {
    throw IoError("cannot parse listener file '" + listeners_path.string() +
                  "': " + e.what());
  }
  for (auto& r : load.records) {
    auto it = doc.find(r.listener_id);
    if (it == doc.end()) {
      load.warnings.push_back("no audiogram for listener " + r.listener_id);
      continue;
    }
    try {
      auto cfs = it->at("audiogram_cfs").get<std::vector<double>>();
      Audiogram left{Channel::kLeft, cfs,
                     it->at("audiogram_levels_l").get<std::vector<double>>()};
      Audiogram right{Channel::kRight, cfs,
                      it->at("audiogram_levels_r").get<std::vector<double>>()};
      left.Validate();
      right.Validate();
      r.audiogram_left = std::move(left);
      r.audiogram_right = std::move(right);
    } catch (const json::exception& e) {
      load.warnings.push_back("malformed audiogram for listener " +
                              r.listener_id + ": " + e.what());
    } catch (const InvalidArgument& e) {
      load.warnings.push_back("invalid audiogram for listener " +
                              r.listener_id + ": " + e.what());
    }
  }
}

}  // namespace

ManifestLoad LoadManifest(const std::filesystem::path& path, Track track,
                          const AudioLayout& layout,
                          const std::optional<std::filesystem::path>&
                              listeners_path) {
  if (!std::filesystem::exists(path))
    throw IoError("manifest '" + path.string() + "' does not exist");
  ManifestLoad load =
      ParseManifest(ReadTextFile(path), track, layout, path.string());
  if (listeners_path) AttachAudiograms(*listeners_path, load);
  return load;
}

// ---------------------------------------------------------------------------

size_t ValidationCount(size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw InvalidArgument("validation fraction must lie in (0, 1)");
  // The product is computed in long double and nudged down so that exact
  // products such as 0.1 * 3580 are not pushed up by representation error.
  long double exact = static_cast<long double>(fraction) * n;
  size_t k = static_cast<size_t>(std::ceil(exact - 1e-9L));
  if (n >= 2) k = std::clamp<size_t>(k, 1, n - 1);
  return std::min(k, n);
}

DatasetSplit MakeSplit(const std::vector<UtteranceRecord>& records,
                       double validation_fraction, uint64_t seed,
                       SplitMode mode) {
  if (records.empty()) throw InvalidArgument("cannot split an empty record list");
  const size_t target = ValidationCount(records.size(), validation_fraction);

  std::vector<bool> in_validation(records.size(), false);
  Rng rng = Rng::Stream(seed, "split");
  if (mode == SplitMode::kUniform) {
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(order);
    for (size_t i = 0; i < target; ++i) in_validation[order[i]] = true;
  } else {
    // Whole listeners, in shuffled order, until the target is reached.
    std::set<std::string> listener_set;
    for (const auto& r : records) listener_set.insert(r.listener_id);
    std::vector<std::string> listeners(listener_set.begin(), listener_set.end());
    if (listeners.size() < 2)
      throw InvalidArgument("listener-disjoint split needs at least 2 listeners");
    rng.Shuffle(listeners);
    std::set<std::string> chosen;
    size_t count = 0;
    for (const auto& l : listeners) {
      if (count >= target || chosen.size() + 1 == listeners.size()) break;
      chosen.insert(l);
      for (const auto& r : records) count += r.listener_id == l;
    }
    for (size_t i = 0; i < records.size(); ++i)
      in_validation[i] = chosen.count(records[i].listener_id) > 0;
  }

  DatasetSplit split;
  split.seed = seed;
  for (size_t i = 0; i < records.size(); ++i)
    (in_validation[i] ? split.validation : split.train).push_back(records[i]);
  return split;
}

double NormalizeCorrectness(double percent) {
  if (!(percent >= 0.0 && percent <= 100.0))
    throw InvalidArgument("correctness " + FormatFixed(percent, 3) +
                          " outside [0, 100]");
  return percent / 100.0;
}

CorrectnessHistogram ComputeCorrectnessHistogram(
    const std::vector<UtteranceRecord>& records, int bin_count) {
  if (bin_count < 1) throw InvalidArgument("bin_count must be >= 1");
  if (records.empty()) throw InvalidArgument("histogram needs at least one record");
  CorrectnessHistogram h;
  const double width = 100.0 / bin_count;
  for (int b = 0; b < bin_count; ++b)
    h.bins.push_back({b * width, b + 1 == bin_count ? 100.0 : (b + 1) * width, 0});

  std::map<std::string, std::pair<double, size_t>> per_listener;
  double total = 0.0;
  for (const auto& r : records) {
    int b = static_cast<int>(std::floor(r.correctness / width));
    b = std::clamp(b, 0, bin_count - 1);
    h.bins[b].count++;
    auto& acc = per_listener[r.listener_id];
    acc.first += r.correctness;
    acc.second++;
    total += r.correctness;
  }
  for (const auto& [id, acc] : per_listener)
    h.listener_means.push_back({id, acc.first / acc.second, acc.second});
  h.overall_mean = total / records.size();
  return h;
}

void WriteHistogramCsv(const std::filesystem::path& path,
                       const CorrectnessHistogram& h) {
  std::string out = "bin_low,bin_high,count\n";
  for (const auto& b : h.bins)
    out += FormatFixed(b.low, 4) + "," + FormatFixed(b.high, 4) + "," +
           std::to_string(b.count) + "\n";
  WriteFileAtomic(path, out);
}

void WriteListenerMeansCsv(const std::filesystem::path& path,
                           const CorrectnessHistogram& h) {
  std::string out = "listener_id,mean_correctness,n\n";
  for (const auto& l : h.listener_means)
    out += CsvField(l.listener_id) + "," + FormatFixed(l.mean_correctness) + "," +
           std::to_string(l.n) + "\n";
  WriteFileAtomic(path, out);
}

}  // namespace sipred
