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

#include "sipred/pipeline.h"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>

#include <fmt/format.h>

#include "sipred/error.h"
#include "sipred/feature_cache.h"
#include "sipred/parallel.h"
#include "sipred/util.h"

#ifndef SIPRED_VERSION
#define SIPRED_VERSION "0.0.0"
#endif
#ifndef SIPRED_GIT_DESCRIBE
#define SIPRED_GIT_DESCRIBE "unknown"
#endif

namespace sipred {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string VersionString() {
  return std::string(SIPRED_VERSION) + "+" + SIPRED_GIT_DESCRIBE;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw InvalidArgument(Name("") + " must be an object");
  }

  const json* Get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::optional<std::string> String(const std::string& key) {
    const json* v = Get(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw InvalidArgument(Name(key) + " must be a string");
    return v->get<std::string>();
  }
  std::optional<int64_t> Int(const std::string& key) {
    const json* v = Get(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) throw InvalidArgument(Name(key) + " must be an integer");
    return v->get<int64_t>();
  }
  std::optional<uint64_t> Unsigned(const std::string& key) {
    const json* v = Get(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<int64_t>() < 0))
      throw InvalidArgument(Name(key) + " must be a non-negative integer");
    return v->get<uint64_t>();
  }
  std::optional<double> Number(const std::string& key) {
    const json* v = Get(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) throw InvalidArgument(Name(key) + " must be a number");
    return v->get<double>();
  }
  std::optional<bool> Bool(const std::string& key) {
    const json* v = Get(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) throw InvalidArgument(Name(key) + " must be a boolean");
    return v->get<bool>();
  }

  // Call after all Get()s.
  void RejectUnknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw InvalidArgument("unknown key " + Name(it.key()));
  }

  std::string Name(const std::string& key) const {
    if (prefix_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

fs::path Resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path.lexically_normal() : (base / path).lexically_normal();
}

int ToInt(int64_t v, const std::string& name) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw InvalidArgument(name + " is out of range");
  return static_cast<int>(v);
}

BackendSpec ParseBackend(const json& j, size_t index, const fs::path& base) {
  ObjectReader r(j, "backends[" + std::to_string(index) + "]");
  BackendSpec b;
  auto id = r.String("id");
  if (!id || id->empty()) throw InvalidArgument(r.Name("id") + " is required");
  b.id = *id;
  if (auto t = r.String("type")) b.type = *t;
  if (b.type == "mock") {
    b.mock.backend_id = b.id;
    if (auto known = FindKnownBackend(b.id)) {
      b.mock.fe_dim = known->fe_dim;
      b.mock.ol_dim = known->ol_dim;
      b.mock.hop = known->frame_hop;
      b.mock.sample_rate = known->expected_sample_rate;
    }
    if (auto v = r.Unsigned("seed")) b.mock.seed = *v;
    if (auto v = r.Int("fe_dim")) b.mock.fe_dim = ToInt(*v, r.Name("fe_dim"));
    if (auto v = r.Int("ol_dim")) b.mock.ol_dim = ToInt(*v, r.Name("ol_dim"));
    if (auto v = r.Int("hop")) b.mock.hop = ToInt(*v, r.Name("hop"));
    if (auto v = r.Int("hidden_channels"))
      b.mock.hidden_channels = ToInt(*v, r.Name("hidden_channels"));
    if (auto v = r.Int("sample_rate")) b.mock.sample_rate = ToInt(*v, r.Name("sample_rate"));
    if (auto known = FindKnownBackend(b.id);
        known && (b.mock.fe_dim != known->fe_dim || b.mock.ol_dim != known->ol_dim))
      throw InvalidArgument(r.Name("fe_dim") + "/ol_dim of '" + b.id + "' must match the registry (" +
                            std::to_string(known->fe_dim) + ", " +
                            std::to_string(known->ol_dim) + ")");
  } else if (b.type == "plugin") {
    auto lib = r.String("library");
    if (!lib) throw InvalidArgument(r.Name("library") + " is required for plug-ins");
    fs::path lib_path(*lib);
    if (lib_path.is_relative()) {
      const char* root = std::getenv(BackendRegistry::kModelRootEnv);
      lib_path = Resolve(root && *root ? fs::path(root) : base, *lib);
    }
    b.library = lib_path;
    if (const json* o = r.Get("options")) {
      if (!o->is_object()) throw InvalidArgument(r.Name("options") + " must be an object");
      b.options = *o;
    }
  } else {
    throw InvalidArgument(r.Name("type") + " must be \"mock\" or \"plugin\"");
  }
  r.RejectUnknown();
  return b;
}

std::string_view SplitModeName(SplitMode m) {
  return m == SplitMode::kUniform ? "uniform" : "listener_disjoint";
}

SplitMode ParseSplitMode(std::string_view s) {
  if (s == "uniform") return SplitMode::kUniform;
  if (s == "listener_disjoint") return SplitMode::kListenerDisjoint;
  throw InvalidArgument("split.mode must be \"uniform\" or \"listener_disjoint\"");
}

}  // namespace

RunConfig RunConfig::FromJson(const json& j, const fs::path& base_dir) {
  RunConfig c;
  ObjectReader r(j, "");
  if (auto v = r.String("track")) c.track = ParseTrack(*v);
  if (auto v = r.String("signal_kind")) c.signal_kind = ParseSignalKind(*v);
  if (auto v = r.String("feature_binding")) c.binding = FeatureBinding::Parse(*v);
  if (auto v = r.Unsigned("seed")) c.seed = *v;
  if (auto v = r.Int("jobs")) c.jobs = ToInt(*v, "jobs");

  const json* paths = r.Get("paths");
  if (!paths) throw InvalidArgument("paths is required");
  {
    ObjectReader p(*paths, "paths");
    auto need = [&](const char* key) {
      auto v = p.String(key);
      if (!v) throw InvalidArgument(p.Name(key) + " is required");
      return Resolve(base_dir, *v);
    };
    c.paths.manifest = need("manifest");
    c.paths.audio_root = need("audio_root");
    c.paths.cache_dir = need("cache_dir");
    c.paths.out_dir = need("out_dir");
    if (auto v = p.String("test_manifest")) c.paths.test_manifest = Resolve(base_dir, *v);
    if (auto v = p.String("listeners")) c.paths.listeners = Resolve(base_dir, *v);
    p.RejectUnknown();
  }
  if (const json* v = r.Get("audio_layout")) {
    ObjectReader a(*v, "audio_layout");
    if (auto s = a.String("enhanced")) c.layout.enhanced = *s;
    if (auto s = a.String("hls")) c.layout.hls = *s;
    if (auto s = a.String("clean")) c.layout.clean = *s;
    a.RejectUnknown();
  }
  if (const json* v = r.Get("backends")) {
    if (!v->is_array()) throw InvalidArgument("backends must be an array");
    for (size_t i = 0; i < v->size(); ++i)
      c.backends.push_back(ParseBackend((*v)[i], i, base_dir));
  }
  if (const json* v = r.Get("spectrogram")) {
    ObjectReader s(*v, "spectrogram");
    if (auto x = s.Int("sample_rate")) c.spectrogram.sample_rate = ToInt(*x, s.Name("sample_rate"));
    if (auto x = s.Number("window_ms")) c.spectrogram.window_ms = *x;
    if (auto x = s.Number("hop_ms")) c.spectrogram.hop_ms = *x;
    if (auto x = s.Int("fft_size")) c.spectrogram.fft_size = ToInt(*x, s.Name("fft_size"));
    s.RejectUnknown();
  }
  if (const json* v = r.Get("model")) {
    ObjectReader m(*v, "model");
    if (auto x = m.Int("blstm_layers")) c.model.blstm_layers = ToInt(*x, m.Name("blstm_layers"));
    if (auto x = m.Int("hidden")) c.model.hidden = ToInt(*x, m.Name("hidden"));
    if (auto x = m.Int("attention_hidden"))
      c.model.attention_hidden = ToInt(*x, m.Name("attention_hidden"));
    m.RejectUnknown();
  }
  if (const json* v = r.Get("split")) {
    ObjectReader s(*v, "split");
    if (auto x = s.Number("validation_fraction")) c.validation_fraction = *x;
    if (auto x = s.String("mode")) c.split_mode = ParseSplitMode(*x);
    s.RejectUnknown();
  }
  if (const json* v = r.Get("train")) {
    if (!v->is_object()) throw InvalidArgument("train must be an object");
    for (const char* k : {"seed", "signal_kind", "binding"})
      if (v->contains(k))
        throw InvalidArgument(std::string("train.") + k +
                              " is set by the top-level field of the same meaning");
    c.train = TrainConfig::FromJson(*v);
  }
  if (const json* v = r.Get("evaluation")) {
    ObjectReader e(*v, "evaluation");
    if (auto x = e.String("var_definition")) c.var_definition = ParseErrorVarDefinition(*x);
    if (auto x = e.Int("histogram_bins")) c.histogram_bins = ToInt(*x, e.Name("histogram_bins"));
    if (auto x = e.String("model_name")) c.model_name = *x;
    e.RejectUnknown();
  }
  if (const json* v = r.Get("distances")) {
    ObjectReader d(*v, "distances");
    if (const json* kinds = d.Get("signal_kinds")) {
      if (!kinds->is_array() || kinds->empty())
        throw InvalidArgument("distances.signal_kinds must be a non-empty array");
      c.distance_signal_kinds.clear();
      for (const auto& k : *kinds) {
        if (!k.is_string())
          throw InvalidArgument("distances.signal_kinds entries must be strings");
        c.distance_signal_kinds.push_back(ParseSignalKind(k.get<std::string>()));
      }
    }
    if (auto x = d.Bool("lag_search")) c.align.lag_search = *x;
    if (auto x = d.Int("max_lag_frames"))
      c.align.max_lag_frames = ToInt(*x, d.Name("max_lag_frames"));
    d.RejectUnknown();
  }
  r.RejectUnknown();
  c.Finalize();
  return c;
}

RunConfig RunConfig::Load(const fs::path& path) {
  json j;
  try {
    j = json::parse(ReadTextFile(path));
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  fs::path base = fs::absolute(path).parent_path();
  try {
    return FromJson(j, base);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("config '" + path.string() + "': " + e.what());
  }
}

void RunConfig::Finalize() {
  layout.audio_root = paths.audio_root;
  train.seed = seed;
  train.signal_kind = signal_kind;
  train.binding = binding;
  train.Validate();
  if (jobs < 1) throw InvalidArgument("jobs must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw InvalidArgument("split.validation_fraction must lie in (0, 1)");
  if (histogram_bins < 1) throw InvalidArgument("evaluation.histogram_bins must be >= 1");
  if (align.max_lag_frames < 0)
    throw InvalidArgument("distances.max_lag_frames must be >= 0");
  if (spectrogram.fft_size < spectrogram.window_samples() ||
      spectrogram.window_samples() < 1 || spectrogram.hop_samples() < 1)
    throw InvalidArgument("spectrogram: need 1 <= window <= fft_size and hop >= 1");
  std::set<std::string> ids;
  for (const auto& b : backends) {
    if (b.id == kSpectrogramBackendId)
      throw InvalidArgument("backend id 'spec' is reserved for spectrograms");
    if (!ids.insert(b.id).second)
      throw InvalidArgument("backend '" + b.id + "' is declared twice");
  }
  if (!binding.is_spectrogram() && !ids.count(binding.backend_id))
    throw InvalidArgument("feature_binding uses backend '" + binding.backend_id +
                          "', which is not declared under backends");
  if (model_name.empty()) model_name = binding.ToString();
  auto must_exist = [](const fs::path& p, const char* what) {
    if (!fs::exists(p))
      throw InvalidArgument(std::string(what) + " '" + p.string() + "' does not exist");
  };
  must_exist(paths.manifest, "paths.manifest");
  must_exist(paths.audio_root, "paths.audio_root");
  if (paths.test_manifest) must_exist(*paths.test_manifest, "paths.test_manifest");
  if (paths.listeners) must_exist(*paths.listeners, "paths.listeners");
}

ojson RunConfig::ToJson() const {
  ojson j;
  j["track"] = std::string(TrackName(track));
  j["signal_kind"] = std::string(SignalKindName(signal_kind));
  j["feature_binding"] = binding.ToString();
  j["seed"] = seed;
  j["jobs"] = jobs;
  ojson p;
  p["manifest"] = paths.manifest.string();
  p["audio_root"] = paths.audio_root.string();
  p["cache_dir"] = paths.cache_dir.string();
  p["out_dir"] = paths.out_dir.string();
  if (paths.test_manifest) p["test_manifest"] = paths.test_manifest->string();
  if (paths.listeners) p["listeners"] = paths.listeners->string();
  j["paths"] = p;
  j["audio_layout"] = {{"enhanced", layout.enhanced},
                       {"hls", layout.hls},
                       {"clean", layout.clean}};
  ojson bs = ojson::array();
  for (const auto& b : backends) {
    ojson o;
    o["id"] = b.id;
    o["type"] = b.type;
    if (b.type == "mock") {
      o["seed"] = b.mock.seed;
      o["fe_dim"] = b.mock.fe_dim;
      o["ol_dim"] = b.mock.ol_dim;
      o["hop"] = b.mock.hop;
      o["hidden_channels"] = b.mock.hidden_channels;
      o["sample_rate"] = b.mock.sample_rate;
    } else {
      o["library"] = b.library.string();
      o["options"] = ojson::parse(b.options.dump());
    }
    bs.push_back(o);
  }
  j["backends"] = bs;
  j["spectrogram"] = {{"sample_rate", spectrogram.sample_rate},
                      {"window_ms", spectrogram.window_ms},
                      {"hop_ms", spectrogram.hop_ms},
                      {"fft_size", spectrogram.fft_size}};
  ojson m = ojson::object();
  if (model.blstm_layers) m["blstm_layers"] = *model.blstm_layers;
  if (model.hidden) m["hidden"] = *model.hidden;
  if (model.attention_hidden) m["attention_hidden"] = *model.attention_hidden;
  j["model"] = m;
  j["split"] = {{"validation_fraction", validation_fraction},
                {"mode", std::string(SplitModeName(split_mode))}};
  ojson t = train.ToJson();
  t.erase("seed");
  t.erase("signal_kind");
  t.erase("binding");
  j["train"] = t;
  j["evaluation"] = {{"var_definition", std::string(ErrorVarDefinitionName(var_definition))},
                     {"histogram_bins", histogram_bins},
                     {"model_name", model_name}};
  ojson kinds = ojson::array();
  for (auto k : distance_signal_kinds) kinds.push_back(std::string(SignalKindName(k)));
  j["distances"] = {{"signal_kinds", kinds},
                    {"lag_search", align.lag_search},
                    {"max_lag_frames", align.max_lag_frames}};
  return j;
}

void ApplyOverrides(RunConfig& config, const RunOverrides& o) {
  const bool default_name = config.model_name == config.binding.ToString();
  if (o.track) config.track = ParseTrack(*o.track);
  if (o.signal_kind) config.signal_kind = ParseSignalKind(*o.signal_kind);
  if (o.binding) config.binding = FeatureBinding::Parse(*o.binding);
  if (o.seed) config.seed = *o.seed;
  if (o.jobs) config.jobs = *o.jobs;
  if (default_name) config.model_name.clear();
  config.Finalize();
}

fs::path DefaultCheckpointPath(const RunConfig& config) {
  return config.paths.out_dir / "train" / "model.sipm";
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

void BuildRegistry(const RunConfig& config, BackendRegistry& registry) {
  for (const auto& b : config.backends) {
    if (b.type == "mock")
      registry.RegisterMock(b.mock);
    else
      registry.DeclarePlugin(b.id, b.library, b.options.dump());
  }
}

ManifestLoad LoadChecked(const RunConfig& config, const fs::path& manifest,
                         std::ostream& log) {
  ManifestLoad m = LoadManifest(manifest, config.track, config.layout,
                                config.paths.listeners);
  for (const auto& w : m.warnings) log << "warning: " << manifest.string() << ": " << w << "\n";
  for (const auto& d : m.rejected)
    log << "warning: rejected record " << d.utterance_id << ": " << d.message << "\n";
  return m;
}

struct Dataset {
  std::vector<UtteranceRecord> all;  // training manifest
  DatasetSplit split;
  std::vector<UtteranceRecord> evaluation;  // test manifest, or validation split
};

Dataset LoadDataset(const RunConfig& config, std::ostream& log) {
  Dataset d;
  d.all = LoadChecked(config, config.paths.manifest, log).records;
  if (d.all.size() < 2)
    throw InvalidArgument("manifest '" + config.paths.manifest.string() +
                          "' has fewer than 2 usable records");
  d.split = MakeSplit(d.all, config.validation_fraction, config.seed, config.split_mode);
  if (config.paths.test_manifest) {
    d.evaluation = LoadChecked(config, *config.paths.test_manifest, log).records;
    d.split.test = d.evaluation;
  } else {
    d.evaluation = d.split.validation;
  }
  return d;
}

int ExtractorHop(const FeatureExtractor& ex,
                 const std::shared_ptr<const FeatureBackend>& backend,
                 const SpectrogramOptions& spec) {
  if (ex.binding().is_spectrogram()) return spec.hop_samples();
  return backend->descriptor().frame_hop;
}

std::string JoinedIdsDigest(const std::vector<UtteranceRecord>& records) {
  std::string s;
  for (const auto& r : records) s += r.utterance_id + "\n";
  return Sha256Hex(s);
}

void CreateDir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------
// extract

ExtractSummary CmdExtract(const RunConfig& config, std::ostream& log) {
  BackendRegistry registry;
  BuildRegistry(config, registry);
  std::shared_ptr<const FeatureBackend> backend;
  if (!config.binding.is_spectrogram()) backend = registry.Resolve(config.binding.backend_id);
  FeatureExtractor extractor(config.binding, backend, config.spectrogram);
  const int hop = ExtractorHop(extractor, backend, config.spectrogram);
  const std::string fingerprint = extractor.Fingerprint();

  std::vector<UtteranceRecord> records =
      LoadChecked(config, config.paths.manifest, log).records;
  if (config.paths.test_manifest) {
    std::set<std::string> seen;
    for (const auto& r : records) seen.insert(r.utterance_id);
    for (auto& r : LoadChecked(config, *config.paths.test_manifest, log).records)
      if (seen.insert(r.utterance_id).second) records.push_back(std::move(r));
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.utterance_id < b.utterance_id;
  });

  CreateDir(config.paths.cache_dir);
  FeatureCache cache(config.paths.cache_dir);
  struct Slot {
    size_t written = 0, skipped = 0;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(records.size());
  const SignalKind signal = config.signal_kind;
  ParallelFor(records.size(), config.jobs, [&](size_t i) {
    const UtteranceRecord& r = records[i];
    Slot& s = slots[i];
    try {
      const fs::path& audio = r.audio_for(signal);
      const std::string key = FeatureCache::ContentKey(Sha256File(audio), fingerprint);
      bool all_valid = cache.IsValid(signal, r.utterance_id, Channel::kLeft,
                                     config.binding, key);
      Waveform w = LoadWaveform(audio, extractor.sample_rate());
      const auto channels = w.num_channels();
      if (channels > 1)
        all_valid = all_valid && cache.IsValid(signal, r.utterance_id, Channel::kRight,
                                               config.binding, key);
      if (all_valid) {
        s.skipped = channels;
        return;
      }
      // Extract every channel before storing any, so a failure leaves no
      // half-populated utterance behind.
      std::vector<FeatureMatrix> feats;
      for (size_t c = 0; c < channels; ++c)
        feats.push_back(extractor(w, static_cast<Channel>(c)));
      for (size_t c = 0; c < channels; ++c)
        cache.Store(signal, r.utterance_id, static_cast<Channel>(c), config.binding, key,
                    hop, feats[c]);
      s.written = channels;
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });

  ExtractSummary sum;
  sum.utterances = records.size();
  for (size_t i = 0; i < records.size(); ++i) {
    sum.written += slots[i].written;
    sum.skipped += slots[i].skipped;
    if (slots[i].error) sum.failures.push_back({records[i].utterance_id, *slots[i].error});
  }
  for (const auto& f : sum.failures)
    log << "error: " << f.utterance_id << ": " << f.message << "\n";
  log << fmt::format("extract {}: {} utterances, wrote {}, skipped {}, failed {}\n",
                     config.binding.ToString(), sum.utterances, sum.written, sum.skipped,
                     sum.failures.size());

  ojson j;
  j["binding"] = config.binding.ToString();
  j["signal_kind"] = std::string(SignalKindName(signal));
  j["fingerprint_sha256"] = Sha256Hex(fingerprint);
  j["utterances"] = sum.utterances;
  j["written"] = sum.written;
  j["skipped"] = sum.skipped;
  ojson fails = ojson::array();
  for (const auto& f : sum.failures)
    fails.push_back({{"utterance_id", f.utterance_id}, {"message", f.message}});
  j["failures"] = fails;
  CreateDir(config.paths.out_dir);
  WriteFileAtomic(config.paths.out_dir / "extract_summary.json", j.dump(2) + "\n");
  return sum;
}

// ---------------------------------------------------------------------------
// distances

DistanceSummary CmdDistanceStudy(const RunConfig& config, std::ostream& log) {
  BackendRegistry registry;
  BuildRegistry(config, registry);
  std::vector<std::shared_ptr<const FeatureBackend>> backends;
  for (const auto& b : config.backends) backends.push_back(registry.Resolve(b.id));

  std::vector<UtteranceRecord> records =
      LoadChecked(config, config.paths.manifest, log).records;
  DistanceStudyOptions opts;
  opts.spectrogram = config.spectrogram;
  opts.align = config.align;
  opts.jobs = config.jobs;
  const int rate = config.spectrogram.sample_rate;
  opts.load_audio = [rate](const fs::path& p) { return LoadWaveform(p, rate); };
  std::set<SignalKind> kinds(config.distance_signal_kinds.begin(),
                             config.distance_signal_kinds.end());
  DistanceStudy study = RunDistanceStudy(records, backends, kinds, opts);

  DistanceSummary sum;
  for (const auto& d : study.diagnostics) {
    sum.failures.push_back({d.utterance_id, d.message});
    log << "error: " << d.utterance_id << ": " << d.message << "\n";
  }
  const fs::path dir = config.paths.out_dir / "distances";
  CreateDir(dir);
  sum.distances_csv = dir / "distances.csv";
  sum.correlations_csv = dir / "correlations.csv";
  sum.rows = study.results.size();
  WriteDistanceCsv(sum.distances_csv, study.results);
  sum.correlations = CorrelateWithCorrectness(study.results, records);
  WriteCorrelationCsv(sum.correlations_csv, sum.correlations);
  for (const auto& c : sum.correlations) {
    if (!c.defined())
      log << "warning: correlation undefined for " << c.representation << " "
          << DistanceMeasureName(c.measure) << " (constant input)\n";
  }
  log << fmt::format("distances: {} values, {} correlation rows, {} failures\n", sum.rows,
                     sum.correlations.size(), sum.failures.size());
  return sum;
}

// ---------------------------------------------------------------------------
// train

namespace {

ModelConfig ResolveModelConfig(const RunConfig& config, int feature_dim) {
  ModelConfig m = ModelConfig::ForFeatureDim(feature_dim);
  if (config.model.blstm_layers) m.blstm_layers = *config.model.blstm_layers;
  if (config.model.hidden) {
    m.hidden = *config.model.hidden;
    m.attention_hidden = 2 * m.embed_dim();
  }
  if (config.model.attention_hidden) m.attention_hidden = *config.model.attention_hidden;
  m.Validate();
  return m;
}

int BindingFeatureDim(const RunConfig& config) {
  BackendRegistry registry;
  BuildRegistry(config, registry);
  return MakeExtractor(config.binding, registry, config.spectrogram).feature_dim();
}

ojson FileDigest(const fs::path& p) {
  return {{"path", p.string()}, {"sha256", Sha256File(p)}};
}

}  // namespace

TrainSummary CmdTrain(const RunConfig& config, std::ostream& log) {
  Dataset data = LoadDataset(config, log);
  const int feature_dim = BindingFeatureDim(config);
  const ModelConfig mc = ResolveModelConfig(config, feature_dim);
  PredictorModel initial = PredictorModel::Build(mc, config.seed);
  initial.set_binding(config.binding);

  const fs::path dir = config.paths.out_dir / "train";
  CreateDir(dir);
  TrainSummary sum;
  sum.checkpoint = DefaultCheckpointPath(config);
  sum.log_csv = dir / "trainlog.csv";
  sum.run_manifest = dir / "run_manifest.json";
  sum.parameter_count = initial.parameter_count();
  log << fmt::format("train {}: F={}, {} parameters, {} train / {} validation, seed {}\n",
                     config.binding.ToString(), feature_dim, sum.parameter_count,
                     data.split.train.size(), data.split.validation.size(), config.seed);

  TrainHooks hooks;
  hooks.on_epoch_end = [&log](const EpochRecord& e) {
    log << fmt::format("epoch {:3d}  loss {}  val_rmse {}\n", e.epoch,
                       FormatFixed(e.train_loss, 6), FormatFixed(e.validation_rmse, 4));
  };
  FeatureProvider provider = CacheFeatureProvider(FeatureCache(config.paths.cache_dir),
                                                  config.signal_kind, config.binding);
  TrainResult result = Train(initial, data.split, config.train, provider, hooks,
                             sum.checkpoint);
  SaveCheckpoint(sum.checkpoint, result.model);
  result.log.final_checkpoint = sum.checkpoint;
  WriteTrainLogCsv(sum.log_csv, result.log);
  sum.log = result.log;

  ojson m;
  m["command"] = "train";
  m["version"] = VersionString();
  m["seed"] = config.seed;
  m["config"] = config.ToJson();
  ojson data_j;
  data_j["manifest"] = FileDigest(config.paths.manifest);
  if (config.paths.test_manifest) data_j["test_manifest"] = FileDigest(*config.paths.test_manifest);
  if (config.paths.listeners) data_j["listeners"] = FileDigest(*config.paths.listeners);
  data_j["train_ids_sha256"] = JoinedIdsDigest(data.split.train);
  data_j["validation_ids_sha256"] = JoinedIdsDigest(data.split.validation);
  data_j["n_train"] = data.split.train.size();
  data_j["n_validation"] = data.split.validation.size();
  m["dataset"] = data_j;
  m["model"] = {{"feature_dim", mc.feature_dim},
                {"blstm_layers", mc.blstm_layers},
                {"hidden", mc.hidden},
                {"attention_hidden", mc.attention_hidden},
                {"parameter_count", sum.parameter_count}};
  const auto& best = result.log.epochs.at(result.log.best_epoch - 1);
  m["result"] = {{"epochs_run", result.log.epochs.size()},
                 {"best_epoch", result.log.best_epoch},
                 {"best_validation_rmse", best.validation_rmse},
                 {"stopped_early", result.log.stopped_early},
                 {"checkpoint", sum.checkpoint.string()},
                 {"checkpoint_sha256", Sha256File(sum.checkpoint)}};
  WriteFileAtomic(sum.run_manifest, m.dump(2) + "\n");
  log << fmt::format("best epoch {} (val_rmse {}), checkpoint {}\n", result.log.best_epoch,
                     FormatFixed(best.validation_rmse, 4), sum.checkpoint.string());
  return sum;
}

// ---------------------------------------------------------------------------
// evaluate / report

namespace {

std::vector<GroupBreakdown> Breakdowns(const std::vector<Prediction>& preds,
                                       const Dataset& data) {
  std::vector<GroupBreakdown> out;
  for (GroupKind k : {GroupKind::kSystem, GroupKind::kListener})
    out.push_back(Breakdown(preds, data.evaluation, k, GroupIds(data.split.train, k)));
  return out;
}

void LogMetrics(std::ostream& log, const std::string& name, const MetricSummary& s) {
  auto opt = [](const std::optional<double>& v) {
    return v ? FormatFixed(*v, 4) : std::string("undefined");
  };
  log << fmt::format("{}: rmse {}  var {} ({})  spearman {}  pearson {}  n {}\n", name,
                     FormatFixed(s.rmse, 4), FormatFixed(s.error_var, 6),
                     ErrorVarDefinitionName(s.var_definition), opt(s.spearman),
                     opt(s.pearson), s.n);
}

}  // namespace

EvaluateSummary CmdEvaluate(const RunConfig& config,
                            const std::optional<fs::path>& checkpoint,
                            std::ostream& log) {
  const fs::path ckpt = checkpoint.value_or(DefaultCheckpointPath(config));
  PredictorModel model = LoadCheckpoint(ckpt);
  if (!(model.binding() == config.binding))
    throw InvalidArgument("checkpoint '" + ckpt.string() + "' is bound to " +
                          model.binding().ToString() + ", config asks for " +
                          config.binding.ToString());
  const int feature_dim = BindingFeatureDim(config);
  if (feature_dim != model.config().feature_dim)
    throw ShapeMismatch("checkpoint '" + ckpt.string() + "' expects F=" +
                        std::to_string(model.config().feature_dim) + ", binding " +
                        config.binding.ToString() + " produces F=" +
                        std::to_string(feature_dim));

  Dataset data = LoadDataset(config, log);
  FeatureProvider provider = CacheFeatureProvider(FeatureCache(config.paths.cache_dir),
                                                  config.signal_kind, config.binding);
  std::vector<Prediction> preds = PredictRecords(model, data.evaluation, provider);

  const fs::path dir = config.paths.out_dir / "evaluate";
  CreateDir(dir);
  EvaluateSummary sum;
  sum.predictions_csv = dir / "predictions.csv";
  WritePredictionsCsv(sum.predictions_csv, preds);
  sum.metrics = Score(preds, data.evaluation, config.var_definition);
  LogMetrics(log, config.model_name, sum.metrics);
  sum.report = RenderReport({{config.model_name, sum.metrics}}, Breakdowns(preds, data),
                            ComputeCorrectnessHistogram(data.all, config.histogram_bins),
                            dir / "report");
  for (const auto& w : sum.report.warnings) log << "warning: " << w << "\n";
  return sum;
}

ReportSummary CmdReport(
    const RunConfig& config,
    const std::vector<std::pair<std::string, fs::path>>& predictions,
    std::ostream& log) {
  if (predictions.empty()) throw InvalidArgument("report needs at least one predictions CSV");
  Dataset data = LoadDataset(config, log);
  ReportSummary sum;
  std::vector<GroupBreakdown> breakdowns;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& [name, path] = predictions[i];
    std::vector<Prediction> preds = ReadPredictionsCsv(path);
    MetricSummary s = Score(preds, data.evaluation, config.var_definition);
    LogMetrics(log, name, s);
    sum.metrics.push_back({name, s});
    if (i == 0) breakdowns = Breakdowns(preds, data);
  }
  sum.report = RenderReport(sum.metrics, breakdowns,
                            ComputeCorrectnessHistogram(data.all, config.histogram_bins),
                            config.paths.out_dir / "report");
  for (const auto& w : sum.report.warnings) log << "warning: " << w << "\n";
  return sum;
}

}  // namespace sipred
