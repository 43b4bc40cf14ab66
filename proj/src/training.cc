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

#include "sipred/training.h"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "sipred/error.h"
#include "sipred/rng.h"
#include "sipred/util.h"

namespace sipred {

void TrainConfig::Validate() const {
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (loss != "mse") throw InvalidArgument("unsupported loss '" + loss + "'");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(epsilon > 0.0))
    throw InvalidArgument("invalid Adam hyperparameters");
}

nlohmann::ordered_json TrainConfig::ToJson() const {
  return {{"max_epochs", max_epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"patience", patience},
          {"seed", seed},
          {"loss", loss},
          {"optimizer", "adam"},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"signal_kind", std::string(SignalKindName(signal_kind))},
          {"binding", binding.ToString()},
          {"eval_train_each_epoch", eval_train_each_epoch}};
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("train config must be an object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    auto need = [&](bool ok, const char* type) {
      if (!ok) throw InvalidArgument("train." + k + " must be " + type);
    };
    if (k == "max_epochs") { need(v.is_number_integer(), "an integer"); c.max_epochs = v; }
    else if (k == "batch_size") { need(v.is_number_integer(), "an integer"); c.batch_size = v; }
    else if (k == "learning_rate") { need(v.is_number(), "a number"); c.learning_rate = v; }
    else if (k == "patience") { need(v.is_number_integer(), "an integer"); c.patience = v; }
    else if (k == "seed") { need(v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0), "a non-negative integer"); c.seed = v; }
    else if (k == "loss") { need(v.is_string(), "a string"); c.loss = v; }
    else if (k == "optimizer") {
      need(v.is_string() && v == "adam", "\"adam\"");
    }
    else if (k == "beta1") { need(v.is_number(), "a number"); c.beta1 = v; }
    else if (k == "beta2") { need(v.is_number(), "a number"); c.beta2 = v; }
    else if (k == "epsilon") { need(v.is_number(), "a number"); c.epsilon = v; }
    else if (k == "signal_kind") {
      need(v.is_string(), "a string");
      c.signal_kind = ParseSignalKind(v.get<std::string>());
    } else if (k == "binding") {
      need(v.is_string(), "a string");
      c.binding = FeatureBinding::Parse(v.get<std::string>());
    } else if (k == "eval_train_each_epoch") {
      need(v.is_boolean(), "a boolean");
      c.eval_train_each_epoch = v;
    } else {
      throw InvalidArgument("unknown key train." + k);
    }
  }
  c.Validate();
  return c;
}

FeatureProvider CacheFeatureProvider(FeatureCache cache, SignalKind signal,
                                     FeatureBinding binding) {
  return [cache = std::move(cache), signal,
          binding = std::move(binding)](const UtteranceRecord& r) {
    std::vector<FeatureMatrix> out;
    out.push_back(cache.Load(signal, r.utterance_id, Channel::kLeft, binding));
    if (cache.Contains(signal, r.utterance_id, Channel::kRight, binding))
      out.push_back(cache.Load(signal, r.utterance_id, Channel::kRight, binding));
    return out;
  };
}

double ChannelSummedLoss(const PredictorModel& model, const FeatureMatrix& left,
                         const FeatureMatrix* right, double target) {
  if (!(target >= 0.0 && target <= 1.0))
    throw InvalidArgument("target must lie in [0, 1]");
  auto loss = [&](const FeatureMatrix& f) {
    const double y = ForwardChannel(model, f);
    return (y - target) * (y - target);
  };
  double total = loss(left);
  if (right != nullptr) total += loss(*right);
  return total;
}

void AdamOptimizer::Step(Vector& params, const Vector& grad) {
  if (m_.size() == 0) {
    m_ = Vector::Zero(params.size());
    v_ = Vector::Zero(params.size());
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

std::vector<FeatureMatrix> FetchFeatures(const FeatureProvider& features,
                                         const UtteranceRecord& r) {
  std::vector<FeatureMatrix> f;
  try {
    f = features(r);
  } catch (const CacheMiss& e) {
    throw CacheMiss(std::string(e.what()) +
                    "; run `sipred extract` for this binding first");
  }
  if (f.empty() || f.size() > 2)
    throw Error("utterance " + r.utterance_id + ": expected 1 or 2 channels of features");
  return f;
}

double RmsePercent(const std::vector<Prediction>& preds,
                   const std::vector<UtteranceRecord>& records) {
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const double e = 100.0 * preds[i].i_hat - records[i].correctness;
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

std::vector<Prediction> Score(const PredictorModel& model,
                              const std::vector<UtteranceRecord>& records,
                              const FeatureProvider& features,
                              const std::function<void(const Prediction&)>& hook) {
  std::vector<Prediction> preds;
  preds.reserve(records.size());
  for (const auto& r : records) {
    auto f = FetchFeatures(features, r);
    Prediction p = PredictFeatures(model, r.utterance_id, f[0],
                                   f.size() > 1 ? &f[1] : nullptr);
    if (hook) hook(p);
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace

std::vector<Prediction> PredictRecords(const PredictorModel& model,
                                       const std::vector<UtteranceRecord>& records,
                                       const FeatureProvider& features) {
  return Score(model, records, features, nullptr);
}

TrainResult Train(const PredictorModel& initial, const DatasetSplit& split,
                  const TrainConfig& cfg, const FeatureProvider& features,
                  const TrainHooks& hooks,
                  const std::optional<std::filesystem::path>& checkpoint_path) {
  cfg.Validate();
  if (split.train.empty()) throw InvalidArgument("training partition is empty");
  if (split.validation.empty()) throw InvalidArgument("validation partition is empty");

  PredictorModel model = initial;
  model.set_binding(cfg.binding);
  model.set_training_seed(cfg.seed);
  PredictorModel best = model;
  AdamOptimizer adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

  TrainLog log;
  double best_rmse = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng::Stream(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)).Shuffle(order);

    double epoch_loss = 0.0;
    bool additivity_checked = false;
    for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      Vector grad = Vector::Zero(model.parameters().size());
      for (size_t k = b0; k < b1; ++k) {
        const UtteranceRecord& r = split.train[order[k]];
        const double target = NormalizeCorrectness(r.correctness);
        auto f = FetchFeatures(features, r);
        std::vector<double> channel_losses;
        double summed = 0.0;
        for (const auto& ch : f) {
          const double y = model.AccumulateGradient(
              ch.values, [&](double out) { return scale * 2.0 * (out - target); },
              grad);
          const double l = (y - target) * (y - target);
          channel_losses.push_back(l);
          summed += l;
        }
        if (!std::isfinite(summed) || !grad.allFinite())
          throw Error("non-finite loss at utterance " + r.utterance_id +
                      " (epoch " + std::to_string(epoch) + ")");
        if (!additivity_checked) {
          const double independent =
              ChannelSummedLoss(model, f[0], f.size() > 1 ? &f[1] : nullptr, target);
          if (std::abs(independent - summed) > 1e-12 * std::max(1.0, independent))
            throw Error("channel loss decomposition check failed at utterance " +
                        r.utterance_id);
          additivity_checked = true;
        }
        if (hooks.on_train_utterance)
          hooks.on_train_utterance(r.utterance_id, channel_losses, summed);
        epoch_loss += summed;
      }
      Vector params = model.parameters();
      adam.Step(params, grad);
      model.set_parameters(std::move(params));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(split.train.size());
    rec.validation_rmse = RmsePercent(
        Score(model, split.validation, features, hooks.on_validation_prediction),
        split.validation);
    if (cfg.eval_train_each_epoch)
      rec.train_rmse = RmsePercent(Score(model, split.train, features, nullptr),
                                   split.train);
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.validation_rmse))
      throw Error("non-finite validation RMSE at epoch " + std::to_string(epoch));
    log.epochs.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec);

    if (rec.validation_rmse < best_rmse) {
      best_rmse = rec.validation_rmse;
      best = model;
      log.best_epoch = epoch;
      since_best = 0;
      if (checkpoint_path) {
        SaveCheckpoint(*checkpoint_path, best);
        log.final_checkpoint = *checkpoint_path;
      }
    } else if (++since_best >= cfg.patience) {
      log.stopped_early = true;
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

void WriteTrainLogCsv(const std::filesystem::path& path, const TrainLog& log) {
  std::string out = "epoch,train_loss,validation_rmse,train_rmse,wall_time_s\n";
  for (const auto& e : log.epochs)
    out += std::to_string(e.epoch) + "," + FormatFixed(e.train_loss, 8) + "," +
           FormatFixed(e.validation_rmse, 6) + "," +
           (e.train_rmse ? FormatFixed(*e.train_rmse, 6) : std::string()) + "," +
           FormatFixed(e.wall_time_s, 3) + "\n";
  WriteFileAtomic(path, out);
}

}  // namespace sipred
