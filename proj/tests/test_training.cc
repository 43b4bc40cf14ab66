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

#include <cmath>
#include <fstream>
#include <map>

#include "doctest.h"
#include "sipred/error.h"
#include "sipred/training.h"
#include "support/oracle.h"
#include "support/synth.h"

using namespace sipred;

namespace {

PredictorModel Tiny(uint64_t seed = 1) {
  ModelConfig c;
  c.feature_dim = 4;
  c.hidden = 3;
  c.attention_hidden = 4;
  return PredictorModel::Build(c, seed);
}

FeatureMatrix Wrap(Matrix v) {
  FeatureMatrix fm;
  fm.values = std::move(v);
  fm.frame_times.resize(fm.values.rows());
  for (size_t i = 0; i < fm.frame_times.size(); ++i) fm.frame_times[i] = 0.01 * i;
  return fm;
}

struct Toy {
  DatasetSplit split;
  std::map<std::string, std::vector<FeatureMatrix>> feats;
  FeatureProvider provider() const {
    return [this](const UtteranceRecord& r) { return feats.at(r.utterance_id); };
  }
};

// Features carry the label in their mean, so the task is learnable.
Toy MakeToy(size_t n_train, size_t n_val, uint64_t seed) {
  Toy t;
  Rng rng(seed);
  for (size_t i = 0; i < n_train + n_val; ++i) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.listener_id = "L" + std::to_string(i % 3);
    r.system_id = "E" + std::to_string(i % 2);
    r.correctness = std::round(100.0 * rng.Uniform());
    const double level = r.correctness / 50.0 - 1.0;
    std::vector<FeatureMatrix> ch;
    for (int c = 0; c < 2; ++c) {
      Matrix v = testing::RandomFeatures(rng, 4 + rng.Below(4), 4, 0.2);
      v.array() += level;
      ch.push_back(Wrap(v));
    }
    t.feats[r.utterance_id] = ch;
    (i < n_train ? t.split.train : t.split.validation).push_back(r);
  }
  return t;
}

}  // namespace

TEST_CASE("channel-summed loss decomposes") {
  Rng rng(12);
  auto m = Tiny(3);
  for (int i = 0; i < 100; ++i) {
    FeatureMatrix l = Wrap(testing::RandomFeatures(rng, 1 + rng.Below(8), 4));
    FeatureMatrix r = Wrap(testing::RandomFeatures(rng, 1 + rng.Below(8), 4));
    const double target = rng.Uniform();
    const double yl = testing::LoopForward(m, l.values);
    const double yr = testing::LoopForward(m, r.values);
    const double expect = (yl - target) * (yl - target) + (yr - target) * (yr - target);
    CHECK(std::abs(ChannelSummedLoss(m, l, &r, target) - expect) <= 1e-12);
  }
}

TEST_CASE("adam first step moves each weight by about lr against the gradient") {
  AdamOptimizer adam(0.01, 0.9, 0.999, 1e-8);
  Vector p(3), g(3);
  p << 1.0, 2.0, 3.0;
  g << 0.5, -2.0, 0.0;
  adam.Step(p, g);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(2.0 + 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[2] == 3.0);
}

TEST_CASE("training reduces validation error and returns the best epoch") {
  Toy toy = MakeToy(24, 8, 1);
  TrainConfig cfg;
  cfg.max_epochs = 25;
  cfg.learning_rate = 1e-2;
  cfg.patience = 25;
  cfg.seed = 5;
  auto result = Train(Tiny(2), toy.split, cfg, toy.provider());
  const auto& log = result.log;
  REQUIRE(log.best_epoch >= 1);
  CHECK(log.epochs.back().validation_rmse < log.epochs.front().validation_rmse);
  auto preds = PredictRecords(result.model, toy.split.validation, toy.provider());
  double sq = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const double e = 100 * preds[i].i_hat - toy.split.validation[i].correctness;
    sq += e * e;
  }
  CHECK(std::sqrt(sq / preds.size()) ==
        doctest::Approx(log.epochs[log.best_epoch - 1].validation_rmse).epsilon(1e-12));
  CHECK(*result.model.training_seed() == 5);
}

TEST_CASE("early stopping after patience epochs without improvement") {
  Toy toy = MakeToy(8, 4, 2);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 3;
  cfg.learning_rate = 1e-300;  // updates vanish, validation RMSE stays constant
  auto result = Train(Tiny(), toy.split, cfg, toy.provider());
  CHECK(result.log.stopped_early);
  CHECK(result.log.epochs.size() == 4);
  CHECK(result.log.best_epoch == 1);
}

TEST_CASE("training is deterministic") {
  Toy toy = MakeToy(16, 4, 3);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.learning_rate = 1e-2;
  cfg.seed = 9;
  auto a = Train(Tiny(), toy.split, cfg, toy.provider());
  auto b = Train(Tiny(), toy.split, cfg, toy.provider());
  CHECK(a.model.parameters() == b.model.parameters());
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (size_t i = 0; i < a.log.epochs.size(); ++i) {
    CHECK(a.log.epochs[i].train_loss == b.log.epochs[i].train_loss);
    CHECK(a.log.epochs[i].validation_rmse == b.log.epochs[i].validation_rmse);
  }
  cfg.seed = 10;
  auto c = Train(Tiny(), toy.split, cfg, toy.provider());
  CHECK(c.model.parameters() != a.model.parameters());
}

TEST_CASE("non-finite features abort naming the utterance") {
  Toy toy = MakeToy(4, 2, 4);
  toy.feats["u2"][0].values(0, 0) = std::nan("");
  TrainConfig cfg;
  cfg.max_epochs = 1;
  try {
    Train(Tiny(), toy.split, cfg, toy.provider());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("u2") != std::string::npos);
  }
}

TEST_CASE("missing cache entries point at extract") {
  testing::TempDir dir;
  Toy toy = MakeToy(4, 2, 5);
  TrainConfig cfg;
  auto provider = CacheFeatureProvider(FeatureCache(dir.path()), SignalKind::kEnhanced,
                                       FeatureBinding{});
  try {
    Train(Tiny(), toy.split, cfg, provider);
    FAIL("expected CacheMiss");
  } catch (const CacheMiss& e) {
    CHECK(std::string(e.what()).find("extract") != std::string::npos);
  }
}

TEST_CASE("train config json is strict and round trips") {
  TrainConfig c;
  c.max_epochs = 7;
  c.learning_rate = 3e-4;
  auto j = nlohmann::json::parse(c.ToJson().dump());
  TrainConfig back = TrainConfig::FromJson(j);
  CHECK(back.max_epochs == 7);
  CHECK(back.learning_rate == 3e-4);
  CHECK_THROWS_AS(TrainConfig::FromJson({{"epochs", 3}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::FromJson({{"max_epochs", 0}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::FromJson({{"loss", "l1"}}), InvalidArgument);
}

TEST_CASE("train log csv") {
  testing::TempDir dir;
  TrainLog log;
  log.epochs.push_back({1, 0.5, 30.0, std::nullopt, 0.1});
  log.epochs.push_back({2, 0.25, 20.0, 10.0, 0.2});
  WriteTrainLogCsv(dir.path() / "log.csv", log);
  std::ifstream in(dir.path() / "log.csv");
  std::string header, l1, l2;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(header == "epoch,train_loss,validation_rmse,train_rmse,wall_time_s");
  CHECK(l1 == "1,0.50000000,30.000000,,0.100");
  CHECK(l2 == "2,0.25000000,20.000000,10.000000,0.200");
}
