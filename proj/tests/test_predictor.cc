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

#include "doctest.h"
#include "sipred/error.h"
#include "sipred/predictor.h"
#include "sipred/rng.h"
#include "support/oracle.h"
#include "support/synth.h"

using namespace sipred;

namespace {

PredictorModel Tiny(uint64_t seed = 1, int f = 8) {
  ModelConfig c;
  c.feature_dim = f;
  c.hidden = 4;
  c.attention_hidden = 6;
  return PredictorModel::Build(c, seed);
}

FeatureMatrix Wrap(Matrix v) {
  FeatureMatrix fm;
  fm.values = std::move(v);
  fm.frame_times.resize(fm.values.rows());
  for (size_t i = 0; i < fm.frame_times.size(); ++i) fm.frame_times[i] = 0.01 * i;
  return fm;
}

}  // namespace

TEST_CASE("parameter counts") {
  for (int f : {8, 257, 513, 768, 1024}) {
    auto c = ModelConfig::ForFeatureDim(f);
    CHECK(c.hidden == f / 2);
    CHECK(ParameterCount(c) == testing::CountParameters(f, c.hidden, c.attention_hidden, 2));
  }
  CHECK(ParameterCount(ModelConfig::ForFeatureDim(1024)) == kReferenceParamsXlsrOutput);
  CHECK(ParameterCount(ModelConfig::ForFeatureDim(257)) == kReferenceParamsSpectrogram);
  CHECK(ParameterCount(ModelConfig::ForFeatureDim(513)) == 3682818);
  auto m = Tiny();
  CHECK(m.parameter_count() == ParameterCount(m.config()));
  size_t covered = 0;
  for (const auto& s : m.segments()) {
    CHECK(s.offset == covered);
    covered += s.size();
  }
  CHECK(covered == m.parameter_count());
}

TEST_CASE("forward pass equals the loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = Tiny(trial + 1);
    Matrix x = testing::RandomFeatures(rng, 1 + rng.Below(12), 8);
    CHECK(std::abs(m.Predict(x) - testing::LoopForward(m, x)) <= 1e-12);
  }
}

TEST_CASE("output lies in the open unit interval") {
  Rng rng(3);
  auto m = Tiny(4);
  for (int i = 0; i < 100; ++i) {
    double y = m.Predict(testing::RandomFeatures(rng, 1 + rng.Below(20), 8, 5.0));
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }
  // Saturating logit still stays inside.
  Vector p = m.parameters();
  const auto& ob = m.segment("out.b");
  p[ob.offset] = 1e6;
  m.set_parameters(p);
  double y = m.Predict(testing::RandomFeatures(rng, 3, 8));
  CHECK(y < 1.0);
  p[ob.offset] = -1e6;
  m.set_parameters(p);
  CHECK(m.Predict(testing::RandomFeatures(rng, 3, 8)) > 0.0);
}

TEST_CASE("better ear and channel permutation") {
  Rng rng(5);
  auto m = Tiny(6);
  for (int i = 0; i < 20; ++i) {
    FeatureMatrix l = Wrap(testing::RandomFeatures(rng, 6, 8));
    FeatureMatrix r = Wrap(testing::RandomFeatures(rng, 9, 8));
    Prediction p = PredictFeatures(m, "u", l, &r);
    Prediction q = PredictFeatures(m, "u", r, &l);
    CHECK(p.i_hat == std::max(m.Predict(l.values), m.Predict(r.values)));
    CHECK(p.i_hat == q.i_hat);
    CHECK(*p.right == q.left);
  }
  FeatureMatrix mono = Wrap(testing::RandomFeatures(rng, 5, 8));
  Prediction p = PredictFeatures(m, "u", mono);
  CHECK_FALSE(p.right.has_value());
  CHECK(p.i_hat == p.left);
}

TEST_CASE("shape and value preconditions") {
  auto m = Tiny();
  FeatureMatrix wrong = Wrap(Matrix::Zero(4, 9));
  CHECK_THROWS_AS(ForwardChannel(m, wrong), ShapeMismatch);
  CHECK_THROWS_AS(m.Predict(Matrix::Zero(0, 8)), InvalidArgument);
  Vector p = m.parameters();
  CHECK_THROWS_AS(m.set_parameters(Vector::Zero(3)), ShapeMismatch);
  p[0] = std::nan("");
  CHECK_THROWS_AS(m.set_parameters(p), InvalidArgument);
}

TEST_CASE("analytic gradient matches central differences") {
  Rng rng(7);
  auto m = Tiny(8);
  Matrix x = testing::RandomFeatures(rng, 7, 8);
  Vector grad = Vector::Zero(m.parameter_count());
  m.AccumulateGradient(x, [](double) { return 1.0; }, grad);
  const double h = 1e-5;
  for (int k = 0; k < 50; ++k) {
    const auto idx = static_cast<Eigen::Index>(rng.Below(m.parameter_count()));
    Vector p = m.parameters();
    auto probe = m;
    p[idx] += h;
    probe.set_parameters(p);
    const double up = probe.Predict(x);
    p[idx] -= 2 * h;
    probe.set_parameters(p);
    const double down = probe.Predict(x);
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grad[idx]), 1e-6});
    CHECK(std::abs(numeric - grad[idx]) / denom < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  auto m = Tiny(9);
  m.set_binding(FeatureBinding::Parse("hubert:fe"));
  m.set_training_seed(77);
  SaveCheckpoint(dir.path() / "m.sipm", m);
  PredictorModel back = LoadCheckpoint(dir.path() / "m.sipm");
  CHECK(back.config() == m.config());
  CHECK(back.binding() == m.binding());
  CHECK(back.parameters() == m.parameters());
  CHECK(*back.training_seed() == 77);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    Matrix x = testing::RandomFeatures(rng, 5, 8);
    CHECK(back.Predict(x) == m.Predict(x));
  }
  std::filesystem::resize_file(dir.path() / "m.sipm", 100);
  CHECK_THROWS(LoadCheckpoint(dir.path() / "m.sipm"));
}

TEST_CASE("initialization is seeded") {
  CHECK(Tiny(1).parameters() == Tiny(1).parameters());
  CHECK(Tiny(1).parameters() != Tiny(2).parameters());
}
