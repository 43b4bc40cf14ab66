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
#include <sstream>

#include "doctest.h"
#include "sipred/error.h"
#include "sipred/evaluation.h"
#include "sipred/rng.h"
#include "sipred/util.h"
#include "support/synth.h"

using namespace sipred;

namespace {

struct Set {
  std::vector<Prediction> preds;
  std::vector<UtteranceRecord> recs;
};

Set Make(const std::vector<double>& pred_pct, const std::vector<double>& true_pct,
         const std::vector<std::string>& systems = {}) {
  Set s;
  for (size_t i = 0; i < pred_pct.size(); ++i) {
    UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.listener_id = "L" + std::to_string(i % 2);
    r.system_id = systems.empty() ? "E1" : systems[i];
    r.correctness = true_pct[i];
    s.recs.push_back(r);
    s.preds.push_back(CombineChannels(r.utterance_id, pred_pct[i] / 100.0, std::nullopt));
  }
  return s;
}

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("perfect predictor and hand examples") {
  auto s = Make({10, 50, 90}, {10, 50, 90});
  auto m = Score(s.preds, s.recs);
  CHECK(m.rmse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(*m.spearman == doctest::Approx(1.0));
  CHECK(*m.pearson == doctest::Approx(1.0));
  CHECK(m.n == 3);

  auto t = Make({10, 20}, {20, 10});
  CHECK(Score(t.preds, t.recs).rmse == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("error variance definitions") {
  auto s = Make({10, 40, 60}, {20, 20, 60});
  // errors on 0-1 scale: -0.1, 0.2, 0.0
  std::vector<double> e{-0.1, 0.2, 0.0};
  double me = (e[0] + e[1] + e[2]) / 3;
  double ve = 0, msq = 0, vsq = 0;
  for (double x : e) ve += (x - me) * (x - me), msq += x * x;
  ve /= 3;
  msq /= 3;
  for (double x : e) vsq += (x * x - msq) * (x * x - msq);
  vsq /= 3;
  CHECK(Score(s.preds, s.recs).error_var == doctest::Approx(vsq).epsilon(1e-12));
  CHECK(Score(s.preds, s.recs, ErrorVarDefinition::kError01).error_var ==
        doctest::Approx(ve).epsilon(1e-12));
  CHECK(Score(s.preds, s.recs, ErrorVarDefinition::kError100).error_var ==
        doctest::Approx(1e4 * ve).epsilon(1e-12));
}

TEST_CASE("errors and undefined correlations") {
  auto s = Make({10, 20}, {20, 10});
  s.preds.push_back(CombineChannels("ghost", 0.5, std::nullopt));
  try {
    Score(s.preds, s.recs);
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
  auto one = Make({10}, {20});
  CHECK_THROWS_AS(Score(one.preds, one.recs), InvalidArgument);
  auto flat = Make({50, 50, 50}, {10, 20, 30});
  auto m = Score(flat.preds, flat.recs);
  CHECK_FALSE(m.spearman.has_value());
  CHECK_FALSE(m.pearson.has_value());
  CHECK(m.rmse > 0);
}

TEST_CASE("invariances of the summary") {
  Rng rng(4);
  std::vector<double> p, t;
  for (int i = 0; i < 30; ++i) {
    p.push_back(100 * rng.Uniform());
    t.push_back(std::round(100 * rng.Uniform()));
  }
  auto s = Make(p, t);
  auto base = Score(s.preds, s.recs);
  auto rev = s;
  std::reverse(rev.preds.begin(), rev.preds.end());
  CHECK(Score(rev.preds, rev.recs).rmse == doctest::Approx(base.rmse).epsilon(1e-14));
  // RMSE on 0-1 scale, computed by hand, times 100.
  double sq = 0;
  for (size_t i = 0; i < p.size(); ++i) sq += std::pow(p[i] / 100 - t[i] / 100, 2);
  CHECK(base.rmse == doctest::Approx(100 * std::sqrt(sq / p.size())).epsilon(1e-12));
}

TEST_CASE("breakdowns") {
  auto s = Make({80, 80, 20, 20}, {80, 80, 20, 20}, {"S1", "S1", "S2", "S2"});
  auto b = Breakdown(s.preds, s.recs, GroupKind::kSystem, {"S1", "S2"});
  REQUIRE(b.rows.size() == 2);
  CHECK(b.rows[0].group_id == "S1");
  CHECK(b.rows[0].mean_true == 80.0);
  CHECK(b.rows[0].mean_predicted == 80.0);
  CHECK(b.rows[1].mean_true == 20.0);
  for (const auto& r : b.rows) CHECK_FALSE(r.unseen_in_training);
  auto u = Breakdown(s.preds, s.recs, GroupKind::kSystem, {"S1"});
  CHECK(u.rows[1].unseen_in_training);
  CHECK_THROWS_AS(Breakdown({}, s.recs, GroupKind::kSystem, {}), InvalidArgument);
}

TEST_CASE("breakdown means recombine to the global means") {
  Rng rng(8);
  std::vector<double> p, t;
  std::vector<std::string> sys;
  for (int i = 0; i < 60; ++i) {
    p.push_back(100 * rng.Uniform());
    t.push_back(std::round(100 * rng.Uniform()));
    sys.push_back("E" + std::to_string(rng.Below(5)));
  }
  auto s = Make(p, t, sys);
  for (GroupKind k : {GroupKind::kSystem, GroupKind::kListener}) {
    auto b = Breakdown(s.preds, s.recs, k, {});
    double wp = 0, wt = 0;
    size_t n = 0;
    for (const auto& r : b.rows) {
      wp += r.mean_predicted * r.n;
      wt += r.mean_true * r.n;
      n += r.n;
      CHECK(r.unseen_in_training);
    }
    CHECK(n == 60);
    double gp = 0, gt = 0;
    for (int i = 0; i < 60; ++i) gp += p[i], gt += t[i];
    CHECK(std::abs(wp / n - gp / 60) < 1e-9);
    CHECK(std::abs(wt / n - gt / 60) < 1e-9);
    for (size_t i = 1; i < b.rows.size(); ++i)
      CHECK(b.rows[i - 1].mean_true >= b.rows[i].mean_true);
  }
}

TEST_CASE("report bundle") {
  testing::TempDir dir;
  auto s = Make({80, 70, 20, 30}, {80, 60, 20, 40}, {"S1", "S1", "S2", "S2"});
  auto m = Score(s.preds, s.recs);
  std::vector<GroupBreakdown> bds{Breakdown(s.preds, s.recs, GroupKind::kSystem, {"S1"}),
                                  Breakdown(s.preds, s.recs, GroupKind::kListener, {})};
  auto hist = ComputeCorrectnessHistogram(s.recs, 10);
  auto bundle = RenderReport({{"a", m}, {"b", m}}, bds, hist, dir.path() / "r1");
  for (const auto& f : bundle.files) CHECK(std::filesystem::exists(f));
  CHECK(std::filesystem::exists(dir.path() / "r1" / "breakdown_system.svg"));
  CHECK(std::filesystem::exists(dir.path() / "r1" / "breakdown_listener.svg"));
  CHECK(std::filesystem::exists(dir.path() / "r1" / "correctness_histogram.svg"));
  std::string table = Slurp(dir.path() / "r1" / "metrics.csv");
  CHECK(table.rfind("model_name,rmse,var,spearman,pearson,n\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  CHECK(Slurp(dir.path() / "r1" / "breakdown_system.csv")
            .find("system,S2,25.0000,30.0000,2,1") != std::string::npos);

  RenderReport({{"a", m}, {"b", m}}, bds, hist, dir.path() / "r2");
  CHECK(Sha256File(dir.path() / "r1" / "metrics.csv") ==
        Sha256File(dir.path() / "r2" / "metrics.csv"));

  auto only = RenderReport({{"a", m}}, {}, std::nullopt, dir.path() / "r3");
  CHECK_FALSE(only.warnings.empty());
  CHECK_FALSE(std::filesystem::exists(dir.path() / "r3" / "breakdown_system.svg"));
  CHECK(std::filesystem::exists(dir.path() / "r3" / "metrics.csv"));
}

TEST_CASE("undefined correlations become nan with a warning") {
  testing::TempDir dir;
  auto flat = Make({50, 50, 50}, {10, 20, 30});
  auto bundle = RenderReport({{"flat", Score(flat.preds, flat.recs)}}, {}, std::nullopt,
                             dir.path());
  std::string table = Slurp(dir.path() / "metrics.csv");
  CHECK(table.find(",nan,nan,3") != std::string::npos);
  CHECK(bundle.warnings.size() == 2);
}

TEST_CASE("predictions csv round trip") {
  testing::TempDir dir;
  std::vector<Prediction> p{CombineChannels("a", 0.25, 0.5),
                            CombineChannels("b,c", 0.125, std::nullopt)};
  WritePredictionsCsv(dir.path() / "p.csv", p);
  auto back = ReadPredictionsCsv(dir.path() / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].i_hat == 0.5);
  CHECK(*back[0].right == 0.5);
  CHECK(back[1].utterance_id == "b,c");
  CHECK_FALSE(back[1].right.has_value());
}

TEST_CASE("report to an unwritable location names the path") {
  testing::TempDir dir;
  auto blocker = dir.path() / "file";
  std::ofstream(blocker) << "x";
  auto s = Make({10, 20}, {20, 10});
  try {
    RenderReport({{"a", Score(s.preds, s.recs)}}, {}, std::nullopt, blocker / "sub");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("file") != std::string::npos);
  }
}
