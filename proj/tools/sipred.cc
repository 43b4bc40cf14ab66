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

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sipred/error.h"
#include "sipred/pipeline.h"

namespace {

struct Common {
  std::string config;
  sipred::RunOverrides overrides;
};

void AddCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required();
  cmd->add_option_function<std::string>(
      "--track", [&c](const std::string& v) { c.overrides.track = v; },
      "closed | open");
  cmd->add_option_function<std::string>(
      "--signal-kind", [&c](const std::string& v) { c.overrides.signal_kind = v; },
      "enhanced | hls");
  cmd->add_option_function<std::string>(
      "--binding", [&c](const std::string& v) { c.overrides.binding = v; },
      "spec | <backend>:fe | <backend>:ol");
  cmd->add_option_function<uint64_t>(
      "--seed", [&c](const uint64_t& v) { c.overrides.seed = v; }, "Global seed");
  cmd->add_option_function<int>(
         "--jobs", [&c](const int& v) { c.overrides.jobs = v; }, "Worker threads")
      ->check(CLI::PositiveNumber);
}

sipred::RunConfig LoadConfig(const Common& c) {
  sipred::RunConfig config = sipred::RunConfig::Load(c.config);
  sipred::ApplyOverrides(config, c.overrides);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-intrusive intelligibility prediction from speech representations"};
  app.set_version_flag("--version", sipred::VersionString());
  app.require_subcommand(1);

  Common common;
  CLI::App* extract = app.add_subcommand("extract", "Populate the feature cache");
  AddCommon(extract, common);

  CLI::App* distances =
      app.add_subcommand("distances", "Reference-vs-test distance correlation study");
  AddCommon(distances, common);

  CLI::App* train = app.add_subcommand("train", "Train a predictor from cached features");
  AddCommon(train, common);

  CLI::App* evaluate = app.add_subcommand("evaluate", "Predict, score and report");
  AddCommon(evaluate, common);
  std::optional<std::string> checkpoint;
  evaluate->add_option_function<std::string>(
      "--checkpoint", [&](const std::string& v) { checkpoint = v; },
      "Checkpoint (default: <out_dir>/train/model.sipm)");

  CLI::App* report =
      app.add_subcommand("report", "Metrics table and charts from predictions CSVs");
  AddCommon(report, common);
  std::vector<std::string> prediction_args;
  report->add_option("--predictions", prediction_args,
                     "name=predictions.csv (repeatable; breakdowns use the first)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    sipred::RunConfig config = LoadConfig(common);
    if (extract->parsed()) {
      return sipred::CmdExtract(config, std::cerr).ok() ? 0 : 1;
    }
    if (distances->parsed()) {
      return sipred::CmdDistanceStudy(config, std::cerr).ok() ? 0 : 1;
    }
    if (train->parsed()) {
      sipred::CmdTrain(config, std::cerr);
      return 0;
    }
    if (evaluate->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (checkpoint) ckpt = *checkpoint;
      sipred::CmdEvaluate(config, ckpt, std::cerr);
      return 0;
    }
    if (report->parsed()) {
      std::vector<std::pair<std::string, std::filesystem::path>> preds;
      for (const auto& arg : prediction_args) {
        auto eq = arg.find('=');
        if (eq == std::string::npos || eq == 0)
          throw sipred::InvalidArgument("--predictions expects name=path, got '" + arg + "'");
        preds.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
      }
      sipred::CmdReport(config, preds, std::cerr);
      return 0;
    }
  } catch (const sipred::BackendUnavailable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
