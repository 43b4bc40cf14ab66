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

#ifndef SIPRED_STATS_H_
#define SIPRED_STATS_H_

#include <optional>
#include <span>
#include <vector>

namespace sipred {

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> AverageRanks(std::span<const double> x);

/// Product-moment correlation. nullopt when n < 2 or either input is constant
/// (correlation undefined). Throws ShapeMismatch when sizes differ.
std::optional<double> Pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of the average ranks.
std::optional<double> Spearman(std::span<const double> x, std::span<const double> y);

double Mean(std::span<const double> x);
/// Population variance (divides by n).
double Variance(std::span<const double> x);

}  // namespace sipred

#endif  // SIPRED_STATS_H_
