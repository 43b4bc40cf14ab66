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

#ifndef SIPRED_PARALLEL_H_
#define SIPRED_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace sipred {

/// Runs fn(0..n-1) on up to `jobs` threads. Indices are claimed dynamically,
/// so callers must write results into per-index slots and assemble them in
/// index order afterwards. The first exception thrown by fn is rethrown
/// after all workers finish. jobs <= 1 runs inline.
void ParallelFor(size_t n, int jobs, const std::function<void(size_t)>& fn);

}  // namespace sipred

#endif  // SIPRED_PARALLEL_H_
