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

#ifndef SIPRED_UTIL_H_
#define SIPRED_UTIL_H_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace sipred {

/// Lower-case hex SHA-256 digest.
std::string Sha256Hex(std::span<const unsigned char> bytes);
std::string Sha256Hex(std::string_view text);
std::string Sha256File(const std::filesystem::path& path);

std::string ReadTextFile(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never observe
/// a partially written file.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view data);

/// Fixed-point rendering used in every CSV so outputs are byte-stable.
/// NaN renders as "nan".
std::string FormatFixed(double v, int decimals = 6);

/// Quotes a CSV field when it contains a separator, quote or newline.
std::string CsvField(std::string_view s);

}  // namespace sipred

#endif  // SIPRED_UTIL_H_
