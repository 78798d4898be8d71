// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "looplab/common.hpp"

namespace looplab::vlm {

using Token = int;
using TokenSeq = std::vector<Token>;

// Byte-level vocabulary: ids 0..255 are raw bytes, then the special tokens.
inline constexpr Token kPadToken = 256;
inline constexpr Token kBosToken = 257;
inline constexpr Token kEosToken = 258;
inline constexpr Token kSepToken = 259;
inline constexpr int kVocabSize = 260;

TokenSeq tokenize(std::string_view text);

// Inverse of tokenize; rejects special tokens and out-of-range ids.
std::string detokenize(const TokenSeq &tokens);

// Lenient rendering for logs and manifests: non-byte ids print as <id>.
std::string render_text(const TokenSeq &tokens);

}  // namespace looplab::vlm
