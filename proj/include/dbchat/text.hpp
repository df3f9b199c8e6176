// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Text helpers shared by ingestion, indexing and the encoders: UTF-8
// decoding, the indexing tokenizer, and stable hashing.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dbchat::text {

/// One decoded code point and the byte range it occupies.
struct CodePoint {
  char32_t value;
  std::size_t byte_begin;
  std::size_t byte_end;
};

/// Decodes UTF-8. Invalid bytes decode as U+FFFD covering one byte.
std::vector<CodePoint> decode_utf8(std::string_view s);

void append_utf8(std::string& out, char32_t cp);

bool is_space(char32_t cp) noexcept;
bool is_cjk(char32_t cp) noexcept;
bool is_punct(char32_t cp) noexcept;

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);

/// Lowercased, punctuation-stripped whitespace tokens. CJK ideographs have no
/// word boundaries, so each one becomes its own token.
std::vector<std::string> tokenize(std::string_view s);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

}  // namespace dbchat::text
