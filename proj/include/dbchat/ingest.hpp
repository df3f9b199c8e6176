// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Document loading and fixed-window chunking.

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dbchat::ingest {

enum class MediaKind { plain, markdown, html, pdf_text };
enum class Language { en, zh, other };

std::string_view to_string(MediaKind kind) noexcept;
std::string_view to_string(Language lang) noexcept;
MediaKind parse_media_kind(std::string_view name);
Language parse_language(std::string_view name);

struct SourceDocument {
  std::string doc_id;
  std::string source_uri;
  MediaKind media_kind = MediaKind::plain;
  std::string body;
  Language language = Language::other;
};

/// Offsets are in code points, half-open.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const CharSpan&) const = default;
};

struct Chunk {
  std::string doc_id;
  std::size_t chunk_index = 0;
  std::string text;
  CharSpan char_span;

  bool operator==(const Chunk&) const = default;
};

struct SplitOptions {
  std::size_t window = 512;
  std::size_t overlap = 64;
  /// Move each interior cut left to the nearest whitespace within
  /// `snap_distance` characters.
  bool snap_to_word = true;
  std::size_t snap_distance = 32;
};

/// Reads `uri` (a local path) and extracts its text. The doc_id is the uri.
SourceDocument load_document(const std::filesystem::path& uri, MediaKind kind);

/// Same extraction over in-memory content.
SourceDocument make_document(std::string doc_id, std::string_view raw, MediaKind kind);

std::string extract_text(std::string_view raw, MediaKind kind);
std::string strip_markdown(std::string_view raw);
std::string strip_html(std::string_view raw);

/// Heuristic: majority of CJK ideographs among letters means zh, majority of
/// ASCII letters means en.
Language detect_language(std::string_view s);

std::vector<Chunk> split_document(const SourceDocument& doc, const SplitOptions& opts);

struct ManifestEntry {
  std::string uri;
  MediaKind media_kind = MediaKind::plain;
  std::string kb_name;
};

/// One JSON object per line: {"uri", "media_kind", "kb_name"}. Blank lines
/// are skipped.
std::vector<ManifestEntry> parse_manifest(std::string_view jsonl);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace dbchat::ingest
