// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <nlohmann/json.hpp>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/text.hpp"

namespace dbchat::ingest {

std::string_view to_string(MediaKind kind) noexcept {
  switch (kind) {
    case MediaKind::plain: return "plain";
    case MediaKind::markdown: return "markdown";
    case MediaKind::html: return "html";
    case MediaKind::pdf_text: return "pdf_text";
  }
  return "plain";
}

std::string_view to_string(Language lang) noexcept {
  switch (lang) {
    case Language::en: return "en";
    case Language::zh: return "zh";
    case Language::other: return "other";
  }
  return "other";
}

MediaKind parse_media_kind(std::string_view name) {
  if (name == "plain" || name == "text" || name == "txt") return MediaKind::plain;
  if (name == "markdown" || name == "md") return MediaKind::markdown;
  if (name == "html" || name == "htm") return MediaKind::html;
  if (name == "pdf_text" || name == "pdf") return MediaKind::pdf_text;
  throw Error(Errc::unsupported, "unsupported media kind: " + std::string(name));
}

Language parse_language(std::string_view name) {
  if (name == "en") return Language::en;
  if (name == "zh") return Language::zh;
  if (name == "other") return Language::other;
  throw Error(Errc::invalid_argument, "unknown language: " + std::string(name));
}

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (true) {
    const auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(pos));
      break;
    }
    lines.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::string strip_inline_markdown(std::string_view line) {
  std::string out;
  out.reserve(line.size());
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    // ![alt](url) and [text](url) keep only the bracketed text.
    if ((c == '[' || (c == '!' && i + 1 < line.size() && line[i + 1] == '['))) {
      const std::size_t open = c == '!' ? i + 1 : i;
      const auto close = line.find(']', open + 1);
      if (close != std::string_view::npos && close + 1 < line.size() && line[close + 1] == '(') {
        const auto paren = line.find(')', close + 2);
        if (paren != std::string_view::npos) {
          out.append(line.substr(open + 1, close - open - 1));
          i = paren + 1;
          continue;
        }
      }
    }
    if ((c == '*' || c == '_' || c == '~') && i + 1 < line.size() && line[i + 1] == c) {
      i += 2;
      continue;
    }
    if (c == '`') {
      ++i;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

}  // namespace

std::string strip_markdown(std::string_view raw) {
  std::string out;
  bool first = true;
  for (auto line : split_lines(raw)) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::string_view rest = line;
    std::size_t indent = 0;
    while (indent < rest.size() && (rest[indent] == ' ' || rest[indent] == '\t')) ++indent;
    std::string_view body = rest.substr(indent);
    std::string text;
    if (starts_with(body, "```") || starts_with(body, "~~~")) {
      // Fence markers vanish, fenced content is kept as-is.
      continue;
    }
    if (body == "---" || body == "***" || body == "___") {
      text.clear();
    } else {
      std::size_t hashes = 0;
      while (hashes < body.size() && hashes < 6 && body[hashes] == '#') ++hashes;
      if (hashes > 0 && (hashes == body.size() || body[hashes] == ' ')) {
        body.remove_prefix(hashes);
        while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      } else {
        while (starts_with(body, "> ") || body == ">") {
          body.remove_prefix(body.size() >= 2 ? 2 : 1);
        }
        if (starts_with(body, "- ") || starts_with(body, "* ") || starts_with(body, "+ ")) {
          body.remove_prefix(2);
        }
      }
      text = strip_inline_markdown(body);
    }
    if (!first) out.push_back('\n');
    out += text;
    first = false;
  }
  return out;
}

namespace {

std::string decode_entity(std::string_view ent) {
  if (ent == "amp") return "&";
  if (ent == "lt") return "<";
  if (ent == "gt") return ">";
  if (ent == "quot") return "\"";
  if (ent == "apos") return "'";
  if (ent == "nbsp") return " ";
  if (ent.size() > 1 && ent[0] == '#') {
    char32_t cp = 0;
    try {
      if (ent[1] == 'x' || ent[1] == 'X') {
        cp = static_cast<char32_t>(std::stoul(std::string(ent.substr(2)), nullptr, 16));
      } else {
        cp = static_cast<char32_t>(std::stoul(std::string(ent.substr(1)), nullptr, 10));
      }
    } catch (const std::exception&) {
      return {};
    }
    std::string out;
    text::append_utf8(out, cp);
    return out;
  }
  return {};
}

bool is_block_tag(std::string_view name) {
  static constexpr std::string_view kBlocks[] = {
      "p", "div", "br", "li", "ul", "ol", "tr", "table", "h1", "h2", "h3", "h4", "h5", "h6",
      "section", "article", "header", "footer", "blockquote", "pre", "title", "hr"};
  return std::find(std::begin(kBlocks), std::end(kBlocks), name) != std::end(kBlocks);
}

}  // namespace

std::string strip_html(std::string_view raw) {
  std::string flat;
  flat.reserve(raw.size());
  const std::string lower = text::to_lower_ascii(raw);
  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (c == '<') {
      if (lower.compare(i, 4, "<!--") == 0) {
        const auto end = lower.find("-->", i + 4);
        i = end == std::string::npos ? raw.size() : end + 3;
        continue;
      }
      const auto close = raw.find('>', i + 1);
      if (close == std::string_view::npos) {
        flat.push_back(c);
        ++i;
        continue;
      }
      std::size_t n = i + 1;
      if (n < raw.size() && raw[n] == '/') ++n;
      std::size_t e = n;
      while (e < close && std::isalnum(static_cast<unsigned char>(raw[e]))) ++e;
      const std::string name = lower.substr(n, e - n);
      if (raw[i + 1] != '/' && (name == "script" || name == "style")) {
        const auto end = lower.find("</" + name, close);
        const auto end_close = end == std::string::npos ? std::string::npos : lower.find('>', end);
        i = end_close == std::string::npos ? raw.size() : end_close + 1;
        continue;
      }
      if (is_block_tag(name)) flat.push_back('\n');
      i = close + 1;
      continue;
    }
    if (c == '&') {
      const auto semi = raw.find(';', i + 1);
      if (semi != std::string_view::npos && semi - i <= 10) {
        const std::string decoded = decode_entity(raw.substr(i + 1, semi - i - 1));
        if (!decoded.empty()) {
          flat += decoded;
          i = semi + 1;
          continue;
        }
      }
    }
    flat.push_back(c);
    ++i;
  }

  // Collapse horizontal whitespace, trim lines, and squeeze blank-line runs.
  std::string out;
  bool pending_blank = false;
  for (auto line : split_lines(flat)) {
    std::string collapsed;
    bool in_space = false;
    for (const char ch : line) {
      if (ch == ' ' || ch == '\t' || ch == '\r') {
        in_space = true;
        continue;
      }
      if (in_space && !collapsed.empty()) collapsed.push_back(' ');
      in_space = false;
      collapsed.push_back(ch);
    }
    if (collapsed.empty()) {
      pending_blank = !out.empty();
      continue;
    }
    if (!out.empty()) out += pending_blank ? "\n\n" : "\n";
    pending_blank = false;
    out += collapsed;
  }
  return out;
}

std::string extract_text(std::string_view raw, MediaKind kind) {
  switch (kind) {
    case MediaKind::plain:
      return std::string(raw);
    case MediaKind::markdown:
      return strip_markdown(raw);
    case MediaKind::html:
      return strip_html(raw);
    case MediaKind::pdf_text: {
      std::string out;
      out.reserve(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '\r' && i + 1 < raw.size() && raw[i + 1] == '\n') continue;
        out.push_back(raw[i] == '\f' ? '\n' : raw[i]);
      }
      return out;
    }
  }
  throw Error(Errc::unsupported, "unsupported media kind");
}

Language detect_language(std::string_view s) {
  std::size_t cjk = 0;
  std::size_t latin = 0;
  std::size_t other = 0;
  for (const auto& cp : text::decode_utf8(s)) {
    const char32_t c = cp.value;
    if (text::is_cjk(c)) {
      ++cjk;
    } else if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      ++latin;
    } else if (c >= 0x80 && !text::is_space(c) && !text::is_punct(c)) {
      ++other;
    }
  }
  // A single ideograph carries roughly a word's worth of content.
  const std::size_t cjk_weight = cjk * 4;
  if (cjk_weight == 0 && latin == 0) return Language::other;
  if (cjk_weight >= latin && cjk_weight >= other) return Language::zh;
  if (latin > other) return Language::en;
  return Language::other;
}

SourceDocument make_document(std::string doc_id, std::string_view raw, MediaKind kind) {
  SourceDocument doc;
  doc.source_uri = doc_id;
  doc.doc_id = std::move(doc_id);
  doc.media_kind = kind;
  doc.body = extract_text(raw, kind);
  if (text::trim(doc.body).empty()) {
    throw Error(Errc::empty_extraction, "empty extraction: " + doc.source_uri);
  }
  doc.language = detect_language(doc.body);
  return doc;
}

SourceDocument load_document(const std::filesystem::path& uri, MediaKind kind) {
  std::string raw;
  try {
    raw = binio::read_file(uri);
  } catch (const Error&) {
    throw Error(Errc::io_error, "unreadable source: " + uri.string());
  }
  return make_document(uri.string(), raw, kind);
}

std::vector<Chunk> split_document(const SourceDocument& doc, const SplitOptions& opts) {
  if (opts.window == 0 || opts.overlap >= opts.window) {
    throw Error(Errc::invalid_argument, "invalid window/overlap: require 0 <= overlap < window");
  }
  const auto cps = text::decode_utf8(doc.body);
  const std::size_t n = cps.size();
  std::vector<Chunk> chunks;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = std::min(start + opts.window, n);
    if (end < n && opts.snap_to_word && !text::is_space(cps[end].value) &&
        !text::is_space(cps[end - 1].value)) {
      // Cut before the nearest whitespace on the left, keeping progress.
      const std::size_t lo = end > opts.snap_distance ? end - opts.snap_distance : 0;
      for (std::size_t j = end - 1; j > lo && j > start + opts.overlap; --j) {
        if (text::is_space(cps[j].value)) {
          end = j;
          break;
        }
      }
    }
    Chunk c;
    c.doc_id = doc.doc_id;
    c.chunk_index = chunks.size();
    c.char_span = {start, end};
    const std::size_t b = cps[start].byte_begin;
    const std::size_t e = cps[end - 1].byte_end;
    c.text = doc.body.substr(b, e - b);
    chunks.push_back(std::move(c));
    if (end == n) break;
    start = end - opts.overlap;
  }
  return chunks;
}

std::vector<ManifestEntry> parse_manifest(std::string_view jsonl) {
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 0;
  for (auto line : split_lines(jsonl)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.uri = j.at("uri").get<std::string>();
      e.media_kind = parse_media_kind(j.at("media_kind").get<std::string>());
      e.kb_name = j.at("kb_name").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::parse_error,
                  "manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  return parse_manifest(binio::read_file(path));
}

}  // namespace dbchat::ingest
