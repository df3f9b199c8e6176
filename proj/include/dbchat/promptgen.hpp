// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// In-context prompt assembly: top-J context selection, template rendering and
// rule-based PII masking.

#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbchat/retrieval.hpp"

namespace dbchat::promptgen {

enum class TemplateLanguage { en, zh };

std::string_view to_string(TemplateLanguage lang) noexcept;
TemplateLanguage parse_template_language(std::string_view name);

/// Placeholders: {QUESTION} exactly once; numbered {CONTEXT_RETRO_1..n}
/// contiguous from 1; or a line holding {CONTEXT_RETRO_i}, which repeats once
/// per context. {CURRENT_DATE} renders as YYYY-MM-DD.
struct PromptTemplate {
  std::string template_id;
  TemplateLanguage language = TemplateLanguage::en;
  std::string task = "rag_qa";
  std::string body;
};

/// Throws Errc::config_error describing the first violated placeholder rule.
void validate(const PromptTemplate& tpl);

/// The English question-answering template, byte for byte.
const PromptTemplate& builtin_rag_template_en();
/// Chinese rendering of the same instructions (non-normative translation).
const PromptTemplate& builtin_rag_template_zh();

/// "---" front matter with template_id / language / task, then the body.
PromptTemplate parse_template(std::string_view file_text);
PromptTemplate load_template(const std::filesystem::path& path);

using Clock = std::function<std::chrono::system_clock::time_point()>;

struct RenderOptions {
  /// Used for {CURRENT_DATE}; defaults to the system clock.
  Clock clock;
};

/// Single left-to-right pass; substituted values are never rescanned. More
/// contexts than numbered placeholders is Errc::invalid_argument.
std::string render_prompt(const PromptTemplate& tpl, std::span<const std::string> contexts,
                          std::string_view question, const RenderOptions& opts = {});
std::string render_prompt(const PromptTemplate& tpl,
                          std::span<const retrieval::RetrievedContext> contexts,
                          std::string_view question, const RenderOptions& opts = {});

/// First min(J, n) entries. Rejects input whose scores increase anywhere.
std::vector<retrieval::RetrievedContext> select_contexts(
    std::span<const retrieval::RetrievedContext> ranked, std::size_t j);

/// J defaults to min(K, 4).
inline std::size_t default_j(std::size_t k) noexcept { return k < 4 ? k : 4; }

/// Templates keyed by (language, task); selection follows the detected
/// language of the question.
class TemplateRegistry {
 public:
  /// Pre-loaded with the built-in en/zh rag_qa templates.
  TemplateRegistry();

  void add(PromptTemplate tpl);
  const PromptTemplate& get(TemplateLanguage lang, std::string_view task) const;
  const PromptTemplate& select(std::string_view question, std::string_view task) const;
  /// Loads every *.tmpl file in `dir`, replacing same-keyed entries.
  void load_directory(const std::filesystem::path& dir);

 private:
  std::map<std::pair<TemplateLanguage, std::string>, PromptTemplate> templates_;
};

struct MaskRule {
  std::string rule_id;
  std::string pattern;      ///< ECMAScript regular expression
  std::string replacement;  ///< one of replacement_tokens()
};

struct MaskHit {
  std::string rule_id;
  std::size_t begin = 0;  ///< byte offsets into the unmasked input
  std::size_t end = 0;

  bool operator==(const MaskHit&) const = default;
};

struct MaskResult {
  std::string text;
  std::vector<MaskHit> hits;
};

/// The closed set of replacement tokens a rule may emit.
std::span<const std::string_view> replacement_tokens() noexcept;

/// Proxy de-identification. Matches are taken left to right without overlap;
/// where several rules match at the same leftmost position the longest wins,
/// then the earlier rule.
class Masker {
 public:
  /// Email, card-like, phone and 15-18 digit ID rules.
  Masker();
  explicit Masker(std::vector<MaskRule> rules);

  /// `rule_id TAB pattern TAB replacement` per line; '#' starts a comment.
  static Masker from_rules_text(std::string_view text);
  static Masker from_rules_file(const std::filesystem::path& path);

  MaskResult mask(std::string_view text) const;
  std::string mask_text(std::string_view text) const { return mask(text).text; }
  std::span<const MaskRule> rules() const noexcept { return rules_; }

 private:
  std::vector<MaskRule> rules_;
  std::vector<std::regex> compiled_;
};

std::vector<MaskRule> default_mask_rules();

/// Masks with the default rule set.
MaskResult mask_pii(std::string_view text);

}  // namespace dbchat::promptgen
