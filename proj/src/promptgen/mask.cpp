// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/promptgen.hpp"
#include "dbchat/text.hpp"

namespace dbchat::promptgen {

namespace {

constexpr std::array<std::string_view, 9> kTokens = {
    "[EMAIL]", "[PHONE]", "[ID]", "[CARD]", "[NAME]", "[ADDRESS]", "[IP]", "[ACCOUNT]", "[REDACTED]"};

}  // namespace

std::span<const std::string_view> replacement_tokens() noexcept { return kTokens; }

std::vector<MaskRule> default_mask_rules() {
  return {
      {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})", "[EMAIL]"},
      // 16 digits in groups of four with one consistent separator.
      {"card", R"(\b\d{4}([- ])\d{4}\1\d{4}\1\d{4}\b)", "[CARD]"},
      {"phone_intl", R"(\+\d{1,3}([- .]?\(\d{1,4}\))?([- .]\d{1,4}){2,5}\b|\+\d{8,15}\b)", "[PHONE]"},
      {"phone_us", R"((\(\d{3}\) ?|\b\d{3}[-.])\d{3}[-.]\d{4}\b)", "[PHONE]"},
      {"id_number", R"(\b\d{17}[Xx]\b|\b\d{15,18}\b)", "[ID]"},
  };
}

Masker::Masker() : Masker(default_mask_rules()) {}

Masker::Masker(std::vector<MaskRule> rules) : rules_(std::move(rules)) {
  compiled_.reserve(rules_.size());
  for (const auto& r : rules_) {
    if (std::find(kTokens.begin(), kTokens.end(), r.replacement) == kTokens.end()) {
      throw Error(Errc::config_error,
                  "mask rule " + r.rule_id + ": replacement " + r.replacement + " is not allowed");
    }
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw Error(Errc::config_error, "mask rule " + r.rule_id + ": bad pattern: " + e.what());
    }
  }
  // A rule that matches a replacement token would break idempotence.
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    for (const auto tok : kTokens) {
      if (std::regex_search(tok.begin(), tok.end(), compiled_[i])) {
        throw Error(Errc::config_error,
                    "mask rule " + rules_[i].rule_id + " matches replacement " + std::string(tok));
      }
    }
  }
}

Masker Masker::from_rules_text(std::string_view text) {
  std::vector<MaskRule> rules;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty() || text::trim(line)[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw Error(Errc::config_error,
                  "mask rules line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    rules.push_back({std::string(line.substr(0, t1)), std::string(line.substr(t1 + 1, t2 - t1 - 1)),
                     text::trim(line.substr(t2 + 1))});
  }
  return Masker(std::move(rules));
}

Masker Masker::from_rules_file(const std::filesystem::path& path) {
  return from_rules_text(binio::read_file(path));
}

MaskResult Masker::mask(std::string_view text) const {
  using It = std::string_view::const_iterator;
  struct Next {
    bool found = false;
    std::size_t begin = 0;
    std::size_t end = 0;
  };
  std::vector<Next> next(rules_.size());
  auto search_from = [&](std::size_t rule, std::size_t pos) {
    std::match_results<It> m;
    auto flags = pos > 0 ? std::regex_constants::match_prev_avail : std::regex_constants::match_default;
    Next n;
    if (std::regex_search(text.begin() + static_cast<std::ptrdiff_t>(pos), text.end(), m,
                          compiled_[rule], flags)) {
      n.found = true;
      n.begin = pos + static_cast<std::size_t>(m.position(0));
      n.end = n.begin + static_cast<std::size_t>(m.length(0));
    }
    next[rule] = n;
  };
  for (std::size_t r = 0; r < rules_.size(); ++r) search_from(r, 0);

  MaskResult result;
  std::size_t pos = 0;
  while (true) {
    std::size_t best = rules_.size();
    for (std::size_t r = 0; r < rules_.size(); ++r) {
      if (!next[r].found || next[r].end == next[r].begin) continue;
      if (best == rules_.size() || next[r].begin < next[best].begin ||
          (next[r].begin == next[best].begin &&
           next[r].end - next[r].begin > next[best].end - next[best].begin)) {
        best = r;
      }
    }
    if (best == rules_.size()) break;
    const Next hit = next[best];
    result.text.append(text.substr(pos, hit.begin - pos));
    result.text.append(rules_[best].replacement);
    result.hits.push_back({rules_[best].rule_id, hit.begin, hit.end});
    pos = hit.end;
    // Cached matches that start inside the consumed span must be redone.
    for (std::size_t r = 0; r < rules_.size(); ++r) {
      if (next[r].found && next[r].begin < pos) search_from(r, pos);
    }
  }
  result.text.append(text.substr(pos));
  return result;
}

MaskResult mask_pii(std::string_view text) {
  static const Masker masker;
  return masker.mask(text);
}

}  // namespace dbchat::promptgen
