// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <ctime>
#include <set>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/ingest.hpp"
#include "dbchat/promptgen.hpp"
#include "dbchat/text.hpp"

namespace dbchat::promptgen {

namespace {

constexpr std::string_view kQuestion = "{QUESTION}";
constexpr std::string_view kDate = "{CURRENT_DATE}";
constexpr std::string_view kVariadic = "{CONTEXT_RETRO_i}";
constexpr std::string_view kNumberedPrefix = "{CONTEXT_RETRO_";

// Trailing blanks on the context lines and the leading blank before "Based"
// are part of the template.
constexpr std::string_view kEnglishBody =
    "Context information:\n"
    "{CONTEXT_RETRO_i} \n"
    "\n"
    " Based on the given information, please provide a concise and professional response to "
    "the user's question. If there are multiple questions in a query, please answer all of "
    "them. If the user's question includes keywords like 'recent' or 'latest' to indicate a "
    "recent time frame, pay attention to the correspondence between the current date and the "
    "date of the information. If a clear answer cannot be determined, respond with \"Unable to "
    "answer the question based on the information provided\". You MUST respond in the same "
    "language as the question!\n"
    "\n"
    "The question is: {QUESTION}.";

constexpr std::string_view kChineseBody =
    "上下文信息：\n"
    "{CONTEXT_RETRO_i} \n"
    "\n"
    " 请根据以上信息，简洁而专业地回答用户的问题。如果一次提问中包含多个问题，请逐一回答。"
    "如果用户的问题包含“最近”或“最新”等表示近期时间范围的关键词，请注意当前日期"
    "（{CURRENT_DATE}）与信息日期之间的对应关系。如果无法给出明确答案，请回答“无法根据已知信息回答该问题”。"
    "你必须使用与问题相同的语言回答！\n"
    "\n"
    "问题是：{QUESTION}。";

/// Parses "{CONTEXT_RETRO_<n>}" at `pos`; returns n or 0.
std::size_t numbered_at(std::string_view body, std::size_t pos, std::size_t* length) {
  if (body.compare(pos, kNumberedPrefix.size(), kNumberedPrefix) != 0) return 0;
  std::size_t i = pos + kNumberedPrefix.size();
  std::size_t n = 0;
  const std::size_t digits_begin = i;
  while (i < body.size() && body[i] >= '0' && body[i] <= '9') {
    n = n * 10 + static_cast<std::size_t>(body[i] - '0');
    ++i;
  }
  if (i == digits_begin || i >= body.size() || body[i] != '}') return 0;
  *length = i + 1 - pos;
  return n;
}

std::string iso_date(const Clock& clock) {
  const auto now = clock ? clock() : std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

/// Substitutes placeholders in one segment of the body. `variadic_value`
/// fills {CONTEXT_RETRO_i} when set.
void substitute(std::string_view segment, std::span<const std::string> contexts,
                std::string_view question, const std::string* variadic_value,
                const std::string& date, std::string& out) {
  std::size_t i = 0;
  while (i < segment.size()) {
    if (segment[i] == '{') {
      if (segment.compare(i, kQuestion.size(), kQuestion) == 0) {
        out.append(question);
        i += kQuestion.size();
        continue;
      }
      if (segment.compare(i, kDate.size(), kDate) == 0) {
        out.append(date);
        i += kDate.size();
        continue;
      }
      if (variadic_value && segment.compare(i, kVariadic.size(), kVariadic) == 0) {
        out.append(*variadic_value);
        i += kVariadic.size();
        continue;
      }
      std::size_t len = 0;
      if (const std::size_t n = numbered_at(segment, i, &len); n > 0) {
        if (n <= contexts.size()) out.append(contexts[n - 1]);
        i += len;
        continue;
      }
    }
    out.push_back(segment[i]);
    ++i;
  }
}

std::size_t count_of(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::size_t max_numbered(std::string_view body, std::set<std::size_t>* seen) {
  std::size_t hi = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    std::size_t len = 0;
    if (const std::size_t n = numbered_at(body, i, &len); n > 0) {
      seen->insert(n);
      hi = std::max(hi, n);
    }
  }
  return hi;
}

}  // namespace

std::string_view to_string(TemplateLanguage lang) noexcept {
  return lang == TemplateLanguage::zh ? "zh" : "en";
}

TemplateLanguage parse_template_language(std::string_view name) {
  if (name == "en") return TemplateLanguage::en;
  if (name == "zh") return TemplateLanguage::zh;
  throw Error(Errc::config_error, "unsupported template language: " + std::string(name));
}

void validate(const PromptTemplate& tpl) {
  if (tpl.template_id.empty()) throw Error(Errc::config_error, "template without template_id");
  if (count_of(tpl.body, kQuestion) != 1) {
    throw Error(Errc::config_error,
                "template " + tpl.template_id + " must contain {QUESTION} exactly once");
  }
  std::set<std::size_t> seen;
  const std::size_t hi = max_numbered(tpl.body, &seen);
  if (seen.size() != hi) {
    throw Error(Errc::config_error,
                "template " + tpl.template_id + " context placeholders are not contiguous from 1");
  }
  const std::size_t variadic = count_of(tpl.body, kVariadic);
  if (variadic > 1 || (variadic == 1 && hi > 0)) {
    throw Error(Errc::config_error, "template " + tpl.template_id +
                                        " mixes or repeats variadic context placeholders");
  }
}

const PromptTemplate& builtin_rag_template_en() {
  static const PromptTemplate tpl{"rag_qa_en", TemplateLanguage::en, "rag_qa",
                                  std::string(kEnglishBody)};
  return tpl;
}

const PromptTemplate& builtin_rag_template_zh() {
  static const PromptTemplate tpl{"rag_qa_zh", TemplateLanguage::zh, "rag_qa",
                                  std::string(kChineseBody)};
  return tpl;
}

PromptTemplate parse_template(std::string_view file_text) {
  if (file_text.substr(0, 4) != "---\n") {
    throw Error(Errc::config_error, "template file must start with '---' front matter");
  }
  const auto close = file_text.find("\n---\n", 3);
  if (close == std::string_view::npos) {
    throw Error(Errc::config_error, "unterminated template front matter");
  }
  PromptTemplate tpl;
  std::string_view header = file_text.substr(4, close - 3);
  while (!header.empty()) {
    const auto nl = header.find('\n');
    const std::string_view line = header.substr(0, nl);
    header = nl == std::string_view::npos ? std::string_view{} : header.substr(nl + 1);
    const auto colon = line.find(':');
    if (text::trim(line).empty()) continue;
    if (colon == std::string_view::npos) {
      throw Error(Errc::config_error, "bad front-matter line: " + std::string(line));
    }
    const std::string key = text::trim(line.substr(0, colon));
    const std::string value = text::trim(line.substr(colon + 1));
    if (key == "template_id") {
      tpl.template_id = value;
    } else if (key == "language") {
      tpl.language = parse_template_language(value);
    } else if (key == "task") {
      tpl.task = value;
    }
  }
  std::string_view body = file_text.substr(close + 5);
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
  tpl.body = std::string(body);
  validate(tpl);
  return tpl;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  return parse_template(binio::read_file(path));
}

std::string render_prompt(const PromptTemplate& tpl, std::span<const std::string> contexts,
                          std::string_view question, const RenderOptions& opts) {
  if (text::trim(question).empty()) {
    throw Error(Errc::missing_question, "missing question");
  }
  const std::string_view body = tpl.body;
  const std::string date = body.find(kDate) != std::string_view::npos ? iso_date(opts.clock) : "";
  std::string out;
  out.reserve(body.size() + question.size() + 64 * contexts.size());

  const auto var = body.find(kVariadic);
  if (var == std::string_view::npos) {
    std::set<std::size_t> seen;
    if (const auto slots = max_numbered(body, &seen); contexts.size() > slots) {
      throw Error(Errc::invalid_argument, std::to_string(contexts.size()) + " contexts for " +
                                              std::to_string(slots) + " placeholders in template " +
                                              tpl.template_id);
    }
    substitute(body, contexts, question, nullptr, date, out);
    return out;
  }
  // The line holding the variadic placeholder, newline included, repeats per
  // context; with no contexts it disappears.
  const auto line_begin = body.rfind('\n', var) == std::string_view::npos ? 0 : body.rfind('\n', var) + 1;
  const auto nl = body.find('\n', var);
  const auto line_end = nl == std::string_view::npos ? body.size() : nl + 1;
  substitute(body.substr(0, line_begin), contexts, question, nullptr, date, out);
  for (const auto& ctx : contexts) {
    substitute(body.substr(line_begin, line_end - line_begin), contexts, question, &ctx, date,
               out);
  }
  substitute(body.substr(line_end), contexts, question, nullptr, date, out);
  return out;
}

std::string render_prompt(const PromptTemplate& tpl,
                          std::span<const retrieval::RetrievedContext> contexts,
                          std::string_view question, const RenderOptions& opts) {
  std::vector<std::string> texts;
  texts.reserve(contexts.size());
  for (const auto& c : contexts) texts.push_back(c.text);
  return render_prompt(tpl, texts, question, opts);
}

std::vector<retrieval::RetrievedContext> select_contexts(
    std::span<const retrieval::RetrievedContext> ranked, std::size_t j) {
  if (j == 0) throw Error(Errc::invalid_argument, "J must be at least 1");
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    if (ranked[i].score > ranked[i - 1].score) {
      throw Error(Errc::unsorted_input,
                  "contexts are not sorted by descending score at position " + std::to_string(i));
    }
  }
  const std::size_t n = std::min(j, ranked.size());
  return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n)};
}

TemplateRegistry::TemplateRegistry() {
  add(builtin_rag_template_en());
  add(builtin_rag_template_zh());
}

void TemplateRegistry::add(PromptTemplate tpl) {
  validate(tpl);
  auto key = std::make_pair(tpl.language, tpl.task);
  templates_.insert_or_assign(std::move(key), std::move(tpl));
}

const PromptTemplate& TemplateRegistry::get(TemplateLanguage lang, std::string_view task) const {
  const auto it = templates_.find({lang, std::string(task)});
  if (it == templates_.end()) {
    throw Error(Errc::not_found, "no " + std::string(to_string(lang)) + " template for task " +
                                     std::string(task));
  }
  return it->second;
}

const PromptTemplate& TemplateRegistry::select(std::string_view question,
                                               std::string_view task) const {
  const auto lang = ingest::detect_language(question) == ingest::Language::zh
                        ? TemplateLanguage::zh
                        : TemplateLanguage::en;
  const auto it = templates_.find({lang, std::string(task)});
  if (it != templates_.end()) return it->second;
  return get(TemplateLanguage::en, task);
}

void TemplateRegistry::load_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tmpl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add(load_template(f));
}

}  // namespace dbchat::promptgen
