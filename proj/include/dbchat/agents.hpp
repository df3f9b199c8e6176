// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Tool registry and a bounded tool-using agent loop.
//
// Each step the backend replies with one JSON object
//   {"thought": "...", "action": "<tool id>|final", "action_input": ...}
// and the loop runs the tool and feeds the observation back. Roles restrict
// the tools an agent may call; SOPs chain role episodes.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbchat/encoder.hpp"
#include "dbchat/index.hpp"
#include "dbchat/net.hpp"
#include "dbchat/promptgen.hpp"
#include "dbchat/smmf.hpp"
#include "dbchat/text2sql.hpp"

namespace dbchat::agents {

struct ToolParam {
  std::string name;
  std::string type = "string";  ///< string | integer
  std::string description;
  bool required = true;
};

struct Tool {
  std::string tool_id;
  std::string description;
  std::vector<ToolParam> params;
  std::function<std::string(const nlohmann::json& input)> handler;
};

struct Observation {
  std::string text;
  bool ok = true;
};

class ToolRegistry {
 public:
  explicit ToolRegistry(std::size_t truncation = 2000) : truncation_(truncation) {}

  /// Errc::duplicate_registration when the id (or an alias) is taken.
  void register_tool(Tool tool);
  /// Second id for an existing tool.
  void add_alias(std::string alias, std::string_view target);

  bool contains(std::string_view id) const;
  /// Tools in id order, aliases excluded.
  std::vector<const Tool*> list() const;
  const Tool& get(std::string_view id) const;

  /// Errc::unknown_tool for an unknown id. Parameter errors and handler
  /// failures come back as a failed observation. Text is truncated.
  Observation invoke(std::string_view id, const nlohmann::json& input) const;

  std::size_t truncation() const noexcept { return truncation_; }

 private:
  std::string resolve(std::string_view id) const;

  std::size_t truncation_;
  std::map<std::string, Tool, std::less<>> tools_;
  std::map<std::string, std::string, std::less<>> aliases_;
};

nlohmann::json tool_to_json(const Tool& tool);

/// Canned results keyed by exact (trimmed, lowercased) query. With an
/// endpoint set, queries go to that URL instead, subject to the policy.
class WebSearch {
 public:
  /// Errc::config_error when the fixtures file is missing or malformed.
  static WebSearch from_fixtures(const std::filesystem::path& path);
  static WebSearch live(std::string endpoint, std::shared_ptr<const net::NetworkPolicy> policy);

  std::string search(std::string_view query) const;

 private:
  WebSearch() = default;

  std::map<std::string, std::vector<nlohmann::json>> canned_;
  std::string endpoint_;
  std::shared_ptr<const net::NetworkPolicy> policy_;
};

/// What the built-in tools operate on. Unset members leave the tool out.
struct ToolContext {
  const text2sql::Database* db = nullptr;
  std::string db_id;
  smmf::ChatBackend* sql_backend = nullptr;
  std::string sql_model = "mock";
  const index::KnowledgeBase* kb = nullptr;
  const encoder::Embedder* embedder = nullptr;
  std::shared_ptr<const WebSearch> web_search;
  text2sql::ExecLimits limits{100, std::chrono::milliseconds(5000)};
};

/// schema_analyzer, generate_sql, execute_sql (alias query_executor),
/// rag_search, web_search.
void register_builtin_tools(ToolRegistry& registry, ToolContext ctx);

struct RoleSpec {
  std::string name;
  std::string preamble;
  std::vector<std::string> allowed_tools;
};

struct SopStage {
  std::string role;
  std::string task;  ///< {INPUT} receives the previous stage's answer
};

struct Sop {
  std::string name;
  std::vector<SopStage> stages;
};

struct RoleBook {
  std::map<std::string, RoleSpec> roles;
  std::map<std::string, Sop> sops;

  const RoleSpec& role(std::string_view name) const;
  const Sop& sop(std::string_view name) const;
};

RoleBook parse_roles(const nlohmann::json& j);
RoleBook load_roles(const std::filesystem::path& path);
/// Errc::config_error when a role allows an unregistered tool or a stage
/// names an unknown role.
void validate_roles(const RoleBook& book, const ToolRegistry& registry);

struct AgentStep {
  std::size_t index = 0;
  std::string thought;
  std::string action;
  nlohmann::json action_input;
  std::string observation;
  bool failed = false;
  std::string raw;  ///< masked backend reply the step was parsed from
};

enum class EpisodeStatus { complete, incomplete, aborted };
std::string_view to_string(EpisodeStatus s) noexcept;

struct Episode {
  std::string answer;
  std::vector<AgentStep> steps;
  EpisodeStatus status = EpisodeStatus::complete;
  std::string error;
};

struct AgentOptions {
  std::size_t step_budget = 8;
  std::string model = "mock";
  std::size_t max_tokens = 512;
  /// Masks the question, tool inputs, observations and the answer.
  std::shared_ptr<const promptgen::Masker> masker = std::make_shared<promptgen::Masker>();
};

/// Parses an action object out of a reply; nullopt when malformed.
struct Action {
  std::string thought;
  std::string action;
  nlohmann::json input;
};
std::optional<Action> parse_action(std::string_view reply);

/// Ends at "final" (complete), at the step budget (incomplete, answer is the
/// last successful observation) or on a backend error (aborted).
Episode run_agent(std::string_view question, const RoleSpec& role, const ToolRegistry& registry,
                  smmf::ChatBackend& backend, const AgentOptions& opts = {});

/// One episode per stage; stops after an aborted stage.
std::vector<Episode> run_sop(const Sop& sop, std::string_view question, const RoleBook& book,
                             const ToolRegistry& registry, smmf::ChatBackend& backend,
                             const AgentOptions& opts = {});

nlohmann::json step_to_json(const AgentStep& step);
nlohmann::json episode_to_json(const Episode& ep);
/// One JSON object per line: each step, then a summary line.
std::string transcript_jsonl(const Episode& ep);

}  // namespace dbchat::agents
