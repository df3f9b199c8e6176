// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/agents.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <httplib.h>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/retrieval.hpp"
#include "dbchat/text.hpp"

namespace dbchat::agents {

namespace {

using nlohmann::json;

constexpr std::string_view kFinal = "final";

std::string truncate(std::string s, std::size_t limit) {
  if (s.size() <= limit) return s;
  constexpr std::string_view kEllipsis = "...";
  if (limit < kEllipsis.size()) return {};
  // Cut on a UTF-8 boundary, leaving room for the marker.
  std::size_t cut = limit - kEllipsis.size();
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  s.resize(cut);
  s += kEllipsis;
  return s;
}

std::string string_param(const json& input, std::string_view name) {
  const auto it = input.find(name);
  if (it == input.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

json mask_json(const json& j, const promptgen::Masker& masker) {
  if (j.is_string()) return masker.mask_text(j.get<std::string>());
  if (j.is_array() || j.is_object()) {
    json out = j;
    for (auto& v : out) v = mask_json(v, masker);
    return out;
  }
  return j;
}

std::string render_results(const std::vector<json>& results) {
  if (results.empty()) return "no results";
  std::string out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += "[" + std::to_string(i + 1) + "] " + r.value("title", "") + ": " + r.value("snippet", "");
    if (r.contains("url")) out += " (" + r["url"].get<std::string>() + ")";
    out += "\n";
  }
  return out;
}

std::string normalize_query(std::string_view q) { return text::to_lower_ascii(text::trim(q)); }

std::string tool_listing(const RoleSpec& role, const ToolRegistry& registry) {
  std::string out;
  for (const auto& id : role.allowed_tools) {
    if (!registry.contains(id)) continue;
    const auto& tool = registry.get(id);
    out += "- " + id + ": " + tool.description + " Input: {";
    for (std::size_t i = 0; i < tool.params.size(); ++i) {
      if (i) out += ", ";
      out += "\"" + tool.params[i].name + "\": " + tool.params[i].type;
    }
    out += "}\n";
  }
  return out;
}

std::string system_prompt(const RoleSpec& role, const ToolRegistry& registry) {
  return role.preamble + "\n\nYou can use these tools:\n" + tool_listing(role, registry) +
         "\nReply with exactly one JSON object {\"thought\": string, \"action\": tool id or "
         "\"final\", \"action_input\": object}. For \"final\", action_input is the answer text.";
}

constexpr std::string_view kReask =
    "Your last reply was not a valid action. Reply with one JSON object with keys thought, "
    "action and action_input.";

}  // namespace

// ---------------------------------------------------------------------------
// Registry

void ToolRegistry::register_tool(Tool tool) {
  if (tool.tool_id.empty() || !tool.handler) {
    throw Error(Errc::invalid_argument, "tool needs an id and a handler");
  }
  if (contains(tool.tool_id)) {
    throw Error(Errc::duplicate_registration, "tool " + tool.tool_id + " is already registered");
  }
  auto id = tool.tool_id;
  tools_.emplace(std::move(id), std::move(tool));
}

void ToolRegistry::add_alias(std::string alias, std::string_view target) {
  if (contains(alias)) throw Error(Errc::duplicate_registration, "tool " + alias + " is already registered");
  if (!tools_.contains(target)) throw Error(Errc::unknown_tool, "unknown tool " + std::string(target));
  aliases_.emplace(std::move(alias), std::string(target));
}

bool ToolRegistry::contains(std::string_view id) const {
  return tools_.contains(id) || aliases_.contains(id);
}

std::vector<const Tool*> ToolRegistry::list() const {
  std::vector<const Tool*> out;
  for (const auto& [id, tool] : tools_) out.push_back(&tool);
  return out;
}

std::string ToolRegistry::resolve(std::string_view id) const {
  if (tools_.contains(id)) return std::string(id);
  if (const auto it = aliases_.find(id); it != aliases_.end()) return it->second;
  throw Error(Errc::unknown_tool, "unknown tool " + std::string(id));
}

const Tool& ToolRegistry::get(std::string_view id) const { return tools_.find(resolve(id))->second; }

Observation ToolRegistry::invoke(std::string_view id, const json& input) const {
  const Tool& tool = get(id);
  const json args = input.is_object() ? input : json::object();
  for (const auto& p : tool.params) {
    const auto it = args.find(p.name);
    if (it == args.end()) {
      if (p.required) return {"error: missing parameter " + p.name, false};
      continue;
    }
    const bool ok = p.type == "integer" ? it->is_number_integer() : it->is_string();
    if (!ok) return {"error: parameter " + p.name + " must be " + p.type, false};
  }
  try {
    return {truncate(tool.handler(args), truncation_), true};
  } catch (const std::exception& e) {
    return {truncate(std::string("error: ") + e.what(), truncation_), false};
  }
}

json tool_to_json(const Tool& tool) {
  json params = json::array();
  for (const auto& p : tool.params) {
    params.push_back({{"name", p.name},
                      {"type", p.type},
                      {"description", p.description},
                      {"required", p.required}});
  }
  return {{"tool_id", tool.tool_id}, {"description", tool.description}, {"params", params}};
}

// ---------------------------------------------------------------------------
// Web search

WebSearch WebSearch::from_fixtures(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::config_error, "web search fixtures file not found: " + path.string());
  }
  WebSearch ws;
  try {
    const auto j = json::parse(binio::read_file(path));
    for (const auto& [query, results] : j.at("queries").items()) {
      auto& list = ws.canned_[normalize_query(query)];
      for (const auto& r : results) list.push_back(r);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::config_error, "bad web search fixtures " + path.string() + ": " + e.what());
  }
  return ws;
}

WebSearch WebSearch::live(std::string endpoint, std::shared_ptr<const net::NetworkPolicy> policy) {
  WebSearch ws;
  net::parse_url(endpoint);
  ws.endpoint_ = std::move(endpoint);
  ws.policy_ = std::move(policy);
  return ws;
}

std::string WebSearch::search(std::string_view query) const {
  if (endpoint_.empty()) {
    const auto it = canned_.find(normalize_query(query));
    return render_results(it == canned_.end() ? std::vector<json>{} : it->second);
  }
  const auto ep = net::parse_url(endpoint_);
  if (policy_) policy_->check(ep.host, ep.port);
  httplib::Client cli(ep.host, ep.port);
  cli.set_connection_timeout(std::chrono::seconds(10));
  cli.set_read_timeout(std::chrono::seconds(10));
  const auto res = cli.Get((ep.path.empty() ? "/" : ep.path) + "?q=" +
                           httplib::detail::encode_query_param(std::string(query)));
  if (!res || res->status != 200) throw Error(Errc::backend_error, "web search request failed");
  std::vector<json> results;
  try {
    for (const auto& r : json::parse(res->body).at("results")) results.push_back(r);
  } catch (const json::exception& e) {
    throw Error(Errc::backend_error, std::string("bad web search response: ") + e.what());
  }
  return render_results(results);
}

// ---------------------------------------------------------------------------
// Built-in tools

void register_builtin_tools(ToolRegistry& registry, ToolContext ctx) {
  if (ctx.db) {
    registry.register_tool({"schema_analyzer",
                            "Describe the tables, columns and keys of the database.",
                            {},
                            [ctx](const json&) {
                              return text2sql::serialize_schema(
                                  text2sql::analyze_schema(*ctx.db, ctx.db_id));
                            }});
    registry.register_tool({"execute_sql",
                            "Run a read-only SQL query and return the result table.",
                            {{"sql", "string", "a single SELECT statement"}},
                            [ctx](const json& in) {
                              return text2sql::render_table(
                                  text2sql::execute_sql(*ctx.db, string_param(in, "sql"), ctx.limits));
                            }});
    registry.add_alias("query_executor", "execute_sql");
    if (ctx.sql_backend) {
      registry.register_tool({"generate_sql",
                              "Write a SQL query answering a question about the database.",
                              {{"question", "string", "natural-language question"}},
                              [ctx](const json& in) {
                                const auto sd = text2sql::analyze_schema(*ctx.db, ctx.db_id);
                                text2sql::GenerateOptions opts;
                                opts.model = ctx.sql_model;
                                return text2sql::generate_sql(sd, string_param(in, "question"),
                                                              *ctx.sql_backend, opts);
                              }});
    }
  }
  if (ctx.kb && ctx.embedder) {
    registry.register_tool(
        {"rag_search",
         "Search the knowledge base for passages relevant to a query.",
         {{"query", "string", "search text"}, {"k", "integer", "passages to return", false}},
         [ctx](const json& in) {
           const auto k = in.contains("k") ? in["k"].get<std::size_t>() : std::size_t{4};
           const auto hits =
               retrieval::embedding_retrieve(*ctx.kb, string_param(in, "query"), k, *ctx.embedder);
           std::string out;
           char score[32];
           for (std::size_t i = 0; i < hits.size(); ++i) {
             std::snprintf(score, sizeof score, "%.4f", hits[i].score);
             out += "[" + std::to_string(i + 1) + "] (" + score + ") " + hits[i].text + "\n";
           }
           return out.empty() ? std::string("no results") : out;
         }});
  }
  if (ctx.web_search) {
    registry.register_tool({"web_search",
                            "Look up a query on the web.",
                            {{"query", "string", "search text"}},
                            [ctx](const json& in) { return ctx.web_search->search(string_param(in, "query")); }});
  }
}

// ---------------------------------------------------------------------------
// Roles

const RoleSpec& RoleBook::role(std::string_view name) const {
  const auto it = roles.find(std::string(name));
  if (it == roles.end()) throw Error(Errc::not_found, "unknown role " + std::string(name));
  return it->second;
}

const Sop& RoleBook::sop(std::string_view name) const {
  const auto it = sops.find(std::string(name));
  if (it == sops.end()) throw Error(Errc::not_found, "unknown SOP " + std::string(name));
  return it->second;
}

RoleBook parse_roles(const json& j) {
  try {
    RoleBook book;
    for (const auto& r : j.at("roles")) {
      RoleSpec role{r.at("name").get<std::string>(), r.value("preamble", ""),
                    r.value("allowed_tools", std::vector<std::string>{})};
      auto name = role.name;
      if (!book.roles.emplace(std::move(name), std::move(role)).second) {
        throw Error(Errc::config_error, "duplicate role " + r.at("name").get<std::string>());
      }
    }
    for (const auto& s : j.value("sops", json::array())) {
      Sop sop{s.at("name").get<std::string>(), {}};
      for (const auto& st : s.at("stages")) {
        sop.stages.push_back({st.at("role").get<std::string>(), st.value("task", "{INPUT}")});
      }
      auto name = sop.name;
      book.sops.emplace(std::move(name), std::move(sop));
    }
    return book;
  } catch (const json::exception& e) {
    throw Error(Errc::config_error, std::string("bad role config: ") + e.what());
  }
}

RoleBook load_roles(const std::filesystem::path& path) {
  try {
    return parse_roles(json::parse(binio::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(Errc::config_error, path.string() + ": " + e.what());
  }
}

void validate_roles(const RoleBook& book, const ToolRegistry& registry) {
  for (const auto& [name, role] : book.roles) {
    for (const auto& t : role.allowed_tools) {
      if (!registry.contains(t)) {
        throw Error(Errc::config_error, "role " + name + " allows unregistered tool " + t);
      }
    }
  }
  for (const auto& [name, sop] : book.sops) {
    for (const auto& st : sop.stages) {
      if (!book.roles.contains(st.role)) {
        throw Error(Errc::config_error, "SOP " + name + " names unknown role " + st.role);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Loop

std::string_view to_string(EpisodeStatus s) noexcept {
  switch (s) {
    case EpisodeStatus::complete: return "complete";
    case EpisodeStatus::incomplete: return "incomplete";
    case EpisodeStatus::aborted: return "aborted";
  }
  return "complete";
}

std::optional<Action> parse_action(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    return std::nullopt;
  }
  json j;
  try {
    j = json::parse(reply.substr(open, close - open + 1));
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
  if (!j.is_object() || !j.contains("action") || !j["action"].is_string()) return std::nullopt;
  Action a;
  a.action = j["action"].get<std::string>();
  if (a.action.empty()) return std::nullopt;
  if (j.contains("thought") && j["thought"].is_string()) a.thought = j["thought"].get<std::string>();
  a.input = j.value("action_input", json::object());
  return a;
}

Episode run_agent(std::string_view question, const RoleSpec& role, const ToolRegistry& registry,
                  smmf::ChatBackend& backend, const AgentOptions& opts) {
  if (opts.step_budget == 0) throw Error(Errc::invalid_argument, "step budget must be at least 1");
  auto mask = [&](std::string_view s) {
    return opts.masker ? opts.masker->mask_text(s) : std::string(s);
  };

  smmf::ChatRequest req;
  req.model = opts.model;
  req.max_tokens = opts.max_tokens;
  req.messages.push_back({"system", system_prompt(role, registry)});
  req.messages.push_back({"user", "Question: " + mask(question)});

  Episode ep;
  std::string best_effort;
  for (std::size_t i = 0; i < opts.step_budget; ++i) {
    AgentStep step;
    step.index = i;
    std::optional<Action> action;
    for (int attempt = 0; attempt < 2 && !action; ++attempt) {
      if (attempt == 1) {
        req.messages.push_back({"assistant", step.raw});
        req.messages.push_back({"user", std::string(kReask)});
      }
      try {
        step.raw = mask(smmf::complete(backend, req));
      } catch (const std::exception& e) {
        ep.status = EpisodeStatus::aborted;
        ep.error = e.what();
        ep.answer = best_effort;
        return ep;
      }
      action = parse_action(step.raw);
    }
    req.messages.push_back({"assistant", step.raw});

    if (!action) {
      step.failed = true;
      step.observation = "error: malformed action";
    } else {
      step.thought = mask(action->thought);
      step.action = action->action;
      step.action_input = opts.masker ? mask_json(action->input, *opts.masker) : action->input;
      if (step.action == kFinal) {
        const auto& in = step.action_input;
        ep.answer = mask(in.is_string()   ? in.get<std::string>()
                         : in.is_object() ? in.value("answer", "")
                                          : in.dump());
        ep.steps.push_back(std::move(step));
        ep.status = EpisodeStatus::complete;
        return ep;
      }
      const bool allowed = std::find(role.allowed_tools.begin(), role.allowed_tools.end(),
                                     step.action) != role.allowed_tools.end();
      if (!registry.contains(step.action)) {
        step.failed = true;
        step.observation = "error: unknown tool " + step.action;
      } else if (!allowed) {
        step.failed = true;
        step.observation = "error: tool " + step.action + " is not allowed for role " + role.name;
      } else {
        const auto obs = registry.invoke(step.action, step.action_input);
        step.failed = !obs.ok;
        step.observation = mask(obs.text);
        if (obs.ok) best_effort = step.observation;
      }
    }
    req.messages.push_back({"user", "Observation: " + step.observation});
    ep.steps.push_back(std::move(step));
  }
  ep.status = EpisodeStatus::incomplete;
  ep.answer = best_effort;
  return ep;
}

std::vector<Episode> run_sop(const Sop& sop, std::string_view question, const RoleBook& book,
                             const ToolRegistry& registry, smmf::ChatBackend& backend,
                             const AgentOptions& opts) {
  std::vector<Episode> out;
  std::string input(question);
  for (const auto& stage : sop.stages) {
    std::string task = stage.task;
    if (const auto pos = task.find("{INPUT}"); pos != std::string::npos) {
      task.replace(pos, 7, input);
    }
    out.push_back(run_agent(task, book.role(stage.role), registry, backend, opts));
    if (out.back().status == EpisodeStatus::aborted) break;
    input = out.back().answer;
  }
  return out;
}

json step_to_json(const AgentStep& step) {
  return {{"v", 1},
          {"step", step.index},
          {"thought", step.thought},
          {"action", step.action},
          {"action_input", step.action_input},
          {"observation", step.observation},
          {"failed", step.failed}};
}

json episode_to_json(const Episode& ep) {
  json steps = json::array();
  for (const auto& s : ep.steps) steps.push_back(step_to_json(s));
  return {{"v", 1},
          {"answer", ep.answer},
          {"status", to_string(ep.status)},
          {"error", ep.error},
          {"steps", steps}};
}

std::string transcript_jsonl(const Episode& ep) {
  std::string out;
  for (const auto& s : ep.steps) out += step_to_json(s).dump() + "\n";
  out += json({{"v", 1},
               {"answer", ep.answer},
               {"status", to_string(ep.status)},
               {"error", ep.error},
               {"steps", ep.steps.size()}})
             .dump() +
         "\n";
  return out;
}

}  // namespace dbchat::agents
