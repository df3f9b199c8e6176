// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/server.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>

#include <httplib.h>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/text.hpp"

extern char** environ;

namespace dbchat::server {

namespace {

using nlohmann::json;

// Used when no roles file is configured.
constexpr std::string_view kDefaultRoles = R"({
  "roles": [
    {"name": "data_analyst",
     "preamble": "You are a data analyst. Answer questions about the connected database by inspecting its schema, writing SQL and reading the results.",
     "allowed_tools": ["schema_analyzer", "generate_sql", "execute_sql", "query_executor"]},
    {"name": "researcher",
     "preamble": "You are a researcher. Answer from the knowledge base, and from web search when it has nothing relevant.",
     "allowed_tools": ["rag_search", "web_search"]}
  ]
})";

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw Error(Errc::config_error, std::string(key) + ": expected a non-negative integer, got '" +
                                        std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  const std::string l = text::to_lower_ascii(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw Error(Errc::config_error, std::string(key) + ": expected a boolean, got '" + std::string(v) + "'");
}

using Setter = std::function<void(AppConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  auto path = [](std::filesystem::path AppConfig::*m) -> Setter {
    return [m](AppConfig& c, std::string_view, std::string_view v) { c.*m = std::string(v); };
  };
  auto str = [](std::string AppConfig::*m) -> Setter {
    return [m](AppConfig& c, std::string_view, std::string_view v) { c.*m = std::string(v); };
  };
  auto size = [](std::size_t AppConfig::*m) -> Setter {
    return [m](AppConfig& c, std::string_view k, std::string_view v) { c.*m = parse_size(k, v); };
  };
  static const std::map<std::string, Setter, std::less<>> table = {
      {"kb.root", path(&AppConfig::kb_root)},
      {"model.default", str(&AppConfig::default_model)},
      {"retrieval.k", size(&AppConfig::k)},
      {"retrieval.j", size(&AppConfig::j)},
      {"chunk.window", size(&AppConfig::window)},
      {"chunk.overlap", size(&AppConfig::overlap)},
      {"privacy.mask_rules", path(&AppConfig::mask_rules)},
      {"privacy.offline",
       [](AppConfig& c, std::string_view k, std::string_view v) { c.offline = parse_bool(k, v); }},
      {"server.host", str(&AppConfig::host)},
      {"server.port",
       [](AppConfig& c, std::string_view k, std::string_view v) {
         const auto p = parse_size(k, v);
         if (p > 65535) throw Error(Errc::config_error, std::string(k) + ": port out of range");
         c.port = static_cast<std::uint16_t>(p);
       }},
      {"templates.dir", path(&AppConfig::templates_dir)},
      {"encoder.path", path(&AppConfig::encoder_path)},
      {"text2sql.db_dir", path(&AppConfig::db_dir)},
      {"agents.roles", path(&AppConfig::roles_path)},
      {"agents.web_search", path(&AppConfig::web_search_fixtures)},
      {"agents.web_search_url", str(&AppConfig::web_search_url)},
      {"agents.step_budget", size(&AppConfig::step_budget)},
      {"backend.kind", str(&AppConfig::backend_kind)},
      {"backend.url", str(&AppConfig::backend_url)},
      {"backend.mock.first_token_ms", size(&AppConfig::mock_first_token_ms)},
      {"backend.mock.per_token_ms", size(&AppConfig::mock_per_token_ms)},
      {"backend.mock.tokens", size(&AppConfig::mock_tokens)},
  };
  return table;
}

std::string env_name(std::string_view key) {
  std::string out = "DBCHAT_";
  for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

bool valid_name(std::string_view s) {
  return !s.empty() && s.size() <= 128 && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-';
  });
}

void check_name(std::string_view what, std::string_view s) {
  if (!valid_name(s)) {
    throw Error(Errc::invalid_argument, std::string(what) + " must be 1-128 characters of [A-Za-z0-9_-]");
  }
}

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse_error, std::string("bad request body: ") + e.what());
  }
}

httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_json(res, smmf::error_body(e), smmf::http_status_for(e.code()));
    } catch (const json::exception& e) {
      send_json(res, smmf::error_body(Error(Errc::parse_error, e.what())), 400);
    } catch (const std::exception& e) {
      send_json(res, smmf::error_body(Error(Errc::io_error, e.what())), 500);
    }
  };
}

void write_event(httplib::DataSink& sink, const json& j) {
  const std::string line = "data: " + j.dump() + "\n\n";
  sink.write(line.data(), line.size());
}

void write_done(httplib::DataSink& sink) {
  static constexpr std::string_view kDone = "data: [DONE]\n\n";
  sink.write(kDone.data(), kDone.size());
  sink.done();
}

json sql_to_json(const SqlAnswer& a) {
  auto j = text2sql::table_to_json(a.table);
  j["v"] = 1;
  j["sql"] = a.sql;
  j["table"] = text2sql::render_table(a.table);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

AppConfig parse_config(std::string_view text, const Environment& env) {
  AppConfig cfg;
  const auto& table = setters();
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string line = text::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::config_error, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = text::trim(std::string_view(line).substr(0, eq));
    const std::string value = text::trim(std::string_view(line).substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw Error(Errc::config_error, "unknown config key " + key);
    it->second(cfg, key, value);
  }
  for (const auto& [key, set] : table) {
    if (const auto it = env.find(env_name(key)); it != env.end()) set(cfg, key, text::trim(it->second));
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path, const Environment& env) {
  return parse_config(binio::read_file(path), env);
}

Environment process_environment() {
  Environment env;
  for (char** e = environ; e && *e; ++e) {
    const std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos || !kv.starts_with("DBCHAT_")) continue;
    env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return env;
}

void validate_config(const AppConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(Errc::config_error, msg); };
  if (c.window == 0) fail("chunk.window must be at least 1");
  if (c.overlap >= c.window) fail("chunk.overlap must be less than chunk.window");
  if (c.k == 0) fail("retrieval.k must be at least 1");
  if (c.j == 0) fail("retrieval.j must be at least 1");
  if (c.j > c.k) fail("retrieval.j must not exceed retrieval.k");
  if (c.step_budget == 0) fail("agents.step_budget must be at least 1");
  if (c.default_model.empty()) fail("model.default must not be empty");
  if (c.backend_kind != "echo" && c.backend_kind != "mock" && c.backend_kind != "http") {
    fail("backend.kind must be echo, mock or http");
  }
  if (c.backend_kind == "mock" && c.mock_tokens == 0) fail("backend.mock.tokens must be at least 1");
  if (c.backend_kind == "http") {
    if (c.backend_url.empty()) fail("backend.url is required when backend.kind is http");
    net::Endpoint ep;
    try {
      ep = net::parse_url(c.backend_url);
    } catch (const Error& e) {
      fail(std::string("backend.url: ") + e.what());
    }
    if (c.offline && !net::is_loopback(ep.host)) {
      fail("backend.url must be a loopback address while privacy.offline is true");
    }
  }
  if (!c.web_search_url.empty()) {
    try {
      net::parse_url(c.web_search_url);
    } catch (const Error& e) {
      fail(std::string("agents.web_search_url: ") + e.what());
    }
  }
}

std::string_view to_string(SessionMode m) noexcept {
  switch (m) {
    case SessionMode::rag_qa: return "rag_qa";
    case SessionMode::text2sql: return "text2sql";
    case SessionMode::agent: return "agent";
  }
  return "rag_qa";
}

SessionMode parse_session_mode(std::string_view s) {
  if (s == "rag_qa") return SessionMode::rag_qa;
  if (s == "text2sql") return SessionMode::text2sql;
  if (s == "agent") return SessionMode::agent;
  throw Error(Errc::invalid_argument, "unknown session mode " + std::string(s));
}

// ---------------------------------------------------------------------------
// App

App::App(AppConfig cfg, std::shared_ptr<net::ConnectionRecorder> recorder) : cfg_(std::move(cfg)) {
  validate_config(cfg_);
  policy_ = std::make_shared<net::NetworkPolicy>(cfg_.offline);
  if (recorder) policy_->set_recorder(std::move(recorder));
  controller_ = std::make_unique<smmf::Controller>();
  gateway_ = std::make_unique<smmf::Gateway>(*controller_, policy_);
  masker_ = cfg_.mask_rules.empty()
                ? std::make_shared<promptgen::Masker>()
                : std::make_shared<promptgen::Masker>(promptgen::Masker::from_rules_file(cfg_.mask_rules));
  embedder_ = std::make_unique<encoder::Embedder>(
      cfg_.encoder_path.empty() ? encoder::Embedder::hash_features()
                                : encoder::Embedder::load(cfg_.encoder_path));
  if (!cfg_.templates_dir.empty()) templates_.load_directory(cfg_.templates_dir);
  roles_ = cfg_.roles_path.empty() ? agents::parse_roles(json::parse(kDefaultRoles))
                                   : agents::load_roles(cfg_.roles_path);
  if (!cfg_.web_search_url.empty()) {
    web_search_ = std::make_shared<agents::WebSearch>(agents::WebSearch::live(cfg_.web_search_url, policy_));
  } else if (!cfg_.web_search_fixtures.empty()) {
    web_search_ = std::make_shared<agents::WebSearch>(agents::WebSearch::from_fixtures(cfg_.web_search_fixtures));
  }
  listing_db_ = std::make_unique<text2sql::Database>(text2sql::Database::open_memory());
  listing_kb_ = std::make_shared<index::KnowledgeBase>("tools", embedder_->dimension());

  if (cfg_.backend_kind == "http") {
    controller_->register_worker({cfg_.default_model, cfg_.backend_url, {smmf::Capability::chat}, {}, {}});
  } else if (cfg_.backend_kind == "mock") {
    attach_backend(cfg_.default_model,
                   std::make_shared<smmf::MockBackend>(
                       std::chrono::milliseconds(cfg_.mock_first_token_ms),
                       std::chrono::milliseconds(cfg_.mock_per_token_ms), cfg_.mock_tokens));
  } else {
    attach_backend(cfg_.default_model, std::make_shared<smmf::EchoBackend>());
  }

  heartbeat_ = std::jthread([this](std::stop_token stop) {
    const auto period = controller_->options().heartbeat_window;
    std::unique_lock lock(local_mu_);
    while (!heartbeat_cv_.wait_for(lock, stop, period, [] { return false; })) {
      if (stop.stop_requested()) break;
      for (const auto& [model, address] : local_workers_) {
        try {
          controller_->heartbeat(model, address);
        } catch (const Error&) {
          // Removed through the API; nothing to keep alive.
        }
      }
    }
  });
}

App::~App() {
  heartbeat_.request_stop();
  if (heartbeat_.joinable()) heartbeat_.join();
}

void App::attach_backend(const std::string& model, std::shared_ptr<smmf::ChatBackend> backend) {
  const std::string address = "local://" + model;
  gateway_->attach(address, std::move(backend));
  std::lock_guard lock(local_mu_);
  const auto key = std::make_pair(model, address);
  if (std::find(local_workers_.begin(), local_workers_.end(), key) == local_workers_.end()) {
    controller_->register_worker({model, address, {smmf::Capability::chat}, {}, {}});
    local_workers_.push_back(key);
  }
}

std::vector<std::string> App::list_kbs() {
  std::set<std::string> names;
  {
    std::lock_guard lock(kb_mu_);
    for (const auto& [name, kb] : kbs_) names.insert(name);
  }
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(cfg_.kb_root, ec)) {
    if (entry.path().extension() == ".dbkb") names.insert(entry.path().stem().string());
  }
  return {names.begin(), names.end()};
}

std::shared_ptr<index::KnowledgeBase> App::kb(const std::string& name) {
  check_name("kb name", name);
  std::lock_guard lock(kb_mu_);
  if (const auto it = kbs_.find(name); it != kbs_.end()) return it->second;
  const auto path = cfg_.kb_root / (name + ".dbkb");
  if (!std::filesystem::exists(path)) throw Error(Errc::not_found, "no knowledge base named " + name);
  auto kb = std::make_shared<index::KnowledgeBase>(index::KnowledgeBase::load(path));
  if (kb->dimension() != embedder_->dimension()) {
    throw Error(Errc::dimension_mismatch, "knowledge base " + name + " has dimension " +
                                              std::to_string(kb->dimension()) + ", embedder has " +
                                              std::to_string(embedder_->dimension()));
  }
  kbs_.emplace(name, kb);
  return kb;
}

IngestReport App::ingest(const std::string& kb_name, const std::vector<ingest::SourceDocument>& docs) {
  check_name("kb name", kb_name);
  std::lock_guard ingest_lock(ingest_mu_);
  std::shared_ptr<index::KnowledgeBase> target;
  try {
    target = kb(kb_name);
  } catch (const Error& e) {
    if (e.code() != Errc::not_found) throw;
    target = std::make_shared<index::KnowledgeBase>(kb_name, embedder_->dimension());
  }
  const ingest::SplitOptions split{cfg_.window, cfg_.overlap};
  std::vector<ingest::Chunk> chunks;
  for (const auto& d : docs) {
    auto c = ingest::split_document(d, split);
    chunks.insert(chunks.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  target->index_chunks(chunks, *embedder_);
  std::filesystem::create_directories(cfg_.kb_root);
  target->save(cfg_.kb_root / (kb_name + ".dbkb"));
  {
    std::lock_guard lock(kb_mu_);
    kbs_.insert_or_assign(kb_name, target);
  }
  return {docs.size(), chunks.size()};
}

RagAnswer App::rag_answer(const std::string& kb_name, std::string_view question,
                          const smmf::TokenSink& on_token) {
  const auto base = kb(kb_name);
  const auto hits = retrieval::embedding_retrieve(*base, question, cfg_.k, *embedder_);
  const auto selected = promptgen::select_contexts(hits, cfg_.j);

  RagAnswer out;
  std::vector<std::string> texts;
  for (const auto& h : selected) {
    texts.push_back(masker_->mask_text(h.text));
    out.citations.push_back({index::to_string(h.chunk_key), texts.back(), h.score, h.retriever_kind});
  }
  const std::string masked_question = masker_->mask_text(question);
  const auto& tpl = templates_.select(question, "rag_qa");
  out.prompt = promptgen::render_prompt(tpl, texts, masked_question);

  auto req = smmf::user_request(cfg_.default_model, out.prompt);
  gateway_->generate(req, [&](std::string_view tok, bool last) {
    out.answer.append(tok);
    return on_token ? on_token(tok, last) : true;
  });
  return out;
}

text2sql::Database App::open_db(const std::string& db_id) const {
  check_name("db_id", db_id);
  if (cfg_.db_dir.empty()) throw Error(Errc::config_error, "text2sql.db_dir is not set");
  return text2sql::directory_factory(cfg_.db_dir)(db_id);
}

SqlAnswer App::text2sql(const std::string& db_id, std::string_view question,
                        std::optional<std::string> sql) {
  const auto db = open_db(db_id);
  SqlAnswer out;
  if (sql) {
    out.sql = *sql;
  } else {
    const auto sd = text2sql::analyze_schema(db, db_id);
    text2sql::GenerateOptions opts;
    opts.model = cfg_.default_model;
    out.sql = text2sql::generate_sql(sd, masker_->mask_text(question), *gateway_, opts);
  }
  out.table = text2sql::execute_sql(db, out.sql, {1000, std::chrono::milliseconds(5000)});
  return out;
}

std::unique_ptr<agents::ToolRegistry> App::tool_registry(const text2sql::Database* db,
                                                         const std::string& db_id,
                                                         const std::string& kb_name) {
  agents::ToolContext ctx;
  ctx.db = db;
  ctx.db_id = db_id;
  ctx.sql_backend = gateway_.get();
  ctx.sql_model = cfg_.default_model;
  if (!kb_name.empty()) ctx.kb = kb(kb_name).get();
  ctx.embedder = embedder_.get();
  ctx.web_search = web_search_;
  auto reg = std::make_unique<agents::ToolRegistry>();
  agents::register_builtin_tools(*reg, ctx);
  return reg;
}

agents::Episode App::run_agent(const std::string& role_name, std::string_view question,
                               const std::string& db_id, const std::string& kb_name,
                               std::optional<std::vector<std::string>> allowed,
                               std::optional<std::size_t> step_budget) {
  agents::RoleSpec role = roles_.role(role_name);
  std::optional<text2sql::Database> db;
  if (!db_id.empty()) db.emplace(open_db(db_id));
  const auto registry = tool_registry(db ? &*db : nullptr, db_id, kb_name);
  if (allowed) {
    for (const auto& t : *allowed) {
      if (!tool_registry(listing_db_.get(), "main", "")->contains(t) && !registry->contains(t)) {
        throw Error(Errc::unknown_tool, "unknown tool " + t);
      }
    }
    std::erase_if(role.allowed_tools, [&](const std::string& t) {
      return std::find(allowed->begin(), allowed->end(), t) == allowed->end();
    });
  }
  agents::AgentOptions opts;
  opts.step_budget = step_budget.value_or(cfg_.step_budget);
  opts.model = cfg_.default_model;
  opts.masker = masker_;
  return agents::run_agent(question, role, *registry, *gateway_, opts);
}

std::shared_ptr<ChatSession> App::create_session(SessionMode mode, std::string binding) {
  auto s = std::make_shared<ChatSession>();
  s->mode = mode;
  s->binding = std::move(binding);
  std::lock_guard lock(session_mu_);
  s->id = "s-" + std::to_string(++next_session_);
  sessions_.emplace(s->id, s);
  return s;
}

std::shared_ptr<ChatSession> App::session(const std::string& id) {
  std::lock_guard lock(session_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(Errc::not_found, "unknown session " + id);
  return it->second;
}

json citation_to_json(const Citation& c) {
  return {{"chunk_key", c.chunk_key},
          {"text", c.text},
          {"score", c.score},
          {"retriever_kind", retrieval::to_string(c.retriever_kind)}};
}

json rag_to_json(const RagAnswer& a, std::string_view session_id) {
  json cites = json::array();
  for (const auto& c : a.citations) cites.push_back(citation_to_json(c));
  return {{"v", 1}, {"session_id", session_id}, {"answer", a.answer}, {"citations", cites}};
}

// ---------------------------------------------------------------------------
// HTTP

void App::mount(httplib::Server& server) {
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, {{"v", 1}, {"status", "ok"}, {"version", kVersion}});
  });

  server.Get("/api/kb", guarded([this](const httplib::Request&, httplib::Response& res) {
    json kbs = json::array();
    for (const auto& name : list_kbs()) {
      const auto base = kb(name);
      kbs.push_back({{"name", name}, {"chunks", base->size()}, {"dimension", base->dimension()}});
    }
    send_json(res, {{"v", 1}, {"kbs", kbs}});
  }));

  server.Post(R"(/api/kb/([^/]+)/ingest)", guarded([this](const httplib::Request& req,
                                                          httplib::Response& res) {
    const std::string name = req.matches[1];
    const auto body = parse_body(req);
    std::vector<ingest::SourceDocument> docs;
    for (const auto& d : body.at("documents")) {
      const auto kind = ingest::parse_media_kind(d.value("media_kind", "plain"));
      auto doc = ingest::make_document(d.at("doc_id").get<std::string>(),
                                       d.at("text").get<std::string>(), kind);
      doc.source_uri = d.value("source_uri", doc.doc_id);
      docs.push_back(std::move(doc));
    }
    const auto report = ingest(name, docs);
    send_json(res, {{"v", 1}, {"kb", name}, {"documents", report.documents}, {"chunks", report.chunks}});
  }));

  server.Post("/api/chat", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::shared_ptr<ChatSession> s;
    if (body.contains("session_id")) {
      s = session(body["session_id"].get<std::string>());
    } else {
      const auto mode = parse_session_mode(body.value("mode", "rag_qa"));
      const std::string binding =
          mode == SessionMode::rag_qa ? body.at("kb").get<std::string>() : body.value("db_id", "");
      s = create_session(mode, binding);
    }
    const std::string question = body.at("question").get<std::string>();
    if (text::trim(question).empty()) throw Error(Errc::missing_question, "missing question");

    if (s->mode == SessionMode::rag_qa && body.value("stream", false)) {
      res.set_chunked_content_provider(
          "text/event-stream", [this, s, question](std::size_t, httplib::DataSink& sink) {
            std::lock_guard lock(s->mu);
            std::uint64_t seq = 0;
            try {
              const auto ans = rag_answer(s->binding, question, [&](std::string_view tok, bool last) {
                smmf::ChatChunk c{++seq, std::string(tok), seq == 1, last, false, {}};
                write_event(sink, smmf::chunk_to_json(c, s->id, cfg_.default_model));
                return sink.is_writable();
              });
              s->history.push_back({"user", masker_->mask_text(question)});
              s->history.push_back({"assistant", ans.answer});
              auto done = rag_to_json(ans, s->id);
              done["object"] = "citations";
              write_event(sink, done);
            } catch (const Error& e) {
              smmf::ChatChunk c{++seq, {}, seq == 1, true, true, e.what()};
              write_event(sink, smmf::chunk_to_json(c, s->id, cfg_.default_model));
            }
            write_done(sink);
            return true;
          });
      return;
    }

    std::lock_guard lock(s->mu);
    json out;
    std::string reply;
    switch (s->mode) {
      case SessionMode::rag_qa: {
        const auto ans = rag_answer(s->binding, question);
        out = rag_to_json(ans, s->id);
        reply = ans.answer;
        break;
      }
      case SessionMode::text2sql: {
        const auto ans = text2sql(s->binding, question);
        out = sql_to_json(ans);
        out["session_id"] = s->id;
        reply = ans.sql;
        break;
      }
      case SessionMode::agent: {
        const auto ep = run_agent(body.value("role", "data_analyst"), question, s->binding,
                                  body.value("kb", ""));
        out = agents::episode_to_json(ep);
        out["session_id"] = s->id;
        reply = ep.answer;
        break;
      }
    }
    s->history.push_back({"user", masker_->mask_text(question)});
    s->history.push_back({"assistant", reply});
    out["mode"] = to_string(s->mode);
    send_json(res, out);
  }));

  server.Post("/api/text2sql", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::optional<std::string> sql;
    if (body.contains("sql")) sql = body["sql"].get<std::string>();
    const auto ans = text2sql(body.at("db_id").get<std::string>(), body.value("question", ""), sql);
    send_json(res, sql_to_json(ans));
  }));

  server.Get("/api/tools", guarded([this](const httplib::Request&, httplib::Response& res) {
    agents::ToolContext ctx;
    ctx.db = listing_db_.get();
    ctx.db_id = "main";
    ctx.sql_backend = gateway_.get();
    ctx.kb = listing_kb_.get();
    ctx.embedder = embedder_.get();
    ctx.web_search = web_search_;
    agents::ToolRegistry reg;
    agents::register_builtin_tools(reg, ctx);
    json tools = json::array();
    for (const auto* t : reg.list()) tools.push_back(agents::tool_to_json(*t));
    json roles = json::array();
    for (const auto& [name, role] : roles_.roles) {
      roles.push_back({{"name", name}, {"allowed_tools", role.allowed_tools}});
    }
    send_json(res, {{"v", 1}, {"tools", tools}, {"aliases", {{"query_executor", "execute_sql"}}}, {"roles", roles}});
  }));

  server.Post("/api/agent", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    std::optional<std::vector<std::string>> allowed;
    if (body.contains("allowed_tools")) allowed = body["allowed_tools"].get<std::vector<std::string>>();
    std::optional<std::size_t> budget;
    if (body.contains("step_budget")) budget = body["step_budget"].get<std::size_t>();
    const auto ep = run_agent(body.value("role", "data_analyst"), body.at("question").get<std::string>(),
                              body.value("db_id", ""), body.value("kb", ""), allowed, budget);
    send_json(res, agents::episode_to_json(ep));
  }));

  smmf::mount_gateway_routes(server, *gateway_);
}

Service::Service(App& app) : app_(app), server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(64); };
  app_.mount(*server_);
}

Service::~Service() { stop(); }

void Service::bind(const std::string& host, std::uint16_t port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p <= 0) throw Error(Errc::io_error, "cannot bind " + host);
    port_ = static_cast<std::uint16_t>(p);
  } else {
    if (!server_->bind_to_port(host, port)) {
      throw Error(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
}

void Service::run() { server_->listen_after_bind(); }

void Service::start() {
  thread_ = std::thread([this] { run(); });
  server_->wait_until_ready();
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace dbchat::server
