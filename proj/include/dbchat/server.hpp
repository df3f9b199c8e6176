// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Application core and HTTP service: configuration, knowledge bases, chat
// sessions, the RAG answer pipeline, Text-to-SQL chat and agent runs, with the
// serving gateway mounted on the same server.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbchat/agents.hpp"
#include "dbchat/encoder.hpp"
#include "dbchat/index.hpp"
#include "dbchat/ingest.hpp"
#include "dbchat/net.hpp"
#include "dbchat/promptgen.hpp"
#include "dbchat/retrieval.hpp"
#include "dbchat/smmf.hpp"
#include "dbchat/text2sql.hpp"

namespace httplib {
class Server;
}

namespace dbchat::server {

inline constexpr std::string_view kVersion = "0.1.0";

/// Dotted keys in a `key = value` file; DBCHAT_<KEY> environment variables
/// (dots as underscores, upper case) override file values.
struct AppConfig {
  std::filesystem::path kb_root = "kb";                 // kb.root
  std::string default_model = "local";                 // model.default
  std::size_t k = retrieval::kDefaultK;                 // retrieval.k
  std::size_t j = 4;                                    // retrieval.j
  std::size_t window = 512;                             // chunk.window
  std::size_t overlap = 64;                             // chunk.overlap
  std::filesystem::path mask_rules;                     // privacy.mask_rules
  bool offline = true;                                  // privacy.offline
  std::string host = "127.0.0.1";                       // server.host
  std::uint16_t port = 8080;                            // server.port
  std::filesystem::path templates_dir;                  // templates.dir
  std::filesystem::path encoder_path;                   // encoder.path
  std::filesystem::path db_dir;                         // text2sql.db_dir
  std::filesystem::path roles_path;                     // agents.roles
  std::filesystem::path web_search_fixtures;            // agents.web_search
  std::string web_search_url;                           // agents.web_search_url
  std::size_t step_budget = 8;                          // agents.step_budget
  std::string backend_kind = "echo";                    // backend.kind: echo | mock | http
  std::string backend_url;                              // backend.url
  std::size_t mock_first_token_ms = 50;                 // backend.mock.first_token_ms
  std::size_t mock_per_token_ms = 10;                   // backend.mock.per_token_ms
  std::size_t mock_tokens = 256;                        // backend.mock.tokens
};

using Environment = std::map<std::string, std::string>;

/// Errc::config_error naming the offending key or field.
AppConfig parse_config(std::string_view text, const Environment& env = {});
AppConfig load_config(const std::filesystem::path& path, const Environment& env);
/// DBCHAT_* variables of the current process.
Environment process_environment();
void validate_config(const AppConfig& cfg);

enum class SessionMode { rag_qa, text2sql, agent };
std::string_view to_string(SessionMode m) noexcept;
SessionMode parse_session_mode(std::string_view s);

struct ChatSession {
  std::string id;
  SessionMode mode = SessionMode::rag_qa;
  std::string binding;  ///< kb name or db id
  std::vector<smmf::Message> history;
  std::mutex mu;        ///< serializes requests within the session
};

struct Citation {
  std::string chunk_key;
  std::string text;
  double score = 0.0;
  retrieval::RetrieverKind retriever_kind = retrieval::RetrieverKind::embedding;
};

struct RagAnswer {
  std::string answer;
  std::vector<Citation> citations;
  std::string prompt;  ///< exactly what was sent to the backend
};

struct SqlAnswer {
  std::string sql;
  text2sql::ResultTable table;
};

struct IngestReport {
  std::size_t documents = 0;
  std::size_t chunks = 0;
};

class App {
 public:
  /// Validates the config and sets up the gateway with one worker for
  /// default_model built from the backend.* keys.
  explicit App(AppConfig cfg, std::shared_ptr<net::ConnectionRecorder> recorder = nullptr);
  ~App();

  const AppConfig& config() const noexcept { return cfg_; }
  const net::NetworkPolicy& policy() const noexcept { return *policy_; }
  smmf::Controller& controller() noexcept { return *controller_; }
  smmf::Gateway& gateway() noexcept { return *gateway_; }
  const promptgen::Masker& masker() const noexcept { return *masker_; }
  const encoder::Embedder& embedder() const noexcept { return *embedder_; }

  /// Registers an in-process worker for `model` (replacing nothing else).
  void attach_backend(const std::string& model, std::shared_ptr<smmf::ChatBackend> backend);

  std::vector<std::string> list_kbs();
  /// Creates the kb when missing, indexes, and persists it under kb_root.
  IngestReport ingest(const std::string& kb_name, const std::vector<ingest::SourceDocument>& docs);
  std::shared_ptr<index::KnowledgeBase> kb(const std::string& name);

  /// embed -> retrieve K -> select J -> mask -> render -> route.
  RagAnswer rag_answer(const std::string& kb_name, std::string_view question,
                       const smmf::TokenSink& on_token = {});
  /// Generates SQL via the default model unless `sql` is given, then runs it.
  SqlAnswer text2sql(const std::string& db_id, std::string_view question,
                     std::optional<std::string> sql = std::nullopt);
  /// `allowed` narrows the role's tools; unknown ids are rejected.
  agents::Episode run_agent(const std::string& role, std::string_view question,
                            const std::string& db_id, const std::string& kb_name,
                            std::optional<std::vector<std::string>> allowed = std::nullopt,
                            std::optional<std::size_t> step_budget = std::nullopt);
  /// Tools available to agents for a db/kb binding.
  std::unique_ptr<agents::ToolRegistry> tool_registry(const text2sql::Database* db,
                                                      const std::string& db_id,
                                                      const std::string& kb_name);
  const agents::RoleBook& roles() const noexcept { return roles_; }

  std::shared_ptr<ChatSession> create_session(SessionMode mode, std::string binding);
  /// Errc::not_found for an unknown id.
  std::shared_ptr<ChatSession> session(const std::string& id);

  /// Mounts every endpoint on `server`.
  void mount(httplib::Server& server);

 private:
  text2sql::Database open_db(const std::string& db_id) const;

  AppConfig cfg_;
  std::shared_ptr<net::NetworkPolicy> policy_;
  std::unique_ptr<smmf::Controller> controller_;
  std::unique_ptr<smmf::Gateway> gateway_;
  std::shared_ptr<const promptgen::Masker> masker_;
  std::unique_ptr<encoder::Embedder> embedder_;
  promptgen::TemplateRegistry templates_;
  agents::RoleBook roles_;
  std::shared_ptr<const agents::WebSearch> web_search_;

  std::mutex kb_mu_;
  std::map<std::string, std::shared_ptr<index::KnowledgeBase>> kbs_;
  std::mutex ingest_mu_;

  std::mutex session_mu_;
  std::map<std::string, std::shared_ptr<ChatSession>> sessions_;
  std::uint64_t next_session_ = 0;

  // Stand-ins so the tool list can be described without a binding.
  std::unique_ptr<text2sql::Database> listing_db_;
  std::shared_ptr<index::KnowledgeBase> listing_kb_;

  // In-process workers are kept alive with periodic heartbeats.
  std::mutex local_mu_;
  std::vector<std::pair<std::string, std::string>> local_workers_;
  std::condition_variable_any heartbeat_cv_;
  std::jthread heartbeat_;
};

nlohmann::json citation_to_json(const Citation& c);
nlohmann::json rag_to_json(const RagAnswer& a, std::string_view session_id);

/// Binds and blocks until stop() is called from another thread.
class Service {
 public:
  explicit Service(App& app);
  ~Service();

  /// Errc::io_error when the address cannot be bound. Port 0 picks one.
  void bind(const std::string& host, std::uint16_t port);
  std::uint16_t port() const noexcept { return port_; }
  void run();    ///< blocking
  void start();  ///< background thread
  void stop();

 private:
  App& app_;
  std::unique_ptr<httplib::Server> server_;
  std::uint16_t port_ = 0;
  std::thread thread_;
};

}  // namespace dbchat::server
