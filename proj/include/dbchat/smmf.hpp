// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-model serving: chat backends, the worker registry (controller), the
// routing gateway, HTTP/SSE transport and the latency/throughput bench.

#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dbchat/error.hpp"
#include "dbchat/net.hpp"

namespace httplib {
class Server;
}

namespace dbchat::smmf {

using SteadyClock = std::chrono::steady_clock;

struct Message {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  std::size_t max_tokens = 256;
  bool stream = true;
  std::string request_id;  ///< assigned by the gateway when empty
  std::optional<SteadyClock::time_point> deadline;
};

ChatRequest user_request(std::string model, std::string content);

/// Text of the last user message, or empty.
std::string last_user_content(const ChatRequest& req);

/// Receives one decoded token; `last` marks the final token. Returning false
/// cancels generation.
using TokenSink = std::function<bool(std::string_view token, bool last)>;

/// An inference backend. generate() emits at least one token on success and
/// throws dbchat::Error (backend_error, timeout) on failure.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual void generate(const ChatRequest& req, const TokenSink& sink) = 0;
};

/// Concatenated completion text.
std::string complete(ChatBackend& backend, const ChatRequest& req);

/// Splits text into whitespace-led tokens: "a b c" -> "a", " b", " c".
std::vector<std::string> split_tokens(std::string_view text);

/// Fixed-delay stand-in for an inference engine: token i is emitted at
/// first_token_delay + i * per_token_delay after the call, content "t<i> ".
class MockBackend final : public ChatBackend {
 public:
  MockBackend(std::chrono::milliseconds first_token_delay,
              std::chrono::milliseconds per_token_delay, std::size_t tokens);
  void generate(const ChatRequest& req, const TokenSink& sink) override;

  std::size_t tokens() const noexcept { return tokens_; }

 private:
  std::chrono::milliseconds first_;
  std::chrono::milliseconds per_;
  std::size_t tokens_;
};

/// Replays queued completions in order; each queued entry may instead be a
/// failure after `fail_after` tokens. Requests are recorded.
class ScriptedBackend final : public ChatBackend {
 public:
  struct Step {
    std::string completion;
    std::optional<std::size_t> fail_after;
  };

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<std::string> completions);

  void push(std::string completion);
  void push_failure(std::string partial, std::size_t fail_after);
  void generate(const ChatRequest& req, const TokenSink& sink) override;

  std::vector<ChatRequest> requests() const;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::deque<Step> script_;
  std::vector<ChatRequest> seen_;
};

/// Streams back the last user message.
class EchoBackend final : public ChatBackend {
 public:
  void generate(const ChatRequest& req, const TokenSink& sink) override;
};

class FunctionBackend final : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  void generate(const ChatRequest& req, const TokenSink& sink) override;

 private:
  Fn fn_;
};

/// Client for a chat-completions endpoint speaking SSE (a worker, or any
/// compatible inference server). Consults the network policy per request.
class HttpBackend final : public ChatBackend {
 public:
  HttpBackend(std::string base_url, std::shared_ptr<const net::NetworkPolicy> policy,
              std::chrono::milliseconds timeout = std::chrono::seconds(60));
  void generate(const ChatRequest& req, const TokenSink& sink) override;

 private:
  net::Endpoint endpoint_;
  std::shared_ptr<const net::NetworkPolicy> policy_;
  std::chrono::milliseconds timeout_;
};

enum class Capability { chat, embedding };
enum class WorkerStatus { healthy, stale, removed };

std::string_view to_string(Capability c) noexcept;
Capability parse_capability(std::string_view s);
std::string_view to_string(WorkerStatus s) noexcept;

struct ModelRegistration {
  std::string model_name;
  std::string worker_address;
  std::set<Capability> capabilities{Capability::chat};
  SteadyClock::time_point last_heartbeat{};
  WorkerStatus status = WorkerStatus::healthy;
};

struct ControllerOptions {
  std::chrono::milliseconds heartbeat_window{10000};
  std::size_t missed_heartbeats = 3;
};

/// Worker registry. A registration turns stale once more than
/// missed_heartbeats * heartbeat_window has passed since its last heartbeat.
class Controller {
 public:
  using Clock = std::function<SteadyClock::time_point()>;

  explicit Controller(ControllerOptions opts = {}, Clock clock = {});

  /// Errc::duplicate_registration when (model, address) is present.
  void register_worker(ModelRegistration reg);
  /// Errc::unknown_worker when absent. Revives a stale entry.
  void heartbeat(std::string_view model, std::string_view address);
  /// Errc::unknown_worker when absent.
  void remove(std::string_view model, std::string_view address);

  /// Healthy entries ordered by (model, address).
  std::vector<ModelRegistration> list_models() const;
  /// Every entry with its current status.
  std::vector<ModelRegistration> all() const;
  /// Healthy addresses serving `model` with chat capability, sorted.
  std::vector<std::string> candidates(std::string_view model) const;

  const ControllerOptions& options() const noexcept { return opts_; }

 private:
  WorkerStatus status_of(const ModelRegistration& r, SteadyClock::time_point now) const;

  ControllerOptions opts_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, ModelRegistration> entries_;
};

struct ChatChunk {
  std::uint64_t sequence = 0;  ///< 1-based, strictly increasing per request
  std::string text;
  bool is_first = false;
  bool is_last = false;
  bool is_error = false;
  std::string error;
};

using ChunkSink = std::function<void(const ChatChunk&)>;

struct RouteResult {
  std::string request_id;
  std::string worker_address;
  std::size_t chunks = 0;
  bool ok = true;
};

/// Routes requests to healthy workers round-robin (per model, over the
/// sorted candidate list) and relays chunks in order.
class Gateway final : public ChatBackend {
 public:
  Gateway(Controller& controller, std::shared_ptr<const net::NetworkPolicy> policy);

  /// In-process worker; addresses not attached are reached over HTTP.
  void attach(std::string address, std::shared_ptr<ChatBackend> backend);

  /// Errc::unknown_model before any chunk when no healthy worker serves the
  /// model. Backend failures become a terminal error chunk.
  RouteResult route_chat(ChatRequest req, const ChunkSink& sink);

  /// ChatBackend view: an error chunk surfaces as Errc::backend_error.
  void generate(const ChatRequest& req, const TokenSink& sink) override;

  Controller& controller() noexcept { return controller_; }

 private:
  std::shared_ptr<ChatBackend> backend_for(const std::string& address);

  Controller& controller_;
  std::shared_ptr<const net::NetworkPolicy> policy_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<ChatBackend>> backends_;
  std::map<std::string, std::size_t> next_;
  std::atomic<std::uint64_t> request_counter_{0};
};

struct BenchSample {
  std::string request_id;
  double ftl_ms = 0.0;
  double il_s = 0.0;
  std::size_t output_tokens = 0;
  bool ok = true;
  bool ordered = true;  ///< sequence numbers strictly increasing, one last
};

struct BenchOptions {
  std::string model;
  std::size_t concurrency = 1;
  std::size_t requests_per_worker = 1;  ///< sequential requests per loop
  std::size_t prompt_tokens = 8;
  std::size_t output_tokens = 256;
};

struct BenchReport {
  BenchOptions options;
  std::vector<BenchSample> samples;
  double ftl_mean_ms = 0.0;
  double ftl_median_ms = 0.0;
  double il_mean_s = 0.0;
  double throughput_tps = 0.0;  ///< output tokens per second of wall time
  double wall_s = 0.0;
  bool valid = true;
  std::string error;
};

/// `concurrency` simultaneous loops, each issuing requests_per_worker
/// requests. A failed request stops every loop and flags the report invalid.
BenchReport run_bench(Gateway& gateway, const BenchOptions& opts);

nlohmann::json bench_to_json(const BenchReport& r);
/// Columns: concurrency, FTL (ms), IL (s), throughput (tokens/s).
std::string render_bench_table(const std::vector<BenchReport>& reports);

nlohmann::json request_to_json(const ChatRequest& req);
ChatRequest request_from_json(const nlohmann::json& j);
nlohmann::json chunk_to_json(const ChatChunk& c, std::string_view request_id,
                             std::string_view model);

/// HTTP status and {"v", "error": {code, message}} body for an error.
int http_status_for(Errc code) noexcept;
nlohmann::json error_body(const Error& e);

/// Serves POST /v1/chat/completions for one backend (a model worker).
void mount_worker_routes(httplib::Server& server, std::shared_ptr<ChatBackend> backend);

/// Gateway and controller API: /v1/chat/completions, /api/models,
/// /api/workers/register, /api/workers/heartbeat, /api/workers/remove,
/// /api/bench.
void mount_gateway_routes(httplib::Server& server, Gateway& gateway);

}  // namespace dbchat::smmf
