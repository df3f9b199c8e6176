// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/smmf.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dbchat/error.hpp"
#include "dbchat/text.hpp"

namespace dbchat::smmf {

namespace {

using nlohmann::json;

/// Emits `text` as whitespace-led tokens. An empty text still yields one
/// (empty) final token.
void emit_text(std::string_view text, const TokenSink& sink) {
  const auto tokens = split_tokens(text);
  if (tokens.empty()) {
    sink("", true);
    return;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!sink(tokens[i], i + 1 == tokens.size())) return;
  }
}

bool ascii_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

void write_event(httplib::DataSink& sink, const json& j) {
  const std::string line = "data: " + j.dump() + "\n\n";
  sink.write(line.data(), line.size());
}

void write_done(httplib::DataSink& sink) {
  static constexpr std::string_view kDone = "data: [DONE]\n\n";
  sink.write(kDone.data(), kDone.size());
  sink.done();
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

/// Wraps a handler so dbchat errors become JSON error responses.
httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_json(res, error_body(e), http_status_for(e.code()));
    } catch (const json::exception& e) {
      send_json(res, error_body(Error(Errc::parse_error, e.what())), 400);
    }
  };
}

json completion_json(std::string_view id, std::string_view model, std::string_view content) {
  return {{"v", 1},
          {"id", id},
          {"object", "chat.completion"},
          {"model", model},
          {"choices",
           json::array({{{"index", 0},
                         {"message", {{"role", "assistant"}, {"content", content}}},
                         {"finish_reason", "stop"}}})}};
}

json registration_json(const ModelRegistration& r) {
  json caps = json::array();
  for (const auto c : r.capabilities) caps.push_back(to_string(c));
  return {{"model", r.model_name},
          {"worker_address", r.worker_address},
          {"capabilities", caps},
          {"status", to_string(r.status)}};
}

}  // namespace

int http_status_for(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument:
    case Errc::parse_error:
    case Errc::config_error:
    case Errc::missing_question:
    case Errc::no_query_terms:
    case Errc::unsorted_input:
    case Errc::dimension_mismatch:
    case Errc::not_read_only:
    case Errc::empty_extraction:
    case Errc::unsupported:
      return 400;
    case Errc::offline_blocked:
      return 403;
    case Errc::unknown_model:
    case Errc::unknown_worker:
    case Errc::unknown_tool:
    case Errc::not_found:
    case Errc::missing_fixture:
    case Errc::missing_schema:
    case Errc::empty_kb:
      return 404;
    case Errc::duplicate_key:
    case Errc::duplicate_registration:
      return 409;
    case Errc::timeout:
      return 504;
    case Errc::backend_error:
      return 502;
    default:
      return 500;
  }
}

json error_body(const Error& e) {
  return {{"v", 1}, {"error", {{"code", errc_name(e.code())}, {"message", e.what()}}}};
}

// ---------------------------------------------------------------------------
// Requests and backends

ChatRequest user_request(std::string model, std::string content) {
  ChatRequest req;
  req.model = std::move(model);
  req.messages.push_back({"user", std::move(content)});
  return req;
}

std::string last_user_content(const ChatRequest& req) {
  for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
    if (it->role == "user") return it->content;
  }
  return {};
}

std::string complete(ChatBackend& backend, const ChatRequest& req) {
  std::string out;
  backend.generate(req, [&](std::string_view tok, bool) {
    out.append(tok);
    return true;
  });
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t begin = i;
    while (i < text.size() && ascii_space(text[i])) ++i;
    while (i < text.size() && !ascii_space(text[i])) ++i;
    out.emplace_back(text.substr(begin, i - begin));
  }
  return out;
}

MockBackend::MockBackend(std::chrono::milliseconds first_token_delay,
                         std::chrono::milliseconds per_token_delay, std::size_t tokens)
    : first_(first_token_delay), per_(per_token_delay), tokens_(tokens) {
  if (tokens == 0) throw Error(Errc::invalid_argument, "mock backend needs at least one token");
  if (first_.count() < 0 || per_.count() < 0) {
    throw Error(Errc::invalid_argument, "mock backend delays must be non-negative");
  }
}

void MockBackend::generate(const ChatRequest& req, const TokenSink& sink) {
  // Absolute schedule, so sleep overshoot does not accumulate.
  const auto start = SteadyClock::now();
  for (std::size_t i = 0; i < tokens_; ++i) {
    const auto due = start + first_ + per_ * static_cast<long>(i);
    if (req.deadline && due > *req.deadline) {
      std::this_thread::sleep_until(*req.deadline);
      throw Error(Errc::timeout, "mock backend exceeded the request deadline");
    }
    std::this_thread::sleep_until(due);
    if (!sink("t" + std::to_string(i) + " ", i + 1 == tokens_)) return;
  }
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> completions) {
  for (auto& c : completions) script_.push_back({std::move(c), std::nullopt});
}

void ScriptedBackend::push(std::string completion) {
  std::lock_guard lock(mu_);
  script_.push_back({std::move(completion), std::nullopt});
}

void ScriptedBackend::push_failure(std::string partial, std::size_t fail_after) {
  std::lock_guard lock(mu_);
  script_.push_back({std::move(partial), fail_after});
}

void ScriptedBackend::generate(const ChatRequest& req, const TokenSink& sink) {
  Step step;
  {
    std::lock_guard lock(mu_);
    seen_.push_back(req);
    if (script_.empty()) throw Error(Errc::backend_error, "scripted backend exhausted");
    step = std::move(script_.front());
    script_.pop_front();
  }
  if (!step.fail_after) {
    emit_text(step.completion, sink);
    return;
  }
  const auto tokens = split_tokens(step.completion);
  for (std::size_t i = 0; i < tokens.size() && i < *step.fail_after; ++i) {
    if (!sink(tokens[i], false)) return;
  }
  throw Error(Errc::backend_error, "scripted failure after " + std::to_string(*step.fail_after) +
                                       " tokens");
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mu_);
  return script_.size();
}

void EchoBackend::generate(const ChatRequest& req, const TokenSink& sink) {
  emit_text(last_user_content(req), sink);
}

void FunctionBackend::generate(const ChatRequest& req, const TokenSink& sink) {
  emit_text(fn_(req), sink);
}

HttpBackend::HttpBackend(std::string base_url, std::shared_ptr<const net::NetworkPolicy> policy,
                         std::chrono::milliseconds timeout)
    : endpoint_(net::parse_url(base_url)), policy_(std::move(policy)), timeout_(timeout) {
  if (endpoint_.scheme != "http") {
    throw Error(Errc::unsupported, "only http endpoints are supported: " + base_url);
  }
  while (!endpoint_.path.empty() && endpoint_.path.back() == '/') endpoint_.path.pop_back();
}

void HttpBackend::generate(const ChatRequest& req, const TokenSink& sink) {
  if (policy_) policy_->check(endpoint_.host, endpoint_.port);
  auto timeout = timeout_;
  if (req.deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*req.deadline -
                                                                            SteadyClock::now());
    if (left.count() <= 0) throw Error(Errc::timeout, "request deadline passed");
    timeout = std::min(timeout, left);
  }
  httplib::Client cli(endpoint_.host, endpoint_.port);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  ChatRequest wire = req;
  wire.stream = true;
  httplib::Request hreq;
  hreq.method = "POST";
  hreq.path = endpoint_.path + "/v1/chat/completions";
  hreq.headers.emplace("Content-Type", "application/json");
  hreq.headers.emplace("Accept", "text/event-stream");
  hreq.body = request_to_json(wire).dump();

  std::string buffer;
  std::string failure;
  bool saw_last = false;
  bool cancelled = false;
  int status = 0;
  hreq.response_handler = [&](const httplib::Response& r) {
    status = r.status;
    return true;
  };
  hreq.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
    if (status != 200) {
      buffer.append(data, n);
      return true;
    }
    buffer.append(data, n);
    for (auto end = buffer.find("\n\n"); end != std::string::npos; end = buffer.find("\n\n")) {
      const std::string event = buffer.substr(0, end);
      buffer.erase(0, end + 2);
      if (!event.starts_with("data: ")) continue;
      const std::string_view payload = std::string_view(event).substr(6);
      if (payload == "[DONE]") return true;
      try {
        const auto j = json::parse(payload);
        if (j.contains("error")) {
          failure = j["error"].value("message", "worker error");
          return false;
        }
        const bool last = j.value("is_last", false);
        const auto& delta = j.at("choices").at(0).at("delta");
        if (!sink(delta.value("content", ""), last)) {
          cancelled = true;
          return false;
        }
        saw_last = saw_last || last;
      } catch (const json::exception& e) {
        failure = std::string("malformed stream event: ") + e.what();
        return false;
      }
    }
    return true;
  };
  const auto result = cli.send(hreq);
  if (cancelled) return;
  if (!failure.empty()) throw Error(Errc::backend_error, failure);
  if (!result && status == 0) {
    throw Error(Errc::backend_error, "worker " + endpoint_.host + ":" +
                                         std::to_string(endpoint_.port) + " unreachable: " +
                                         httplib::to_string(result.error()));
  }
  if (status != 200) {
    throw Error(Errc::backend_error, "worker returned HTTP " + std::to_string(status) + ": " + buffer);
  }
  if (!saw_last) throw Error(Errc::backend_error, "worker stream ended before the last token");
}

// ---------------------------------------------------------------------------
// Controller

std::string_view to_string(Capability c) noexcept {
  return c == Capability::embedding ? "embedding" : "chat";
}

Capability parse_capability(std::string_view s) {
  if (s == "chat") return Capability::chat;
  if (s == "embedding") return Capability::embedding;
  throw Error(Errc::invalid_argument, "unknown capability: " + std::string(s));
}

std::string_view to_string(WorkerStatus s) noexcept {
  switch (s) {
    case WorkerStatus::healthy: return "healthy";
    case WorkerStatus::stale: return "stale";
    case WorkerStatus::removed: return "removed";
  }
  return "healthy";
}

Controller::Controller(ControllerOptions opts, Clock clock)
    : opts_(opts), clock_(clock ? std::move(clock) : Clock([] { return SteadyClock::now(); })) {}

WorkerStatus Controller::status_of(const ModelRegistration& r, SteadyClock::time_point now) const {
  const auto limit = opts_.heartbeat_window * static_cast<long>(opts_.missed_heartbeats);
  return now - r.last_heartbeat > limit ? WorkerStatus::stale : WorkerStatus::healthy;
}

void Controller::register_worker(ModelRegistration reg) {
  if (reg.model_name.empty() || reg.worker_address.empty()) {
    throw Error(Errc::invalid_argument, "registration needs a model name and a worker address");
  }
  if (reg.capabilities.empty()) throw Error(Errc::invalid_argument, "registration without capabilities");
  std::lock_guard lock(mu_);
  auto key = std::make_pair(reg.model_name, reg.worker_address);
  if (entries_.contains(key)) {
    throw Error(Errc::duplicate_registration,
                reg.model_name + " is already registered at " + reg.worker_address);
  }
  reg.last_heartbeat = clock_();
  reg.status = WorkerStatus::healthy;
  entries_.emplace(std::move(key), std::move(reg));
}

void Controller::heartbeat(std::string_view model, std::string_view address) {
  std::lock_guard lock(mu_);
  const auto it = entries_.find({std::string(model), std::string(address)});
  if (it == entries_.end()) {
    throw Error(Errc::unknown_worker,
                "no registration for " + std::string(model) + " at " + std::string(address));
  }
  it->second.last_heartbeat = clock_();
}

void Controller::remove(std::string_view model, std::string_view address) {
  std::lock_guard lock(mu_);
  if (entries_.erase({std::string(model), std::string(address)}) == 0) {
    throw Error(Errc::unknown_worker,
                "no registration for " + std::string(model) + " at " + std::string(address));
  }
}

std::vector<ModelRegistration> Controller::all() const {
  std::lock_guard lock(mu_);
  const auto now = clock_();
  std::vector<ModelRegistration> out;
  for (const auto& [key, reg] : entries_) {
    out.push_back(reg);
    out.back().status = status_of(reg, now);
  }
  return out;
}

std::vector<ModelRegistration> Controller::list_models() const {
  auto out = all();
  std::erase_if(out, [](const auto& r) { return r.status != WorkerStatus::healthy; });
  return out;
}

std::vector<std::string> Controller::candidates(std::string_view model) const {
  std::vector<std::string> out;
  for (const auto& r : list_models()) {
    if (r.model_name == model && r.capabilities.contains(Capability::chat)) {
      out.push_back(r.worker_address);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(Controller& controller, std::shared_ptr<const net::NetworkPolicy> policy)
    : controller_(controller), policy_(std::move(policy)) {}

void Gateway::attach(std::string address, std::shared_ptr<ChatBackend> backend) {
  std::lock_guard lock(mu_);
  backends_.insert_or_assign(std::move(address), std::move(backend));
}

std::shared_ptr<ChatBackend> Gateway::backend_for(const std::string& address) {
  std::lock_guard lock(mu_);
  if (const auto it = backends_.find(address); it != backends_.end()) return it->second;
  const std::string url = address.find("://") == std::string::npos ? "http://" + address : address;
  auto backend = std::make_shared<HttpBackend>(url, policy_);
  backends_.emplace(address, backend);
  return backend;
}

RouteResult Gateway::route_chat(ChatRequest req, const ChunkSink& sink) {
  const auto cands = controller_.candidates(req.model);
  if (cands.empty()) throw Error(Errc::unknown_model, "no healthy worker serves model " + req.model);
  RouteResult result;
  {
    std::lock_guard lock(mu_);
    result.worker_address = cands[next_[req.model]++ % cands.size()];
  }
  if (req.request_id.empty()) req.request_id = "req-" + std::to_string(++request_counter_);
  result.request_id = req.request_id;

  const auto backend = backend_for(result.worker_address);
  std::uint64_t seq = 0;
  try {
    backend->generate(req, [&](std::string_view tok, bool last) {
      ChatChunk c;
      c.sequence = ++seq;
      c.text = std::string(tok);
      c.is_first = seq == 1;
      c.is_last = last;
      sink(c);
      return true;
    });
  } catch (const std::exception& e) {
    ChatChunk c;
    c.sequence = ++seq;
    c.is_first = seq == 1;
    c.is_last = true;
    c.is_error = true;
    c.error = e.what();
    sink(c);
    result.ok = false;
  }
  result.chunks = seq;
  return result;
}

void Gateway::generate(const ChatRequest& req, const TokenSink& sink) {
  std::string error;
  bool cancelled = false;
  route_chat(req, [&](const ChatChunk& c) {
    if (c.is_error) {
      error = c.error;
    } else if (!cancelled) {
      cancelled = !sink(c.text, c.is_last);
    }
  });
  if (!error.empty()) throw Error(Errc::backend_error, error);
}

// ---------------------------------------------------------------------------
// Bench

BenchReport run_bench(Gateway& gateway, const BenchOptions& opts) {
  if (opts.concurrency == 0 || opts.requests_per_worker == 0) {
    throw Error(Errc::invalid_argument, "concurrency and requests_per_worker must be at least 1");
  }
  if (gateway.controller().candidates(opts.model).empty()) {
    throw Error(Errc::unknown_model, "no healthy worker serves model " + opts.model);
  }
  std::string prompt;
  for (std::size_t i = 0; i < opts.prompt_tokens; ++i) prompt += i ? " token" : "token";

  BenchReport report;
  report.options = opts;
  std::vector<std::vector<BenchSample>> per_loop(opts.concurrency);
  std::atomic<bool> abort{false};
  std::mutex error_mu;

  auto loop = [&](std::size_t w) {
    for (std::size_t r = 0; r < opts.requests_per_worker && !abort; ++r) {
      auto req = user_request(opts.model, prompt);
      req.max_tokens = opts.output_tokens;
      BenchSample s;
      std::uint64_t last_seq = 0;
      std::size_t last_flags = 0;
      std::optional<SteadyClock::time_point> first;
      const auto t0 = SteadyClock::now();
      try {
        const auto res = gateway.route_chat(req, [&](const ChatChunk& c) {
          if (!first) first = SteadyClock::now();
          if (c.sequence <= last_seq || last_flags > 0) s.ordered = false;
          last_seq = c.sequence;
          if (c.is_last) ++last_flags;
          if (c.is_error) {
            s.ok = false;
            std::lock_guard lock(error_mu);
            if (report.error.empty()) report.error = c.error;
          } else {
            ++s.output_tokens;
          }
        });
        s.request_id = res.request_id;
      } catch (const std::exception& e) {
        s.ok = false;
        std::lock_guard lock(error_mu);
        if (report.error.empty()) report.error = e.what();
      }
      const auto t1 = SteadyClock::now();
      if (last_flags != 1) s.ordered = false;
      s.ftl_ms = std::chrono::duration<double, std::milli>((first ? *first : t1) - t0).count();
      s.il_s = std::chrono::duration<double>(t1 - t0).count();
      if (!s.ok || s.output_tokens == 0) {
        s.ok = false;
        abort = true;
      }
      per_loop[w].push_back(std::move(s));
    }
  };

  const auto start = SteadyClock::now();
  {
    std::vector<std::jthread> threads;
    threads.reserve(opts.concurrency);
    for (std::size_t w = 0; w < opts.concurrency; ++w) threads.emplace_back(loop, w);
  }
  report.wall_s = std::chrono::duration<double>(SteadyClock::now() - start).count();

  std::size_t tokens = 0;
  std::vector<double> ftl;
  for (auto& samples : per_loop) {
    for (auto& s : samples) {
      if (s.ok) {
        ftl.push_back(s.ftl_ms);
        report.il_mean_s += s.il_s;
        tokens += s.output_tokens;
      } else {
        report.valid = false;
      }
      report.samples.push_back(std::move(s));
    }
  }
  if (!ftl.empty()) {
    report.ftl_mean_ms = std::accumulate(ftl.begin(), ftl.end(), 0.0) / static_cast<double>(ftl.size());
    report.il_mean_s /= static_cast<double>(ftl.size());
    std::sort(ftl.begin(), ftl.end());
    const std::size_t m = ftl.size() / 2;
    report.ftl_median_ms = ftl.size() % 2 ? ftl[m] : (ftl[m - 1] + ftl[m]) / 2.0;
  }
  if (report.wall_s > 0.0) report.throughput_tps = static_cast<double>(tokens) / report.wall_s;
  return report;
}

json bench_to_json(const BenchReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"request_id", s.request_id},
                       {"ftl_ms", s.ftl_ms},
                       {"il_s", s.il_s},
                       {"output_tokens", s.output_tokens},
                       {"ok", s.ok},
                       {"ordered", s.ordered}});
  }
  return {{"v", 1},
          {"model", r.options.model},
          {"concurrency", r.options.concurrency},
          {"requests_per_worker", r.options.requests_per_worker},
          {"prompt_tokens", r.options.prompt_tokens},
          {"output_tokens", r.options.output_tokens},
          {"ftl_mean_ms", r.ftl_mean_ms},
          {"ftl_median_ms", r.ftl_median_ms},
          {"il_mean_s", r.il_mean_s},
          {"throughput_tps", r.throughput_tps},
          {"wall_s", r.wall_s},
          {"valid", r.valid},
          {"error", r.error},
          {"samples", samples}};
}

std::string render_bench_table(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "concurrency" << std::right << std::setw(12) << "FTL (ms)"
     << std::setw(10) << "IL (s)" << std::setw(24) << "Throughput (tokens/s)" << "\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(12) << r.options.concurrency << std::right << std::fixed
       << std::setprecision(1) << std::setw(12) << r.ftl_mean_ms << std::setprecision(3)
       << std::setw(10) << r.il_mean_s << std::setprecision(1) << std::setw(24) << r.throughput_tps;
    if (!r.valid) os << "  (invalid: " << r.error << ")";
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Wire format

json request_to_json(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json j = {{"model", req.model},
            {"messages", messages},
            {"max_tokens", req.max_tokens},
            {"stream", req.stream}};
  if (!req.request_id.empty()) j["request_id"] = req.request_id;
  return j;
}

ChatRequest request_from_json(const json& j) {
  try {
    ChatRequest req;
    req.model = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
      req.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    req.max_tokens = j.value("max_tokens", std::size_t{256});
    req.stream = j.value("stream", false);
    req.request_id = j.value("request_id", "");
    return req;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("bad chat request: ") + e.what());
  }
}

json chunk_to_json(const ChatChunk& c, std::string_view request_id, std::string_view model) {
  if (c.is_error) {
    return {{"v", 1},
            {"id", request_id},
            {"object", "error"},
            {"seq", c.sequence},
            {"is_first", c.is_first},
            {"is_last", true},
            {"error", {{"code", "backend_error"}, {"message", c.error}}}};
  }
  return {{"v", 1},
          {"id", request_id},
          {"object", "chat.completion.chunk"},
          {"model", model},
          {"seq", c.sequence},
          {"is_first", c.is_first},
          {"is_last", c.is_last},
          {"choices", json::array({{{"index", 0},
                                    {"delta", {{"content", c.text}}},
                                    {"finish_reason", c.is_last ? json("stop") : json(nullptr)}}})}};
}

void mount_worker_routes(httplib::Server& server, std::shared_ptr<ChatBackend> backend) {
  server.Post("/v1/chat/completions", guarded([backend](const httplib::Request& hreq,
                                                        httplib::Response& res) {
    auto req = std::make_shared<ChatRequest>(request_from_json(parse_body(hreq)));
    if (req->request_id.empty()) req->request_id = "worker-req";
    if (!req->stream) {
      send_json(res, completion_json(req->request_id, req->model, complete(*backend, *req)));
      return;
    }
    res.set_chunked_content_provider(
        "text/event-stream", [backend, req](std::size_t, httplib::DataSink& sink) {
          std::uint64_t seq = 0;
          try {
            backend->generate(*req, [&](std::string_view tok, bool last) {
              ChatChunk c{++seq, std::string(tok), seq == 1, last, false, {}};
              write_event(sink, chunk_to_json(c, req->request_id, req->model));
              return sink.is_writable();
            });
          } catch (const std::exception& e) {
            ChatChunk c{++seq, {}, seq == 1, true, true, e.what()};
            write_event(sink, chunk_to_json(c, req->request_id, req->model));
          }
          write_done(sink);
          return true;
        });
  }));
}

void mount_gateway_routes(httplib::Server& server, Gateway& gateway) {
  Gateway* gw = &gateway;
  server.Post("/v1/chat/completions", guarded([gw](const httplib::Request& hreq,
                                                   httplib::Response& res) {
    auto req = std::make_shared<ChatRequest>(request_from_json(parse_body(hreq)));
    if (gw->controller().candidates(req->model).empty()) {
      throw Error(Errc::unknown_model, "no healthy worker serves model " + req->model);
    }
    if (!req->stream) {
      std::string content;
      std::string error;
      const auto r = gw->route_chat(*req, [&](const ChatChunk& c) {
        if (c.is_error) error = c.error;
        else content += c.text;
      });
      if (!error.empty()) throw Error(Errc::backend_error, error);
      send_json(res, completion_json(r.request_id, req->model, content));
      return;
    }
    res.set_chunked_content_provider(
        "text/event-stream", [gw, req](std::size_t, httplib::DataSink& sink) {
          try {
            gw->route_chat(*req, [&](const ChatChunk& c) {
              write_event(sink, chunk_to_json(c, req->request_id, req->model));
            });
          } catch (const std::exception& e) {
            ChatChunk c{1, {}, true, true, true, e.what()};
            write_event(sink, chunk_to_json(c, req->request_id, req->model));
          }
          write_done(sink);
          return true;
        });
  }));

  server.Get("/api/models", guarded([gw](const httplib::Request&, httplib::Response& res) {
    json models = json::array();
    for (const auto& r : gw->controller().list_models()) models.push_back(registration_json(r));
    send_json(res, {{"v", 1}, {"models", models}});
  }));

  server.Post("/api/workers/register", guarded([gw](const httplib::Request& hreq,
                                                    httplib::Response& res) {
    const auto j = parse_body(hreq);
    ModelRegistration reg;
    reg.model_name = j.at("model").get<std::string>();
    reg.worker_address = j.at("worker_address").get<std::string>();
    if (j.contains("capabilities")) {
      reg.capabilities.clear();
      for (const auto& c : j["capabilities"]) reg.capabilities.insert(parse_capability(c.get<std::string>()));
    }
    gw->controller().register_worker(reg);
    send_json(res, {{"v", 1}, {"status", "registered"}});
  }));

  server.Post("/api/workers/heartbeat", guarded([gw](const httplib::Request& hreq,
                                                     httplib::Response& res) {
    const auto j = parse_body(hreq);
    gw->controller().heartbeat(j.at("model").get<std::string>(),
                               j.at("worker_address").get<std::string>());
    send_json(res, {{"v", 1}, {"status", "ok"}});
  }));

  server.Post("/api/workers/remove", guarded([gw](const httplib::Request& hreq,
                                                  httplib::Response& res) {
    const auto j = parse_body(hreq);
    gw->controller().remove(j.at("model").get<std::string>(),
                            j.at("worker_address").get<std::string>());
    send_json(res, {{"v", 1}, {"status", "removed"}});
  }));

  server.Post("/api/bench", guarded([gw](const httplib::Request& hreq, httplib::Response& res) {
    const auto j = parse_body(hreq);
    BenchOptions opts;
    opts.model = j.at("model").get<std::string>();
    opts.concurrency = j.value("concurrency", opts.concurrency);
    opts.requests_per_worker = j.value("requests_per_worker", opts.requests_per_worker);
    opts.prompt_tokens = j.value("prompt_tokens", opts.prompt_tokens);
    opts.output_tokens = j.value("output_tokens", opts.output_tokens);
    const auto report = run_bench(*gw, opts);
    auto body = bench_to_json(report);
    body["table"] = render_bench_table({report});
    send_json(res, body);
  }));
}

}  // namespace dbchat::smmf
