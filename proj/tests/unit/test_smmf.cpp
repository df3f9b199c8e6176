#include <doctest.h>

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dbchat/smmf.hpp"

using namespace dbchat;
using namespace dbchat::smmf;
using namespace std::chrono_literals;

namespace {

auto offline_policy() { return std::make_shared<const net::NetworkPolicy>(true); }

struct Harness {
  Controller controller;
  Gateway gateway{controller, offline_policy()};

  void add(const std::string& model, const std::string& address, std::shared_ptr<ChatBackend> b) {
    controller.register_worker({model, address});
    gateway.attach(address, std::move(b));
  }
};

std::vector<ChatChunk> collect(Gateway& g, ChatRequest req, RouteResult* out = nullptr) {
  std::vector<ChatChunk> chunks;
  auto r = g.route_chat(std::move(req), [&](const ChatChunk& c) { chunks.push_back(c); });
  if (out) *out = r;
  return chunks;
}

struct ManualClock {
  SteadyClock::time_point now{};
  Controller::Clock fn() {
    return [this] { return now; };
  }
};

}  // namespace

TEST_CASE("token splitting") {
  CHECK(split_tokens("a b c") == std::vector<std::string>{"a", " b", " c"});
  CHECK(split_tokens("") == std::vector<std::string>{});
  CHECK(split_tokens("  x") == std::vector<std::string>{"  x"});
}

TEST_CASE("registration and listing") {
  Controller c;
  c.register_worker({"m", "local://a"});
  const auto models = c.list_models();
  REQUIRE(models.size() == 1);
  CHECK(models[0].status == WorkerStatus::healthy);
  try {
    c.register_worker({"m", "local://a"});
    FAIL("expected duplicate_registration");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::duplicate_registration);
  }
  c.register_worker({"m", "local://b"});
  CHECK(c.candidates("m") == std::vector<std::string>{"local://a", "local://b"});
  c.remove("m", "local://a");
  CHECK(c.list_models().size() == 1);
  CHECK_THROWS_AS(c.remove("m", "local://a"), Error);
  CHECK_THROWS_AS(c.heartbeat("m", "local://zz"), Error);
}

TEST_CASE("missed heartbeats make a worker stale") {
  ManualClock clock;
  Controller c({10000ms, 3}, clock.fn());
  c.register_worker({"m", "local://a", {Capability::chat}, clock.now});
  clock.now += 30s;
  CHECK(c.list_models().size() == 1);
  clock.now += 1ms;
  CHECK(c.list_models().empty());
  CHECK(c.candidates("m").empty());
  REQUIRE(c.all().size() == 1);
  CHECK(c.all()[0].status == WorkerStatus::stale);
  c.heartbeat("m", "local://a");
  CHECK(c.list_models().size() == 1);
}

TEST_CASE("embedding-only workers are not chat candidates") {
  Controller c;
  c.register_worker({"e5", "local://e", {Capability::embedding}});
  CHECK(c.candidates("e5").empty());
  CHECK(c.list_models().size() == 1);
  CHECK(parse_capability("embedding") == Capability::embedding);
  CHECK_THROWS_AS(parse_capability("vision"), Error);
}

TEST_CASE("scripted completion streams in order") {
  Harness h;
  h.add("m", "local://a", std::make_shared<ScriptedBackend>(std::vector<std::string>{"a b c"}));
  RouteResult r;
  const auto chunks = collect(h.gateway, user_request("m", "hi"), &r);
  REQUIRE(chunks.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(chunks[i].sequence == i + 1);
  CHECK(chunks[0].is_first);
  CHECK(chunks[2].is_last);
  CHECK_FALSE(chunks[1].is_last);
  CHECK(chunks[0].text + chunks[1].text + chunks[2].text == "a b c");
  CHECK(r.ok);
  CHECK(r.chunks == 3);
  CHECK(r.worker_address == "local://a");
  CHECK_FALSE(r.request_id.empty());
}

TEST_CASE("round-robin over two workers") {
  Harness h;
  h.add("m", "local://a", std::make_shared<EchoBackend>());
  h.add("m", "local://b", std::make_shared<EchoBackend>());
  std::map<std::string, int> counts;
  for (int i = 0; i < 10; ++i) {
    RouteResult r;
    collect(h.gateway, user_request("m", "x"), &r);
    ++counts[r.worker_address];
  }
  CHECK(counts["local://a"] == 5);
  CHECK(counts["local://b"] == 5);
}

TEST_CASE("unknown model fails before streaming") {
  Harness h;
  int chunks = 0;
  try {
    h.gateway.route_chat(user_request("nope", "x"), [&](const ChatChunk&) { ++chunks; });
    FAIL("expected unknown_model");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_model);
  }
  CHECK(chunks == 0);
}

TEST_CASE("mid-stream failure ends with an error chunk") {
  Harness h;
  auto s = std::make_shared<ScriptedBackend>();
  s->push_failure("a b c d", 2);
  h.add("m", "local://a", s);
  RouteResult r;
  const auto chunks = collect(h.gateway, user_request("m", "x"), &r);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks.back().is_error);
  CHECK(chunks.back().is_last);
  CHECK(chunks.back().sequence == 3);
  CHECK_FALSE(r.ok);
  s->push_failure("a b", 1);
  CHECK_THROWS_AS(complete(h.gateway, user_request("m", "x")), Error);
}

TEST_CASE("mock backend parameters") {
  CHECK_THROWS_AS(MockBackend(50ms, 10ms, 0), Error);
  CHECK_THROWS_AS(MockBackend(-1ms, 10ms, 1), Error);
  MockBackend one(0ms, 0ms, 1);
  std::vector<std::string> tokens;
  one.generate(user_request("m", "x"), [&](std::string_view t, bool last) {
    tokens.emplace_back(t);
    CHECK(last);
    return true;
  });
  CHECK(tokens == std::vector<std::string>{"t0 "});

  MockBackend few(20ms, 5ms, 4);
  const auto start = SteadyClock::now();
  std::vector<double> at;
  few.generate(user_request("m", "x"), [&](std::string_view, bool) {
    at.push_back(std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count());
    return true;
  });
  REQUIRE(at.size() == 4);
  CHECK(at[0] >= 20.0);
  CHECK(at[3] >= 35.0);
  CHECK(at[3] < 35.0 + 40.0);
}

TEST_CASE("bench against a small mock") {
  Harness h;
  h.add("mock", "local://mock", std::make_shared<MockBackend>(20ms, 2ms, 16));
  BenchOptions o;
  o.model = "mock";
  o.output_tokens = 16;
  o.concurrency = 4;
  o.requests_per_worker = 2;
  const auto r = run_bench(h.gateway, o);
  REQUIRE(r.valid);
  REQUIRE(r.samples.size() == 8);
  for (const auto& s : r.samples) {
    CHECK(s.ok);
    CHECK(s.ordered);
    CHECK(s.output_tokens == 16);
    CHECK(s.ftl_ms <= s.il_s * 1000.0);
  }
  // Analytic IL is 20 + 15 * 2 = 50 ms.
  CHECK(r.il_mean_s >= 0.050);
  CHECK(r.throughput_tps > 0.0);
  const auto j = bench_to_json(r);
  CHECK(j.at("samples").size() == 8);
  CHECK(render_bench_table({r}).find("Throughput (tokens/s)") != std::string::npos);
}

TEST_CASE("bench failure flags the report") {
  Harness h;
  auto s = std::make_shared<ScriptedBackend>();
  s->push("a b");
  s->push_failure("a b", 1);
  h.add("m", "local://a", s);
  BenchOptions o;
  o.model = "m";
  o.requests_per_worker = 4;
  const auto r = run_bench(h.gateway, o);
  CHECK_FALSE(r.valid);
  CHECK_FALSE(r.error.empty());
  CHECK(r.samples.size() <= 2);
}

TEST_CASE("wire formats") {
  auto req = user_request("m", "hello");
  req.max_tokens = 12;
  req.request_id = "r-1";
  const auto back = request_from_json(request_to_json(req));
  CHECK(back.model == "m");
  CHECK(back.max_tokens == 12);
  CHECK(last_user_content(back) == "hello");
  CHECK_THROWS_AS(request_from_json(nlohmann::json{{"model", "m"}}), Error);
  const auto j = chunk_to_json({2, " b", false, true, false, ""}, "r-1", "m");
  CHECK(j.at("v") == 1);
  CHECK(j.at("seq") == 2);
  CHECK(j.at("choices")[0].at("delta").at("content") == " b");
  CHECK(j.at("choices")[0].at("finish_reason") == "stop");
  CHECK(http_status_for(Errc::unknown_model) == 404);
  CHECK(http_status_for(Errc::invalid_argument) == 400);
  const auto body = error_body(Error(Errc::unknown_model, "no such model"));
  CHECK(body.at("error").at("code") == "unknown_model");
}

TEST_CASE("offline policy blocks remote workers") {
  auto recorder = std::make_shared<net::ConnectionRecorder>();
  auto policy = std::make_shared<net::NetworkPolicy>(true);
  policy->set_recorder(recorder);
  HttpBackend remote("http://example.com:8000", policy);
  try {
    complete(remote, user_request("m", "x"));
    FAIL("expected offline_blocked");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::offline_blocked);
  }
  CHECK(recorder->non_loopback_connections() == 0);
  REQUIRE(recorder->attempts().size() == 1);
  CHECK_FALSE(recorder->attempts()[0].allowed);
}

TEST_CASE("worker and gateway over loopback HTTP") {
  httplib::Server worker;
  mount_worker_routes(worker, std::make_shared<ScriptedBackend>(std::vector<std::string>{"x y z", "p q"}));
  const int wport = worker.bind_to_any_port("127.0.0.1");
  std::jthread wt([&] { worker.listen_after_bind(); });
  worker.wait_until_ready();

  auto recorder = std::make_shared<net::ConnectionRecorder>();
  auto policy = std::make_shared<net::NetworkPolicy>(true);
  policy->set_recorder(recorder);
  Controller controller;
  Gateway gateway(controller, policy);
  const std::string waddr = "http://127.0.0.1:" + std::to_string(wport);
  controller.register_worker({"remote", waddr});

  const auto chunks = collect(gateway, user_request("remote", "q"));
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[2].is_last);
  CHECK(chunks[0].text + chunks[1].text + chunks[2].text == "x y z");

  httplib::Server api;
  mount_gateway_routes(api, gateway);
  const int aport = api.bind_to_any_port("127.0.0.1");
  std::jthread at([&] { api.listen_after_bind(); });
  api.wait_until_ready();
  httplib::Client cli("127.0.0.1", aport);

  auto res = cli.Get("/api/models");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(nlohmann::json::parse(res->body).at("models").size() == 1);

  res = cli.Post("/v1/chat/completions", request_to_json(user_request("remote", "q")).dump(),
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  std::vector<nlohmann::json> events;
  std::size_t pos = 0;
  bool done = false;
  while ((pos = res->body.find("data: ", pos)) != std::string::npos) {
    const auto end = res->body.find("\n\n", pos);
    const auto payload = res->body.substr(pos + 6, end - pos - 6);
    if (payload == "[DONE]") done = true;
    else events.push_back(nlohmann::json::parse(payload));
    pos = end;
  }
  CHECK(done);
  REQUIRE(events.size() == 2);
  CHECK(events[0].at("seq") == 1);
  CHECK(events[1].at("is_last") == true);

  res = cli.Post("/v1/chat/completions", request_to_json(user_request("ghost", "q")).dump(),
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 404);

  res = cli.Post("/api/workers/remove",
                 nlohmann::json{{"model", "remote"}, {"worker_address", waddr}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Get("/api/models");
  CHECK(nlohmann::json::parse(res->body).at("models").empty());

  CHECK(recorder->non_loopback_connections() == 0);
  api.stop();
  worker.stop();
}
