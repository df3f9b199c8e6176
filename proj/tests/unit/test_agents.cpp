#include <doctest.h>

#include <nlohmann/json.hpp>

#include "dbchat/agents.hpp"
#include "dbchat/ingest.hpp"
#include "dbchat/random.hpp"
#include "fixture_db.hpp"
#include "pii_corpus.hpp"

using namespace dbchat;
using namespace dbchat::agents;
using nlohmann::json;

namespace {

std::string act(std::string_view tool, const json& input, std::string_view thought = "next") {
  return json{{"thought", thought}, {"action", tool}, {"action_input", input}}.dump();
}

std::string final_answer(std::string_view text) { return act("final", text, "done"); }

struct DbFixture {
  std::filesystem::path dir = testing::build_fixture_dir("agents");
  text2sql::Database db = text2sql::Database::open(dir / "concert_singer.sqlite");
  smmf::ScriptedBackend sql_backend;
  ToolRegistry registry;
  RoleBook book = load_roles(testing::data_dir() / "roles.json");

  DbFixture() {
    ToolContext ctx;
    ctx.db = &db;
    ctx.db_id = "concert_singer";
    ctx.sql_backend = &sql_backend;
    register_builtin_tools(registry, ctx);
  }
};

Tool echo_tool() {
  return {"echo", "Repeat the text.", {{"text", "string", "text"}},
          [](const json& in) { return in.at("text").get<std::string>(); }};
}

}  // namespace

TEST_CASE("registry basics") {
  ToolRegistry r(10);
  r.register_tool(echo_tool());
  CHECK_THROWS_AS(r.register_tool(echo_tool()), Error);
  r.add_alias("repeat", "echo");
  CHECK_THROWS_AS(r.register_tool({"repeat", "", {}, [](const json&) { return ""; }}), Error);
  CHECK(r.contains("repeat"));
  CHECK(r.list().size() == 1);
  CHECK(r.invoke("repeat", {{"text", "hello"}}).text == "hello");
  CHECK(r.invoke("echo", {{"text", "0123456789abcdef"}}).text.size() <= 10);
  const auto missing = r.invoke("echo", json::object());
  CHECK_FALSE(missing.ok);
  CHECK(r.invoke("echo", {{"text", 3}}).ok == false);
  try {
    r.invoke("nope", {});
    FAIL("expected unknown_tool");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_tool);
  }
  r.register_tool({"boom", "", {}, [](const json&) -> std::string { throw std::runtime_error("bad"); }});
  const auto boom = r.invoke("boom", {});
  CHECK_FALSE(boom.ok);
  CHECK(boom.text == "error: bad");
  CHECK(tool_to_json(r.get("echo")).at("params").size() == 1);
}

TEST_CASE("query_executor renders the fixture result") {
  DbFixture f;
  const auto obs = f.registry.invoke("query_executor", {{"sql", "select count(*) from singer"}});
  CHECK(obs.ok);
  CHECK(obs.text == "count(*)\n30\n");
  const auto blocked = f.registry.invoke("execute_sql", {{"sql", "drop table singer"}});
  CHECK_FALSE(blocked.ok);
  const auto schema = f.registry.invoke("schema_analyzer", {});
  CHECK(schema.text.starts_with("concert_singer contains tables such as stadium, singer, concert"));
}

TEST_CASE("web search fixtures") {
  const auto ws = WebSearch::from_fixtures(testing::data_dir() / "web_search.json");
  CHECK(ws.search("  Spider Benchmark ").find("Spider is a cross-domain") != std::string::npos);
  CHECK(ws.search("unrelated question") == "no results");
  try {
    WebSearch::from_fixtures(testing::data_dir() / "missing.json");
    FAIL("expected config_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_error);
  }
  auto recorder = std::make_shared<net::ConnectionRecorder>();
  auto policy = std::make_shared<net::NetworkPolicy>(true);
  policy->set_recorder(recorder);
  const auto live = WebSearch::live("http://search.example.com/q", policy);
  CHECK_THROWS_AS(live.search("x"), Error);
  CHECK(recorder->non_loopback_connections() == 0);
}

TEST_CASE("roles and validation") {
  DbFixture f;
  CHECK(f.book.role("data_analyst").allowed_tools.size() == 4);
  CHECK(f.book.sop("analysis_report").stages.size() == 2);
  CHECK_THROWS_AS(f.book.role("ghost"), Error);
  // researcher names rag_search and web_search, absent from this registry.
  CHECK_THROWS_AS(validate_roles(f.book, f.registry), Error);
  RoleBook only;
  only.roles["data_analyst"] = f.book.role("data_analyst");
  CHECK_NOTHROW(validate_roles(only, f.registry));
  only.sops["s"] = {"s", {{"ghost", "{INPUT}"}}};
  CHECK_THROWS_AS(validate_roles(only, f.registry), Error);
  CHECK_THROWS_AS(parse_roles(json{{"v", 1}, {"roles", json::array({{{"name", "a"}}, {{"name", "a"}}})}}),
                  Error);
}

TEST_CASE("four-step analyst episode") {
  DbFixture f;
  f.sql_backend.push("select count(*) from singer");
  smmf::ScriptedBackend agent({act("schema_analyzer", json::object()),
                               act("generate_sql", {{"question", "How many singers do we have?"}}),
                               act("execute_sql", {{"sql", "select count(*) from singer"}}),
                               final_answer("There are 30 singers.")});
  const auto ep = run_agent("How many singers do we have?", f.book.role("data_analyst"), f.registry, agent);
  CHECK(ep.status == EpisodeStatus::complete);
  REQUIRE(ep.steps.size() == 4);
  CHECK(ep.steps[1].observation == "select count(*) from singer");
  CHECK(ep.steps[2].observation == "count(*)\n30\n");
  CHECK(ep.steps[3].action == "final");
  CHECK(ep.answer.find("30") != std::string::npos);
  const auto lines = transcript_jsonl(ep);
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 5);
  // The backend saw each observation before choosing the next action.
  const auto reqs = agent.requests();
  REQUIRE(reqs.size() == 4);
  CHECK(reqs[3].messages.back().content == "Observation: count(*)\n30\n");
  CHECK(reqs[0].messages[0].content.find("execute_sql") != std::string::npos);
}

TEST_CASE("budget, unknown tools, disallowed tools and re-ask") {
  DbFixture f;
  const auto& analyst = f.book.role("data_analyst");
  AgentOptions one;
  one.step_budget = 1;
  smmf::ScriptedBackend immediate({final_answer("ok")});
  auto ep = run_agent("q", analyst, f.registry, immediate, one);
  CHECK(ep.steps.size() == 1);
  CHECK(ep.status == EpisodeStatus::complete);

  smmf::ScriptedBackend unknown({act("teleport", json::object()), final_answer("fine")});
  ep = run_agent("q", analyst, f.registry, unknown);
  REQUIRE(ep.steps.size() == 2);
  CHECK(ep.steps[0].failed);
  CHECK(ep.steps[0].observation == "error: unknown tool teleport");
  CHECK(ep.status == EpisodeStatus::complete);

  smmf::ScriptedBackend loop({act("schema_analyzer", json::object()), act("schema_analyzer", json::object())});
  AgentOptions two;
  two.step_budget = 2;
  ep = run_agent("q", analyst, f.registry, loop, two);
  CHECK(ep.status == EpisodeStatus::incomplete);
  CHECK(ep.steps.size() == 2);
  CHECK(ep.answer == ep.steps[1].observation);

  smmf::ScriptedBackend reask({"not json at all", final_answer("recovered")});
  ep = run_agent("q", analyst, f.registry, reask);
  CHECK(ep.steps.size() == 1);
  CHECK(ep.answer == "recovered");
  smmf::ScriptedBackend broken({"nope", "still nope", final_answer("x")});
  ep = run_agent("q", analyst, f.registry, broken);
  REQUIRE(ep.steps.size() == 2);
  CHECK(ep.steps[0].failed);
  CHECK(ep.steps[0].observation == "error: malformed action");

  const auto& architect = f.book.role("database_architect");
  smmf::ScriptedBackend denied({act("execute_sql", {{"sql", "select 1"}}), final_answer("x")});
  ep = run_agent("q", architect, f.registry, denied);
  CHECK(ep.steps[0].failed);
  CHECK(ep.steps[0].observation.find("not allowed") != std::string::npos);

  smmf::ScriptedBackend empty;
  ep = run_agent("q", analyst, f.registry, empty);
  CHECK(ep.status == EpisodeStatus::aborted);
  CHECK(ep.steps.empty());
  AgentOptions zero;
  zero.step_budget = 0;
  CHECK_THROWS_AS(run_agent("q", analyst, f.registry, immediate, zero), Error);
}

TEST_CASE("action parsing") {
  CHECK(parse_action("Sure: {\"action\": \"final\", \"action_input\": \"x\"} ok")->action == "final");
  CHECK_FALSE(parse_action("{\"thought\": \"t\"}"));
  CHECK_FALSE(parse_action("{\"action\": \"\"}"));
  CHECK_FALSE(parse_action("{broken"));
  CHECK(parse_action("{\"action\": \"x\"}")->input == json::object());
}

TEST_CASE("sop chains stage answers") {
  DbFixture f;
  smmf::ScriptedBackend agent({final_answer("30 singers"), final_answer("Summary: 30 singers")});
  const auto eps = run_sop(f.book.sop("analysis_report"), "How many singers?", f.book, f.registry, agent);
  REQUIRE(eps.size() == 2);
  CHECK(eps[1].answer == "Summary: 30 singers");
  const auto reqs = agent.requests();
  CHECK(smmf::last_user_content(reqs[1]) == "Question: Summarize these findings: 30 singers");
}

TEST_CASE("seeded identifiers never reach the transcript") {
  Rng rng(11);
  ToolRegistry r;
  r.register_tool(echo_tool());
  const RoleSpec role{"tester", "Test.", {"echo"}};
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = testing::seeded_text(rng, 2);
    const auto t = testing::seeded_text(rng, 2);
    const auto a = testing::seeded_text(rng, 1);
    smmf::ScriptedBackend agent({act("echo", {{"text", t.text}}, t.text), final_answer(a.text)});
    const auto ep = run_agent(q.text, role, r, agent);
    const auto transcript = transcript_jsonl(ep);
    for (const auto* s : {&q, &t, &a}) {
      for (const auto& secret : s->secrets) CHECK_MESSAGE(transcript.find(secret) == std::string::npos, secret);
    }
    // Nothing sent back to the backend carries the identifiers either.
    for (const auto& req : agent.requests()) {
      for (const auto& m : req.messages) {
        for (const auto* s : {&q, &t, &a}) {
          for (const auto& secret : s->secrets) CHECK(m.content.find(secret) == std::string::npos);
        }
      }
    }
  }
}

TEST_CASE("episode fuzz: bounded, single final, replayable") {
  ToolRegistry r;
  r.register_tool(echo_tool());
  r.register_tool({"fail", "", {}, [](const json&) -> std::string { throw std::runtime_error("x"); }});
  const RoleSpec role{"tester", "Test.", {"echo", "fail"}};
  Rng rng(5);
  for (int e = 0; e < 500; ++e) {
    AgentOptions o;
    o.step_budget = 1 + rng.below(6);
    std::vector<std::string> script;
    const auto n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      switch (rng.below(6)) {
        case 0: script.push_back(act("echo", {{"text", "v" + std::to_string(i)}})); break;
        case 1: script.push_back(act("fail", json::object())); break;
        case 2: script.push_back(act("ghost", json::object())); break;
        case 3: script.push_back("garbage " + std::to_string(i)); break;
        case 4: script.push_back(act("echo", json::object())); break;
        default: script.push_back(final_answer("a" + std::to_string(i))); break;
      }
    }
    smmf::ScriptedBackend backend(script);
    const auto ep = run_agent("q", role, r, backend, o);
    CHECK(ep.steps.size() <= o.step_budget);
    const auto finals = std::count_if(ep.steps.begin(), ep.steps.end(),
                                      [](const AgentStep& s) { return s.action == "final"; });
    if (ep.status == EpisodeStatus::complete) {
      CHECK(finals == 1);
      CHECK(ep.steps.back().action == "final");
    } else {
      CHECK(finals == 0);
    }
    if (ep.status == EpisodeStatus::aborted) continue;
    for (std::size_t i = 0; i < ep.steps.size(); ++i) CHECK(ep.steps[i].index == i);

    smmf::ScriptedBackend replay;
    for (const auto& s : ep.steps) {
      if (s.action.empty()) replay.push(s.raw);
      replay.push(s.raw);
    }
    const auto again = run_agent("q", role, r, replay, o);
    REQUIRE(again.steps.size() == ep.steps.size());
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
      CHECK(again.steps[i].action == ep.steps[i].action);
      CHECK(again.steps[i].action_input == ep.steps[i].action_input);
      CHECK(again.steps[i].observation == ep.steps[i].observation);
    }
    CHECK(again.answer == ep.answer);
    CHECK(again.status == ep.status);
  }
}

TEST_CASE("rag_search over a small knowledge base") {
  const auto emb = encoder::Embedder::hash_features();
  index::KnowledgeBase kb("docs");
  ingest::SourceDocument doc{"d1", "mem://d1", ingest::MediaKind::plain,
                             "The stadium table lists capacity and location of each venue."};
  kb.index_chunks(ingest::split_document(doc, {}), emb);
  ToolRegistry r;
  ToolContext ctx;
  ctx.kb = &kb;
  ctx.embedder = &emb;
  ctx.web_search = std::make_shared<const WebSearch>(WebSearch::from_fixtures(testing::data_dir() / "web_search.json"));
  register_builtin_tools(r, ctx);
  CHECK(r.contains("rag_search"));
  CHECK(r.contains("web_search"));
  CHECK_FALSE(r.contains("execute_sql"));
  const auto obs = r.invoke("rag_search", {{"query", "stadium capacity"}, {"k", 2}});
  CHECK(obs.ok);
  CHECK(obs.text.find("capacity and location") != std::string::npos);
}
