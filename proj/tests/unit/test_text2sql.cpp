#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dbchat/error.hpp"
#include "dbchat/random.hpp"
#include "dbchat/smmf.hpp"
#include "dbchat/text.hpp"
#include "dbchat/text2sql.hpp"
#include "fixture_db.hpp"

using namespace dbchat;
using namespace dbchat::text2sql;

namespace {

const std::filesystem::path& fixture_dir() {
  static const auto dir = testing::build_fixture_dir("text2sql");
  return dir;
}

Database fixture() { return Database::open(fixture_dir() / "concert_singer.sqlite"); }

std::string reference_instruction() {
  return testing::read(testing::fixture_dir() / "concert_singer_instruction.txt");
}

// Inverse of serialize_schema for tests; declared types are not recoverable.
SchemaDescription parse_serialized(std::string_view s) {
  SchemaDescription sd;
  const std::string head = " contains tables such as ";
  const auto h = s.find(head);
  REQUIRE(h != std::string_view::npos);
  sd.db_id = std::string(s.substr(0, h));
  std::string rest(s.substr(h + head.size()));
  auto split = [](const std::string& list) {
    std::vector<std::string> out;
    std::size_t p = 0;
    while (true) {
      const auto c = list.find(", ", p);
      out.push_back(list.substr(p, c - p));
      if (c == std::string::npos) break;
      p = c + 2;
    }
    return out;
  };
  auto take_sentence = [&]() {
    const auto dot = rest.find(". ");
    std::string sentence = dot == std::string::npos ? rest.substr(0, rest.size() - 1) : rest.substr(0, dot);
    rest = dot == std::string::npos ? "" : rest.substr(dot + 2);
    return sentence;
  };
  for (const auto& name : split(take_sentence())) sd.tables.push_back({name, {}, {}});
  for (auto& t : sd.tables) {
    const std::string cols = take_sentence();
    const std::string prefix = "Table " + t.name + " has columns such as ";
    REQUIRE(cols.starts_with(prefix));
    for (const auto& c : split(cols.substr(prefix.size()))) t.columns.push_back({c, ""});
    const std::string pk = " is the primary key";
    if (!rest.starts_with("Table ") && !rest.starts_with("The ") && !rest.empty()) {
      const std::string s2 = take_sentence();
      REQUIRE(s2.ends_with(pk));
      t.primary_key = split(s2.substr(0, s2.size() - pk.size()));
    }
  }
  while (!rest.empty()) {
    std::istringstream in(take_sentence());
    std::string the, cc, of1, ct, is, the2, fk, key, of2, pc, of3, pt;
    in >> the >> cc >> of1 >> ct >> is >> the2 >> fk >> key >> of2 >> pc >> of3 >> pt;
    sd.foreign_keys.push_back({ct, cc, pt, pc});
  }
  return sd;
}

SchemaDescription without_types(SchemaDescription sd) {
  for (auto& t : sd.tables) for (auto& c : t.columns) c.type.clear();
  return sd;
}

Verdict parse_verdict(const std::string& s) {
  if (s == "correct") return Verdict::correct;
  if (s == "excluded") return Verdict::excluded;
  return Verdict::incorrect;
}

}  // namespace

TEST_CASE("fixture schema analysis") {
  const auto db = fixture();
  const auto sd = analyze_schema(db, "concert_singer");
  REQUIRE(sd.tables.size() == 4);
  CHECK(sd.tables[0].name == "stadium");
  CHECK(sd.tables[3].name == "singer_in_concert");
  CHECK(sd.tables[1].columns.size() == 7);
  CHECK(sd.tables[1].columns[4].name == "song_release_year");
  CHECK(sd.tables[3].primary_key == std::vector<std::string>{"concert_id"});
  CHECK(schema_violations(sd).empty());
  CHECK(sd.foreign_keys.size() == 3);
  CHECK(sd.foreign_keys[0] == ForeignKey{"concert", "stadium_id", "stadium", "stadium_id"});
}

TEST_CASE("serializing the schema file reproduces the reference instruction") {
  const auto sd = load_schema_file(testing::data_dir() / "text2sql" / "concert_singer.schema.json");
  CHECK(serialize_schema(sd) == reference_instruction());
  // The reference key sentences pair columns the DDL does not relate.
  CHECK(!schema_violations(sd).empty());
  CHECK_THROWS_AS(validate_schema(sd), Error);
  // Analysis of the database agrees on everything but the keys.
  auto analyzed = analyze_schema(fixture(), "concert_singer");
  analyzed.foreign_keys = sd.foreign_keys;
  CHECK(serialize_schema(analyzed) == reference_instruction());
}

TEST_CASE("serialization round trips through the test parser") {
  const auto db_sd = analyze_schema(fixture(), "concert_singer");
  CHECK(parse_serialized(serialize_schema(db_sd)) == without_types(db_sd));
  const auto file_sd = load_schema_file(testing::data_dir() / "text2sql" / "concert_singer.schema.json");
  CHECK(parse_serialized(serialize_schema(file_sd)) == without_types(file_sd));
}

TEST_CASE("serialization distinguishes schemas of the fixture family") {
  const auto base = analyze_schema(fixture(), "concert_singer");
  std::vector<SchemaDescription> family{base};
  auto v = base;
  v.db_id = "concert_singer_2";
  family.push_back(v);
  v = base;
  v.tables[0].columns.pop_back();
  family.push_back(v);
  v = base;
  v.tables[1].primary_key.clear();
  family.push_back(v);
  v = base;
  v.foreign_keys.pop_back();
  family.push_back(v);
  v = base;
  std::swap(v.tables[0], v.tables[1]);
  family.push_back(v);
  std::set<std::string> texts;
  for (const auto& s : family) texts.insert(serialize_schema(s));
  CHECK(texts.size() == family.size());
  CHECK(serialize_schema(base) == serialize_schema(base));
}

TEST_CASE("single table and empty database") {
  auto mem = Database::open_memory();
  CHECK(serialize_schema(analyze_schema(mem, "empty")) == "empty contains no tables.");
  CHECK(analyze_schema(mem, "empty").tables.empty());
  mem.exec_script("create table t (a int primary key, b text);");
  CHECK(serialize_schema(analyze_schema(mem, "one")) ==
        "one contains tables such as t. Table t has columns such as a, b. a is the primary key.");
}

TEST_CASE("dangling keys are reported") {
  SchemaDescription sd{"x", {{"t", {{"a", "int"}}, {"a"}}}, {{"t", "a", "missing", "id"}}};
  CHECK(schema_violations(sd).size() == 1);
  sd.tables[0].primary_key = {"zz"};
  CHECK(schema_violations(sd).size() == 2);
  try {
    validate_schema(sd);
    FAIL("expected schema_invalid");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::schema_invalid);
  }
}

TEST_CASE("schema json round trip") {
  const auto sd = analyze_schema(fixture(), "concert_singer");
  const auto j = schema_to_json(sd);
  CHECK(j.at("v") == 1);
  CHECK(schema_from_json(j) == sd);
  CHECK_THROWS_AS(schema_from_json(nlohmann::json{{"v", 1}}), Error);
}

TEST_CASE("sql extraction") {
  CHECK(extract_sql("select count(*) from singer") == "select count(*) from singer");
  CHECK(extract_sql("Here you go:\n```sql\nselect name\nfrom singer;\n```\nDone.") ==
        "select name\nfrom singer");
  CHECK(extract_sql("select ';' from t; drop table t;") == "select ';' from t");
  CHECK(extract_sql("  select 1  ") == "select 1");
}

TEST_CASE("generation through a backend") {
  const auto sd = analyze_schema(fixture(), "concert_singer");
  smmf::ScriptedBackend b;
  b.push("select count(*) from singer");
  b.push("Sure!\n```sql\nselect name from singer where age > 40\n```");
  CHECK(generate_sql(sd, "How many singers do we have?", b) == "select count(*) from singer");
  CHECK(generate_sql(sd, "Who is older than 40?", b) == "select name from singer where age > 40");
  const auto reqs = b.requests();
  REQUIRE(reqs.size() == 2);
  CHECK(smmf::last_user_content(reqs[0]) == build_sql_prompt(sd, "How many singers do we have?"));
  CHECK(build_sql_prompt(sd, "q") == "##Instruction:\n" + serialize_schema(sd) + "\n##Input:\nq\n##Response:\n");
}

TEST_CASE("generation failures carry the request id") {
  const auto sd = analyze_schema(fixture(), "concert_singer");
  smmf::MockBackend slow(std::chrono::milliseconds(500), std::chrono::milliseconds(10), 4);
  GenerateOptions o;
  o.timeout = std::chrono::milliseconds(30);
  try {
    generate_sql(sd, "q", slow, o);
    FAIL("expected backend_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::backend_error);
    CHECK(std::string(e.what()).find("request t2s-") != std::string::npos);
  }
  smmf::ScriptedBackend empty;
  empty.push("   ");
  CHECK_THROWS_AS(generate_sql(sd, "q", empty), Error);
}

TEST_CASE("guarded execution") {
  const auto db = fixture();
  const auto t = execute_sql(db, "select count(*) from singer");
  REQUIRE(t.rows.size() == 1);
  CHECK(std::get<std::int64_t>(t.rows[0][0]) == 30);
  CHECK(render_table(t) == "count(*)\n30\n");

  auto expect = [&](std::string_view sql, Errc code) {
    try {
      execute_sql(db, sql);
      FAIL("expected failure for " << sql);
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  expect("drop table singer", Errc::not_read_only);
  expect("delete from singer", Errc::not_read_only);
  expect("select 1; drop table singer", Errc::not_read_only);
  expect("with x as (select 1) delete from singer", Errc::not_read_only);
  expect("selec name frm singer", Errc::not_read_only);
  expect("select name frm singer", Errc::parse_error);
  expect("select nope from singer", Errc::parse_error);

  const auto limited = execute_sql(db, "select * from singer", {5, std::chrono::milliseconds(5000)});
  CHECK(limited.rows.size() == 5);
  CHECK(limited.truncated);

  try {
    execute_sql(db, "with recursive c(x) as (select 1 union all select x + 1 from c) select count(*) from c",
                {10, std::chrono::milliseconds(50)});
    FAIL("expected timeout");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::timeout);
  }
  CHECK(execute_sql(db, "values (1, 'a')").rows.size() == 1);
}

TEST_CASE("result comparison") {
  auto mem = Database::open_memory();
  auto run = [&](std::string_view sql) { return execute_sql(mem, sql); };
  CHECK(results_match(run("values (1), (2)"), run("values (2), (1)"), false));
  CHECK_FALSE(results_match(run("values (1), (2)"), run("values (2), (1)"), true));
  CHECK(results_match(run("values (1)"), run("values (1.0000000001)"), false));
  CHECK(results_match(run("values ('a ')"), run("values (' a')"), false));
  CHECK_FALSE(results_match(run("values (1), (1)"), run("values (1)"), false));
  CHECK_FALSE(results_match(run("values (1, 2)"), run("values (1)"), false));
  CHECK(results_match(run("select null"), run("select null"), false));
  CHECK(has_top_level_order_by("select a from t order by a"));
  CHECK_FALSE(has_top_level_order_by("select a from (select a from t order by a)"));
  CHECK_FALSE(has_top_level_order_by("select 'order by' from t"));
  CHECK_FALSE(has_top_level_order_by("select a from t -- order by a"));
}

TEST_CASE("hand-scored suite") {
  const auto path = testing::data_dir() / "text2sql" / "ex_suite.jsonl";
  const auto records = read_dataset(path);
  REQUIRE(records.size() == 20);
  std::vector<Verdict> expected;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    if (!text::trim(line).empty()) expected.push_back(parse_verdict(nlohmann::json::parse(line).at("expected")));
  }
  const auto before = testing::read(fixture_dir() / "concert_singer.sqlite");
  for (const std::size_t workers : {1u, 4u}) {
    const auto r = ex_score(records, directory_factory(fixture_dir()), workers);
    REQUIRE(r.outcomes.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK_MESSAGE(r.outcomes[i].verdict == expected[i], "record " << i);
    CHECK(r.buckets.at(Difficulty::easy).correct == 3);
    CHECK(r.buckets.at(Difficulty::easy).total == 5);
    CHECK(r.buckets.at(Difficulty::medium).correct == 3);
    CHECK(r.buckets.at(Difficulty::medium).total == 7);
    CHECK(r.buckets.at(Difficulty::hard).correct == 3);
    CHECK(r.buckets.at(Difficulty::hard).total == 4);
    CHECK(r.buckets.at(Difficulty::extra).correct == 1);
    CHECK(r.buckets.at(Difficulty::extra).total == 3);
    CHECK(r.overall.correct == 10);
    CHECK(r.overall.total == 19);
    double weighted = 0;
    for (const auto& [d, b] : r.buckets) weighted += b.ex() * static_cast<double>(b.total);
    CHECK(std::abs(weighted / static_cast<double>(r.overall.total) - r.overall.ex()) < 1e-12);
  }
  CHECK(testing::read(fixture_dir() / "concert_singer.sqlite") == before);
}

TEST_CASE("the read-only guard survives a mutation fuzz") {
  const auto before = testing::read(fixture_dir() / "concert_singer.sqlite");
  const auto db = fixture();
  const std::vector<std::string> verbs = {
      "drop table singer", "delete from singer", "update singer set age = 0",
      "insert into singer values (99, 'x', 'y', 'z', '2000', 1, 'T')",
      "create table x (a)", "alter table singer add column q", "pragma query_only = 0",
      "attach database ':memory:' as m", "vacuum", "reindex", "replace into stadium select * from stadium",
      "with a as (select 1) update singer set age = 1", "begin; delete from singer; commit"};
  Rng rng(3);
  std::size_t blocked = 0;
  for (int i = 0; i < 300; ++i) {
    std::string sql = verbs[rng.below(verbs.size())];
    if (rng.below(3) == 0) sql = "select 1; " + sql;
    if (rng.below(4) == 0) sql = "  " + text::to_lower_ascii(sql) + ";";
    try {
      execute_sql(db, sql);
    } catch (const Error&) {
      ++blocked;
    }
  }
  CHECK(blocked == 300);
  CHECK(testing::read(fixture_dir() / "concert_singer.sqlite") == before);
}

TEST_CASE("missing fixture database") {
  const std::vector<EvalRecord> recs{{"nowhere", "q", "select 1", "select 1", Difficulty::easy}};
  try {
    ex_score(recs, directory_factory(fixture_dir()));
    FAIL("expected missing_fixture");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_fixture);
  }
}

TEST_CASE("dataset bucket counts") {
  const auto recs = read_dataset(testing::data_dir() / "text2sql" / "dev_standin.jsonl");
  CHECK(recs.size() == 1034);
  const auto c = bucket_counts(recs);
  CHECK(c.at(Difficulty::easy) == 248);
  CHECK(c.at(Difficulty::medium) == 446);
  CHECK(c.at(Difficulty::hard) == 174);
  CHECK(c.at(Difficulty::extra) == 166);
  CHECK_THROWS_AS(parse_dataset("{\"db_id\": \"a\", \"question\": \"q\", \"query\": \"x\"}"), Error);
  CHECK_THROWS_AS(parse_difficulty("medium-hard"), Error);
}

TEST_CASE("fine-tuning export") {
  const auto dir = testing::scratch("export");
  const auto sd = load_schema_file(testing::data_dir() / "text2sql" / "concert_singer.schema.json");
  const std::map<std::string, SchemaDescription> schemas{{"concert_singer", sd}};
  const EvalRecord rec{"concert_singer", "How many singers do we have?", "select count(*) from singer",
                       std::nullopt, Difficulty::easy};
  CHECK(finetune_line(sd, rec) ==
        testing::read(testing::fixture_dir() / "concert_singer_finetune_line.txt"));
  const auto parsed = nlohmann::json::parse(finetune_line(sd, rec));
  CHECK(parsed.size() == 3);

  export_finetune_corpus({}, schemas, dir / "empty.jsonl");
  CHECK(testing::read(dir / "empty.jsonl").empty());

  const auto dev = read_dataset(testing::data_dir() / "text2sql" / "dev_standin.jsonl");
  export_finetune_corpus(dev, schemas, dir / "dev.jsonl");
  const auto text = testing::read(dir / "dev.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1034);

  const std::vector<EvalRecord> orphan{{"other_db", "q", "select 1", std::nullopt, Difficulty::easy}};
  try {
    export_finetune_corpus(orphan, schemas, dir / "x.jsonl");
    FAIL("expected missing_schema");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_schema);
  }
}
