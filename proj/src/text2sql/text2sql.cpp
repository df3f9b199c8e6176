// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/text2sql.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/smmf.hpp"
#include "dbchat/text.hpp"

namespace dbchat::text2sql {

namespace {

using nlohmann::json;

class Statement {
 public:
  Statement(sqlite3* db, std::string_view sql, const char** tail = nullptr) {
    if (sqlite3_prepare_v2(db, sql.data(), static_cast<int>(sql.size()), &stmt_, tail) !=
        SQLITE_OK) {
      const std::string msg = sqlite3_errmsg(db);
      sqlite3_finalize(stmt_);
      throw Error(Errc::parse_error, msg);
    }
  }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  ~Statement() { sqlite3_finalize(stmt_); }

  sqlite3_stmt* get() const noexcept { return stmt_; }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? reinterpret_cast<const char*>(p) : "";
  }

 private:
  sqlite3_stmt* stmt_ = nullptr;
};

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Skips whitespace and SQL comments from `i`.
std::size_t skip_blank(std::string_view s, std::size_t i) {
  while (i < s.size()) {
    if (text::is_space(static_cast<unsigned char>(s[i])) || s[i] == '\n') {
      ++i;
    } else if (s.compare(i, 2, "--") == 0) {
      const auto nl = s.find('\n', i);
      i = nl == std::string_view::npos ? s.size() : nl + 1;
    } else if (s.compare(i, 2, "/*") == 0) {
      const auto close = s.find("*/", i + 2);
      i = close == std::string_view::npos ? s.size() : close + 2;
    } else {
      break;
    }
  }
  return i;
}

bool ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

/// Index just past a quoted run starting at s[i], or s.size() if unterminated.
std::size_t skip_quoted(std::string_view s, std::size_t i) {
  const char close = s[i] == '[' ? ']' : s[i];
  ++i;
  while (i < s.size()) {
    if (s[i] == close) {
      if (close != ']' && i + 1 < s.size() && s[i + 1] == close) {
        i += 2;
        continue;
      }
      return i + 1;
    }
    ++i;
  }
  return s.size();
}

bool is_quote(char c) { return c == '\'' || c == '"' || c == '`' || c == '['; }

/// Position of the first ';' outside quotes and comments, or npos.
std::size_t statement_end(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_quote(s[i])) {
      i = skip_quoted(s, i);
    } else if (s.compare(i, 2, "--") == 0 || s.compare(i, 2, "/*") == 0) {
      i = skip_blank(s, i);
    } else if (s[i] == ';') {
      return i;
    } else {
      ++i;
    }
  }
  return std::string_view::npos;
}

std::string first_statement(std::string_view s) {
  const auto end = statement_end(s);
  return text::trim(s.substr(0, end));
}

Cell read_cell(sqlite3_stmt* stmt, int col) {
  switch (sqlite3_column_type(stmt, col)) {
    case SQLITE_NULL:
      return std::monostate{};
    case SQLITE_INTEGER:
      return static_cast<std::int64_t>(sqlite3_column_int64(stmt, col));
    case SQLITE_FLOAT:
      return sqlite3_column_double(stmt, col);
    default: {
      const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
      const int n = sqlite3_column_bytes(stmt, col);
      return std::string(p ? p : "", static_cast<std::size_t>(n));
    }
  }
}

std::optional<double> numeric(const Cell& c) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return std::nullopt;
}

bool cells_equal(const Cell& a, const Cell& b) {
  const auto na = numeric(a);
  const auto nb = numeric(b);
  if (na && nb) return std::fabs(*na - *nb) <= 1e-6;
  if (std::holds_alternative<std::monostate>(a) || std::holds_alternative<std::monostate>(b)) {
    return a.index() == b.index();
  }
  if (const auto* sa = std::get_if<std::string>(&a)) {
    if (const auto* sb = std::get_if<std::string>(&b)) return text::trim(*sa) == text::trim(*sb);
  }
  return false;
}

/// Canonical order: NULL < numbers by value < text (trimmed).
bool cell_less(const Cell& a, const Cell& b) {
  auto rank = [](const Cell& c) {
    if (std::holds_alternative<std::monostate>(c)) return 0;
    if (std::holds_alternative<std::string>(c)) return 2;
    return 1;
  };
  const int ra = rank(a);
  const int rb = rank(b);
  if (ra != rb) return ra < rb;
  if (ra == 1) return *numeric(a) < *numeric(b);
  if (ra == 2) return text::trim(std::get<std::string>(a)) < text::trim(std::get<std::string>(b));
  return false;
}

bool row_less(const std::vector<Cell>& a, const std::vector<Cell>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), cell_less);
}

bool rows_equal(const std::vector<Cell>& a, const std::vector<Cell>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), cells_equal);
}

json bucket_json(const BucketStats& b) {
  return {{"count", b.total}, {"correct", b.correct}, {"ex", b.ex()}};
}

constexpr Difficulty kDifficulties[] = {Difficulty::easy, Difficulty::medium, Difficulty::hard,
                                        Difficulty::extra};

}  // namespace

// ---------------------------------------------------------------------------
// Connections

Database Database::open(const std::filesystem::path& path, Mode mode) {
  sqlite3* db = nullptr;
  const int flags = mode == Mode::read_only ? SQLITE_OPEN_READONLY
                                            : SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE;
  if (sqlite3_open_v2(path.string().c_str(), &db, flags | SQLITE_OPEN_NOMUTEX, nullptr) !=
      SQLITE_OK) {
    const std::string msg = db ? sqlite3_errmsg(db) : "out of memory";
    sqlite3_close(db);
    throw Error(Errc::io_error, "cannot open database " + path.string() + ": " + msg);
  }
  Database out(db, mode == Mode::read_only);
  if (out.read_only_) out.exec_script("PRAGMA query_only = 1;");
  return out;
}

Database Database::open_memory() {
  sqlite3* db = nullptr;
  if (sqlite3_open(":memory:", &db) != SQLITE_OK) {
    sqlite3_close(db);
    throw Error(Errc::io_error, "cannot open in-memory database");
  }
  return Database(db, false);
}

Database::Database(Database&& o) noexcept : db_(std::exchange(o.db_, nullptr)), read_only_(o.read_only_) {}

Database& Database::operator=(Database&& o) noexcept {
  if (this != &o) {
    sqlite3_close(db_);
    db_ = std::exchange(o.db_, nullptr);
    read_only_ = o.read_only_;
  }
  return *this;
}

Database::~Database() { sqlite3_close(db_); }

void Database::exec_script(std::string_view sql) {
  const std::string s(sql);
  char* err = nullptr;
  if (sqlite3_exec(db_, s.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw Error(Errc::execution_error, msg);
  }
}

void build_fixture(const std::filesystem::path& script, const std::filesystem::path& db_path) {
  const std::string sql = binio::read_file(script);
  auto tmp = db_path;
  tmp += ".tmp";
  std::filesystem::remove(tmp);
  {
    auto db = Database::open(tmp, Database::Mode::read_write_create);
    db.exec_script("BEGIN;");
    db.exec_script(sql);
    db.exec_script("COMMIT;");
  }
  std::filesystem::rename(tmp, db_path);
}

// ---------------------------------------------------------------------------
// Schema

std::vector<std::string> schema_violations(const SchemaDescription& sd) {
  std::vector<std::string> out;
  auto find_table = [&](std::string_view name) -> const Table* {
    for (const auto& t : sd.tables) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };
  auto has_column = [](const Table& t, std::string_view col) {
    return std::any_of(t.columns.begin(), t.columns.end(),
                       [&](const Column& c) { return c.name == col; });
  };
  for (const auto& t : sd.tables) {
    for (const auto& pk : t.primary_key) {
      if (!has_column(t, pk)) out.push_back("primary key column " + t.name + "." + pk + " does not exist");
    }
  }
  for (const auto& fk : sd.foreign_keys) {
    for (const auto& [table, col] : {std::pair{fk.child_table, fk.child_column},
                                     std::pair{fk.parent_table, fk.parent_column}}) {
      const Table* t = find_table(table);
      if (!t) {
        out.push_back("foreign key references missing table " + table);
      } else if (!has_column(*t, col)) {
        out.push_back("foreign key references missing column " + table + "." + col);
      }
    }
  }
  return out;
}

void validate_schema(const SchemaDescription& sd) {
  const auto v = schema_violations(sd);
  if (v.empty()) return;
  std::string msg = "schema " + sd.db_id + " is invalid:";
  for (const auto& s : v) msg += " " + s + ";";
  msg.pop_back();
  throw Error(Errc::schema_invalid, msg);
}

SchemaDescription analyze_schema(const Database& db, std::string db_id) {
  SchemaDescription sd;
  sd.db_id = std::move(db_id);
  {
    Statement st(db.handle(),
                 "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' "
                 "ORDER BY rowid");
    while (sqlite3_step(st.get()) == SQLITE_ROW) sd.tables.push_back({st.text(0), {}, {}});
  }
  for (auto& t : sd.tables) {
    std::vector<std::pair<int, std::string>> pk;
    Statement cols(db.handle(), "PRAGMA table_info(" + quote_ident(t.name) + ")");
    while (sqlite3_step(cols.get()) == SQLITE_ROW) {
      t.columns.push_back({cols.text(1), cols.text(2)});
      if (const int k = sqlite3_column_int(cols.get(), 5); k > 0) pk.emplace_back(k, cols.text(1));
    }
    std::sort(pk.begin(), pk.end());
    for (auto& p : pk) t.primary_key.push_back(std::move(p.second));
  }
  for (const auto& t : sd.tables) {
    // Rows come grouped by constraint id, highest id first for the first
    // declared constraint; sort to declaration order.
    struct Ref {
      int id, seq;
      ForeignKey fk;
    };
    std::vector<Ref> refs;
    Statement fks(db.handle(), "PRAGMA foreign_key_list(" + quote_ident(t.name) + ")");
    while (sqlite3_step(fks.get()) == SQLITE_ROW) {
      Ref r{sqlite3_column_int(fks.get(), 0), sqlite3_column_int(fks.get(), 1),
            {t.name, fks.text(3), fks.text(2), fks.text(4)}};
      if (sqlite3_column_type(fks.get(), 4) == SQLITE_NULL) {
        // Implicit reference to the parent's primary key.
        for (const auto& p : sd.tables) {
          if (p.name == r.fk.parent_table && static_cast<std::size_t>(r.seq) < p.primary_key.size()) {
            r.fk.parent_column = p.primary_key[static_cast<std::size_t>(r.seq)];
          }
        }
      }
      refs.push_back(std::move(r));
    }
    std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
      return a.id != b.id ? a.id > b.id : a.seq < b.seq;
    });
    for (auto& r : refs) sd.foreign_keys.push_back(std::move(r.fk));
  }
  return sd;
}

std::string serialize_schema(const SchemaDescription& sd) {
  auto join = [](const auto& items, auto name) {
    std::string out;
    for (const auto& it : items) {
      if (!out.empty()) out += ", ";
      out += name(it);
    }
    return out;
  };
  std::string out = sd.db_id;
  if (sd.tables.empty()) return out + " contains no tables.";
  out += " contains tables such as " + join(sd.tables, [](const Table& t) { return t.name; }) + ".";
  for (const auto& t : sd.tables) {
    out += " Table " + t.name + " has columns such as " +
           join(t.columns, [](const Column& c) { return c.name; }) + ".";
    if (!t.primary_key.empty()) {
      out += " " + join(t.primary_key, [](const std::string& s) { return s; }) +
             " is the primary key.";
    }
  }
  for (const auto& fk : sd.foreign_keys) {
    out += " The " + fk.child_column + " of " + fk.child_table + " is the foreign key of " +
           fk.parent_column + " of " + fk.parent_table + ".";
  }
  return out;
}

json schema_to_json(const SchemaDescription& sd) {
  json tables = json::array();
  for (const auto& t : sd.tables) {
    json cols = json::array();
    for (const auto& c : t.columns) cols.push_back({{"name", c.name}, {"type", c.type}});
    tables.push_back({{"name", t.name}, {"columns", cols}, {"primary_key", t.primary_key}});
  }
  json fks = json::array();
  for (const auto& fk : sd.foreign_keys) {
    fks.push_back({{"child_table", fk.child_table},
                   {"child_column", fk.child_column},
                   {"parent_table", fk.parent_table},
                   {"parent_column", fk.parent_column}});
  }
  return {{"v", 1}, {"db_id", sd.db_id}, {"tables", tables}, {"foreign_keys", fks}};
}

SchemaDescription schema_from_json(const json& j) {
  try {
    SchemaDescription sd;
    sd.db_id = j.at("db_id").get<std::string>();
    for (const auto& t : j.at("tables")) {
      Table table{t.at("name").get<std::string>(), {}, {}};
      for (const auto& c : t.at("columns")) {
        table.columns.push_back({c.at("name").get<std::string>(), c.value("type", "")});
      }
      if (t.contains("primary_key")) table.primary_key = t["primary_key"].get<std::vector<std::string>>();
      sd.tables.push_back(std::move(table));
    }
    for (const auto& f : j.value("foreign_keys", json::array())) {
      sd.foreign_keys.push_back({f.at("child_table").get<std::string>(),
                                 f.at("child_column").get<std::string>(),
                                 f.at("parent_table").get<std::string>(),
                                 f.at("parent_column").get<std::string>()});
    }
    return sd;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, std::string("bad schema json: ") + e.what());
  }
}

SchemaDescription load_schema_file(const std::filesystem::path& path) {
  try {
    return schema_from_json(json::parse(binio::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse_error, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Generation

std::string build_sql_prompt(const SchemaDescription& sd, std::string_view question) {
  return "##Instruction:\n" + serialize_schema(sd) + "\n##Input:\n" + std::string(question) +
         "\n##Response:\n";
}

std::string extract_sql(std::string_view completion) {
  const auto fence = completion.find("```");
  if (fence != std::string_view::npos) {
    auto body_begin = completion.find('\n', fence + 3);
    body_begin = body_begin == std::string_view::npos ? completion.size() : body_begin + 1;
    const auto close = completion.find("```", body_begin);
    return first_statement(completion.substr(body_begin, close == std::string_view::npos
                                                              ? std::string_view::npos
                                                              : close - body_begin));
  }
  return first_statement(completion);
}

std::string generate_sql(const SchemaDescription& sd, std::string_view question,
                         smmf::ChatBackend& backend, const GenerateOptions& opts) {
  static std::atomic<std::uint64_t> counter{0};
  auto req = smmf::user_request(opts.model, build_sql_prompt(sd, question));
  req.max_tokens = opts.max_tokens;
  req.request_id = "t2s-" + std::to_string(++counter);
  req.deadline = smmf::SteadyClock::now() + opts.timeout;
  std::string completion;
  try {
    completion = smmf::complete(backend, req);
  } catch (const Error& e) {
    throw Error(Errc::backend_error, "request " + req.request_id + ": " + e.what());
  }
  std::string sql = extract_sql(completion);
  if (sql.empty()) {
    throw Error(Errc::backend_error, "request " + req.request_id + ": empty completion");
  }
  return sql;
}

// ---------------------------------------------------------------------------
// Execution

std::string cell_to_string(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return "NULL";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          std::ostringstream os;
          os << std::setprecision(15) << v;
          return os.str();
        } else {
          return v;
        }
      },
      c);
}

std::string render_table(const ResultTable& t) {
  auto line = [](const auto& cells, auto str) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += " | ";
      out += str(cells[i]);
    }
    return out + "\n";
  };
  std::string out = line(t.columns, [](const std::string& s) { return s; });
  for (const auto& row : t.rows) out += line(row, cell_to_string);
  if (t.truncated) out += "(truncated)\n";
  return out;
}

json table_to_json(const ResultTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json r = json::array();
    for (const auto& c : row) {
      std::visit(
          [&](const auto& v) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, std::monostate>) {
              r.push_back(nullptr);
            } else {
              r.push_back(v);
            }
          },
          c);
    }
    rows.push_back(std::move(r));
  }
  return {{"columns", t.columns}, {"rows", rows}, {"truncated", t.truncated}};
}

ResultTable execute_sql(const Database& db, std::string_view sql, const ExecLimits& limits) {
  const std::size_t start = skip_blank(sql, 0);
  std::size_t kw_end = start;
  while (kw_end < sql.size() && ident_char(sql[kw_end])) ++kw_end;
  const std::string keyword = text::to_lower_ascii(sql.substr(start, kw_end - start));
  if (keyword != "select" && keyword != "with" && keyword != "values") {
    throw Error(Errc::not_read_only, "only SELECT statements may run");
  }
  const char* tail = nullptr;
  Statement st(db.handle(), sql, &tail);
  if (!st.get()) throw Error(Errc::parse_error, "empty statement");
  const std::string_view rest(tail, static_cast<std::size_t>(sql.data() + sql.size() - tail));
  for (std::size_t i = skip_blank(rest, 0); i < rest.size(); i = skip_blank(rest, i + 1)) {
    if (rest[i] != ';') throw Error(Errc::not_read_only, "only a single statement may run");
  }
  if (!sqlite3_stmt_readonly(st.get())) {
    throw Error(Errc::not_read_only, "statement would modify the database");
  }

  const auto deadline = std::chrono::steady_clock::now() + limits.timeout;
  sqlite3_progress_handler(
      db.handle(), 1000,
      [](void* p) -> int {
        return std::chrono::steady_clock::now() > *static_cast<const std::chrono::steady_clock::time_point*>(p)
                   ? 1
                   : 0;
      },
      const_cast<std::chrono::steady_clock::time_point*>(&deadline));
  struct ClearHandler {
    sqlite3* db;
    ~ClearHandler() { sqlite3_progress_handler(db, 0, nullptr, nullptr); }
  } clear{db.handle()};

  ResultTable out;
  const int ncol = sqlite3_column_count(st.get());
  for (int c = 0; c < ncol; ++c) out.columns.emplace_back(sqlite3_column_name(st.get(), c));
  while (true) {
    const int rc = sqlite3_step(st.get());
    if (rc == SQLITE_DONE) break;
    if (rc == SQLITE_INTERRUPT) {
      throw Error(Errc::timeout, "query exceeded " + std::to_string(limits.timeout.count()) + " ms");
    }
    if (rc != SQLITE_ROW) throw Error(Errc::execution_error, sqlite3_errmsg(db.handle()));
    if (out.rows.size() == limits.max_rows) {
      out.truncated = true;
      break;
    }
    std::vector<Cell> row;
    row.reserve(static_cast<std::size_t>(ncol));
    for (int c = 0; c < ncol; ++c) row.push_back(read_cell(st.get(), c));
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string_view to_string(Difficulty d) noexcept {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
    case Difficulty::extra: return "extra";
  }
  return "easy";
}

Difficulty parse_difficulty(std::string_view s) {
  const std::string l = text::to_lower_ascii(text::trim(s));
  for (const auto d : kDifficulties) {
    if (l == to_string(d)) return d;
  }
  throw Error(Errc::parse_error, "unknown difficulty: " + std::string(s));
}

std::vector<EvalRecord> parse_dataset(std::string_view jsonl) {
  std::vector<EvalRecord> out;
  std::size_t line_no = 0;
  while (!jsonl.empty()) {
    const auto nl = jsonl.find('\n');
    const std::string_view line = jsonl.substr(0, nl);
    jsonl = nl == std::string_view::npos ? std::string_view{} : jsonl.substr(nl + 1);
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      EvalRecord r;
      r.db_id = j.at("db_id").get<std::string>();
      r.question = j.at("question").get<std::string>();
      r.gold_sql = j.at("query").get<std::string>();
      r.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
      if (j.contains("predicted") && !j["predicted"].is_null()) {
        r.predicted_sql = j["predicted"].get<std::string>();
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, "dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::parse_error, "dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EvalRecord> read_dataset(const std::filesystem::path& path) {
  return parse_dataset(binio::read_file(path));
}

bool has_top_level_order_by(std::string_view sql) {
  int depth = 0;
  std::string prev;
  std::size_t i = 0;
  while (i < sql.size()) {
    const char c = sql[i];
    if (is_quote(c)) {
      i = skip_quoted(sql, i);
      prev.clear();
    } else if (sql.compare(i, 2, "--") == 0 || sql.compare(i, 2, "/*") == 0) {
      i = skip_blank(sql, i);
    } else if (c == '(') {
      ++depth;
      ++i;
      prev.clear();
    } else if (c == ')') {
      --depth;
      ++i;
      prev.clear();
    } else if (ident_char(c)) {
      std::size_t j = i;
      while (j < sql.size() && ident_char(sql[j])) ++j;
      std::string word = text::to_lower_ascii(sql.substr(i, j - i));
      if (depth == 0 && prev == "order" && word == "by") return true;
      prev = std::move(word);
      i = j;
    } else {
      if (!text::is_space(static_cast<unsigned char>(c)) && c != '\n') prev.clear();
      ++i;
    }
  }
  return false;
}

bool results_match(const ResultTable& gold, const ResultTable& predicted, bool ordered) {
  if (gold.rows.size() != predicted.rows.size()) return false;
  if (ordered) {
    return std::equal(gold.rows.begin(), gold.rows.end(), predicted.rows.begin(), rows_equal);
  }
  auto a = gold.rows;
  auto b = predicted.rows;
  std::sort(a.begin(), a.end(), row_less);
  std::sort(b.begin(), b.end(), row_less);
  return std::equal(a.begin(), a.end(), b.begin(), rows_equal);
}

json report_to_json(const ExReport& r) {
  json buckets = json::object();
  for (const auto d : kDifficulties) {
    const auto it = r.buckets.find(d);
    buckets[std::string(to_string(d))] = bucket_json(it == r.buckets.end() ? BucketStats{} : it->second);
  }
  std::size_t excluded = 0;
  json records = json::array();
  for (const auto& o : r.outcomes) {
    if (o.verdict == Verdict::excluded) ++excluded;
    records.push_back({{"verdict", o.verdict == Verdict::correct     ? "correct"
                                   : o.verdict == Verdict::incorrect ? "incorrect"
                                                                     : "excluded"},
                       {"diagnostic", o.diagnostic}});
  }
  return {{"v", 1},
          {"buckets", buckets},
          {"overall", bucket_json(r.overall)},
          {"excluded", excluded},
          {"records", records}};
}

std::string render_report(const ExReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "bucket" << std::right << std::setw(8) << "count"
     << std::setw(9) << "correct" << std::setw(8) << "EX" << "\n";
  auto row = [&](std::string_view name, const BucketStats& b) {
    os << std::left << std::setw(8) << name << std::right << std::setw(8) << b.total
       << std::setw(9) << b.correct << std::setw(8) << std::fixed << std::setprecision(3)
       << b.ex() << "\n";
  };
  for (const auto d : kDifficulties) {
    const auto it = r.buckets.find(d);
    row(to_string(d), it == r.buckets.end() ? BucketStats{} : it->second);
  }
  row("all", r.overall);
  return os.str();
}

ConnectionFactory directory_factory(std::filesystem::path dir) {
  return [dir = std::move(dir)](const std::string& db_id) {
    const auto path = dir / (db_id + ".sqlite");
    if (!std::filesystem::exists(path)) {
      throw Error(Errc::missing_fixture, "no fixture database for " + db_id + " at " + path.string());
    }
    return Database::open(path);
  };
}

ExReport ex_score(std::span<const EvalRecord> records, const ConnectionFactory& connect,
                  std::size_t workers, const ExecLimits& limits) {
  {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.db_id);
    for (const auto& id : ids) connect(id);  // surfaces missing fixtures up front
  }
  ExReport report;
  report.outcomes.resize(records.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    std::map<std::string, Database> conns;
    for (std::size_t i = next++; i < records.size(); i = next++) {
      const auto& rec = records[i];
      auto it = conns.find(rec.db_id);
      if (it == conns.end()) it = conns.emplace(rec.db_id, connect(rec.db_id)).first;
      auto& out = report.outcomes[i];
      ResultTable gold;
      try {
        gold = execute_sql(it->second, rec.gold_sql, limits);
      } catch (const Error& e) {
        out = {Verdict::excluded, std::string("gold query failed: ") + e.what()};
        continue;
      }
      if (!rec.predicted_sql) {
        out = {Verdict::incorrect, "no prediction"};
        continue;
      }
      try {
        const auto pred = execute_sql(it->second, *rec.predicted_sql, limits);
        const bool ok = results_match(gold, pred, has_top_level_order_by(rec.gold_sql));
        out = {ok ? Verdict::correct : Verdict::incorrect, ok ? "" : "result mismatch"};
      } catch (const Error& e) {
        out = {Verdict::incorrect, std::string("predicted query failed: ") + e.what()};
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, records.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  for (const auto d : kDifficulties) report.buckets[d] = {};
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (report.outcomes[i].verdict == Verdict::excluded) continue;
    auto& b = report.buckets[records[i].difficulty];
    const bool ok = report.outcomes[i].verdict == Verdict::correct;
    ++b.total;
    ++report.overall.total;
    if (ok) {
      ++b.correct;
      ++report.overall.correct;
    }
  }
  return report;
}

std::map<Difficulty, std::size_t> bucket_counts(std::span<const EvalRecord> records) {
  std::map<Difficulty, std::size_t> out;
  for (const auto d : kDifficulties) out[d] = 0;
  for (const auto& r : records) ++out[r.difficulty];
  return out;
}

// ---------------------------------------------------------------------------
// Export

std::string finetune_line(const SchemaDescription& sd, const EvalRecord& record) {
  return "{\"instruction\": " + json(serialize_schema(sd)).dump() +
         ", \"input\": " + json(record.question).dump() +
         ", \"response\": " + json(record.gold_sql).dump() + "}";
}

void export_finetune_corpus(std::span<const EvalRecord> records,
                            const std::map<std::string, SchemaDescription>& schemas,
                            const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    const auto it = schemas.find(r.db_id);
    if (it == schemas.end()) throw Error(Errc::missing_schema, "no schema for " + r.db_id);
    out += finetune_line(it->second, r);
    out += '\n';
  }
  binio::write_file_atomic(path, out);
}

}  // namespace dbchat::text2sql
