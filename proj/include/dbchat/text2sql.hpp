// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Schema analysis, SQL generation through a chat backend, read-only query
// execution, execution-accuracy (EX) scoring and fine-tuning corpus export.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

struct sqlite3;

namespace dbchat::smmf {
class ChatBackend;
}

namespace dbchat::text2sql {

/// RAII SQLite connection. Single-threaded: use one per worker.
class Database {
 public:
  enum class Mode { read_only, read_write_create };

  static Database open(const std::filesystem::path& path, Mode mode = Mode::read_only);
  static Database open_memory();

  Database(Database&&) noexcept;
  Database& operator=(Database&&) noexcept;
  Database(const Database&) = delete;
  Database& operator=(const Database&) = delete;
  ~Database();

  /// Runs a script of statements with no result rows (fixture building).
  void exec_script(std::string_view sql);

  sqlite3* handle() const noexcept { return db_; }
  bool read_only() const noexcept { return read_only_; }

 private:
  Database(sqlite3* db, bool read_only) : db_(db), read_only_(read_only) {}

  sqlite3* db_ = nullptr;
  bool read_only_ = true;
};

/// (Re)creates `db_path` from a DDL+INSERT script.
void build_fixture(const std::filesystem::path& script, const std::filesystem::path& db_path);

struct Column {
  std::string name;
  std::string type;

  bool operator==(const Column&) const = default;
};

struct Table {
  std::string name;
  std::vector<Column> columns;
  std::vector<std::string> primary_key;

  bool operator==(const Table&) const = default;
};

struct ForeignKey {
  std::string child_table;
  std::string child_column;
  std::string parent_table;
  std::string parent_column;

  bool operator==(const ForeignKey&) const = default;
};

struct SchemaDescription {
  std::string db_id;
  std::vector<Table> tables;
  std::vector<ForeignKey> foreign_keys;

  bool operator==(const SchemaDescription&) const = default;
};

/// Invariant violations (dangling FK endpoints, PK columns missing from their
/// table); empty when valid.
std::vector<std::string> schema_violations(const SchemaDescription& sd);
/// Throws Errc::schema_invalid listing every violation.
void validate_schema(const SchemaDescription& sd);

/// Tables in catalog order, columns in declaration order.
SchemaDescription analyze_schema(const Database& db, std::string db_id);

/// "<db> contains tables such as t1, t2. Table t1 has columns such as c1, c2.
/// c1 is the primary key. ... The c of t is the foreign key of pc of pt."
std::string serialize_schema(const SchemaDescription& sd);

nlohmann::json schema_to_json(const SchemaDescription& sd);
SchemaDescription schema_from_json(const nlohmann::json& j);
SchemaDescription load_schema_file(const std::filesystem::path& path);

/// Text sent to the model: instruction (serialized schema) and input
/// (question) in the fine-tuning arrangement.
std::string build_sql_prompt(const SchemaDescription& sd, std::string_view question);

/// First fenced block when present, else the first statement up to ';' or
/// end of text. Trimmed, without the terminating ';'.
std::string extract_sql(std::string_view completion);

struct GenerateOptions {
  std::string model = "mock";
  std::size_t max_tokens = 256;
  std::chrono::milliseconds timeout{30000};
};

/// Throws Errc::backend_error (message carries the request id) on backend
/// failure, timeout or an empty completion.
std::string generate_sql(const SchemaDescription& sd, std::string_view question,
                         smmf::ChatBackend& backend, const GenerateOptions& opts = {});

using Cell = std::variant<std::monostate, std::int64_t, double, std::string>;

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  bool truncated = false;
};

std::string cell_to_string(const Cell& c);
/// Header line then one line per row, cells separated by " | ".
std::string render_table(const ResultTable& t);
nlohmann::json table_to_json(const ResultTable& t);

struct ExecLimits {
  std::size_t max_rows = 10000;
  std::chrono::milliseconds timeout{5000};
};

/// Read-only guard: only a single SELECT/WITH/VALUES statement runs.
/// Errors: not_read_only, parse_error, timeout, execution_error.
ResultTable execute_sql(const Database& db, std::string_view sql, const ExecLimits& limits = {});

enum class Difficulty { easy, medium, hard, extra };
std::string_view to_string(Difficulty d) noexcept;
Difficulty parse_difficulty(std::string_view s);

struct EvalRecord {
  std::string db_id;
  std::string question;
  std::string gold_sql;
  std::optional<std::string> predicted_sql;
  Difficulty difficulty = Difficulty::easy;
};

/// Dataset lines: {"db_id", "question", "query", "difficulty"} plus an
/// optional "predicted".
std::vector<EvalRecord> parse_dataset(std::string_view jsonl);
std::vector<EvalRecord> read_dataset(const std::filesystem::path& path);

/// Top-level ORDER BY outside parentheses, strings and comments.
bool has_top_level_order_by(std::string_view sql);

/// Integer/real cells compare within 1e-6, text compares trimmed.
bool results_match(const ResultTable& gold, const ResultTable& predicted, bool ordered);

struct BucketStats {
  std::size_t total = 0;
  std::size_t correct = 0;
  double ex() const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

enum class Verdict { correct, incorrect, excluded };

struct RecordOutcome {
  Verdict verdict = Verdict::incorrect;
  std::string diagnostic;
};

struct ExReport {
  std::map<Difficulty, BucketStats> buckets;
  BucketStats overall;
  std::vector<RecordOutcome> outcomes;  ///< parallel to the input records
};

nlohmann::json report_to_json(const ExReport& r);
/// Aligned table: easy / medium / hard / extra / all.
std::string render_report(const ExReport& r);

using ConnectionFactory = std::function<Database(const std::string& db_id)>;

/// Opens <dir>/<db_id>.sqlite read-only; Errc::missing_fixture if absent.
ConnectionFactory directory_factory(std::filesystem::path dir);

/// A record is correct iff gold and predicted both execute and their results
/// match (ordered iff gold has a top-level ORDER BY). Gold failures are
/// excluded with a diagnostic; missing or failing predictions are incorrect.
ExReport ex_score(std::span<const EvalRecord> records, const ConnectionFactory& connect,
                  std::size_t workers = 1, const ExecLimits& limits = {});

/// Question counts per difficulty, as found in the dataset.
std::map<Difficulty, std::size_t> bucket_counts(std::span<const EvalRecord> records);

/// {"instruction": ..., "input": ..., "response": ...} with ", " and ": "
/// separators.
std::string finetune_line(const SchemaDescription& sd, const EvalRecord& record);

/// One line per record. Errc::missing_schema when a db_id has no schema.
void export_finetune_corpus(std::span<const EvalRecord> records,
                            const std::map<std::string, SchemaDescription>& schemas,
                            const std::filesystem::path& path);

}  // namespace dbchat::text2sql
