// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// dbchat command line: knowledge-base management, RAG and Text-to-SQL chat,
// evaluation, the serving benchmark and the HTTP service.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dbchat/agents.hpp"
#include "dbchat/binio.hpp"
#include "dbchat/encoder.hpp"
#include "dbchat/error.hpp"
#include "dbchat/index.hpp"
#include "dbchat/ingest.hpp"
#include "dbchat/retrieval.hpp"
#include "dbchat/server.hpp"
#include "dbchat/smmf.hpp"
#include "dbchat/text2sql.hpp"

namespace {

using namespace dbchat;
using nlohmann::json;

struct Globals {
  std::string config;
};

server::AppConfig app_config(const Globals& g) {
  const auto env = server::process_environment();
  return g.config.empty() ? server::parse_config("", env) : server::load_config(g.config, env);
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

json contexts_json(const std::vector<retrieval::RetrievedContext>& hits) {
  json arr = json::array();
  for (const auto& h : hits) {
    arr.push_back({{"chunk_key", index::to_string(h.chunk_key)},
                   {"score", h.score},
                   {"retriever_kind", retrieval::to_string(h.retriever_kind)},
                   {"text", h.text}});
  }
  return {{"v", 1}, {"contexts", arr}};
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string kb;
  std::string manifest;
  std::string media_kind = "plain";
  std::vector<std::string> files;
};

void add_ingest(CLI::App& app, Globals& g) {
  auto args = std::make_shared<IngestArgs>();
  auto* cmd = app.add_subcommand("ingest", "Chunk, embed and index documents into a knowledge base");
  cmd->add_option("--kb", args->kb, "Knowledge base name (ignored with --manifest)");
  cmd->add_option("--manifest", args->manifest, "JSON-lines manifest of {uri, media_kind, kb_name}");
  cmd->add_option("--media-kind", args->media_kind, "plain | markdown | html | pdf_text")
      ->check(CLI::IsMember({"plain", "markdown", "html", "pdf_text"}));
  cmd->add_option("files", args->files, "Documents to ingest")->check(CLI::ExistingFile);
  cmd->callback([args, &g] {
    server::App app(app_config(g));
    std::map<std::string, std::vector<ingest::SourceDocument>> by_kb;
    if (!args->manifest.empty()) {
      for (const auto& e : ingest::read_manifest(args->manifest)) {
        by_kb[e.kb_name].push_back(ingest::load_document(e.uri, e.media_kind));
      }
    }
    if (!args->files.empty()) {
      if (args->kb.empty()) throw CLI::ValidationError("--kb", "required when files are given");
      const auto kind = ingest::parse_media_kind(args->media_kind);
      for (const auto& f : args->files) by_kb[args->kb].push_back(ingest::load_document(f, kind));
    }
    if (by_kb.empty()) throw CLI::ValidationError("ingest", "nothing to ingest");
    json out = json::array();
    for (const auto& [kb, docs] : by_kb) {
      const auto r = app.ingest(kb, docs);
      out.push_back({{"kb", kb}, {"documents", r.documents}, {"chunks", r.chunks}});
    }
    print_json({{"v", 1}, {"ingested", out}});
  });
}

struct QueryArgs {
  std::string kb;
  std::string retriever = "embedding";
  std::size_t k = retrieval::kDefaultK;
  std::string question;
};

void add_query(CLI::App& parent, const std::string& name, Globals& g) {
  auto args = std::make_shared<QueryArgs>();
  auto* cmd = parent.add_subcommand(name, "Retrieve the top-K contexts for a question");
  cmd->add_option("--kb", args->kb, "Knowledge base name")->required();
  cmd->add_option("--retriever", args->retriever, "embedding | keyword | graph")
      ->check(CLI::IsMember({"embedding", "keyword", "graph"}));
  cmd->add_option("--k", args->k, "Number of contexts")->check(CLI::PositiveNumber);
  cmd->add_option("-q,--question", args->question, "Query text")->required();
  cmd->callback([args, &g] {
    server::App app(app_config(g));
    const auto kb = app.kb(args->kb);
    print_json(contexts_json(retrieval::retrieve(retrieval::parse_retriever_kind(args->retriever),
                                                 *kb, args->question, args->k, app.embedder())));
  });
}

struct ChatArgs {
  std::string kb;
  std::string question;
  bool show_prompt = false;
};

void add_chat(CLI::App& app, Globals& g) {
  auto args = std::make_shared<ChatArgs>();
  auto* cmd = app.add_subcommand("chat", "Answer a question from a knowledge base");
  cmd->add_option("--kb", args->kb, "Knowledge base name")->required();
  cmd->add_option("-q,--question", args->question, "Question")->required();
  cmd->add_flag("--show-prompt", args->show_prompt, "Print the rendered prompt to stderr");
  cmd->callback([args, &g] {
    server::App a(app_config(g));
    const auto ans = a.rag_answer(args->kb, args->question, [](std::string_view tok, bool last) {
      std::cout << tok;
      if (last) std::cout << "\n";
      std::cout.flush();
      return true;
    });
    if (args->show_prompt) std::cerr << ans.prompt << "\n";
    std::cout << "\n";
    for (std::size_t i = 0; i < ans.citations.size(); ++i) {
      const auto& c = ans.citations[i];
      std::printf("[%zu] %s (%.4f)\n", i + 1, c.chunk_key.c_str(), c.score);
    }
  });
}

struct EvalArgs {
  std::string dataset;
  std::string db_dir;
  std::size_t workers = 4;
  bool json_out = false;
  bool counts_only = false;
};

void add_eval(CLI::App& parent, const std::string& name) {
  auto args = std::make_shared<EvalArgs>();
  auto* cmd = parent.add_subcommand(name, "Execution-accuracy evaluation of predicted SQL");
  cmd->add_option("--dataset", args->dataset, "JSON-lines dataset with predictions")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--db-dir", args->db_dir, "Directory of <db_id>.sqlite files");
  cmd->add_option("--workers", args->workers, "Evaluation threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--json", args->json_out, "Emit the report as JSON");
  cmd->add_flag("--counts", args->counts_only, "Only count questions per difficulty");
  cmd->callback([args] {
    const auto records = text2sql::read_dataset(args->dataset);
    if (args->counts_only) {
      const auto counts = text2sql::bucket_counts(records);
      json j = {{"v", 1}, {"all", records.size()}};
      for (const auto& [d, n] : counts) j[std::string(text2sql::to_string(d))] = n;
      print_json(j);
      return;
    }
    if (args->db_dir.empty()) throw CLI::ValidationError("--db-dir", "required");
    const auto report =
        text2sql::ex_score(records, text2sql::directory_factory(args->db_dir), args->workers);
    if (args->json_out) {
      print_json(text2sql::report_to_json(report));
    } else {
      std::cout << text2sql::render_report(report);
    }
  });
}

struct ExportArgs {
  std::string dataset;
  std::string out;
  std::vector<std::string> schemas;
  std::string db_dir;
};

void add_export(CLI::App& parent, const std::string& name) {
  auto args = std::make_shared<ExportArgs>();
  auto* cmd = parent.add_subcommand(name, "Write the instruction/input/response fine-tuning corpus");
  cmd->add_option("--dataset", args->dataset, "JSON-lines dataset")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", args->out, "Output file")->required();
  cmd->add_option("--schema", args->schemas, "Schema JSON file (repeatable)")->check(CLI::ExistingFile);
  cmd->add_option("--db-dir", args->db_dir, "Analyze <db_id>.sqlite files for schemas not given");
  cmd->callback([args] {
    const auto records = text2sql::read_dataset(args->dataset);
    std::map<std::string, text2sql::SchemaDescription> schemas;
    for (const auto& f : args->schemas) {
      auto sd = text2sql::load_schema_file(f);
      schemas.insert_or_assign(sd.db_id, std::move(sd));
    }
    if (!args->db_dir.empty()) {
      const auto connect = text2sql::directory_factory(args->db_dir);
      for (const auto& r : records) {
        if (schemas.contains(r.db_id)) continue;
        schemas.emplace(r.db_id, text2sql::analyze_schema(connect(r.db_id), r.db_id));
      }
    }
    text2sql::export_finetune_corpus(records, schemas, args->out);
    std::cerr << "wrote " << records.size() << " lines to " << args->out << "\n";
  });
}

struct FixtureArgs {
  std::string sql;
  std::string out;
};

void add_fixture(CLI::App& parent) {
  auto args = std::make_shared<FixtureArgs>();
  auto* cmd = parent.add_subcommand("fixture", "Build a SQLite database from a SQL script");
  cmd->add_option("--sql", args->sql, "SQL script")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", args->out, "Database path")->required();
  cmd->callback([args] { text2sql::build_fixture(args->sql, args->out); });
}

struct AskArgs {
  std::string db_id;
  std::string question;
  std::string sql;
};

void add_ask(CLI::App& parent, Globals& g) {
  auto args = std::make_shared<AskArgs>();
  auto* cmd = parent.add_subcommand("ask", "Generate SQL for a question and run it");
  cmd->add_option("--db-id", args->db_id, "Database id under text2sql.db_dir")->required();
  cmd->add_option("-q,--question", args->question, "Question");
  cmd->add_option("--sql", args->sql, "Run this SQL instead of generating");
  cmd->callback([args, &g] {
    server::App app(app_config(g));
    std::optional<std::string> sql;
    if (!args->sql.empty()) sql = args->sql;
    const auto ans = app.text2sql(args->db_id, args->question, sql);
    std::cout << ans.sql << "\n\n" << text2sql::render_table(ans.table);
  });
}

struct BenchArgs {
  std::vector<std::size_t> concurrency{1, 2, 4, 8, 16, 32};
  std::size_t requests = 1;
  std::size_t first_token_ms = 50;
  std::size_t per_token_ms = 10;
  std::size_t tokens = 256;
  std::string url;
  std::string model = "mock";
  bool json_out = false;
};

void add_bench(CLI::App& app) {
  auto args = std::make_shared<BenchArgs>();
  auto* cmd = app.add_subcommand("bench", "FTL / IL / throughput across concurrency levels");
  cmd->add_option("-c,--concurrency", args->concurrency, "Concurrency levels")->delimiter(',')->check(CLI::PositiveNumber);
  cmd->add_option("--requests", args->requests, "Sequential requests per loop")->check(CLI::PositiveNumber);
  cmd->add_option("--first-token-ms", args->first_token_ms, "Mock first-token delay");
  cmd->add_option("--per-token-ms", args->per_token_ms, "Mock per-token delay");
  cmd->add_option("--tokens", args->tokens, "Output tokens per request")->check(CLI::PositiveNumber);
  cmd->add_option("--url", args->url, "Benchmark a worker at this URL instead of the mock");
  cmd->add_option("--model", args->model, "Model name");
  cmd->add_flag("--json", args->json_out, "Emit JSON reports");
  cmd->callback([args] {
    smmf::Controller controller;
    auto policy = std::make_shared<net::NetworkPolicy>(true);
    smmf::Gateway gateway(controller, policy);
    std::string address = args->url;
    if (address.empty()) {
      address = "local://" + args->model;
      gateway.attach(address, std::make_shared<smmf::MockBackend>(
                                  std::chrono::milliseconds(args->first_token_ms),
                                  std::chrono::milliseconds(args->per_token_ms), args->tokens));
    }
    controller.register_worker({args->model, address, {smmf::Capability::chat}, {}, {}});
    std::vector<smmf::BenchReport> reports;
    for (const auto c : args->concurrency) {
      smmf::BenchOptions o;
      o.model = args->model;
      o.concurrency = c;
      o.requests_per_worker = args->requests;
      o.output_tokens = args->tokens;
      reports.push_back(smmf::run_bench(gateway, o));
      if (!reports.back().valid) std::cerr << "bench invalid: " << reports.back().error << "\n";
    }
    if (args->json_out) {
      json arr = json::array();
      for (const auto& r : reports) arr.push_back(smmf::bench_to_json(r));
      print_json({{"v", 1}, {"reports", arr}});
    } else {
      std::cout << smmf::render_bench_table(reports);
    }
  });
}

server::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

struct ServeArgs {
  std::string host;
  int port = -1;
};

void add_serve(CLI::App& app, Globals& g) {
  auto args = std::make_shared<ServeArgs>();
  auto* cmd = app.add_subcommand("serve", "Run the HTTP service");
  cmd->add_option("--host", args->host, "Bind address (default server.host)");
  cmd->add_option("--port", args->port, "Port (default server.port, 0 picks one)")
      ->check(CLI::Range(0, 65535));
  cmd->callback([args, &g] {
    auto cfg = app_config(g);
    if (!args->host.empty()) cfg.host = args->host;
    if (args->port >= 0) cfg.port = static_cast<std::uint16_t>(args->port);
    server::App a(cfg);
    server::Service svc(a);
    svc.bind(cfg.host, cfg.port);
    g_service = &svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "dbchat " << server::kVersion << " listening on " << cfg.host << ":" << svc.port()
              << (cfg.offline ? " (offline)" : "") << "\n";
    svc.run();
    g_service = nullptr;
  });
}

struct TrainArgs {
  std::string corpus;
  std::size_t synthetic = 0;
  std::string out;
  std::size_t negatives = 5;
  encoder::TrainOptions opts;
};

void add_train(CLI::App& app) {
  auto args = std::make_shared<TrainArgs>();
  auto* cmd = app.add_subcommand("train-encoder", "Train the dual encoder on query/response pairs");
  auto* corpus = cmd->add_option("--corpus", args->corpus, "JSON-lines {query, response} pairs")
                     ->check(CLI::ExistingFile);
  cmd->add_option("--synthetic", args->synthetic, "Generate N synthetic pairs instead")
      ->excludes(corpus);
  cmd->add_option("--out", args->out, "Embedder file")->required();
  cmd->add_option("--negatives", args->negatives, "Negatives per pair")->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", args->opts.epochs, "Epochs");
  cmd->add_option("--lr", args->opts.learning_rate, "Learning rate");
  cmd->add_option("--batch", args->opts.batch_size, "Batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--dim", args->opts.dimension, "Embedding dimension")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", args->opts.seed, "Random seed");
  cmd->callback([args] {
    std::vector<encoder::QaPair> pairs;
    if (args->synthetic > 0) {
      pairs = encoder::synthetic_corpus(args->synthetic, args->opts.seed);
    } else if (!args->corpus.empty()) {
      pairs = encoder::read_pairs_corpus(args->corpus);
    } else {
      throw CLI::ValidationError("train-encoder", "--corpus or --synthetic is required");
    }
    const auto split = encoder::make_pairs(pairs, args->negatives, args->opts.seed);
    const auto result = encoder::train(split, args->opts);
    std::printf("epoch  objective  dev_recall@1\n");
    std::printf("%5d  %9s  %12.3f\n", 0, "-", result.initial_dev_recall_at_1);
    for (const auto& h : result.history) {
      std::printf("%5zu  %9.4f  %12.3f\n", h.epoch, h.mean_objective, h.dev_recall_at_1);
    }
    std::printf("test recall@1 %.3f\n", encoder::recall_at_1(result.embedder, split.test));
    result.embedder.save(args->out);
  });
}

void add_kb(CLI::App& app, Globals& g) {
  auto* kb = app.add_subcommand("kb", "Knowledge-base files");
  kb->require_subcommand(1);
  auto path = std::make_shared<std::string>();
  auto* inspect = kb->add_subcommand("inspect", "Print a kb file's header and counts");
  inspect->add_option("path", *path, "Path to a .dbkb file")->required()->check(CLI::ExistingFile);
  inspect->callback([path] {
    const auto h = index::KnowledgeBase::inspect(*path);
    print_json({{"v", 1},
                {"name", h.name},
                {"version", h.version},
                {"dimension", h.dimension},
                {"chunks", h.chunk_count},
                {"terms", h.term_count}});
  });
  kb->add_subcommand("list", "List knowledge bases under kb.root")->callback([&g] {
    server::App a(app_config(g));
    print_json({{"v", 1}, {"kbs", a.list_kbs()}});
  });
}

struct AgentArgs {
  std::string role = "data_analyst";
  std::string question;
  std::string db_id;
  std::string kb;
  std::string script;
  std::size_t budget = 0;
};

void add_agent(CLI::App& app, Globals& g) {
  auto* agent = app.add_subcommand("agent", "Tool-using agents");
  agent->require_subcommand(1);
  auto args = std::make_shared<AgentArgs>();
  auto* run = agent->add_subcommand("run", "Run one episode and print its transcript as JSON lines");
  run->add_option("--role", args->role, "Role name");
  run->add_option("-q,--question", args->question, "Question")->required();
  run->add_option("--db-id", args->db_id, "Database id under text2sql.db_dir");
  run->add_option("--kb", args->kb, "Knowledge base for rag_search");
  run->add_option("--script", args->script, "Replay model replies from a JSON-lines file of strings")
      ->check(CLI::ExistingFile);
  run->add_option("--budget", args->budget, "Step budget (default agents.step_budget)");
  run->callback([args, &g] {
    server::App a(app_config(g));
    if (!args->script.empty()) {
      auto scripted = std::make_shared<smmf::ScriptedBackend>();
      const std::string text = binio::read_file(args->script);
      std::size_t start = 0;
      while (start < text.size()) {
        const auto nl = text.find('\n', start);
        const auto line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        if (!line.empty()) scripted->push(json::parse(line).get<std::string>());
        if (nl == std::string::npos) break;
        start = nl + 1;
      }
      a.attach_backend(a.config().default_model, scripted);
    }
    std::optional<std::size_t> budget;
    if (args->budget > 0) budget = args->budget;
    const auto ep = a.run_agent(args->role, args->question, args->db_id, args->kb, std::nullopt, budget);
    std::cout << agents::transcript_jsonl(ep);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dbchat: local database chat with RAG, Text-to-SQL and agents"};
  app.set_version_flag("--version", std::string(server::kVersion));
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file of dotted keys")->check(CLI::ExistingFile);

  add_ingest(app, g);
  add_query(app, "query", g);
  add_chat(app, g);
  add_eval(app, "eval");
  add_bench(app);
  add_serve(app, g);
  add_train(app);
  add_export(app, "export-corpus");
  add_kb(app, g);

  auto* rag = app.add_subcommand("rag", "Retrieval");
  rag->require_subcommand(1);
  add_query(*rag, "query", g);

  auto* t2s = app.add_subcommand("text2sql", "Text-to-SQL evaluation and data");
  t2s->require_subcommand(1);
  add_eval(*t2s, "eval");
  add_export(*t2s, "export");
  add_fixture(*t2s);
  add_ask(*t2s, g);

  add_agent(app, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
