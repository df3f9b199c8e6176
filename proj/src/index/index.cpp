// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/index.hpp"

#include <algorithm>
#include <mutex>
#include <nlohmann/json.hpp>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/kernels.hpp"
#include "dbchat/text.hpp"

namespace dbchat::index {

namespace {

constexpr char kMagic[] = "DBKB";
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string to_string(const ChunkKey& key) {
  return key.doc_id + "#" + std::to_string(key.chunk_index);
}

std::map<std::string, std::uint32_t> term_frequencies(std::string_view text) {
  std::map<std::string, std::uint32_t> tf;
  for (auto& t : text::tokenize(text)) ++tf[std::move(t)];
  return tf;
}

KnowledgeBase::KnowledgeBase(std::string name, std::size_t dimension)
    : name_(std::move(name)), dimension_(dimension), mutex_(std::make_unique<std::shared_mutex>()),
      write_gate_(std::make_unique<std::mutex>()) {}

KnowledgeBase::KnowledgeBase(KnowledgeBase&&) noexcept = default;
KnowledgeBase& KnowledgeBase::operator=(KnowledgeBase&&) noexcept = default;
KnowledgeBase::~KnowledgeBase() = default;

std::shared_lock<std::shared_mutex> KnowledgeBase::read_lock() const {
  std::lock_guard gate(*write_gate_);
  return std::shared_lock<std::shared_mutex>(*mutex_);
}

void KnowledgeBase::index_chunks(std::span<const ingest::Chunk> chunks,
                                 const encoder::Embedder& embedder) {
  std::vector<encoder::Vector> embeddings;
  embeddings.reserve(chunks.size());
  for (const auto& c : chunks) embeddings.push_back(embedder.embed_key(c.text));
  index_embedded(chunks, embeddings);
}

void KnowledgeBase::index_embedded(std::span<const ingest::Chunk> chunks,
                                   std::span<const encoder::Vector> embeddings) {
  if (chunks.size() != embeddings.size()) {
    throw Error(Errc::invalid_argument, "chunk and embedding counts differ");
  }
  std::lock_guard gate(*write_gate_);
  std::unique_lock lock(*mutex_);
  std::size_t dim = dimension_;
  std::set<ChunkKey> batch_keys;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (dim == 0) dim = embeddings[i].size();
    if (embeddings[i].size() != dim || dim == 0) {
      throw Error(Errc::dimension_mismatch,
                  "embedding dimension " + std::to_string(embeddings[i].size()) +
                      " does not match knowledge base dimension " + std::to_string(dim));
    }
    ChunkKey key{chunks[i].doc_id, chunks[i].chunk_index};
    if (row_of_.contains(key) || !batch_keys.insert(key).second) {
      throw Error(Errc::duplicate_key, "duplicate chunk key " + to_string(key));
    }
  }
  dimension_ = dim;
  commit(chunks, embeddings);
}

void KnowledgeBase::commit(std::span<const ingest::Chunk> chunks,
                           std::span<const encoder::Vector> embeddings) {
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    ChunkKey key{chunks[i].doc_id, chunks[i].chunk_index};
    row_of_.emplace(key, keys_.size());
    keys_.push_back(key);
    chunks_.push_back(chunks[i]);
    vectors_.insert(vectors_.end(), embeddings[i].begin(), embeddings[i].end());
    norms_.push_back(kernels::norm(embeddings[i]));
    for (const auto& [term, tf] : term_frequencies(chunks[i].text)) {
      inverted_[term].emplace(key, tf);
      graph_.term_to_chunks[term].insert(key);
      graph_.chunk_to_terms[key].insert(term);
    }
  }
  rebuild_key_rank();
}

void KnowledgeBase::rebuild_key_rank() {
  key_rank_.assign(keys_.size(), 0);
  std::size_t rank = 0;
  for (const auto& [key, row] : row_of_) key_rank_[row] = rank++;
}

const ingest::Chunk& KnowledgeBase::chunk(const ChunkKey& key) const {
  const auto it = row_of_.find(key);
  if (it == row_of_.end()) throw Error(Errc::not_found, "no chunk " + to_string(key));
  return chunks_[it->second];
}

const ingest::Chunk& KnowledgeBase::chunk_at_row(std::size_t row) const { return chunks_.at(row); }

std::span<const double> KnowledgeBase::embedding_at_row(std::size_t row) const {
  return std::span<const double>(vectors_).subspan(row * dimension_, dimension_);
}

std::string KnowledgeBase::check_integrity() const {
  if (chunks_.size() != keys_.size() || norms_.size() != keys_.size() ||
      vectors_.size() != keys_.size() * dimension_ || row_of_.size() != keys_.size()) {
    return "index sizes disagree";
  }
  for (const auto& [term, postings] : inverted_) {
    for (const auto& [key, tf] : postings) {
      if (!row_of_.contains(key)) return "inverted index references missing " + to_string(key);
    }
  }
  for (const auto& [term, keys] : graph_.term_to_chunks) {
    for (const auto& key : keys) {
      if (!row_of_.contains(key)) return "graph index references missing " + to_string(key);
    }
  }
  for (const auto& [key, terms] : graph_.chunk_to_terms) {
    if (!row_of_.contains(key)) return "graph node for missing " + to_string(key);
  }
  return {};
}

std::string KnowledgeBase::serialize() const {
  auto lock = read_lock();
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dimension_));
  w.u64(keys_.size());
  w.u64(inverted_.size());
  w.blob(name_);

  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& [key, row] : row_of_) {
    w.f64s(embedding_at_row(row));
    const auto& c = chunks_[row];
    chunks.push_back({{"doc_id", c.doc_id},
                      {"chunk_index", c.chunk_index},
                      {"text", c.text},
                      {"span", {c.char_span.start, c.char_span.end}}});
  }
  w.blob(chunks.dump());

  nlohmann::json postings = nlohmann::json::object();
  for (const auto& [term, plist] : inverted_) {
    auto& arr = postings[term] = nlohmann::json::array();
    for (const auto& [key, tf] : plist) arr.push_back({key.doc_id, key.chunk_index, tf});
  }
  w.blob(postings.dump());
  return w.finish();
}

namespace {

KbHeader read_header(binio::Reader& r) {
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    throw Error(Errc::corrupt_file, "not a knowledge-base file");
  }
  KbHeader h;
  h.version = r.u32();
  if (h.version != kVersion) {
    throw Error(Errc::corrupt_file, "unsupported knowledge-base version " + std::to_string(h.version));
  }
  h.dimension = r.u32();
  h.chunk_count = r.u64();
  h.term_count = r.u64();
  h.name = r.blob();
  return h;
}

}  // namespace

KnowledgeBase KnowledgeBase::deserialize(std::string bytes) {
  binio::Reader r(std::move(bytes));
  const KbHeader h = read_header(r);
  if (h.chunk_count > 0 && h.dimension == 0) throw Error(Errc::corrupt_file, "zero dimension");
  std::vector<encoder::Vector> vectors(h.chunk_count, encoder::Vector(h.dimension));
  for (auto& v : vectors) {
    for (auto& x : v) x = r.f64();
  }
  std::vector<ingest::Chunk> chunks;
  std::map<std::string, Postings> postings;
  try {
    const auto cj = nlohmann::json::parse(r.blob());
    for (const auto& c : cj) {
      ingest::Chunk chunk;
      chunk.doc_id = c.at("doc_id").get<std::string>();
      chunk.chunk_index = c.at("chunk_index").get<std::size_t>();
      chunk.text = c.at("text").get<std::string>();
      chunk.char_span = {c.at("span").at(0).get<std::size_t>(), c.at("span").at(1).get<std::size_t>()};
      chunks.push_back(std::move(chunk));
    }
    const auto pj = nlohmann::json::parse(r.blob());
    for (const auto& [term, arr] : pj.items()) {
      auto& plist = postings[term];
      for (const auto& p : arr) {
        plist.emplace(ChunkKey{p.at(0).get<std::string>(), p.at(1).get<std::size_t>()},
                      p.at(2).get<std::uint32_t>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_file, std::string("malformed JSON block: ") + e.what());
  }
  if (!r.at_end() || chunks.size() != h.chunk_count || postings.size() != h.term_count) {
    throw Error(Errc::corrupt_file, "knowledge-base counts do not match header");
  }

  KnowledgeBase kb(h.name, h.dimension);
  kb.index_embedded(chunks, vectors);
  // Postings are rebuilt from chunk text on indexing; the stored copy must agree.
  if (kb.inverted_ != postings) {
    throw Error(Errc::corrupt_file, "stored postings disagree with chunk text");
  }
  return kb;
}

void KnowledgeBase::save(const std::filesystem::path& path) const {
  binio::write_file_atomic(path, serialize());
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path));
}

KbHeader KnowledgeBase::inspect(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path));
  return read_header(r);
}

}  // namespace dbchat::index
