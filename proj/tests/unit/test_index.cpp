#include <doctest.h>

#include <fstream>
#include <thread>

#include "dbchat/encoder.hpp"
#include "dbchat/error.hpp"
#include "dbchat/index.hpp"
#include "dbchat/retrieval.hpp"
#include "support.hpp"

using namespace dbchat;
using namespace dbchat::index;

namespace {

ingest::Chunk chunk(std::string doc, std::size_t i, std::string text) {
  return {std::move(doc), i, std::move(text), {0, 1}};
}

std::vector<ingest::Chunk> sample_chunks(std::size_t n) {
  static const char* words[] = {"singer", "stadium", "concert", "capacity", "year", "name",
                                "country", "song", "theme", "location", "age", "release"};
  std::vector<ingest::Chunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    for (std::size_t k = 0; k < 6; ++k) t += std::string(words[(i * 7 + k * 5 + i / 3) % 12]) + " ";
    t += "row" + std::to_string(i);
    out.push_back(chunk("doc" + std::to_string(i % 17), i / 17, t));
  }
  return out;
}

}  // namespace

TEST_CASE("indexing three chunks keeps all indexes consistent") {
  const auto e = encoder::Embedder::hash_features(256);
  KnowledgeBase kb("t");
  kb.index_chunks(std::vector{chunk("a", 0, "alpha beta"), chunk("a", 1, "beta gamma"),
                              chunk("b", 0, "gamma delta")},
                  e);
  CHECK(kb.size() == 3);
  CHECK(kb.dimension() == 256);
  CHECK(kb.check_integrity().empty());
  CHECK(kb.inverted().at("beta").size() == 2);
  CHECK(kb.graph().chunk_to_terms.size() == 3);
  CHECK(kb.graph().term_to_chunks.at("gamma").size() == 2);
}

TEST_CASE("postings follow the indexing tokenizer") {
  const auto e = encoder::Embedder::hash_features(64);
  KnowledgeBase kb("t");
  kb.index_chunks(std::vector{chunk("s", 0, "Primary key of singer")}, e);
  std::vector<std::string> terms;
  for (const auto& [t, p] : kb.inverted()) terms.push_back(t);
  CHECK(terms == std::vector<std::string>{"key", "of", "primary", "singer"});
  CHECK(term_frequencies("a A b.") == std::map<std::string, std::uint32_t>{{"a", 2}, {"b", 1}});
}

TEST_CASE("duplicate keys and dimension mismatches leave the kb untouched") {
  const auto e = encoder::Embedder::hash_features(64);
  KnowledgeBase kb("t");
  kb.index_chunks(std::vector{chunk("a", 0, "x y")}, e);
  try {
    kb.index_chunks(std::vector{chunk("b", 0, "new"), chunk("a", 0, "dup")}, e);
    FAIL("expected duplicate");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::duplicate_key);
  }
  CHECK(kb.size() == 1);
  CHECK(kb.inverted().count("new") == 0);

  const auto wide = encoder::Embedder::hash_features(128);
  try {
    kb.index_chunks(std::vector{chunk("c", 0, "z")}, wide);
    FAIL("expected mismatch");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::dimension_mismatch);
  }
  CHECK(kb.size() == 1);
  CHECK(kb.check_integrity().empty());
}

TEST_CASE("save and load round trip") {
  const auto dir = testing::scratch("index");
  const auto e = encoder::Embedder::hash_features(512);
  KnowledgeBase kb("probe");
  kb.index_chunks(sample_chunks(1000), e);
  kb.save(dir / "a.dbkb");
  kb.save(dir / "b.dbkb");
  CHECK(testing::read(dir / "a.dbkb") == testing::read(dir / "b.dbkb"));

  const auto back = KnowledgeBase::load(dir / "a.dbkb");
  CHECK(back.name() == "probe");
  CHECK(back.size() == kb.size());
  CHECK(back.check_integrity().empty());
  CHECK(back.serialize() == kb.serialize());
  for (int q = 0; q < 20; ++q) {
    const std::string query = "singer stadium row" + std::to_string(q * 37);
    const auto x = retrieval::embedding_retrieve(kb, query, 8, e);
    const auto y = retrieval::embedding_retrieve(back, query, 8, e);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].chunk_key == y[i].chunk_key);
      CHECK(x[i].score == y[i].score);
    }
  }

  const auto h = KnowledgeBase::inspect(dir / "a.dbkb");
  CHECK(h.dimension == 512);
  CHECK(h.chunk_count == 1000);
  CHECK(h.term_count == kb.inverted().size());
}

TEST_CASE("truncated and flipped files are corrupt") {
  const auto dir = testing::scratch("index-corrupt");
  const auto e = encoder::Embedder::hash_features(32);
  KnowledgeBase kb("c");
  kb.index_chunks(sample_chunks(10), e);
  const auto bytes = kb.serialize();
  for (const auto& bad : {bytes.substr(0, bytes.size() - 3), bytes.substr(0, 10)}) {
    try {
      KnowledgeBase::deserialize(bad);
      FAIL("expected corrupt");
    } catch (const Error& err) {
      CHECK(err.code() == Errc::corrupt_file);
    }
  }
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 1;
  CHECK_THROWS_AS(KnowledgeBase::deserialize(flipped), Error);
}

TEST_CASE("empty kb round trip") {
  KnowledgeBase kb("empty", 16);
  const auto back = KnowledgeBase::deserialize(kb.serialize());
  CHECK(back.empty());
  CHECK(back.name() == "empty");
}

TEST_CASE("concurrent readers during a write") {
  const auto e = encoder::Embedder::hash_features(128);
  KnowledgeBase kb("rw");
  kb.index_chunks(sample_chunks(50), e);
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 4; ++r) {
    readers.emplace_back([&] {
      while (!stop) {
        const auto lock = kb.read_lock();
        if (!kb.check_integrity().empty()) ++bad;
      }
    });
  }
  auto more = sample_chunks(300);
  for (auto& c : more) c.doc_id = "extra" + c.doc_id;
  for (std::size_t i = 0; i < more.size(); i += 50) {
    kb.index_chunks(std::span(more).subspan(i, 50), e);
  }
  stop = true;
  for (auto& t : readers) t.join();
  CHECK(bad == 0);
  CHECK(kb.size() == 350);
}
