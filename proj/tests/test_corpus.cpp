#include "doctest.h"

#include "dynret/corpus.hpp"
#include "support.hpp"

using namespace dynret;
using testing::TempDir;
using testing::write_file;

TEST_CASE("tokenize lowercases and strips punctuation") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("The cat, the CAT") == std::vector<std::string>{"the", "cat", "the", "cat"});
  CHECK(tokenize("  a-b\tc\n") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("tokenize maps unknown words to UNK") {
  Vocabulary v;
  const auto known = v.add("unknown");
  CHECK(tokenize("qzx unknown", v) == TokenSeq{Vocabulary::kUnk, known});
}

TEST_CASE("tokenize is idempotent on its rendered output") {
  for (std::string text : {"Hello, World!", "x1 y2... Z3", "multi   space\ttab", "ÄB c"}) {
    const auto once = tokenize(text);
    std::string rendered;
    for (const auto& w : once) rendered += w + " ";
    CHECK(tokenize(rendered) == once);
  }
}

TEST_CASE("vocabulary reserves PAD, UNK and CLS") {
  Vocabulary v;
  CHECK(v.size() == 3);
  CHECK(Vocabulary::kPad == 0);
  CHECK(Vocabulary::kUnk == 1);
  CHECK(Vocabulary::kCls == 2);
  CHECK(v.lookup("never") == Vocabulary::kUnk);
}

TEST_CASE("build_vocabulary threshold and ordering") {
  SUBCASE("min_freq drops rare tokens") {
    const auto v = build_vocabulary({{"a", "a", "b"}}, 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("b"));
  }
  SUBCASE("min_freq 1 keeps every token") {
    const auto v = build_vocabulary({{"x", "y"}, {"z"}}, 1);
    CHECK(v.size() == 6);
  }
  SUBCASE("frequency descending then lexicographic") {
    const auto v = build_vocabulary({{"b", "a", "c", "c"}}, 1);
    CHECK(v.lookup("c") == 3);
    CHECK(v.lookup("a") == 4);
    CHECK(v.lookup("b") == 5);
  }
  CHECK_THROWS_AS(build_vocabulary({}, 1), Error);
  CHECK_THROWS_AS(build_vocabulary({{"a"}}, 0), Error);
}

TEST_CASE("ingest assigns ids in file order") {
  TempDir dir("ingest");
  write_file(dir / "docs.jsonl",
             "{\"docid\": \"A\", \"text\": \"alpha beta\", \"clicks\": 4}\n"
             "{\"docid\": \"B\", \"text\": \"beta gamma\"}\n");
  const auto c = ingest_corpus(dir / "docs.jsonl");
  REQUIRE(c.size() == 2);
  CHECK(c[0].external_id == "A");
  CHECK(c[1].external_id == "B");
  CHECK(c[0].click_count == 4);
  CHECK(c[1].click_count == 0);
  CHECK(c.require("B") == 1);
}

TEST_CASE("ingest rejects duplicate ids and missing text") {
  TempDir dir("ingest_bad");
  write_file(dir / "dup.jsonl",
             "{\"docid\": \"A\", \"text\": \"x\"}\n{\"docid\": \"A\", \"text\": \"y\"}\n");
  CHECK_THROWS_WITH_AS(ingest_corpus(dir / "dup.jsonl"), doctest::Contains("duplicate docid"), Error);

  write_file(dir / "notext.jsonl", "{\"docid\": \"A\", \"text\": \"x\"}\n{\"docid\": \"B\"}\n");
  CHECK_THROWS_WITH_AS(ingest_corpus(dir / "notext.jsonl"), doctest::Contains(":2"), Error);
}

TEST_CASE("empty documents are rejected") {
  CHECK_THROWS_AS(testing::corpus_of({"fine", "!!!"}), Error);
}

TEST_CASE("qrels keep the first positive per query") {
  TempDir dir("qrels");
  const auto c = testing::corpus_of({"a b", "c d"});
  write_file(dir / "qrels.tsv", "q1\td0\nq1\td1\nq2\td1\n");
  const auto q = read_qrels(dir / "qrels.tsv", c);
  CHECK(q.size() == 2);
  CHECK(q.at("q1") == 0);
  CHECK(q.at("q2") == 1);

  write_file(dir / "bad.tsv", "q1\tmissing\n");
  CHECK_THROWS_AS(read_qrels(dir / "bad.tsv", c), Error);
}

TEST_CASE("queries round trip through TSV") {
  TempDir dir("queries");
  const auto c = testing::corpus_of({"red fish", "blue fish"});
  write_queries(dir / "q.tsv", {{"q1", "Red FISH"}, {"q2", "green"}});
  const auto qs = read_queries(dir / "q.tsv", c.vocabulary());
  REQUIRE(qs.size() == 2);
  CHECK(qs[0].tokens == TokenSeq{c.vocabulary().lookup("red"), c.vocabulary().lookup("fish")});
  CHECK(qs[1].tokens == TokenSeq{Vocabulary::kUnk});
}

namespace {

Corpus clicked(const std::vector<std::int64_t>& clicks) {
  std::vector<RawDocument> raw;
  for (std::size_t i = 0; i < clicks.size(); ++i)
    raw.push_back({"d" + std::to_string(i), "w" + std::to_string(i) + " shared", clicks[i]});
  return build_corpus(raw);
}

}  // namespace

TEST_CASE("top_click subset keeps the most clicked documents") {
  const auto c = clicked({5, 3, 9});
  const QRels qrels{{"qa", 0}, {"qb", 1}, {"qc", 2}};
  const auto s = sample_subset(c, qrels, SubsetStrategy::kTopClick, 2, 0);
  REQUIRE(s.corpus.size() == 2);
  CHECK(s.corpus[0].click_count == 5);
  CHECK(s.corpus[1].click_count == 9);
  CHECK(s.qrels.size() == 2);
  CHECK_FALSE(s.qrels.count("qb"));
  CHECK(s.corpus[s.qrels.at("qc")].external_id == "d2");
}

TEST_CASE("click ties break by internal id") {
  const auto c = clicked({1, 7, 7, 7});
  const auto s = sample_subset(c, {}, SubsetStrategy::kTopClick, 2, 0);
  CHECK(s.origin == std::vector<DocId>{1, 2});
}

TEST_CASE("full-size subset is the identity") {
  const auto c = clicked({2, 0, 1, 4});
  const QRels qrels{{"q", 3}};
  for (auto strategy : {SubsetStrategy::kTopClick, SubsetStrategy::kRandom}) {
    const auto s = sample_subset(c, qrels, strategy, 4, 9);
    REQUIRE(s.corpus.size() == 4);
    for (DocId i = 0; i < 4; ++i) CHECK(s.corpus[i].external_id == c[i].external_id);
    CHECK(s.qrels == qrels);
  }
}

TEST_CASE("random subsets are seeded") {
  std::vector<std::int64_t> clicks(50, 0);
  const auto c = clicked(clicks);
  const auto a = sample_subset(c, {}, SubsetStrategy::kRandom, 10, 42);
  const auto b = sample_subset(c, {}, SubsetStrategy::kRandom, 10, 42);
  const auto other = sample_subset(c, {}, SubsetStrategy::kRandom, 10, 43);
  CHECK(a.origin == b.origin);
  CHECK(a.origin != other.origin);
}

TEST_CASE("subset errors") {
  const auto c = clicked({1, 2});
  CHECK_THROWS_AS(sample_subset(c, {}, SubsetStrategy::kRandom, 0, 1), Error);
  CHECK_THROWS_AS(sample_subset(c, {}, SubsetStrategy::kRandom, 3, 1), Error);
  CHECK_THROWS_AS(parse_subset_strategy("clicky"), Error);
}

TEST_CASE("property: subset query count is monotone in size and positives keep their external id") {
  std::vector<std::int64_t> clicks;
  for (int i = 0; i < 40; ++i) clicks.push_back((i * 7919) % 23);
  const auto c = clicked(clicks);
  QRels qrels;
  for (int i = 0; i < 40; i += 3) qrels.emplace("q" + std::to_string(i), i);
  for (auto strategy : {SubsetStrategy::kTopClick, SubsetStrategy::kRandom}) {
    std::size_t previous = 0;
    for (int size = 1; size <= 40; ++size) {
      const auto s = sample_subset(c, qrels, strategy, size, 5);
      CHECK(s.qrels.size() >= previous);
      previous = s.qrels.size();
      for (const auto& [qid, doc] : s.qrels) CHECK(s.corpus[doc].external_id == c[qrels.at(qid)].external_id);
      for (std::size_t i = 0; i < s.corpus.size(); ++i) CHECK(s.corpus[static_cast<DocId>(i)].internal_id == static_cast<DocId>(i));
    }
  }
}
