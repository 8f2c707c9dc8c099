#include "doctest.h"

#include <iostream>
#include <set>
#include <sstream>

#include "dynret/evalkit.hpp"
#include "dynret/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dynret;

namespace {

/// Captures std::cerr for the lifetime of the object.
struct CaptureStderr {
  std::ostringstream buffer;
  std::streambuf* old = std::cerr.rdbuf(buffer.rdbuf());
  ~CaptureStderr() { std::cerr.rdbuf(old); }
};

}  // namespace

TEST_CASE("recall and MRR on a small run") {
  const Run run{{"q1", {"a", "b"}}, {"q2", {"x", "y", "z", "b"}}, {"q3", {"c"}}};
  const Judgments qrels{{"q1", "a"}, {"q2", "b"}, {"q3", "d"}};
  CHECK(recall_at_k(run, qrels, 1) == doctest::Approx(1.0 / 3));
  CHECK(recall_at_k(run, qrels, 20) == doctest::Approx(2.0 / 3));
  CHECK(mrr(run, qrels, 100) == doctest::Approx(0.416667).epsilon(1e-6));
  CHECK(mrr(run, qrels, 3) == doctest::Approx(1.0 / 3));

  const auto report = evaluate(run, qrels);
  CHECK(report.query_count == 3);
  CHECK(report.positive_rank.at("q2") == 4);
  CHECK(report.positive_rank.at("q3") == 0);
  CHECK(report.get("MRR@100") == doctest::Approx(0.416667).epsilon(1e-6));
  CHECK(report.get("Recall@100") == doctest::Approx(2.0 / 3));
  CHECK_FALSE(report.has_nan());
  CHECK_THROWS_AS(report.get("nDCG@10"), Error);
}

TEST_CASE("single-query edge cases") {
  CHECK(recall_at_k({{"q", {"a"}}}, {{"q", "a"}}, 1) == 1.0);
  CHECK(mrr({{"q", {"x", "a"}}}, {{"q", "a"}}, 100) == 0.5);
  CHECK(recall_at_k({{"q", {"x"}}}, {{"q", "a"}}, 20) == 0.0);
}

TEST_CASE("judged queries absent from the run count as misses") {
  const Judgments qrels{{"q1", "a"}, {"q2", "b"}};
  CHECK(recall_at_k({{"q1", {"a"}}}, qrels, 1) == 0.5);
}

TEST_CASE("run queries missing from the qrels are an error") {
  CHECK_THROWS_WITH_AS(recall_at_k({{"zz", {"a"}}}, {{"q", "a"}}, 1),
                       doctest::Contains("absent from qrels"), Error);
  CHECK_THROWS_AS(mrr({{"zz", {"a"}}}, {{"q", "a"}}, 10), Error);
}

TEST_CASE("an empty run warns and scores zero") {
  CaptureStderr capture;
  const auto report = evaluate({}, {{"q", "a"}});
  CHECK(report.get("Recall@1") == 0.0);
  CHECK(capture.buffer.str().find("[warn]") != std::string::npos);
}

TEST_CASE("property: metrics agree with a recount oracle on random runs") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Run run;
    Judgments qrels;
    for (int q = 0; q < 100; ++q) {
      const std::string qid = "q" + std::to_string(q);
      qrels[qid] = "d" + std::to_string(uniform_int(rng, 0, 149));
      if (uniform01(rng) < 0.1) continue;
      std::vector<std::string> list;
      std::set<std::string> used;
      const auto len = uniform_int(rng, 0, 120);
      while (static_cast<std::int64_t>(list.size()) < len) {
        auto d = "d" + std::to_string(uniform_int(rng, 0, 149));
        if (used.insert(d).second) list.push_back(d);
      }
      run[qid] = list;
    }
    double previous = 0;
    for (std::size_t k : {1, 5, 20, 50, 100}) {
      const double r = recall_at_k(run, qrels, k);
      CHECK(r == doctest::Approx(oracle::recount(run, qrels, k, 100).recall).epsilon(1e-12));
      CHECK(r >= previous);
      previous = r;
    }
    const double m = mrr(run, qrels, 100);
    CHECK(m == doctest::Approx(oracle::recount(run, qrels, 1, 100).mrr).epsilon(1e-12));
    CHECK(m <= recall_at_k(run, qrels, 100) + 1e-12);
    CHECK(m >= recall_at_k(run, qrels, 1) - 1e-12);
  }
}

TEST_CASE("run files parse by rank and report malformed lines") {
  testing::TempDir dir("runs");
  testing::write_file(dir / "run.trec", "q1 Q0 b 2 0.5 t\nq1 Q0 a 1 0.9 t\nq2 Q0 c 1 0.1 t\n");
  const auto run = read_run_file(dir / "run.trec");
  CHECK(run.at("q1") == std::vector<std::string>{"a", "b"});
  CHECK(run.at("q2") == std::vector<std::string>{"c"});

  testing::write_file(dir / "short.trec", "q1 Q0 a 1 0.9 t\nq1 Q0 b 2\n");
  CHECK_THROWS_WITH_AS(read_run_file(dir / "short.trec"), doctest::Contains("short.trec:2"), Error);
  testing::write_file(dir / "rank.trec", "q1 Q0 a one 0.9 t\n");
  CHECK_THROWS_WITH_AS(read_run_file(dir / "rank.trec"), doctest::Contains("rank.trec:1"), Error);
  testing::write_file(dir / "qrels.tsv", "q1\ta\nq2\n");
  CHECK_THROWS_WITH_AS(read_judgments(dir / "qrels.tsv"), doctest::Contains("qrels.tsv:2"), Error);
  CHECK_THROWS_AS(read_run_file(dir / "absent.trec"), Error);
}

TEST_CASE("written runs evaluate like in-memory runs") {
  testing::TempDir dir("eval");
  const auto c = testing::corpus_of({"a", "b", "c"});
  const std::vector<RankedList> lists{{"q1", {{1, 0.9}, {0, 0.2}}}, {"q2", {{2, 0.5}}}};
  write_run_file(dir / "run.trec", lists, c, "x");
  testing::write_file(dir / "qrels.tsv", "q1\td0\nq2\td2\n");
  const auto from_file = evaluate_run_file(dir / "run.trec", dir / "qrels.tsv");
  const auto direct = evaluate(to_run(lists, c), to_judgments({{"q1", 0}, {"q2", 2}}, c));
  CHECK(from_file.metrics == direct.metrics);
  CHECK(from_file.get("MRR@100") == doctest::Approx(0.75));
}

TEST_CASE("report rendering") {
  MetricReport r;
  r.metrics = {{"Recall@1", 0.5}, {"MRR@100", 0.25}};
  r.query_count = 4;
  CHECK(render_csv(r) == "metric,value\nRecall@1,0.500000\nMRR@100,0.250000\nqueries,4\n");
  const auto table = render_table(r);
  CHECK(table.find("Recall@1  0.500000") != std::string::npos);
  CHECK(table.find("queries") != std::string::npos);
  r.metrics.push_back({"bad", std::nan("")});
  CHECK(r.has_nan());
}
