// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dynret/baselines.hpp"
#include "dynret/distributed.hpp"
#include "dynret/evalkit.hpp"
#include "dynret/experiment.hpp"
#include "dynret/model.hpp"
#include "dynret/retriever.hpp"
#include "dynret/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace dynret;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Runs the CLI in-process, returning its exit code and stdout.
struct CliResult {
  int code = 0;
  std::string out;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  std::vector<std::string> full{"--quiet"};
  full.insert(full.end(), args.begin(), args.end());
  CliResult r;
  try {
    r.code = run_cli(full);
  } catch (...) {
    std::cout.rdbuf(old);
    throw;
  }
  std::cout.rdbuf(old);
  r.out = captured.str();
  return r;
}

void must(const std::vector<std::string>& args) {
  const auto r = cli(args);
  if (r.code != 0) {
    std::string joined;
    for (const auto& a : args) joined += a + " ";
    throw std::runtime_error("command failed (" + std::to_string(r.code) + "): " + joined);
  }
}

struct Workspace {
  fs::path root;
  fs::path data() const { return root / "data"; }
  std::string path(const std::string& rel) const { return (root / rel).string(); }

  std::vector<std::string> train() const {
    return {"--corpus", (data() / "docs.jsonl").string(), "--queries", (data() / "train_queries.tsv").string(),
            "--qrels", (data() / "train_qrels.tsv").string()};
  }
  std::vector<std::string> heldout() const {
    return {"--corpus", (data() / "docs.jsonl").string(), "--queries", (data() / "heldout_queries.tsv").string(),
            "--qrels", (data() / "heldout_qrels.tsv").string()};
  }
};

std::vector<std::string> cat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<std::string> sets(const std::vector<std::string>& kv) {
  std::vector<std::string> out;
  for (const auto& s : kv) {
    out.push_back("--set");
    out.push_back(s);
  }
  return out;
}

// Training settings shared by the neural pipelines.
const std::vector<std::string> kDense = sets({"lr=1e-3", "dense_epochs=5"});
const std::vector<std::string> kOverDense = sets({"lr=1e-3", "finetune_epochs=10"});
const std::vector<std::string> kVanilla =
    sets({"lr=1e-3", "finetune_lr=2e-4", "min_terms=3", "max_terms=8", "samples_per_doc=10", "window=16",
          "pretrain_epochs=1", "finetune_epochs=10"});
const std::vector<std::string> kShards = sets({"groups=4", "lr=1e-3", "dense_epochs=5"});

// Pipelines, each writing into `out` under the workspace.
void run_dense(const Workspace& w, const std::string& out) {
  must(cat({w.train(), kDense, {"--out-dir", w.path(out), "train-dense"}}));
}
void run_overdense(const Workspace& w, const std::string& dense, const std::string& out, bool finetune) {
  auto args = cat({w.train(), kOverDense, {"--out-dir", w.path(out), "train-overdense", "--dense-dir", w.path(dense)}});
  if (!finetune) args.push_back("--skip-finetune");
  must(args);
}
void run_vanilla(const Workspace& w, const std::string& out, const std::vector<std::string>& extra) {
  must(cat({w.train(), kVanilla, extra, {"--out-dir", w.path(out), "train-vanilla"}}));
}
void run_retrieve(const std::vector<std::string>& queries, const std::string& dir, const std::vector<std::string>& extra) {
  must(cat({queries, {"--out-dir", dir, "retrieve"}, extra}));
}
MetricReport run_eval(const std::vector<std::string>& queries, const std::string& dir) {
  must(cat({queries, {"--out-dir", dir, "eval", "--run", dir + "/run.trec"}}));
  return evaluate_run_file(dir + "/run.trec", queries[5]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// 1 -------------------------------------------------------------------------
Outcome gradients() {
  const auto t0 = Clock::now();
  GradCheckConfig cfg;
  cfg.encoder = {32, 16, 1, 2, 32, 16};
  cfg.num_docs = 8;
  const auto r = gradcheck_retriever(cfg);
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && secs < 60.0,
          "max rel error " + fmt("%.3e", r.max_rel_error) + " over " + std::to_string(r.per_tensor.size()) +
              " tensors (worst " + r.worst_tensor + "), " + fmt("%.1fs", secs)};
}

// 2 -------------------------------------------------------------------------
Outcome softmax_normalization() {
  Rng rng(2024);
  double worst = 0;
  bool nonneg = true;
  int queries = 0;
  for (int m = 0; m < 10; ++m) {
    const EncoderConfig enc{50, 16, 1, 2, 32, 24};
    const double scale = 0.02 * std::pow(4.0, m % 5);
    RetrieverParams<float> p{EncoderParams<float>::init(enc, rng, scale),
                             DocidMatrix<float>::random(static_cast<std::size_t>(uniform_int(rng, 2, 500)), 16, rng, 10 * scale)};
    const DynamicRetriever model(std::move(p));
    for (int q = 0; q < 100; ++q, ++queries) {
      TokenSeq tokens(static_cast<std::size_t>(uniform_int(rng, 0, 20)));
      for (auto& t : tokens) t = static_cast<TokenId>(uniform_int(rng, 0, 49));
      const auto r = score_all(model.encode_query(tokens), model.params().docids);
      double sum = 0;
      for (int i = 0; i < r.probs.size(); ++i) {
        sum += static_cast<double>(r.probs[i]);
        nonneg = nonneg && r.probs[i] >= 0.0f;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return {worst <= 1e-6 && nonneg,
          std::to_string(queries) + " queries, max |sum - 1| = " + fmt("%.2e", worst) +
              (nonneg ? ", all probabilities >= 0" : ", NEGATIVE probability found")};
}

// 3 -------------------------------------------------------------------------
Outcome oracle_equivalences(const Workspace& w) {
  std::ostringstream detail;
  bool ok = true;

  // Top-k against the exhaustive sort, with ties.
  Rng rng(3);
  std::size_t topk_cases = 0, topk_bad = 0;
  for (std::size_t n : {1, 10, 1000, 10000}) {
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(uniform_int(rng, -500, 500)) / 8.0;
    std::vector<float> fscores(scores.begin(), scores.end());
    for (std::size_t k : {std::size_t{1}, std::size_t{7}, std::size_t{100}, n, n + 5}) {
      const auto want = oracle::exhaustive_topk(scores, k);
      const auto got = top_k<double>(scores, k);
      const auto gotf = top_k<float>(fscores, k);
      ++topk_cases;
      bool same = got.size() == want.size() && gotf.size() == want.size();
      for (std::size_t i = 0; same && i < want.size(); ++i)
        same = got[i].doc == want[i].first && got[i].score == want[i].second && gotf[i].doc == want[i].first;
      topk_bad += !same;
    }
  }
  ok = ok && topk_bad == 0;
  detail << "top-k " << topk_cases - topk_bad << "/" << topk_cases << " exact";

  // BM25 against the direct formula on the synthetic corpus.
  const auto corpus = ingest_corpus(w.data() / "docs.jsonl");
  const auto queries = read_queries(w.data() / "heldout_queries.tsv", corpus.vocabulary());
  std::vector<std::vector<std::string>> raw;
  for (const auto& d : corpus.documents()) {
    std::vector<std::string> words;
    for (TokenId t : d.tokens) words.push_back(corpus.vocabulary().token(t));
    raw.push_back(std::move(words));
  }
  const InvertedIndex index(corpus);
  double bm25_err = 0;
  for (std::size_t qi = 0; qi < 10; ++qi) {
    std::vector<std::string> qwords;
    for (TokenId t : queries[qi].tokens) qwords.push_back(corpus.vocabulary().token(t));
    const auto all = bm25_score_all(index, queries[qi].tokens);
    for (std::size_t d = 0; d < corpus.size(); d += 7) {
      const double want = oracle::bm25(raw, qwords, d);
      bm25_err = std::max(bm25_err, std::abs(all[d] - want) / std::max(1.0, std::abs(want)));
    }
  }
  ok = ok && bm25_err <= 1e-9;
  detail << "; BM25 max rel error " << fmt("%.1e", bm25_err);

  // Shards scored by one shared model merge to the unsharded ranking.
  const EncoderConfig enc{static_cast<int>(corpus.vocabulary().size()), 16, 1, 2, 32, 32};
  Rng mrng(5);
  const DynamicRetriever global({EncoderParams<float>::init(enc, mrng, 0.1),
                                 DocidMatrix<float>::random(corpus.size(), 16, mrng, 1.0)});
  const auto plan = partition(corpus, 4, 77);
  std::vector<DynamicRetriever> models;
  for (int g = 0; g < 4; ++g) {
    const auto& m = plan.members[static_cast<std::size_t>(g)];
    Mat<float> rows(static_cast<Eigen::Index>(m.size()), 16);
    for (std::size_t i = 0; i < m.size(); ++i)
      rows.row(static_cast<Eigen::Index>(i)) = global.params().docids.column(m[i]);
    models.emplace_back(RetrieverParams<float>{global.params().encoder, DocidMatrix<float>(rows)});
  }
  const QuerySet sample(queries.begin(), queries.begin() + 20);
  std::size_t merge_cases = 0, merge_bad = 0;
  for (long long k : {1LL, 10LL, 100LL, 1000LL}) {
    const auto merged = merge_shard_runs(shard_retrieve(models, plan, sample, k), k, MergeMode::kRaw);
    for (std::size_t i = 0; i < sample.size(); ++i, ++merge_cases) merge_bad += !(merged[i] == global.retrieve(sample[i], k));
  }
  ok = ok && merge_bad == 0;
  detail << "; shared-model merge " << merge_cases - merge_bad << "/" << merge_cases << " exact";
  return {ok, detail.str()};
}

// 4 -------------------------------------------------------------------------
double g_dense_seconds = 0;

Outcome zero_shot_identity(const Workspace& w) {
  const auto t0 = Clock::now();
  run_dense(w, "dense");
  g_dense_seconds = seconds_since(t0);
  run_overdense(w, "dense", "overdense0", false);
  const auto dense_dir = w.path("dense"), od_dir = w.path("overdense0");
  run_retrieve(w.heldout(), dense_dir,
               {"--checkpoint", dense_dir + "/query_tower.ckpt", "--dense-index", dense_dir + "/dense_index.bin"});
  run_retrieve(w.heldout(), od_dir, {"--checkpoint", od_dir + "/model.ckpt"});
  const auto a = testing::read_file(dense_dir + "/run.trec");
  const auto b = testing::read_file(od_dir + "/run.trec");
  return {!a.empty() && a == b, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " bytes, " +
                                    (a == b ? "identical" : "DIFFERENT")};
}

// 5 -------------------------------------------------------------------------
Outcome memorization(const Workspace& w) {
  const auto t0 = Clock::now();
  run_overdense(w, "dense", "overdense", true);
  const double secs = seconds_since(t0) + g_dense_seconds;
  const auto dir = w.path("overdense");
  run_retrieve(w.train(), dir, {"--checkpoint", dir + "/model.ckpt"});
  const auto r = run_eval(w.train(), dir);
  const double recall = r.get("Recall@1");
  return {recall >= 0.95 && secs < 900,
          "Recall@1 " + fmt("%.4f", recall) + " on " + std::to_string(r.query_count) + " training queries, dense + OverDense training " +
              fmt("%.1fs", secs)};
}

// 6 -------------------------------------------------------------------------
Outcome ablation(const Workspace& w) {
  std::map<std::string, double> r20;
  const std::vector<std::pair<std::string, std::vector<std::string>>> variants{
      {"full", {}},
      {"noft", sets({"finetune_epochs=0"})},
      {"nopre", sets({"pretrain_epochs=0"})},
      {"untrained", sets({"pretrain_epochs=0", "finetune_epochs=0"})}};
  for (const auto& [name, extra] : variants) {
    const auto dir = w.path("vanilla_" + name);
    run_vanilla(w, "vanilla_" + name, extra);
    run_retrieve(w.heldout(), dir, {"--checkpoint", dir + "/model.ckpt"});
    r20[name] = run_eval(w.heldout(), dir).get("Recall@20");
  }
  const bool ok = r20["nopre"] < 0.1 && r20["full"] > 0.4 && r20["untrained"] < r20["noft"] && r20["noft"] < r20["full"];
  return {ok, "held-out Recall@20: full " + fmt("%.3f", r20["full"]) + ", w/o fine-tune " + fmt("%.3f", r20["noft"]) +
                  ", w/o pre-train " + fmt("%.3f", r20["nopre"]) + ", untrained " + fmt("%.3f", r20["untrained"])};
}

// 7 -------------------------------------------------------------------------
double parse_stat(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " ", 0) == 0) return std::stod(line.substr(key.size() + 1));
  throw std::runtime_error("diag-scores printed no '" + key + "'");
}

/// Shifted-score fixture: each shard ranks its own positives first, but the
/// score scales of the two shards differ by a constant offset.
std::pair<double, double> shifted_fixture() {
  Rng rng(99);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<ShardRun> runs{{0, {}}, {1, {}}};
  Judgments qrels;
  for (int q = 0; q < 100; ++q) {
    const std::string qid = "q" + std::to_string(q);
    for (int g = 0; g < 2; ++g) {
      RankedList list{qid, {}};
      for (int j = 0; j < 50; ++j) list.entries.push_back({static_cast<DocId>(g * 1000 + (q * 7 + j) % 1000), 8.0 * g + noise(rng)});
      if (g == q % 2) list.entries[0].score = 8.0 * g + 3.5;
      std::sort(list.entries.begin(), list.entries.end(), ranks_before);
      if (g == q % 2) qrels[qid] = std::to_string(list.entries[0].doc);
      runs[static_cast<std::size_t>(g)].lists.push_back(list);
    }
  }
  auto as_run = [](const std::vector<RankedList>& lists) {
    Run run;
    for (const auto& l : lists)
      for (const auto& e : l.entries) run[l.qid].push_back(std::to_string(e.doc));
    return run;
  };
  return {mrr(as_run(merge_shard_runs(runs, 100, MergeMode::kRaw)), qrels, 100),
          mrr(as_run(merge_shard_runs(runs, 100, MergeMode::kZScore)), qrels, 100)};
}

Outcome distributed(const Workspace& w) {
  const auto shard_dir = w.path("shards"), merge_dir = w.path("shards_merge");
  must(cat({w.train(), kShards, {"--out-dir", shard_dir, "shard-train"}}));
  must(cat({w.train(), kShards, {"--out-dir", merge_dir, "shard-merge", "--shard-dir", shard_dir, "--mode", "raw"}}));
  const auto diag = cli(cat({w.train(), kShards, {"--out-dir", merge_dir, "diag-scores", "--shard-dir", shard_dir}}));
  if (diag.code != 0) throw std::runtime_error("diag-scores failed");
  const double spread = parse_stat(diag.out, "mean_spread"), within = parse_stat(diag.out, "mean_within_std");

  const auto judgments = read_judgments(w.data() / "train_qrels.tsv");
  const double raw_mrr = mrr(read_run_file(merge_dir + "/merged_raw.trec"), judgments, 100);

  // Shard-local queries: those whose positive lives in the shard.
  std::map<std::string, int> home;
  {
    std::ifstream in(shard_dir + "/manifest.tsv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      home.emplace(line.substr(tab + 1), std::stoi(line.substr(0, tab)));
    }
  }
  double best_local = 0;
  int best_group = -1;
  for (int g = 0; g < 4; ++g) {
    Judgments local;
    for (const auto& [qid, doc] : judgments)
      if (home.at(doc) == g) local.emplace(qid, doc);
    Run run;
    for (auto& [qid, list] : read_run_file(merge_dir + "/group_" + std::to_string(g) + ".trec"))
      if (local.count(qid)) run.emplace(qid, list);
    const double m = mrr(run, local, 100);
    if (m > best_local) best_local = m, best_group = g;
  }
  const auto [fixture_raw, fixture_z] = shifted_fixture();
  const bool ok = spread > 0.5 * within && raw_mrr < best_local && fixture_z > fixture_raw;
  return {ok, "mean spread " + fmt("%.3f", spread) + " vs 0.5 x within-std " + fmt("%.3f", 0.5 * within) +
                  "; raw-merge MRR " + fmt("%.4f", raw_mrr) + " < best shard-local MRR " + fmt("%.4f", best_local) +
                  " (group " + std::to_string(best_group) + "); fixture MRR raw " + fmt("%.4f", fixture_raw) +
                  " -> zscore " + fmt("%.4f", fixture_z)};
}

// 8 -------------------------------------------------------------------------
std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism(const Workspace& w) {
  // Moves the first outputs aside and replays every pipeline at the same
  // paths, so configs (and their hashes) match exactly.
  const Workspace first{w.root.string() + "_first"};
  fs::remove_all(first.root);
  fs::rename(w.root, first.root);
  fs::create_directories(w.root);
  const Workspace& second = w;
  must({"--seed", "13", "--out-dir", second.data().string(), "synth"});
  run_dense(second, "dense");
  run_overdense(second, "dense", "overdense0", false);
  run_overdense(second, "dense", "overdense", true);
  const auto od = second.path("overdense");
  run_retrieve(second.train(), od, {"--checkpoint", od + "/model.ckpt"});
  run_eval(second.train(), od);
  run_vanilla(second, "vanilla_full", {});
  const auto van = second.path("vanilla_full");
  run_retrieve(second.heldout(), van, {"--checkpoint", van + "/model.ckpt"});
  run_eval(second.heldout(), van);
  const auto dense = second.path("dense");
  run_retrieve(second.heldout(), dense,
               {"--checkpoint", dense + "/query_tower.ckpt", "--dense-index", dense + "/dense_index.bin"});
  must(cat({second.train(), kShards, {"--out-dir", second.path("shards"), "shard-train"}}));
  must(cat({second.train(), kShards,
            {"--out-dir", second.path("shards_merge"), "shard-merge", "--shard-dir", second.path("shards"), "--mode", "raw"}}));
  must(cat({second.train(), kShards,
            {"--out-dir", second.path("shards_merge"), "diag-scores", "--shard-dir", second.path("shards")}}));

  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const std::string dir : {"data", "dense", "overdense0", "overdense", "vanilla_full", "shards", "shards_merge"}) {
    if (!fs::exists(first.root / dir)) return {false, "first run has no '" + dir + "' outputs"};
    for (const auto& rel : files_under(second.root / dir)) {
      ++compared;
      const auto a = testing::read_file(first.root / dir / rel), b = testing::read_file(second.root / dir / rel);
      if (a != b) {
        ++differing;
        if (first_diff.empty()) first_diff = dir + "/" + rel.string();
      }
    }
  }
  return {differing == 0 && compared > 0,
          std::to_string(compared) + " artifacts compared (checkpoints, indexes, runs, metrics, logs)" +
              (differing ? ", " + std::to_string(differing) + " differ, first " + first_diff : ", all byte-identical")};
}

// 9 -------------------------------------------------------------------------
Outcome metric_kit() {
  const Run small{{"q1", {"a"}}, {"q2", {"x", "y", "z", "b"}}, {"q3", {"c"}}};
  const Judgments small_qrels{{"q1", "a"}, {"q2", "b"}, {"q3", "d"}};
  const double fixture = mrr(small, small_qrels, 100);

  Rng rng(9);
  Run run;
  Judgments qrels;
  for (int q = 0; q < 100; ++q) {
    const std::string qid = "q" + std::to_string(q);
    qrels[qid] = "d" + std::to_string(uniform_int(rng, 0, 299));
    if (q % 10 == 3) continue;
    std::set<std::string> used;
    std::vector<std::string> list;
    const auto len = uniform_int(rng, 0, 150);
    while (static_cast<std::int64_t>(list.size()) < len) {
      auto d = "d" + std::to_string(uniform_int(rng, 0, 299));
      if (used.insert(d).second) list.push_back(d);
    }
    run[qid] = list;
  }
  bool exact = true;
  const auto report = evaluate(run, qrels);
  for (std::size_t k : kDefaultRecallCutoffs)
    exact = exact && report.get("Recall@" + std::to_string(k)) == oracle::recount(run, qrels, k, 100).recall;
  exact = exact && report.get("MRR@100") == oracle::recount(run, qrels, 1, 100).mrr;
  const bool ok = exact && std::abs(fixture - 0.416667) < 5e-7;
  return {ok, std::string("100-query recount ") + (exact ? "exact" : "MISMATCH") + "; ranks (1, 4, absent) MRR " +
                  fmt("%.6f", fixture)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = (fs::temp_directory_path() / "dynret_acceptance").string();
  std::set<int> only;
  app.add_option("--work-dir", work, "Scratch directory (recreated)");
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  Workspace w{work};
  fs::remove_all(w.root);
  fs::create_directories(w.root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"softmax normalization", softmax_normalization},
      {"oracle equivalences", [&] { return oracle_equivalences(w); }},
      {"OverDense zero-shot identity", [&] { return zero_shot_identity(w); }},
      {"memorization", [&] { return memorization(w); }},
      {"ablation direction", [&] { return ablation(w); }},
      {"distributed diagnosis", [&] { return distributed(w); }},
      {"determinism", [&] { return determinism(w); }},
      {"metric kit", metric_kit}};

  int failures = 0;
  try {
    must({"--seed", "13", "--out-dir", w.data().string(), "synth"});
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << std::endl;
    return 1;
  }
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << " ["
              << fmt("%.1fs", seconds_since(t0)) << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
