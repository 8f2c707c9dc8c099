#include "dynret/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dynret/log.hpp"

namespace dynret {

Run to_run(const std::vector<RankedList>& lists, const Corpus& corpus) {
  Run run;
  for (const auto& list : lists) {
    auto& docs = run[list.qid];
    for (const auto& e : list.entries) docs.push_back(corpus[e.doc].external_id);
  }
  return run;
}

Judgments to_judgments(const QRels& qrels, const Corpus& corpus) {
  Judgments out;
  for (const auto& [qid, doc] : qrels) out.emplace(qid, corpus[doc].external_id);
  return out;
}

Run read_run_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::map<std::string, std::vector<std::pair<long long, std::string>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string qid, q0, docid, rank, score, tag, extra;
    if (!(fields >> qid >> q0 >> docid >> rank >> score >> tag) || (fields >> extra))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed run line (expected 6 columns)");
    long long r = 0;
    try {
      std::size_t used = 0;
      r = std::stoll(rank, &used);
      if (used != rank.size()) throw std::invalid_argument(rank);
      std::stod(score);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed rank or score");
    }
    rows[qid].emplace_back(r, docid);
  }
  Run run;
  for (auto& [qid, entries] : rows) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& docs = run[qid];
    for (auto& e : entries) docs.push_back(std::move(e.second));
  }
  return run;
}

Judgments read_judgments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Judgments out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 'qid \\t docid'");
    auto qid = line.substr(0, tab);
    auto doc = line.substr(tab + 1, line.find('\t', tab + 1) - tab - 1);
    if (!out.emplace(qid, doc).second)
      log::warn("qrels: query '" + qid + "' has more than one positive; keeping the first");
  }
  return out;
}

namespace {

void require_judged(const Run& run, const Judgments& qrels) {
  std::vector<std::string> missing;
  for (const auto& [qid, docs] : run)
    if (!qrels.count(qid)) missing.push_back(qid);
  if (missing.empty()) return;
  std::string msg = "run contains queries absent from qrels:";
  for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
  if (missing.size() > 20) msg += " ... (" + std::to_string(missing.size()) + " total)";
  throw Error(msg);
}

/// 1-based rank of the positive in the run, 0 if absent.
std::size_t positive_rank(const Run& run, const std::string& qid, const std::string& positive) {
  auto it = run.find(qid);
  if (it == run.end()) return 0;
  const auto& docs = it->second;
  auto pos = std::find(docs.begin(), docs.end(), positive);
  return pos == docs.end() ? 0 : static_cast<std::size_t>(pos - docs.begin()) + 1;
}

}  // namespace

double recall_at_k(const Run& run, const Judgments& qrels, std::size_t k) {
  require_judged(run, qrels);
  if (qrels.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [qid, positive] : qrels) {
    const auto r = positive_rank(run, qid, positive);
    if (r != 0 && r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(qrels.size());
}

double mrr(const Run& run, const Judgments& qrels, std::size_t cutoff) {
  require_judged(run, qrels);
  if (qrels.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [qid, positive] : qrels) {
    const auto r = positive_rank(run, qid, positive);
    if (r != 0 && r <= cutoff) sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(qrels.size());
}

double MetricReport::get(const std::string& name) const {
  for (const auto& [n, v] : metrics)
    if (n == name) return v;
  throw Error("report has no metric '" + name + "'");
}

bool MetricReport::has_nan() const {
  return std::any_of(metrics.begin(), metrics.end(), [](const auto& m) { return std::isnan(m.second); });
}

MetricReport evaluate(const Run& run, const Judgments& qrels, const std::vector<std::size_t>& ks,
                      std::size_t mrr_cutoff) {
  require_judged(run, qrels);
  MetricReport report;
  report.query_count = qrels.size();
  if (run.empty() && !qrels.empty()) log::warn("run is empty; every judged query counts as a miss");
  for (const auto& [qid, positive] : qrels) report.positive_rank[qid] = positive_rank(run, qid, positive);
  for (auto k : ks) report.metrics.emplace_back("Recall@" + std::to_string(k), recall_at_k(run, qrels, k));
  report.metrics.emplace_back("MRR@" + std::to_string(mrr_cutoff), mrr(run, qrels, mrr_cutoff));
  return report;
}

MetricReport evaluate_run_file(const std::filesystem::path& run_path,
                               const std::filesystem::path& qrels_path,
                               const std::vector<std::size_t>& ks, std::size_t mrr_cutoff) {
  return evaluate(read_run_file(run_path), read_judgments(qrels_path), ks, mrr_cutoff);
}

std::string render_table(const MetricReport& report) {
  std::ostringstream out;
  std::size_t width = 7;
  for (const auto& [name, v] : report.metrics) width = std::max(width, name.size());
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %s\n", static_cast<int>(width), "metric", "value");
  out << buf;
  for (const auto& [name, v] : report.metrics) {
    std::snprintf(buf, sizeof buf, "%-*s  %.6f\n", static_cast<int>(width), name.c_str(), v);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %zu\n", static_cast<int>(width), "queries", report.query_count);
  out << buf;
  return out.str();
}

std::string render_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "metric,value\n";
  char buf[64];
  for (const auto& [name, v] : report.metrics) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << name << ',' << buf << '\n';
  }
  out << "queries," << report.query_count << '\n';
  return out.str();
}

}  // namespace dynret
