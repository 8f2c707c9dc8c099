#pragma once

// Reference implementations written directly from the formulas, sharing no
// code with the library. Slow on purpose.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::vector<long double> softmax(const std::vector<double>& logits) {
  long double mx = *std::max_element(logits.begin(), logits.end());
  long double z = 0;
  for (double x : logits) z += std::exp(static_cast<long double>(x) - mx);
  std::vector<long double> out;
  for (double x : logits) out.push_back(std::exp(static_cast<long double>(x) - mx) / z);
  return out;
}

inline double nll(const std::vector<double>& logits, std::size_t target) {
  return static_cast<double>(-std::log(softmax(logits)[target]));
}

/// Full ranking by (score desc, index asc), then the first k.
inline std::vector<std::pair<int, double>> exhaustive_topk(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::pair<int, double>> all;
  for (std::size_t i = 0; i < scores.size(); ++i) all.emplace_back(static_cast<int>(i), scores[i]);
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  all.resize(std::min(k, all.size()));
  return all;
}

/// BM25 over raw word lists: recomputes df, dl and avgdl from scratch.
inline double bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                   std::size_t doc, double k1 = 1.2, double b = 0.75) {
  const double n = static_cast<double>(docs.size());
  double total = 0;
  for (const auto& d : docs) total += static_cast<double>(d.size());
  const double avgdl = total / n;
  const double dl = static_cast<double>(docs[doc].size());
  std::set<std::string> terms(query.begin(), query.end());
  double score = 0;
  for (const auto& t : terms) {
    double df = 0;
    for (const auto& d : docs)
      if (std::find(d.begin(), d.end(), t) != d.end()) df += 1;
    const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), t));
    if (tf == 0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    score += idf * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / avgdl));
  }
  return score;
}

/// Recall@k and MRR by scanning each list for its positive.
struct Recount {
  double recall = 0, mrr = 0;
};

inline Recount recount(const std::map<std::string, std::vector<std::string>>& run,
                       const std::map<std::string, std::string>& qrels, std::size_t k, std::size_t cutoff) {
  Recount r;
  for (const auto& [qid, positive] : qrels) {
    auto it = run.find(qid);
    if (it == run.end()) continue;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (it->second[i] != positive) continue;
      if (i < k) r.recall += 1;
      if (i < cutoff) r.mrr += 1.0 / static_cast<double>(i + 1);
      break;
    }
  }
  r.recall /= static_cast<double>(qrels.size());
  r.mrr /= static_cast<double>(qrels.size());
  return r;
}

/// One AdamW step on a scalar, executed term by term.
inline double adamw_scalar(double w, double g, double lr, double b1, double b2, double eps, double wd, int step,
                           double& m, double& v) {
  m = b1 * m + (1 - b1) * g;
  v = b2 * v + (1 - b2) * g * g;
  const double mhat = m / (1 - std::pow(b1, step));
  const double vhat = v / (1 - std::pow(b2, step));
  return w - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * w;
}

}  // namespace oracle
