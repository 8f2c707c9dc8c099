#include "dynret/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace dynret {

template <class T>
std::vector<ScoredDoc> top_k(std::span<const T> scores, std::size_t k, std::span<const DocId> ids,
                             bool exclude_zero) {
  if (!ids.empty() && ids.size() != scores.size())
    throw Error("top_k: id map and score vector differ in length");
  std::vector<ScoredDoc> all;
  all.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = static_cast<double>(scores[i]);
    if (std::isnan(s)) throw Error("top_k: NaN score at position " + std::to_string(i));
    if (exclude_zero && s == 0.0) continue;
    all.push_back({ids.empty() ? static_cast<DocId>(i) : ids[i], s});
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), ranks_before);
  all.resize(n);
  return all;
}

template std::vector<ScoredDoc> top_k<float>(std::span<const float>, std::size_t,
                                             std::span<const DocId>, bool);
template std::vector<ScoredDoc> top_k<double>(std::span<const double>, std::size_t,
                                              std::span<const DocId>, bool);

void write_run(std::ostream& out, const std::vector<RankedList>& runs, const Corpus& corpus,
               const std::string& tag) {
  char score[64];
  for (const auto& list : runs) {
    int rank = 1;
    for (const auto& e : list.entries) {
      std::snprintf(score, sizeof score, "%.6f", e.score);
      out << list.qid << " Q0 " << corpus[e.doc].external_id << ' ' << rank++ << ' ' << score
          << ' ' << tag << '\n';
    }
  }
}

void write_run_file(const std::filesystem::path& path, const std::vector<RankedList>& runs,
                    const Corpus& corpus, const std::string& tag) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_run(out, runs, corpus, tag);
}

std::size_t checked_k(long long k) {
  if (k <= 0) throw Error("k must be positive (got " + std::to_string(k) + ")");
  return static_cast<std::size_t>(k);
}

}  // namespace dynret
