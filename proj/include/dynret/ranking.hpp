#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dynret/corpus.hpp"

namespace dynret {

struct ScoredDoc {
  DocId doc = 0;
  double score = 0.0;

  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

/// Results for one query: scores non-increasing, ties by ascending docid.
struct RankedList {
  std::string qid;
  std::vector<ScoredDoc> entries;

  friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Strict ranking order: higher score first, then lower docid.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  return a.score != b.score ? a.score > b.score : a.doc < b.doc;
}

/// First min(k, n) entries of the full ranking. `ids` maps score positions
/// to docids (identity when empty). Entries with `exclude_zero` drop score 0.
template <class T>
std::vector<ScoredDoc> top_k(std::span<const T> scores, std::size_t k,
                             std::span<const DocId> ids = {}, bool exclude_zero = false);

extern template std::vector<ScoredDoc> top_k<float>(std::span<const float>, std::size_t,
                                                    std::span<const DocId>, bool);
extern template std::vector<ScoredDoc> top_k<double>(std::span<const double>, std::size_t,
                                                     std::span<const DocId>, bool);

/// TREC run lines `qid Q0 docid rank score tag`, rank from 1, 6-decimal scores.
void write_run(std::ostream& out, const std::vector<RankedList>& runs, const Corpus& corpus,
               const std::string& tag);
void write_run_file(const std::filesystem::path& path, const std::vector<RankedList>& runs,
                    const Corpus& corpus, const std::string& tag);

/// Rejects k <= 0 with the library's usual error.
std::size_t checked_k(long long k);

}  // namespace dynret
