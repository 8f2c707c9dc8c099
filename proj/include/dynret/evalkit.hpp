#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dynret/corpus.hpp"
#include "dynret/ranking.hpp"

namespace dynret {

/// qid -> external docids in rank order.
using Run = std::map<std::string, std::vector<std::string>>;
/// qid -> the single positive external docid.
using Judgments = std::map<std::string, std::string>;

Run to_run(const std::vector<RankedList>& lists, const Corpus& corpus);
Judgments to_judgments(const QRels& qrels, const Corpus& corpus);

/// Parses a six-column TREC run; entries are ordered by their rank column.
Run read_run_file(const std::filesystem::path& path);
Judgments read_judgments(const std::filesystem::path& path);

/// Fraction of judged queries whose positive appears in the first k results.
/// Judged queries missing from the run count as misses; run queries without
/// a judgment are an error.
double recall_at_k(const Run& run, const Judgments& qrels, std::size_t k);

/// Mean reciprocal rank of the positive, 0 beyond `cutoff` or when absent.
double mrr(const Run& run, const Judgments& qrels, std::size_t cutoff);

struct MetricReport {
  std::vector<std::pair<std::string, double>> metrics;
  std::size_t query_count = 0;
  /// qid -> 1-based rank of the positive, 0 when not retrieved.
  std::map<std::string, std::size_t> positive_rank;

  double get(const std::string& name) const;
  bool has_nan() const;
};

inline const std::vector<std::size_t> kDefaultRecallCutoffs{1, 20, 100};

MetricReport evaluate(const Run& run, const Judgments& qrels,
                      const std::vector<std::size_t>& ks = kDefaultRecallCutoffs,
                      std::size_t mrr_cutoff = 100);

MetricReport evaluate_run_file(const std::filesystem::path& run_path,
                               const std::filesystem::path& qrels_path,
                               const std::vector<std::size_t>& ks = kDefaultRecallCutoffs,
                               std::size_t mrr_cutoff = 100);

std::string render_table(const MetricReport& report);
std::string render_csv(const MetricReport& report);

}  // namespace dynret
