#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dynret/corpus.hpp"
#include "dynret/ranking.hpp"
#include "dynret/retriever.hpp"

namespace dynret {

/// Assignment of every document to one home group. Optional common
/// documents are additionally replicated into every group.
struct ShardPlan {
  int groups = 1;
  std::uint64_t seed = 0;
  std::vector<int> group_of;                  // global docid -> home group
  std::vector<DocId> local_id;                // global docid -> id within its home group
  std::vector<std::vector<DocId>> members;    // group -> global ids, local id order
  std::vector<DocId> common;                  // replicated documents (ascending)

  std::size_t group_size(int group) const { return members.at(static_cast<std::size_t>(group)).size(); }
};

/// Uniform random assignment with group sizes differing by at most one.
/// `common_docs` extra documents are replicated into every group.
ShardPlan partition(const Corpus& corpus, int groups, std::uint64_t seed, std::size_t common_docs = 0);

Corpus shard_corpus(const Corpus& corpus, const ShardPlan& plan, int group);

/// Queries whose positive lives in `group`, remapped to local ids.
QRels shard_qrels(const QRels& qrels, const ShardPlan& plan, int group);

/// `# groups=G seed=S` header then `group_id \t external_docid` lines; home
/// assignments first, replicas after.
void write_manifest(const std::filesystem::path& path, const ShardPlan& plan, const Corpus& corpus);
ShardPlan read_manifest(const std::filesystem::path& path, const Corpus& corpus);

/// Per-group results with global docids and raw logit scores.
struct ShardRun {
  int group = 0;
  std::vector<RankedList> lists;
};

std::vector<ShardRun> shard_retrieve(const std::vector<DynamicRetriever>& models,
                                     const ShardPlan& plan, const QuerySet& queries,
                                     long long per_group_k);

enum class MergeMode { kRaw, kZScore };

MergeMode parse_merge_mode(std::string_view name);
std::string_view merge_mode_name(MergeMode mode);

/// Fuses one query's per-shard lists. Raw sorts by the shard scores as
/// given. ZScore first standardizes each list by its own mean and std
/// (a list with zero spread maps to 0). Duplicate docids keep their best
/// entry.
RankedList merge_runs(const std::vector<RankedList>& lists, long long k, MergeMode mode);

/// Merges every query across shard runs; lists are matched by qid.
std::vector<RankedList> merge_shard_runs(const std::vector<ShardRun>& runs, long long k, MergeMode mode);

struct ScoreStats {
  int group = 0;
  std::size_t count = 0;
  double mean = 0, stddev = 0, min = 0, max = 0;
  std::array<double, 9> deciles{};
};

std::vector<ScoreStats> score_distribution_stats(const std::vector<ShardRun>& runs);

/// Spread (max - min) of group means against the average within-group std.
struct ScoreDiagnosis {
  double mean_spread = 0;
  double mean_within_std = 0;
  double ratio = 0;
};

ScoreDiagnosis diagnose(const std::vector<ScoreStats>& stats);

/// CSV `group,mean,std,min,max,d1..d9`.
std::string render_stats_csv(const std::vector<ScoreStats>& stats);

}  // namespace dynret
