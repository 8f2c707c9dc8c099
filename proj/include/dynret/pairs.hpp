#pragma once

#include <array>
#include <filesystem>
#include <string_view>
#include <vector>

#include "dynret/corpus.hpp"
#include "dynret/rng.hpp"

namespace dynret {

enum class Task : int { kPassage = 0, kTerms = 1, kNgram = 2, kQuery = 3 };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

/// A (term sequence -> docid) training sample.
struct TrainingPair {
  TokenSeq tokens;
  DocId target = 0;
  Task task = Task::kPassage;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

struct PairConfig {
  int window = 128;
  int samples_per_doc = 10;
  int min_terms = 10;
  int max_terms = 512;
  int ngram_n = 3;
  int ngram_min_df = 2;
  /// 0 selects 10 * |D|.
  std::int64_t max_ngrams = 0;
  int max_len = 512;
  /// Relative mixing weights of passage / terms / ngram pairs during pre-training.
  std::array<double, 3> task_weights{1.0, 1.0, 1.0};
};

std::vector<TrainingPair> segment_passages(const Document& doc, int window);

/// Distinct tokens of a document in first-occurrence order with their tf-idf weight.
struct TermWeights {
  std::vector<TokenId> tokens;
  std::vector<double> weights;
};

/// weight = tf(t, doc) * ln(1 + |D| / df(t)).
TermWeights term_importance(const Document& doc, const Corpus& corpus);

/// Draws `m` term sets without replacement, proportional to weight. Each set's
/// length is uniform in [min_terms, min(max_terms, distinct)], clamped to the
/// number of distinct tokens. Tokens appear in the order they were drawn.
std::vector<TrainingPair> sample_term_sets(const Document& doc, int m, const TermWeights& weights,
                                           Rng& rng, int min_terms = 10, int max_terms = 512);

std::vector<TrainingPair> extract_ngram_pairs(const Corpus& corpus, int n, int min_df,
                                              std::int64_t max_ngrams);

/// Every pre-training pair for the corpus, grouped by task then by document.
/// Term sets use a per-document seed derived from (seed, internal id).
std::vector<TrainingPair> generate_pretrain_pairs(const Corpus& corpus, const PairConfig& config,
                                                  std::uint64_t seed);

/// Fine-tuning pairs from labelled queries; unlabelled or empty queries are skipped.
std::vector<TrainingPair> query_pairs(const QuerySet& queries, const QRels& qrels);

/// Throws if any pair is empty or targets a docid outside [0, num_docs).
void validate_pairs(const std::vector<TrainingPair>& pairs, std::size_t num_docs);

/// `task \t target_external_id \t space-joined tokens` lines.
void write_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs,
                 const Corpus& corpus);
std::vector<TrainingPair> read_pairs(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace dynret
