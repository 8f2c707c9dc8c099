#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dynret/corpus.hpp"

namespace dynret {

/// Seeded topic-model corpus. Each document draws most of its words from one
/// topic, the rest from a shared background pool, plus a few words unique to
/// it. Queries are short samples of their positive document's top tf-idf
/// terms plus background noise. Training queries use the even-ranked half of
/// that pool; held-out queries use the odd-ranked half restricted to terms no
/// training query contains, so they probe knowledge fine-tuning cannot supply.
struct SynthConfig {
  int num_docs = 1000;
  int num_topics = 20;
  int words_per_topic = 40;
  int background_words = 300;
  int min_doc_len = 40;
  int max_doc_len = 80;
  double topic_share = 0.6;
  int unique_words = 4;
  int unique_repeats = 2;
  int min_query_terms = 3;
  int max_query_terms = 5;
  /// Candidate pool for query terms: the document's top terms by tf-idf.
  int query_pool = 8;
  /// Background words added to every query whether or not the document
  /// contains them; fine-tuning has to learn to ignore them.
  int query_noise_terms = 5;
  /// Fraction of documents that get a training query.
  double train_fraction = 1.0;
  /// Held-out queries over distinct, uniformly drawn documents.
  int heldout_queries = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

using TextQuery = std::pair<std::string, std::string>;   // qid, text
using TextQRel = std::pair<std::string, std::string>;    // qid, external docid

struct SynthData {
  std::vector<RawDocument> docs;
  std::vector<TextQuery> train_queries;
  std::vector<TextQRel> train_qrels;
  std::vector<TextQuery> heldout_queries;
  std::vector<TextQRel> heldout_qrels;
};

SynthData generate_synthetic(const SynthConfig& config);

struct SynthFiles {
  std::filesystem::path docs, train_queries, train_qrels, heldout_queries, heldout_qrels;
};

SynthFiles synth_paths(const std::filesystem::path& dir);

/// Writes docs.jsonl, train_queries.tsv, train_qrels.tsv, heldout_queries.tsv
/// and heldout_qrels.tsv into `dir`.
SynthFiles write_synthetic(const SynthData& data, const std::filesystem::path& dir);

void write_text_qrels(const std::filesystem::path& path, const std::vector<TextQRel>& qrels);

}  // namespace dynret
