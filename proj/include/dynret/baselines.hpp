#pragma once

#include <optional>
#include <vector>

#include "dynret/encoder.hpp"
#include "dynret/model.hpp"
#include "dynret/ranking.hpp"
#include "dynret/retriever.hpp"

namespace dynret {

struct Posting {
  DocId doc = 0;
  std::int32_t tf = 0;

  friend bool operator==(const Posting&, const Posting&) = default;
};

/// Term-frequency inverted index over a tokenized corpus.
class InvertedIndex {
 public:
  explicit InvertedIndex(const Corpus& corpus);

  std::span<const Posting> postings(TokenId token) const;
  std::size_t document_frequency(TokenId token) const { return postings(token).size(); }
  std::size_t num_docs() const { return doc_length_.size(); }
  std::size_t doc_length(DocId doc) const { return doc_length_.at(static_cast<std::size_t>(doc)); }
  double average_doc_length() const { return avgdl_; }
  std::int32_t term_frequency(TokenId token, DocId doc) const;

 private:
  std::vector<std::vector<Posting>> postings_;
  std::vector<std::size_t> doc_length_;
  double avgdl_ = 0.0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); nonnegative for every df.
double bm25_idf(std::size_t num_docs, std::size_t df);

/// Sum over distinct query terms of idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl)).
double bm25_score(const InvertedIndex& index, const TokenSeq& query, DocId doc,
                  const Bm25Params& params = {});

/// Scores every document by walking the postings of each distinct query term.
std::vector<double> bm25_score_all(const InvertedIndex& index, const TokenSeq& query,
                                   const Bm25Params& params = {});

/// Top-k by BM25; zero-score documents are never returned.
RankedList bm25_retrieve(const InvertedIndex& index, const Query& query, long long k,
                         const Bm25Params& params = {});

/// Query and document towers. When `doc` is empty the towers share weights.
struct TwoTower {
  EncoderParams<float> query;
  std::optional<EncoderParams<float>> doc;

  const EncoderParams<float>& doc_tower() const { return doc ? *doc : query; }
};

struct TwoTowerConfig {
  AdamWHyper optim;
  int batch_size = 32;
  int epochs = 10;
  bool shared = true;
  std::uint64_t seed = 11;
};

struct TwoTowerResult {
  TwoTower towers;
  std::vector<EpochLog> log;
};

/// In-batch softmax loss: query i is scored by dot product against the B
/// positive documents of the batch, with its own positive as the label. A
/// candidate slot holding the same document as query i's positive (other
/// than slot i) is masked out. Gradients are accumulated into the given
/// buffers; pass the same buffer twice for shared towers. Requires B >= 2.
template <class S>
S in_batch_loss(const EncoderParams<S>& query_tower, const EncoderParams<S>& doc_tower,
                const Corpus& corpus, std::span<const TrainingPair> batch,
                EncoderParams<S>* query_grads, EncoderParams<S>* doc_grads);

TwoTowerResult train_two_tower(const Corpus& corpus, const EncoderConfig& encoder,
                               const std::vector<TrainingPair>& pairs,
                               const TwoTowerConfig& config);

/// Row i = doc tower encoding of document i (truncated to max_len - 1 tokens).
Mat<float> dense_encode_corpus(const EncoderParams<float>& doc_tower, const Corpus& corpus);

RankedList dense_retrieve(const EncoderParams<float>& query_tower, const Mat<float>& dense_index,
                          const Query& query, long long k);

}  // namespace dynret
