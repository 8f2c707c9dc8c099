#pragma once

#include <array>
#include <string>
#include <vector>

#include "dynret/model.hpp"
#include "dynret/ranking.hpp"

namespace dynret {

struct ScoreResult {
  Vec<float> logits;
  Vec<float> probs;
};

/// logits = W^T v, probs = softmax(logits).
ScoreResult score_all(const Vec<float>& query_vector, const DocidMatrix<float>& docids);

/// A trained model-based retriever: query encoder plus the dynamic index.
class DynamicRetriever {
 public:
  DynamicRetriever() = default;
  explicit DynamicRetriever(RetrieverParams<float> params) : params_(std::move(params)) {}

  const RetrieverParams<float>& params() const { return params_; }
  RetrieverParams<float>& params() { return params_; }
  std::size_t num_docs() const { return params_.docids.num_docs(); }

  Vec<float> encode_query(const TokenSeq& tokens) const;
  RankedList retrieve(const Query& query, long long k) const;
  std::vector<RankedList> retrieve_all(const QuerySet& queries, long long k) const;

 private:
  RetrieverParams<float> params_;
};

/// Copies per-document dense vectors into the docid columns.
DocidMatrix<float> init_overdense(const Mat<float>& dense_index, std::size_t num_docs, int d_model);

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double mean_loss = 0.0;
  double first_batch_loss = 0.0;
  double last_batch_loss = 0.0;
};

struct TrainConfig {
  AdamWHyper optim;
  /// Learning rate of the fine-tuning stage; 0 reuses `optim.lr`.
  double finetune_lr = 0.0;
  int batch_size = 32;
  int pretrain_epochs = 10;
  int finetune_epochs = 10;
  bool skip_pretrain = false;
  bool skip_finetune = false;
  bool freeze_encoder = false;
  /// Stop a stage once the epoch loss fails to improve by this relative
  /// amount for `patience` consecutive epochs; patience 0 disables.
  double plateau_tol = 1e-3;
  int patience = 0;
  std::array<double, 3> task_weights{1.0, 1.0, 1.0};
  std::uint64_t seed = 13;
};

struct TrainedRetriever {
  DynamicRetriever model;
  std::vector<EpochLog> log;
};

/// Random W_doc, pre-training over task pairs, then query -> docid fine-tuning.
TrainedRetriever train_vanilla(std::size_t num_docs, const EncoderConfig& encoder,
                               const std::vector<TrainingPair>& pretrain,
                               const std::vector<TrainingPair>& finetune, const TrainConfig& config);

/// Continues training an existing retriever on query pairs.
void finetune(DynamicRetriever& model, const std::vector<TrainingPair>& pairs,
              const TrainConfig& config, std::vector<EpochLog>& log);

/// Encoder from the two-tower query tower, W_doc from the dense index, then
/// query -> docid fine-tuning.
TrainedRetriever train_overdense(const EncoderParams<float>& query_encoder,
                                 const Mat<float>& dense_index,
                                 const std::vector<TrainingPair>& finetune_pairs,
                                 const TrainConfig& config);

}  // namespace dynret
