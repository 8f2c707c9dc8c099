#include "dynret/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynret/log.hpp"

namespace dynret {

ScoreResult score_all(const Vec<float>& query_vector, const DocidMatrix<float>& docids) {
  if (query_vector.size() != docids.d_model())
    throw Error("score_all: query has d=" + std::to_string(query_vector.size()) +
                " but the docid matrix has d=" + std::to_string(docids.d_model()));
  ScoreResult r;
  r.logits = dot_scores(docids.storage(), query_vector);
  r.probs = softmax(r.logits);
  return r;
}

Vec<float> DynamicRetriever::encode_query(const TokenSeq& tokens) const {
  return encode(params_.encoder, tokens);
}

RankedList DynamicRetriever::retrieve(const Query& query, long long k) const {
  const auto kk = checked_k(k);
  const Vec<float> logits = dot_scores(params_.docids.storage(), encode_query(query.tokens));
  return {query.qid, top_k<float>(std::span<const float>(logits.data(), logits.size()), kk)};
}

std::vector<RankedList> DynamicRetriever::retrieve_all(const QuerySet& queries, long long k) const {
  checked_k(k);
  std::vector<RankedList> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) { out[i] = retrieve(queries[i], k); });
  return out;
}

DocidMatrix<float> init_overdense(const Mat<float>& dense_index, std::size_t num_docs, int d_model) {
  if (static_cast<std::size_t>(dense_index.rows()) != num_docs)
    throw Error("init_overdense: dense index has " + std::to_string(dense_index.rows()) +
                " vectors for " + std::to_string(num_docs) + " documents");
  if (dense_index.cols() != d_model)
    throw Error("init_overdense: dense vectors have dimension " + std::to_string(dense_index.cols()) +
                ", expected d_model=" + std::to_string(d_model));
  return DocidMatrix<float>(dense_index);
}

namespace {

/// Draws an epoch of pairs: each draw picks a task with probability
/// proportional to its weight, then the next pair from that task's shuffled
/// pool (reshuffled when exhausted).
class TaskMixer {
 public:
  TaskMixer(const std::vector<TrainingPair>& pairs, const std::array<double, 3>& weights) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto t = static_cast<std::size_t>(pairs[i].task);
      const std::size_t slot = t < 3 ? t : 3;
      pools_[slot].push_back(i);
    }
    for (std::size_t t = 0; t < 4; ++t) {
      weights_[t] = pools_[t].empty() ? 0.0 : (t < 3 ? weights[t] : 1.0);
      if (weights_[t] < 0) throw Error("task weights must be nonnegative");
      if (weights_[t] > 0) epoch_size_ += pools_[t].size();
    }
    cursor_.fill(0);
  }

  std::size_t epoch_size() const { return epoch_size_; }

  std::vector<std::size_t> epoch(Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(epoch_size_);
    const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (std::size_t n = 0; n < epoch_size_; ++n) {
      double u = uniform01(rng) * total;
      std::size_t t = 0, last = 0;
      for (; t < 4; ++t) {
        if (weights_[t] <= 0) continue;
        last = t;
        if (u < weights_[t]) break;
        u -= weights_[t];
      }
      if (t == 4) t = last;
      auto& pool = pools_[t];
      if (cursor_[t] == 0) std::shuffle(pool.begin(), pool.end(), rng);
      out.push_back(pool[cursor_[t]]);
      cursor_[t] = (cursor_[t] + 1) % pool.size();
    }
    return out;
  }

 private:
  std::array<std::vector<std::size_t>, 4> pools_;
  std::array<double, 4> weights_{};
  std::array<std::size_t, 4> cursor_{};
  std::size_t epoch_size_ = 0;
};

void run_stage(RetrieverParams<float>& params, const std::vector<TrainingPair>& pairs,
               const TrainConfig& config, const std::string& stage, int epochs, bool mixed,
               std::uint64_t stream, std::vector<EpochLog>& log) {
  if (epochs <= 0 || pairs.empty()) return;
  auto hyper = config.optim;
  if (stage == "finetune" && config.finetune_lr > 0) hyper.lr = config.finetune_lr;
  if (config.batch_size < 1) throw Error("batch_size must be >= 1");
  Rng rng(derive_seed(config.seed, stream));
  auto state = OptimizerState<float>::for_tensors(std::as_const(params).tensors());
  std::vector<bool> frozen;
  if (config.freeze_encoder) {
    frozen.assign(params.tensors().size(), true);
    frozen.back() = false;
  }
  TaskMixer mixer(pairs, config.task_weights);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  RetrieverParams<float> grads;
  std::vector<TrainingPair> batch;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<std::size_t> draw;
    if (mixed) {
      draw = mixer.epoch(rng);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      draw = order;
    }
    EpochLog entry{stage, epoch, 0.0, 0.0, 0.0};
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < draw.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(draw.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (auto i = start; i < end; ++i) batch.push_back(pairs[draw[i]]);
      const float loss = forward_backward<float>(params, batch, grads, !config.freeze_encoder);
      if (!all_finite(grads.encoder) || !grads.docids.storage().allFinite())
        throw Error(stage + ": non-finite gradient at epoch " + std::to_string(epoch));
      adamw_step(params.tensors(), std::as_const(grads).tensors(), state, hyper, frozen);
      if (steps == 0) entry.first_batch_loss = loss;
      entry.last_batch_loss = loss;
      sum += loss;
      ++steps;
    }
    entry.mean_loss = sum / static_cast<double>(steps);
    log.push_back(entry);
    log::info(stage + " epoch " + std::to_string(epoch) + " loss " + std::to_string(entry.mean_loss));
    if (config.patience > 0) {
      if (entry.mean_loss < best * (1.0 - config.plateau_tol)) {
        best = entry.mean_loss;
        stale = 0;
      } else if (++stale >= config.patience) {
        log::info(stage + ": loss plateaued, stopping early");
        break;
      }
    }
  }
}

}  // namespace

TrainedRetriever train_vanilla(std::size_t num_docs, const EncoderConfig& encoder,
                               const std::vector<TrainingPair>& pretrain,
                               const std::vector<TrainingPair>& finetune_pairs,
                               const TrainConfig& config) {
  validate_pairs(pretrain, num_docs);
  validate_pairs(finetune_pairs, num_docs);
  if (!config.skip_pretrain && config.pretrain_epochs > 0 && pretrain.empty())
    throw Error("train_vanilla: no pre-training pairs");
  Rng rng(derive_seed(config.seed, 0));
  RetrieverParams<float> params{EncoderParams<float>::init(encoder, rng),
                                DocidMatrix<float>::random(num_docs, encoder.d_model, rng)};
  TrainedRetriever out;
  if (!config.skip_pretrain)
    run_stage(params, pretrain, config, "pretrain", config.pretrain_epochs, true, 1, out.log);
  if (!config.skip_finetune)
    run_stage(params, finetune_pairs, config, "finetune", config.finetune_epochs, false, 2, out.log);
  out.model = DynamicRetriever(std::move(params));
  return out;
}

void finetune(DynamicRetriever& model, const std::vector<TrainingPair>& pairs,
              const TrainConfig& config, std::vector<EpochLog>& log) {
  validate_pairs(pairs, model.num_docs());
  if (config.skip_finetune) return;
  run_stage(model.params(), pairs, config, "finetune", config.finetune_epochs, false, 2, log);
}

TrainedRetriever train_overdense(const EncoderParams<float>& query_encoder,
                                 const Mat<float>& dense_index,
                                 const std::vector<TrainingPair>& finetune_pairs,
                                 const TrainConfig& config) {
  const auto num_docs = static_cast<std::size_t>(dense_index.rows());
  auto docids = init_overdense(dense_index, num_docs, query_encoder.config.d_model);
  TrainedRetriever out;
  out.model = DynamicRetriever(RetrieverParams<float>{query_encoder, std::move(docids)});
  finetune(out.model, finetune_pairs, config, out.log);
  return out;
}

}  // namespace dynret
