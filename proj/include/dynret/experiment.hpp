#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dynret/baselines.hpp"
#include "dynret/corpus.hpp"
#include "dynret/distributed.hpp"
#include "dynret/encoder.hpp"
#include "dynret/pairs.hpp"
#include "dynret/retriever.hpp"
#include "dynret/synth.hpp"

namespace dynret {

/// Bad flags, unknown config keys and out-of-range values (exit code 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Every tunable of a pipeline, serialized as flat `key = value` lines.
/// `#` starts a comment. Unknown keys are rejected.
struct ExperimentConfig {
  std::string corpus, queries, qrels;
  int min_freq = 1;

  int d_model = 64, layers = 2, heads = 4, d_ff = 256, max_len = 128;

  PairConfig pairs;

  AdamWHyper optim;
  int batch_size = 32;
  int pretrain_epochs = 10;
  int finetune_epochs = 10;
  int dense_epochs = 10;
  /// Fine-tuning learning rate; 0 reuses `lr`.
  double finetune_lr = 0.0;
  /// Two-tower learning rate; 0 reuses `lr`.
  double dense_lr = 0.0;
  bool dense_shared = true;
  int patience = 0;
  double plateau_tol = 1e-3;

  std::uint64_t seed = 13;
  long long k = 100;
  int threads = 0;
  std::string run_tag = "dynret";

  int groups = 4;
  long long per_group_k = 100;
  MergeMode merge = MergeMode::kRaw;
  int common_docs = 0;

  SynthConfig synth;

  /// Assigns one key from its text form.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void apply_text(std::string_view text, std::string_view origin = "config");
  void load(const std::filesystem::path& path);
  void validate() const;

  /// Sorted `key = value` lines covering every key.
  std::string canonical() const;
  /// 16 hex digits of the FNV-1a hash of `canonical()`.
  std::string hash() const;

  static const std::vector<std::string>& keys();

  EncoderConfig encoder(std::size_t vocab_size) const;
  TrainConfig train() const;
  TwoTowerConfig two_tower() const;
};

/// Corpus plus the configured (optional) query set and judgments.
struct Dataset {
  Corpus corpus;
  QuerySet queries;
  QRels qrels;
};

Dataset load_dataset(const ExperimentConfig& config, bool need_queries);

/// Writes `<artifact>.meta.json` next to an artifact.
void write_meta(const std::filesystem::path& artifact, const ExperimentConfig& config,
                std::string_view command);

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

/// Two-tower training, then the doc tower encodes the corpus.
struct DensePipeline {
  TwoTowerResult model;
  Mat<float> index;
};

DensePipeline run_dense_pipeline(const Corpus& corpus, const std::vector<TrainingPair>& pairs,
                                 const ExperimentConfig& config, std::uint64_t seed);

/// One OverDense retriever per group, trained only on that group's labelled queries.
struct ShardModels {
  ShardPlan plan;
  std::vector<DynamicRetriever> models;
};

ShardModels train_shards(const Dataset& data, const ExperimentConfig& config);

/// Full command line entry point: returns the process exit code.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace dynret
