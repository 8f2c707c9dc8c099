#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dynret/encoder.hpp"
#include "dynret/pairs.hpp"

namespace dynret {

/// The dynamic index W_doc (d_model x |D|). Column i is the identifier
/// embedding of internal docid i; columns are stored contiguously, so the
/// backing matrix is |D| x d_model with one row per document.
template <class S>
class DocidMatrix {
 public:
  DocidMatrix() = default;
  explicit DocidMatrix(Mat<S> columns) : columns_(std::move(columns)) {}

  static DocidMatrix random(std::size_t num_docs, int d_model, Rng& rng, double stddev = 0.02);
  static DocidMatrix zeros(std::size_t num_docs, int d_model);

  std::size_t num_docs() const { return static_cast<std::size_t>(columns_.rows()); }
  int d_model() const { return static_cast<int>(columns_.cols()); }

  auto column(DocId id) const { return columns_.row(id); }
  auto column(DocId id) { return columns_.row(id); }

  /// |D| x d_model storage (transpose of the logical matrix).
  const Mat<S>& storage() const { return columns_; }
  Mat<S>& storage() { return columns_; }

 private:
  Mat<S> columns_;
};

/// Encoder plus docid projection: the full trainable state of a retriever.
template <class S>
struct RetrieverParams {
  EncoderParams<S> encoder;
  DocidMatrix<S> docids;

  static RetrieverParams zeros_like(const RetrieverParams& other);
  std::vector<Mat<S>*> tensors();
  std::vector<const Mat<S>*> tensors() const;
  std::vector<std::string> tensor_names() const;

  template <class T>
  RetrieverParams<T> cast() const;
};

/// Logits W^T v for every document: one dot product per stored column, in
/// docid order. Dense retrieval uses the same routine.
template <class S>
Vec<S> dot_scores(const Mat<S>& rows, const Vec<S>& query);

template <class S>
Vec<S> softmax(const Vec<S>& logits);

/// Mean negative log-likelihood of the target docid over the batch. Gradients
/// are written to `grads` (overwritten, not accumulated). Examples are split
/// into fixed chunks evaluated in parallel and reduced in chunk order, so the
/// result does not depend on the thread count.
template <class S>
S forward_backward(const RetrieverParams<S>& params, std::span<const TrainingPair> batch,
                   RetrieverParams<S>& grads, bool encoder_grads = true);

/// Loss only.
template <class S>
S batch_loss(const RetrieverParams<S>& params, std::span<const TrainingPair> batch);

struct AdamWHyper {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class S>
struct OptimizerState {
  std::vector<Mat<S>> first, second;
  std::int64_t step = 0;

  static OptimizerState for_tensors(const std::vector<const Mat<S>*>& params);
};

/// Decoupled weight decay with bias correction:
/// w <- w - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * w.
/// Tensors whose index is in `frozen` are skipped (state untouched).
template <class S>
void adamw_step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads,
                OptimizerState<S>& state, const AdamWHyper& hyper,
                const std::vector<bool>& frozen = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps
/// near-zero gradients from dominating through cancellation noise.
inline constexpr double kGradCheckFloor = 1e-6;

/// Central differences on up to `coords_per_tensor` coordinates of each
/// tensor (all of them when 0), compared against `analytic`. Parameters are
/// perturbed in place and restored.
GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<Mat<double>*>& params,
                                  const std::vector<const Mat<double>*>& analytic,
                                  const std::vector<std::string>& names, double eps,
                                  std::size_t coords_per_tensor = 0, std::uint64_t seed = 0);

struct GradCheckConfig {
  EncoderConfig encoder{32, 16, 1, 2, 32, 16};
  std::size_t num_docs = 8;
  std::size_t batch = 3;
  double eps = 1e-4;
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 7;
};

/// Builds a random 64-bit model and batch and checks every parameter group
/// of the docid cross-entropy loss.
GradCheckResult gradcheck_retriever(const GradCheckConfig& config);

}  // namespace dynret
