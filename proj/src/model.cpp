#include "dynret/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynret {

namespace {

constexpr std::size_t kChunk = 8;

}  // namespace

template <class S>
DocidMatrix<S> DocidMatrix<S>::random(std::size_t num_docs, int d_model, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<S> m(static_cast<Eigen::Index>(num_docs), d_model);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return DocidMatrix(std::move(m));
}

template <class S>
DocidMatrix<S> DocidMatrix<S>::zeros(std::size_t num_docs, int d_model) {
  return DocidMatrix(Mat<S>::Zero(static_cast<Eigen::Index>(num_docs), d_model));
}

template <class S>
RetrieverParams<S> RetrieverParams<S>::zeros_like(const RetrieverParams& other) {
  return {EncoderParams<S>::zeros(other.encoder.config),
          DocidMatrix<S>::zeros(other.docids.num_docs(), other.docids.d_model())};
}

template <class S>
std::vector<Mat<S>*> RetrieverParams<S>::tensors() {
  auto out = encoder.tensors();
  out.push_back(&docids.storage());
  return out;
}

template <class S>
std::vector<const Mat<S>*> RetrieverParams<S>::tensors() const {
  auto out = encoder.tensors();
  out.push_back(&docids.storage());
  return out;
}

template <class S>
std::vector<std::string> RetrieverParams<S>::tensor_names() const {
  auto out = EncoderParams<S>::tensor_names(encoder.config);
  out.emplace_back("docid_matrix");
  return out;
}

template <class S>
template <class T>
RetrieverParams<T> RetrieverParams<S>::cast() const {
  return {encoder.template cast<T>(), DocidMatrix<T>(docids.storage().template cast<T>())};
}

template <class S>
Vec<S> dot_scores(const Mat<S>& rows, const Vec<S>& query) {
  if (rows.cols() != query.size())
    throw Error("dimension mismatch: index has d=" + std::to_string(rows.cols()) +
                ", query has d=" + std::to_string(query.size()));
  Vec<S> out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i) = rows.row(i).dot(query.transpose());
  return out;
}

template <class S>
Vec<S> softmax(const Vec<S>& logits) {
  Vec<S> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

namespace {

template <class S>
S example_grad(const RetrieverParams<S>& params, const TrainingPair& pair, S weight,
               RetrieverParams<S>* grads, bool encoder_grads, std::size_t index) {
  EncoderCache<S> cache;
  Vec<S> v = encode(params.encoder, pair.tokens, cache);
  const auto& w = params.docids.storage();
  Vec<S> logits = dot_scores(w, v);
  const S mx = logits.maxCoeff();
  Vec<S> e = (logits.array() - mx).exp();
  const S z = e.sum();
  const S loss = std::log(z) - (logits(pair.target) - mx);
  if (!std::isfinite(static_cast<double>(loss)))
    throw Error("non-finite loss at batch index " + std::to_string(index));
  if (grads) {
    Vec<S> dlogits = e / z;
    dlogits(pair.target) -= S(1);
    dlogits *= weight;
    grads->docids.storage().noalias() += dlogits * v.transpose();
    if (encoder_grads) {
      Vec<S> dv = w.transpose() * dlogits;
      encode_backward(params.encoder, cache, dv, grads->encoder);
    }
  }
  return loss;
}

template <class S>
void check_targets(const RetrieverParams<S>& params, std::span<const TrainingPair> batch) {
  if (batch.empty()) throw Error("batch must be nonempty");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto t = batch[i].target;
    if (t < 0 || static_cast<std::size_t>(t) >= params.docids.num_docs())
      throw Error("batch index " + std::to_string(i) + " targets docid outside the index");
  }
}

}  // namespace

template <class S>
S forward_backward(const RetrieverParams<S>& params, std::span<const TrainingPair> batch,
                   RetrieverParams<S>& grads, bool encoder_grads) {
  check_targets(params, batch);
  const std::size_t n = batch.size();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  const S weight = S(1) / static_cast<S>(n);

  std::vector<RetrieverParams<S>> partial;
  partial.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    if (c == 0) {
      grads = RetrieverParams<S>::zeros_like(params);
      continue;
    }
    partial.push_back(RetrieverParams<S>::zeros_like(params));
  }
  std::vector<S> losses(n);
  parallel_for(chunks, [&](std::size_t c) {
    auto& g = c == 0 ? grads : partial[c - 1];
    for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i)
      losses[i] = example_grad(params, batch[i], weight, &g, encoder_grads, i);
  });
  for (auto& p : partial) {
    auto dst = grads.tensors();
    auto src = p.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t) *dst[t] += *src[t];
  }
  S total = 0;
  for (S l : losses) total += l;
  return total * weight;
}

template <class S>
S batch_loss(const RetrieverParams<S>& params, std::span<const TrainingPair> batch) {
  check_targets(params, batch);
  std::vector<S> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    losses[i] = example_grad<S>(params, batch[i], S(1), nullptr, false, i);
  });
  S total = 0;
  for (S l : losses) total += l;
  return total / static_cast<S>(batch.size());
}

template <class S>
OptimizerState<S> OptimizerState<S>::for_tensors(const std::vector<const Mat<S>*>& params) {
  OptimizerState st;
  for (const auto* p : params) {
    st.first.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    st.second.push_back(Mat<S>::Zero(p->rows(), p->cols()));
  }
  return st;
}

template <class S>
void adamw_step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads,
                OptimizerState<S>& state, const AdamWHyper& h, const std::vector<bool>& frozen) {
  if (params.size() != grads.size() || params.size() != state.first.size())
    throw Error("optimizer: parameter, gradient and state lists differ in length");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(h.beta1), b2 = static_cast<S>(h.beta2);
  const S c1 = static_cast<S>(1.0 - std::pow(h.beta1, t));
  const S c2 = static_cast<S>(1.0 - std::pow(h.beta2, t));
  const S lr = static_cast<S>(h.lr), eps = static_cast<S>(h.eps), wd = static_cast<S>(h.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i < frozen.size() && frozen[i]) continue;
    auto& w = *params[i];
    const auto& g = *grads[i];
    if (w.rows() != g.rows() || w.cols() != g.cols())
      throw Error("optimizer: gradient shape mismatch at tensor " + std::to_string(i));
    auto& m = state.first[i];
    auto& v = state.second[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    w.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + eps)) + lr * wd * w.array();
  }
}

GradCheckResult finite_diff_check(const std::function<double()>& loss,
                                  const std::vector<Mat<double>*>& params,
                                  const std::vector<const Mat<double>*>& analytic,
                                  const std::vector<std::string>& names, double eps,
                                  std::size_t coords_per_tensor, std::uint64_t seed) {
  if (!(eps > 0.0)) throw Error("epsilon must be positive");
  if (params.size() != analytic.size() || params.size() != names.size())
    throw Error("finite_diff_check: tensor lists differ in length");
  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    const auto& a = *analytic[t];
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(p.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (coords_per_tensor > 0 && coords.size() > coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_tensor);
    }
    double worst = 0.0;
    for (auto c : coords) {
      double& x = p.data()[c];
      const double orig = x;
      x = orig + eps;
      const double up = loss();
      x = orig - eps;
      const double down = loss();
      x = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = a.data()[c];
      const double denom = std::max({std::abs(exact), std::abs(numeric), kGradCheckFloor});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
      ++result.checked;
    }
    result.per_tensor.emplace_back(names[t], worst);
    if (worst >= result.max_rel_error) {
      result.max_rel_error = worst;
      result.worst_tensor = names[t];
    }
  }
  return result;
}

GradCheckResult gradcheck_retriever(const GradCheckConfig& config) {
  Rng rng(config.seed);
  RetrieverParams<double> params{EncoderParams<double>::init(config.encoder, rng, 0.5),
                                 DocidMatrix<double>::random(config.num_docs,
                                                             config.encoder.d_model, rng, 0.5)};
  // Move layer-norm scales and offsets off their identity values so every
  // parameter group carries a generic gradient.
  std::normal_distribution<double> jitter(0.0, 0.2);
  auto tensors = params.tensors();
  auto names = params.tensor_names();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (names[i].find("_gain") != std::string::npos || names[i].find("_bias") != std::string::npos ||
        names[i].find(".b") != std::string::npos)
      for (Eigen::Index j = 0; j < tensors[i]->size(); ++j) tensors[i]->data()[j] += jitter(rng);

  std::vector<TrainingPair> batch;
  for (std::size_t b = 0; b < config.batch; ++b) {
    TrainingPair p;
    const auto len = uniform_int(rng, 1, std::min(6, config.encoder.max_len - 1));
    for (std::int64_t i = 0; i < len; ++i)
      p.tokens.push_back(static_cast<TokenId>(
          uniform_int(rng, Vocabulary::kReserved, config.encoder.vocab_size - 1)));
    p.target = static_cast<DocId>(uniform_int(rng, 0, static_cast<std::int64_t>(config.num_docs) - 1));
    p.task = Task::kQuery;
    batch.push_back(std::move(p));
  }

  RetrieverParams<double> grads;
  forward_backward<double>(params, batch, grads);
  auto analytic = std::as_const(grads).tensors();
  return finite_diff_check([&] { return batch_loss<double>(params, batch); }, params.tensors(),
                           analytic, names, config.eps, config.coords_per_tensor, config.seed + 1);
}

#define DYNRET_INSTANTIATE(S)                                                                    \
  template class DocidMatrix<S>;                                                                 \
  template struct RetrieverParams<S>;                                                            \
  template Vec<S> dot_scores(const Mat<S>&, const Vec<S>&);                                      \
  template Vec<S> softmax(const Vec<S>&);                                                        \
  template S forward_backward(const RetrieverParams<S>&, std::span<const TrainingPair>,          \
                              RetrieverParams<S>&, bool);                                        \
  template S batch_loss(const RetrieverParams<S>&, std::span<const TrainingPair>);               \
  template struct OptimizerState<S>;                                                             \
  template void adamw_step(const std::vector<Mat<S>*>&, const std::vector<const Mat<S>*>&,       \
                           OptimizerState<S>&, const AdamWHyper&, const std::vector<bool>&);

DYNRET_INSTANTIATE(float)
DYNRET_INSTANTIATE(double)
#undef DYNRET_INSTANTIATE

template RetrieverParams<double> RetrieverParams<float>::cast<double>() const;
template RetrieverParams<float> RetrieverParams<double>::cast<float>() const;

}  // namespace dynret
