#include "dynret/encoder.hpp"

#include <cmath>

namespace dynret {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
Mat<S> normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <class S>
Mat<S> row_of(Eigen::Index n, S value) {
  return Mat<S>::Constant(1, n, value);
}

/// Row-wise layer norm; writes per-row mean and reciprocal std for backward.
template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Vec<S>& mean,
                  Vec<S>& rstd) {
  const auto n = x.rows();
  const auto d = static_cast<S>(x.cols());
  mean.resize(n);
  rstd.resize(n);
  Mat<S> y(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mu = x.row(i).sum() / d;
    const S var = (x.row(i).array() - mu).square().sum() / d;
    const S rs = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    mean(i) = mu;
    rstd(i) = rs;
    y.row(i) = ((x.row(i).array() - mu) * rs) * gain.array() + bias.array();
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& x, const Mat<S>& dy, const Mat<S>& gain,
                           const Vec<S>& mean, const Vec<S>& rstd, Mat<S>& dgain,
                           Mat<S>& dbias) {
  const auto n = dy.rows();
  const auto d = static_cast<S>(x.cols());
  Mat<S> dx(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVec<S> xhat = (x.row(i).array() - mean(i)) * rstd(i);
    dgain.array() += dy.row(i).array() * xhat.array();
    dbias += dy.row(i);
    RowVec<S> dxhat = dy.row(i).array() * gain.array();
    const S m1 = dxhat.sum() / d;
    const S m2 = (dxhat.array() * xhat.array()).sum() / d;
    dx.row(i) = rstd(i) * (dxhat.array() - m1 - xhat.array() * m2);
  }
  return dx;
}

template <class S>
S gelu(S x) {
  constexpr S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
}

template <class S>
S gelu_grad(S x) {
  constexpr S c = static_cast<S>(0.7978845608028654);
  const S t = std::tanh(c * (x + S(0.044715) * x * x * x));
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3 * 0.044715) * x * x);
}

template <class S>
void softmax_rows(Mat<S>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const S mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

/// One transformer block. Only the first `rows_out` positions are carried
/// forward; the final block needs just the CLS row.
template <class S>
Mat<S> layer_forward(const LayerParams<S>& p, const EncoderConfig& cfg, const Mat<S>& x,
                     Eigen::Index rows_out, LayerCache<S>& c) {
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  c.x_in = x;
  c.h1 = layer_norm(x, p.ln1_gain, p.ln1_bias, c.mean1, c.rstd1);
  c.q = c.h1.topRows(rows_out) * p.wq;
  c.q.rowwise() += p.bq.row(0);
  c.k = c.h1 * p.wk;
  c.k.rowwise() += p.bk.row(0);
  c.v = c.h1 * p.wv;
  c.v.rowwise() += p.bv.row(0);

  c.probs.resize(static_cast<std::size_t>(heads));
  c.attn.resize(rows_out, cfg.d_model);
  for (int h = 0; h < heads; ++h) {
    const auto col = h * dh;
    Mat<S> scores = (c.q.middleCols(col, dh) * c.k.middleCols(col, dh).transpose()) * scale;
    softmax_rows(scores);
    c.attn.middleCols(col, dh) = scores * c.v.middleCols(col, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  c.x_mid = x.topRows(rows_out) + c.attn * p.wo;
  c.x_mid.rowwise() += p.bo.row(0);

  c.h2 = layer_norm(c.x_mid, p.ln2_gain, p.ln2_bias, c.mean2, c.rstd2);
  c.ff_pre = c.h2 * p.w1;
  c.ff_pre.rowwise() += p.b1.row(0);
  c.ff_act = c.ff_pre.unaryExpr([](S v) { return gelu(v); });
  Mat<S> out = c.x_mid + c.ff_act * p.w2;
  out.rowwise() += p.b2.row(0);
  return out;
}

template <class S>
Mat<S> layer_backward(const LayerParams<S>& p, const EncoderConfig& cfg, const LayerCache<S>& c,
                      const Mat<S>& d_out, LayerParams<S>& g) {
  const Eigen::Index rows_out = d_out.rows();
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // Feed-forward sublayer.
  Mat<S> d_mid = d_out;
  g.w2.noalias() += c.ff_act.transpose() * d_out;
  g.b2 += d_out.colwise().sum();
  Mat<S> d_act = d_out * p.w2.transpose();
  Mat<S> d_pre = d_act.array() * c.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  g.w1.noalias() += c.h2.transpose() * d_pre;
  g.b1 += d_pre.colwise().sum();
  Mat<S> d_h2 = d_pre * p.w1.transpose();
  d_mid += layer_norm_backward(c.x_mid, d_h2, p.ln2_gain, c.mean2, c.rstd2, g.ln2_gain, g.ln2_bias);

  // Attention sublayer.
  g.wo.noalias() += c.attn.transpose() * d_mid;
  g.bo += d_mid.colwise().sum();
  Mat<S> d_attn = d_mid * p.wo.transpose();

  Mat<S> dq(rows_out, cfg.d_model);
  Mat<S> dk = Mat<S>::Zero(c.k.rows(), cfg.d_model);
  Mat<S> dv = Mat<S>::Zero(c.v.rows(), cfg.d_model);
  for (int h = 0; h < heads; ++h) {
    const auto col = h * dh;
    const Mat<S>& P = c.probs[static_cast<std::size_t>(h)];
    Mat<S> d_head = d_attn.middleCols(col, dh);
    Mat<S> dP = d_head * c.v.middleCols(col, dh).transpose();
    dv.middleCols(col, dh).noalias() += P.transpose() * d_head;
    Vec<S> inner = (dP.array() * P.array()).rowwise().sum();
    Mat<S> dS = (P.array() * (dP.colwise() - inner).array()) * scale;
    dq.middleCols(col, dh) = dS * c.k.middleCols(col, dh);
    dk.middleCols(col, dh).noalias() += dS.transpose() * c.q.middleCols(col, dh);
  }
  g.wq.noalias() += c.h1.topRows(rows_out).transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += c.h1.transpose() * dk;
  g.bk += dk.colwise().sum();
  g.wv.noalias() += c.h1.transpose() * dv;
  g.bv += dv.colwise().sum();

  Mat<S> d_h1 = dk * p.wk.transpose() + dv * p.wv.transpose();
  d_h1.topRows(rows_out) += dq * p.wq.transpose();
  Mat<S> dx = layer_norm_backward(c.x_in, d_h1, p.ln1_gain, c.mean1, c.rstd1, g.ln1_gain, g.ln1_bias);
  dx.topRows(rows_out) += d_mid;
  return dx;
}

template <class S>
Vec<S> encode_impl(const EncoderParams<S>& params, const TokenSeq& tokens, EncoderCache<S>& cache) {
  const auto& cfg = params.config;
  cache.ids = encoder_input(tokens, cfg.max_len);
  const auto n = static_cast<Eigen::Index>(cache.ids.size());
  Mat<S> x(n, cfg.d_model);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId id = cache.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= params.token_embedding.rows())
      throw Error("token id " + std::to_string(id) + " outside the vocabulary");
    x.row(i) = params.token_embedding.row(id) + params.position_embedding.row(i);
  }
  cache.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    const Eigen::Index rows_out = l + 1 == cfg.layers ? 1 : n;
    x = layer_forward(params.layers[static_cast<std::size_t>(l)], cfg, x, rows_out,
                      cache.layers[static_cast<std::size_t>(l)]);
  }
  cache.cls_in = x.row(0);
  const S d = static_cast<S>(cfg.d_model);
  const S mu = cache.cls_in.sum() / d;
  const S var = (cache.cls_in.array() - mu).square().sum() / d;
  cache.final_mean = mu;
  cache.final_rstd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
  RowVec<S> y = ((cache.cls_in.array() - mu) * cache.final_rstd) * params.final_gain.array() +
                params.final_bias.array();
  return y.transpose();
}

template <class S>
void visit_layer(LayerParams<S>& l, std::vector<Mat<S>*>& out) {
  for (Mat<S>* m : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo,
                    &l.bo, &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
    out.push_back(m);
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < Vocabulary::kReserved) throw Error("vocab_size must cover the reserved tokens");
  if (d_model <= 0 || layers <= 0 || heads <= 0 || d_ff <= 0 || max_len < 2)
    throw Error("encoder dimensions must be positive (max_len >= 2)");
  if (d_model % heads != 0) throw Error("d_model must be divisible by the head count");
}

TokenSeq encoder_input(const TokenSeq& tokens, int max_len) {
  TokenSeq ids;
  const auto keep = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_len - 1));
  ids.reserve(keep + 1);
  ids.push_back(Vocabulary::kCls);
  ids.insert(ids.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  return ids;
}

template <class S>
EncoderParams<S> EncoderParams<S>::zeros(const EncoderConfig& config) {
  config.validate();
  const Eigen::Index d = config.d_model, f = config.d_ff;
  EncoderParams p;
  p.config = config;
  p.token_embedding = Mat<S>::Zero(config.vocab_size, d);
  p.position_embedding = Mat<S>::Zero(config.max_len, d);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& l : p.layers) {
    l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = Mat<S>::Zero(1, d);
    l.wq = l.wk = l.wv = l.wo = Mat<S>::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = l.b2 = Mat<S>::Zero(1, d);
    l.w1 = Mat<S>::Zero(d, f);
    l.b1 = Mat<S>::Zero(1, f);
    l.w2 = Mat<S>::Zero(f, d);
  }
  p.final_gain = p.final_bias = Mat<S>::Zero(1, d);
  return p;
}

template <class S>
EncoderParams<S> EncoderParams<S>::init(const EncoderConfig& config, Rng& rng, double stddev) {
  EncoderParams p = zeros(config);
  const Eigen::Index d = config.d_model, f = config.d_ff;
  p.token_embedding = normal_matrix<S>(config.vocab_size, d, rng, stddev);
  p.position_embedding = normal_matrix<S>(config.max_len, d, rng, stddev);
  for (auto& l : p.layers) {
    l.ln1_gain = l.ln2_gain = row_of<S>(d, S(1));
    l.wq = normal_matrix<S>(d, d, rng, stddev);
    l.wk = normal_matrix<S>(d, d, rng, stddev);
    l.wv = normal_matrix<S>(d, d, rng, stddev);
    l.wo = normal_matrix<S>(d, d, rng, stddev);
    l.w1 = normal_matrix<S>(d, f, rng, stddev);
    l.w2 = normal_matrix<S>(f, d, rng, stddev);
  }
  p.final_gain = row_of<S>(d, S(1));
  return p;
}

template <class S>
std::vector<Mat<S>*> EncoderParams<S>::tensors() {
  std::vector<Mat<S>*> out{&token_embedding, &position_embedding};
  for (auto& l : layers) visit_layer(l, out);
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  return out;
}

template <class S>
std::vector<const Mat<S>*> EncoderParams<S>::tensors() const {
  auto mut = const_cast<EncoderParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <class S>
std::vector<std::string> EncoderParams<S>::tensor_names(const EncoderConfig& config) {
  std::vector<std::string> out{"token_embedding", "position_embedding"};
  static const char* kLayer[] = {"ln1_gain", "ln1_bias", "wq",       "bq",       "wk", "bk",
                                 "wv",       "bv",       "wo",       "bo",       "ln2_gain",
                                 "ln2_bias", "w1",       "b1",       "w2",       "b2"};
  for (int l = 0; l < config.layers; ++l)
    for (const char* name : kLayer) out.push_back("layer" + std::to_string(l) + "." + name);
  out.emplace_back("final_gain");
  out.emplace_back("final_bias");
  return out;
}

template <class S>
std::size_t EncoderParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

template <class S>
template <class T>
EncoderParams<T> EncoderParams<S>::cast() const {
  auto out = EncoderParams<T>::zeros(config);
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<T>();
  return out;
}

template <class S>
Vec<S> encode(const EncoderParams<S>& params, const TokenSeq& tokens) {
  EncoderCache<S> cache;
  return encode_impl(params, tokens, cache);
}

template <class S>
Vec<S> encode(const EncoderParams<S>& params, const TokenSeq& tokens, EncoderCache<S>& cache) {
  return encode_impl(params, tokens, cache);
}

template <class S>
void encode_backward(const EncoderParams<S>& params, const EncoderCache<S>& cache,
                     const Vec<S>& d_out, EncoderParams<S>& grads) {
  const auto& cfg = params.config;
  const S d = static_cast<S>(cfg.d_model);

  // Final layer norm on the CLS row.
  RowVec<S> xhat = (cache.cls_in.array() - cache.final_mean) * cache.final_rstd;
  RowVec<S> dy = d_out.transpose();
  grads.final_gain.array() += dy.array() * xhat.array();
  grads.final_bias += dy;
  RowVec<S> dxhat = dy.array() * params.final_gain.array();
  const S m1 = dxhat.sum() / d;
  const S m2 = (dxhat.array() * xhat.array()).sum() / d;
  Mat<S> dx = (cache.final_rstd * (dxhat.array() - m1 - xhat.array() * m2)).matrix();

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    dx = layer_backward(params.layers[li], cfg, cache.layers[li], dx, grads.layers[li]);
  }
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    grads.token_embedding.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.position_embedding.row(i) += dx.row(i);
  }
}

template <class S>
void add_into(EncoderParams<S>& dst, const EncoderParams<S>& src) {
  auto a = dst.tensors();
  auto b = src.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
}

template <class S>
void set_zero(EncoderParams<S>& params) {
  for (auto* m : params.tensors()) m->setZero();
}

template <class S>
bool all_finite(const EncoderParams<S>& params) {
  for (const auto* m : params.tensors())
    if (!m->allFinite()) return false;
  return true;
}

#define DYNRET_INSTANTIATE(S)                                                                   \
  template struct EncoderParams<S>;                                                             \
  template Vec<S> encode(const EncoderParams<S>&, const TokenSeq&);                             \
  template Vec<S> encode(const EncoderParams<S>&, const TokenSeq&, EncoderCache<S>&);           \
  template void encode_backward(const EncoderParams<S>&, const EncoderCache<S>&, const Vec<S>&, \
                                EncoderParams<S>&);                                             \
  template void add_into(EncoderParams<S>&, const EncoderParams<S>&);                           \
  template void set_zero(EncoderParams<S>&);                                                    \
  template bool all_finite(const EncoderParams<S>&);

DYNRET_INSTANTIATE(float)
DYNRET_INSTANTIATE(double)
#undef DYNRET_INSTANTIATE

template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<float> EncoderParams<float>::cast<float>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

}  // namespace dynret
