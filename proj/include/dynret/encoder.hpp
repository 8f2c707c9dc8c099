#pragma once

#include <string>
#include <vector>

#include "dynret/corpus.hpp"
#include "dynret/rng.hpp"
#include "dynret/tensor.hpp"

namespace dynret {

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 256;
  int max_len = 128;

  void validate() const;
  int head_dim() const { return d_model / heads; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Linear maps are stored input-major: y = x * W + b with W of shape (in, out).
template <class S>
struct LayerParams {
  Mat<S> ln1_gain, ln1_bias;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> w1, b1, w2, b2;
};

/// Pre-layer-norm transformer encoder with learned positions and CLS pooling.
template <class S>
struct EncoderParams {
  EncoderConfig config;
  Mat<S> token_embedding;     // |V| x d
  Mat<S> position_embedding;  // max_len x d
  std::vector<LayerParams<S>> layers;
  Mat<S> final_gain, final_bias;

  /// Weights ~ N(0, stddev), biases and offsets 0, layer-norm scales 1.
  static EncoderParams init(const EncoderConfig& config, Rng& rng, double stddev = 0.02);
  static EncoderParams zeros(const EncoderConfig& config);

  /// Every tensor in checkpoint order.
  std::vector<Mat<S>*> tensors();
  std::vector<const Mat<S>*> tensors() const;
  static std::vector<std::string> tensor_names(const EncoderConfig& config);

  std::size_t parameter_count() const;

  template <class T>
  EncoderParams<T> cast() const;
};

template <class S>
struct LayerCache {
  Mat<S> x_in;
  Mat<S> h1;
  Vec<S> mean1, rstd1;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;
  Mat<S> attn;
  Mat<S> x_mid;
  Mat<S> h2;
  Vec<S> mean2, rstd2;
  Mat<S> ff_pre, ff_act;
};

/// Activations retained by a forward pass for the matching backward pass.
template <class S>
struct EncoderCache {
  TokenSeq ids;  // CLS followed by the (truncated) input tokens
  std::vector<LayerCache<S>> layers;
  RowVec<S> cls_in;  // residual stream at CLS before the final layer norm
  S final_mean = 0, final_rstd = 0;
};

/// Tokens beyond max_len - 1 are dropped; an empty sequence encodes CLS alone.
TokenSeq encoder_input(const TokenSeq& tokens, int max_len);

template <class S>
Vec<S> encode(const EncoderParams<S>& params, const TokenSeq& tokens);

template <class S>
Vec<S> encode(const EncoderParams<S>& params, const TokenSeq& tokens, EncoderCache<S>& cache);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(CLS output).
template <class S>
void encode_backward(const EncoderParams<S>& params, const EncoderCache<S>& cache,
                     const Vec<S>& d_out, EncoderParams<S>& grads);

template <class S>
void add_into(EncoderParams<S>& dst, const EncoderParams<S>& src);
template <class S>
void set_zero(EncoderParams<S>& params);
template <class S>
bool all_finite(const EncoderParams<S>& params);

}  // namespace dynret
