#include "dynret/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "dynret/log.hpp"

namespace dynret {

InvertedIndex::InvertedIndex(const Corpus& corpus) {
  if (corpus.empty()) throw Error("cannot index an empty corpus");
  postings_.resize(corpus.vocabulary().size());
  doc_length_.reserve(corpus.size());
  std::size_t total = 0;
  std::vector<std::int32_t> tf(corpus.vocabulary().size(), 0);
  for (const auto& doc : corpus.documents()) {
    for (TokenId t : doc.tokens) ++tf[static_cast<std::size_t>(t)];
    for (TokenId t : doc.tokens) {
      auto& count = tf[static_cast<std::size_t>(t)];
      if (count > 0) {
        postings_[static_cast<std::size_t>(t)].push_back({doc.internal_id, count});
        count = 0;
      }
    }
    doc_length_.push_back(doc.tokens.size());
    total += doc.tokens.size();
  }
  avgdl_ = static_cast<double>(total) / static_cast<double>(corpus.size());
}

std::span<const Posting> InvertedIndex::postings(TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= postings_.size()) return {};
  return postings_[static_cast<std::size_t>(token)];
}

std::int32_t InvertedIndex::term_frequency(TokenId token, DocId doc) const {
  auto list = postings(token);
  auto it = std::lower_bound(list.begin(), list.end(), doc,
                             [](const Posting& p, DocId d) { return p.doc < d; });
  return it != list.end() && it->doc == doc ? it->tf : 0;
}

double bm25_idf(std::size_t num_docs, std::size_t df) {
  const double n = static_cast<double>(num_docs), f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

namespace {

TokenSeq distinct_terms(const TokenSeq& query) {
  TokenSeq out;
  std::unordered_set<TokenId> seen;
  for (TokenId t : query)
    if (seen.insert(t).second) out.push_back(t);
  return out;
}

double bm25_term(double idf, double tf, double dl, double avgdl, const Bm25Params& p) {
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * dl / avgdl));
}

}  // namespace

double bm25_score(const InvertedIndex& index, const TokenSeq& query, DocId doc,
                  const Bm25Params& params) {
  double score = 0.0;
  const auto dl = static_cast<double>(index.doc_length(doc));
  for (TokenId t : distinct_terms(query)) {
    const auto tf = index.term_frequency(t, doc);
    if (tf == 0) continue;
    score += bm25_term(bm25_idf(index.num_docs(), index.document_frequency(t)), tf, dl,
                       index.average_doc_length(), params);
  }
  return score;
}

std::vector<double> bm25_score_all(const InvertedIndex& index, const TokenSeq& query,
                                   const Bm25Params& params) {
  std::vector<double> scores(index.num_docs(), 0.0);
  for (TokenId t : distinct_terms(query)) {
    auto list = index.postings(t);
    if (list.empty()) continue;
    const double idf = bm25_idf(index.num_docs(), list.size());
    for (const auto& p : list)
      scores[static_cast<std::size_t>(p.doc)] +=
          bm25_term(idf, p.tf, static_cast<double>(index.doc_length(p.doc)),
                    index.average_doc_length(), params);
  }
  return scores;
}

RankedList bm25_retrieve(const InvertedIndex& index, const Query& query, long long k,
                         const Bm25Params& params) {
  const auto kk = checked_k(k);
  auto scores = bm25_score_all(index, query.tokens, params);
  return {query.qid, top_k<double>(scores, kk, {}, true)};
}

template <class S>
S in_batch_loss(const EncoderParams<S>& query_tower, const EncoderParams<S>& doc_tower,
                const Corpus& corpus, std::span<const TrainingPair> batch,
                EncoderParams<S>* query_grads, EncoderParams<S>* doc_grads) {
  const std::size_t b = batch.size();
  if (b < 2) throw Error("in-batch negatives need a batch of at least 2 pairs");
  const bool shared_grads = query_grads == doc_grads;
  const int d = query_tower.config.d_model;

  std::vector<EncoderCache<S>> qc(b), dc(b);
  Mat<S> q(b, d), docs(b, d);
  parallel_for(2 * b, [&](std::size_t j) {
    if (j < b) {
      q.row(j) = encode(query_tower, batch[j].tokens, qc[j]).transpose();
    } else {
      const auto i = j - b;
      docs.row(i) = encode(doc_tower, corpus[batch[i].target].tokens, dc[i]).transpose();
    }
  });

  Mat<S> scores = q * docs.transpose();
  Mat<S> dscores = Mat<S>::Zero(b, b);
  S total = 0;
  const S inv_b = S(1) / static_cast<S>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<char> masked(b, 0);
    for (std::size_t j = 0; j < b; ++j)
      masked[j] = j != i && batch[j].target == batch[i].target;
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < b; ++j)
      if (!masked[j]) mx = std::max(mx, scores(i, j));
    S z = 0;
    for (std::size_t j = 0; j < b; ++j)
      if (!masked[j]) z += std::exp(scores(i, j) - mx);
    const S loss = std::log(z) - (scores(i, i) - mx);
    if (!std::isfinite(static_cast<double>(loss)))
      throw Error("non-finite two-tower loss at batch index " + std::to_string(i));
    total += loss;
    for (std::size_t j = 0; j < b; ++j)
      if (!masked[j]) dscores(i, j) = std::exp(scores(i, j) - mx) / z * inv_b;
    dscores(i, i) -= inv_b;
  }
  if (!query_grads && !doc_grads) return total * inv_b;

  Mat<S> dq = dscores * docs;
  Mat<S> dd = dscores.transpose() * q;
  constexpr std::size_t kChunk = 8;
  const std::size_t chunks = (2 * b + kChunk - 1) / kChunk;
  std::vector<EncoderParams<S>> qpart, dpart;
  for (std::size_t c = 0; c < chunks; ++c) {
    qpart.push_back(EncoderParams<S>::zeros(query_tower.config));
    if (!shared_grads) dpart.push_back(EncoderParams<S>::zeros(doc_tower.config));
  }
  parallel_for(chunks, [&](std::size_t c) {
    for (std::size_t j = c * kChunk; j < std::min(2 * b, (c + 1) * kChunk); ++j) {
      if (j < b) {
        if (query_grads) encode_backward<S>(query_tower, qc[j], dq.row(j).transpose(), qpart[c]);
      } else if (doc_grads) {
        const auto i = j - b;
        encode_backward<S>(doc_tower, dc[i], dd.row(i).transpose(), shared_grads ? qpart[c] : dpart[c]);
      }
    }
  });
  for (std::size_t c = 0; c < chunks; ++c) {
    if (query_grads) add_into(*query_grads, qpart[c]);
    if (!shared_grads && doc_grads) add_into(*doc_grads, dpart[c]);
  }
  return total * inv_b;
}

template float in_batch_loss(const EncoderParams<float>&, const EncoderParams<float>&, const Corpus&,
                             std::span<const TrainingPair>, EncoderParams<float>*,
                             EncoderParams<float>*);
template double in_batch_loss(const EncoderParams<double>&, const EncoderParams<double>&,
                              const Corpus&, std::span<const TrainingPair>, EncoderParams<double>*,
                              EncoderParams<double>*);

TwoTowerResult train_two_tower(const Corpus& corpus, const EncoderConfig& encoder,
                               const std::vector<TrainingPair>& pairs,
                               const TwoTowerConfig& config) {
  if (pairs.empty()) throw Error("two-tower training needs at least one query-document pair");
  if (config.batch_size < 2) throw Error("in-batch negatives need batch_size >= 2");
  validate_pairs(pairs, corpus.size());
  Rng rng(derive_seed(config.seed, 0));
  TwoTowerResult out;
  out.towers.query = EncoderParams<float>::init(encoder, rng);
  if (!config.shared) out.towers.doc = EncoderParams<float>::init(encoder, rng);

  auto& qp = out.towers.query;
  auto q_state = OptimizerState<float>::for_tensors(std::as_const(qp).tensors());
  auto d_state = out.towers.doc
                     ? OptimizerState<float>::for_tensors(std::as_const(*out.towers.doc).tensors())
                     : OptimizerState<float>{};
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(config.seed, 1));
  std::vector<TrainingPair> batch;
  auto qg = EncoderParams<float>::zeros(encoder);
  auto dg = EncoderParams<float>::zeros(encoder);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog entry{"two-tower", epoch, 0.0, 0.0, 0.0};
    double sum = 0.0;
    std::size_t steps = 0;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      if (end - start < 2) break;  // a trailing singleton has no negatives
      batch.clear();
      for (auto i = start; i < end; ++i) batch.push_back(pairs[order[i]]);
      set_zero(qg);
      float loss;
      if (out.towers.doc) {
        set_zero(dg);
        loss = in_batch_loss<float>(qp, *out.towers.doc, corpus, batch, &qg, &dg);
        adamw_step(out.towers.doc->tensors(), std::as_const(dg).tensors(), d_state, config.optim);
      } else {
        loss = in_batch_loss<float>(qp, qp, corpus, batch, &qg, &qg);
      }
      if (!all_finite(qg)) throw Error("two-tower: non-finite gradient at epoch " + std::to_string(epoch));
      adamw_step(qp.tensors(), std::as_const(qg).tensors(), q_state, config.optim);
      if (steps == 0) entry.first_batch_loss = loss;
      entry.last_batch_loss = loss;
      sum += loss;
      ++steps;
    }
    entry.mean_loss = steps ? sum / static_cast<double>(steps) : 0.0;
    out.log.push_back(entry);
    log::info("two-tower epoch " + std::to_string(epoch) + " loss " + std::to_string(entry.mean_loss));
  }
  return out;
}

Mat<float> dense_encode_corpus(const EncoderParams<float>& doc_tower, const Corpus& corpus) {
  Mat<float> out(static_cast<Eigen::Index>(corpus.size()), doc_tower.config.d_model);
  parallel_for(corpus.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) =
        encode(doc_tower, corpus[static_cast<DocId>(i)].tokens).transpose();
  });
  return out;
}

RankedList dense_retrieve(const EncoderParams<float>& query_tower, const Mat<float>& dense_index,
                          const Query& query, long long k) {
  const auto kk = checked_k(k);
  const Vec<float> scores = dot_scores(dense_index, encode(query_tower, query.tokens));
  return {query.qid, top_k<float>(std::span<const float>(scores.data(), scores.size()), kk)};
}

}  // namespace dynret
