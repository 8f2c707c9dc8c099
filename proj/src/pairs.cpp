#include "dynret/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace dynret {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kPassage: return "passage";
    case Task::kTerms: return "terms";
    case Task::kNgram: return "ngram";
    case Task::kQuery: return "query";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  if (name == "passage") return Task::kPassage;
  if (name == "terms") return Task::kTerms;
  if (name == "ngram") return Task::kNgram;
  if (name == "query") return Task::kQuery;
  throw Error("unknown task '" + std::string(name) + "'");
}

std::vector<TrainingPair> segment_passages(const Document& doc, int window) {
  if (window < 1) throw Error("passage window must be >= 1");
  std::vector<TrainingPair> out;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start < doc.tokens.size(); start += w) {
    auto end = std::min(doc.tokens.size(), start + w);
    out.push_back({TokenSeq(doc.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                            doc.tokens.begin() + static_cast<std::ptrdiff_t>(end)),
                   doc.internal_id, Task::kPassage});
  }
  return out;
}

TermWeights term_importance(const Document& doc, const Corpus& corpus) {
  TermWeights out;
  std::unordered_map<TokenId, std::size_t> slot;
  std::vector<double> tf;
  for (TokenId t : doc.tokens) {
    auto [it, inserted] = slot.try_emplace(t, out.tokens.size());
    if (inserted) {
      out.tokens.push_back(t);
      tf.push_back(0.0);
    }
    tf[it->second] += 1.0;
  }
  const double n_docs = static_cast<double>(corpus.size());
  out.weights.resize(out.tokens.size());
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    auto df = static_cast<double>(std::max<std::size_t>(1, corpus.document_frequency(out.tokens[i])));
    out.weights[i] = tf[i] * std::log(1.0 + n_docs / df);
  }
  return out;
}

std::vector<TrainingPair> sample_term_sets(const Document& doc, int m, const TermWeights& weights,
                                           Rng& rng, int min_terms, int max_terms) {
  if (m < 1) throw Error("term-set sample count must be >= 1");
  const auto distinct = static_cast<std::int64_t>(weights.tokens.size());
  const std::int64_t hi = std::min<std::int64_t>(max_terms, distinct);
  const std::int64_t lo = std::min<std::int64_t>(min_terms, hi);

  std::vector<TrainingPair> out;
  out.reserve(static_cast<std::size_t>(m));
  std::vector<double> w;
  std::vector<TokenId> pool;
  for (int s = 0; s < m; ++s) {
    const auto len = uniform_int(rng, lo, hi);
    w = weights.weights;
    pool = weights.tokens;
    TrainingPair pair{{}, doc.internal_id, Task::kTerms};
    pair.tokens.reserve(static_cast<std::size_t>(len));
    for (std::int64_t k = 0; k < len; ++k) {
      double total = std::accumulate(w.begin(), w.end(), 0.0);
      std::size_t pick = 0;
      if (total > 0.0) {
        double u = uniform01(rng) * total;
        pick = w.size() - 1;
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (w[i] <= 0.0) continue;
          if (u < w[i]) {
            pick = i;
            break;
          }
          u -= w[i];
        }
        // Rounding can leave u just past the last positive weight.
        while (w[pick] <= 0.0) --pick;
      } else {
        pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(w.size()) - 1));
      }
      pair.tokens.push_back(pool[pick]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      w.erase(w.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<TrainingPair> extract_ngram_pairs(const Corpus& corpus, int n, int min_df,
                                              std::int64_t max_ngrams) {
  if (n < 1) throw Error("ngram length must be >= 1");
  // n-gram -> ascending list of containing documents
  std::map<TokenSeq, std::vector<DocId>> postings;
  for (const auto& doc : corpus.documents()) {
    if (doc.tokens.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= doc.tokens.size(); ++i) {
      TokenSeq gram(doc.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    doc.tokens.begin() + static_cast<std::ptrdiff_t>(i) + n);
      auto& docs = postings[std::move(gram)];
      if (docs.empty() || docs.back() != doc.internal_id) docs.push_back(doc.internal_id);
    }
  }
  const auto& vocab = corpus.vocabulary();
  auto render = [&](const TokenSeq& gram) {
    std::vector<std::string_view> words;
    for (TokenId t : gram) words.push_back(vocab.token(t));
    return words;
  };
  std::vector<std::pair<const TokenSeq*, const std::vector<DocId>*>> selected;
  for (const auto& [gram, docs] : postings)
    if (docs.size() >= static_cast<std::size_t>(std::max(min_df, 1))) selected.emplace_back(&gram, &docs);
  std::sort(selected.begin(), selected.end(), [&](const auto& a, const auto& b) {
    if (a.second->size() != b.second->size()) return a.second->size() > b.second->size();
    return render(*a.first) < render(*b.first);
  });
  if (max_ngrams >= 0 && selected.size() > static_cast<std::size_t>(max_ngrams))
    selected.resize(static_cast<std::size_t>(max_ngrams));

  std::vector<TrainingPair> out;
  for (const auto& [gram, docs] : selected)
    for (DocId d : *docs) out.push_back({*gram, d, Task::kNgram});
  return out;
}

std::vector<TrainingPair> generate_pretrain_pairs(const Corpus& corpus, const PairConfig& config,
                                                  std::uint64_t seed) {
  std::vector<TrainingPair> out;
  auto clip = [&](TrainingPair p) {
    if (p.tokens.size() > static_cast<std::size_t>(config.max_len))
      p.tokens.resize(static_cast<std::size_t>(config.max_len));
    return p;
  };
  if (config.task_weights[0] > 0)
    for (const auto& doc : corpus.documents())
      for (auto& p : segment_passages(doc, config.window)) out.push_back(clip(std::move(p)));
  if (config.task_weights[1] > 0) {
    for (const auto& doc : corpus.documents()) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(doc.internal_id)));
      auto weights = term_importance(doc, corpus);
      for (auto& p : sample_term_sets(doc, config.samples_per_doc, weights, rng, config.min_terms,
                                      config.max_terms))
        out.push_back(clip(std::move(p)));
    }
  }
  if (config.task_weights[2] > 0) {
    auto cap = config.max_ngrams > 0 ? config.max_ngrams
                                     : 10 * static_cast<std::int64_t>(corpus.size());
    for (auto& p : extract_ngram_pairs(corpus, config.ngram_n, config.ngram_min_df, cap))
      out.push_back(clip(std::move(p)));
  }
  return out;
}

std::vector<TrainingPair> query_pairs(const QuerySet& queries, const QRels& qrels) {
  std::vector<TrainingPair> out;
  for (const auto& q : queries) {
    auto it = qrels.find(q.qid);
    if (it == qrels.end() || q.tokens.empty()) continue;
    out.push_back({q.tokens, it->second, Task::kQuery});
  }
  return out;
}

void validate_pairs(const std::vector<TrainingPair>& pairs, std::size_t num_docs) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.tokens.empty()) throw Error("training pair " + std::to_string(i) + " has no tokens");
    if (p.target < 0 || static_cast<std::size_t>(p.target) >= num_docs)
      throw Error("training pair " + std::to_string(i) + " targets docid " +
                  std::to_string(p.target) + " outside the corpus (|D|=" +
                  std::to_string(num_docs) + ")");
  }
}

void write_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs,
                 const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto& vocab = corpus.vocabulary();
  for (const auto& p : pairs) {
    out << task_name(p.task) << '\t' << corpus[p.target].external_id << '\t';
    for (std::size_t i = 0; i < p.tokens.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(p.tokens[i]);
    }
    out << '\n';
  }
}

std::vector<TrainingPair> read_pairs(const std::filesystem::path& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TrainingPair> out;
  std::string line;
  std::size_t lineno = 0;
  const auto& vocab = corpus.vocabulary();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected three tab-separated fields");
    TrainingPair p;
    p.task = parse_task(line.substr(0, t1));
    p.target = corpus.require(line.substr(t1 + 1, t2 - t1 - 1));
    std::istringstream words(line.substr(t2 + 1));
    std::string w;
    while (words >> w) p.tokens.push_back(vocab.lookup(w));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace dynret
