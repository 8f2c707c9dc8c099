#include "dynret/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "dynret/rng.hpp"

namespace dynret {

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("synth: ") + what);
  };
  require(num_docs >= 1, "num_docs must be >= 1");
  require(num_topics >= 1 && words_per_topic >= 1, "topics need at least one word");
  require(background_words >= 1, "background_words must be >= 1");
  require(min_doc_len >= 1 && min_doc_len <= max_doc_len, "need 1 <= min_doc_len <= max_doc_len");
  require(topic_share >= 0.0 && topic_share <= 1.0, "topic_share must be in [0, 1]");
  require(unique_words >= 0 && unique_repeats >= 1, "unique word counts must be nonnegative");
  require(unique_words * unique_repeats < min_doc_len, "unique words must leave room in every document");
  require(min_query_terms >= 1 && min_query_terms <= max_query_terms, "need 1 <= min_query_terms <= max_query_terms");
  require(query_pool >= 1, "query_pool must be >= 1");
  require(query_noise_terms >= 0, "query_noise_terms must be >= 0");
  require(train_fraction >= 0.0 && train_fraction <= 1.0, "train_fraction must be in [0, 1]");
  require(heldout_queries >= 0, "heldout_queries must be >= 0");
}

namespace {

std::string doc_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "doc%05d", i);
  return buf;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> make_document(const SynthConfig& c, int index, Rng& rng) {
  const auto topic = uniform_int(rng, 0, c.num_topics - 1);
  const auto len = uniform_int(rng, c.min_doc_len, c.max_doc_len);
  std::vector<std::string> words;
  for (int u = 0; u < c.unique_words; ++u)
    for (int r = 0; r < c.unique_repeats; ++r)
      words.push_back("d" + std::to_string(index) + "u" + std::to_string(u));
  while (static_cast<std::int64_t>(words.size()) < len) {
    if (uniform01(rng) < c.topic_share)
      words.push_back("t" + std::to_string(topic) + "w" + std::to_string(uniform_int(rng, 0, c.words_per_topic - 1)));
    else
      words.push_back("bg" + std::to_string(uniform_int(rng, 0, c.background_words - 1)));
  }
  std::shuffle(words.begin(), words.end(), rng);
  return words;
}

/// Highest tf-idf terms of a document, ties broken lexicographically.
std::vector<std::string> top_terms(const std::vector<std::string>& words,
                                   const std::map<std::string, int>& df, int num_docs, int limit) {
  std::map<std::string, int> tf;
  for (const auto& w : words) ++tf[w];
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [w, f] : tf)
    ranked.emplace_back(f * std::log(1.0 + static_cast<double>(num_docs) / df.at(w)), w);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < limit; ++i)
    out.push_back(ranked[i].second);
  return out;
}

std::string make_query(const SynthConfig& c, std::vector<std::string> picks, Rng& rng) {
  std::shuffle(picks.begin(), picks.end(), rng);
  const auto n = std::min<std::int64_t>(uniform_int(rng, c.min_query_terms, c.max_query_terms),
                                        static_cast<std::int64_t>(picks.size()));
  picks.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < c.query_noise_terms; ++i)
    picks.push_back("bg" + std::to_string(uniform_int(rng, 0, c.background_words - 1)));
  std::shuffle(picks.begin(), picks.end(), rng);
  return join(picks);
}

std::vector<std::string> every_other(const std::vector<std::string>& pool, std::size_t offset) {
  std::vector<std::string> out;
  for (auto i = offset; i < pool.size(); i += 2) out.push_back(pool[i]);
  return out;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& config) {
  config.validate();
  const int n = config.num_docs;
  SynthData data;
  std::vector<std::vector<std::string>> bodies;
  bodies.reserve(static_cast<std::size_t>(n));
  Rng doc_rng(derive_seed(config.seed, 0));
  for (int i = 0; i < n; ++i) bodies.push_back(make_document(config, i, doc_rng));

  // Zipf-distributed clicks over a random popularity order.
  std::vector<int> popularity(static_cast<std::size_t>(n));
  std::iota(popularity.begin(), popularity.end(), 0);
  Rng click_rng(derive_seed(config.seed, 1));
  std::shuffle(popularity.begin(), popularity.end(), click_rng);
  std::vector<std::int64_t> clicks(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r)
    clicks[static_cast<std::size_t>(popularity[static_cast<std::size_t>(r)])] =
        static_cast<std::int64_t>(std::llround(10000.0 / (r + 1)));

  for (int i = 0; i < n; ++i)
    data.docs.push_back({doc_name(i), join(bodies[static_cast<std::size_t>(i)]), clicks[static_cast<std::size_t>(i)]});

  std::map<std::string, int> df;
  for (const auto& body : bodies) {
    auto distinct = body;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (const auto& w : distinct) ++df[w];
  }

  std::vector<std::vector<std::string>> pools;
  for (const auto& body : bodies) pools.push_back(top_terms(body, df, n, config.query_pool));

  auto sample_docs = [&](std::uint64_t stream, std::size_t count) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, stream));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(order.size(), count));
    std::sort(order.begin(), order.end());
    return order;
  };
  const auto train = sample_docs(2, static_cast<std::size_t>(std::llround(config.train_fraction * n)));
  const auto heldout = sample_docs(3, static_cast<std::size_t>(config.heldout_queries));

  Rng query_rng(derive_seed(config.seed, 4));
  std::set<std::string> seen;
  int k = 0;
  for (int d : train) {
    const auto qid = "train" + std::to_string(k++);
    const auto text = make_query(config, every_other(pools[static_cast<std::size_t>(d)], 0), query_rng);
    for (const auto& w : tokenize(text)) seen.insert(w);
    data.train_queries.emplace_back(qid, text);
    data.train_qrels.emplace_back(qid, doc_name(d));
  }
  k = 0;
  for (int d : heldout) {
    auto terms = every_other(pools[static_cast<std::size_t>(d)], 1);
    std::erase_if(terms, [&](const std::string& w) { return seen.count(w) > 0; });
    if (terms.empty()) continue;
    const auto qid = "heldout" + std::to_string(k++);
    data.heldout_queries.emplace_back(qid, make_query(config, terms, query_rng));
    data.heldout_qrels.emplace_back(qid, doc_name(d));
  }
  return data;
}

SynthFiles synth_paths(const std::filesystem::path& dir) {
  return {dir / "docs.jsonl", dir / "train_queries.tsv", dir / "train_qrels.tsv",
          dir / "heldout_queries.tsv", dir / "heldout_qrels.tsv"};
}

void write_text_qrels(const std::filesystem::path& path, const std::vector<TextQRel>& qrels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [qid, doc] : qrels) out << qid << '\t' << doc << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

SynthFiles write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto files = synth_paths(dir);
  write_documents_jsonl(files.docs, data.docs);
  write_queries(files.train_queries, data.train_queries);
  write_text_qrels(files.train_qrels, data.train_qrels);
  write_queries(files.heldout_queries, data.heldout_queries);
  write_text_qrels(files.heldout_qrels, data.heldout_qrels);
  return files;
}

}  // namespace dynret
