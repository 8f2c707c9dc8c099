#include "dynret/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "dynret/log.hpp"

namespace dynret {

Vocabulary::Vocabulary() {
  add("[PAD]");
  add("[UNK]");
  add("[CLS]");
}

TokenId Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& words) const {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(lookup(w));
  return out;
}

Corpus::Corpus(Vocabulary vocab, std::vector<Document> docs)
    : vocab_(std::move(vocab)), docs_(std::move(docs)) {
  by_external_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    auto& d = docs_[i];
    d.internal_id = static_cast<DocId>(i);
    if (d.tokens.empty()) throw Error("document '" + d.external_id + "' has no tokens");
    if (!by_external_.emplace(d.external_id, d.internal_id).second)
      throw Error("duplicate docid '" + d.external_id + "'");
  }
}

std::optional<DocId> Corpus::find(std::string_view external_id) const {
  auto it = by_external_.find(std::string(external_id));
  if (it == by_external_.end()) return std::nullopt;
  return it->second;
}

DocId Corpus::require(std::string_view external_id) const {
  auto id = find(external_id);
  if (!id) throw Error("unknown docid '" + std::string(external_id) + "'");
  return *id;
}

std::size_t Corpus::document_frequency(TokenId token) const {
  if (df_.empty()) {
    df_.assign(vocab_.size(), 0);
    std::vector<char> seen(vocab_.size(), 0);
    for (const auto& d : docs_) {
      for (TokenId t : d.tokens) {
        if (!seen[t]) {
          seen[t] = 1;
          ++df_[t];
        }
      }
      for (TokenId t : d.tokens) seen[t] = 0;
    }
  }
  return token >= 0 && static_cast<std::size_t>(token) < df_.size() ? df_[token] : 0;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  return vocab.encode(tokenize(text));
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_freq) {
  if (min_freq < 1) throw Error("min_freq must be >= 1");
  if (docs.empty()) throw Error("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& d : docs)
    for (const auto& w : d) ++freq[w];
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (auto& [w, f] : freq)
    if (f >= min_freq) kept.emplace_back(w, f);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [w, f] : kept) vocab.add(w);
  return vocab;
}

Corpus build_corpus(const std::vector<RawDocument>& records, int min_freq) {
  std::vector<std::vector<std::string>> words;
  words.reserve(records.size());
  for (const auto& r : records) {
    words.push_back(tokenize(r.text));
    if (words.back().empty()) throw Error("document '" + r.external_id + "' is empty after tokenization");
  }
  Vocabulary vocab = build_vocabulary(words, min_freq);
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Document d;
    d.external_id = records[i].external_id;
    d.tokens = vocab.encode(words[i]);
    d.click_count = records[i].clicks;
    docs.push_back(std::move(d));
  }
  return Corpus(std::move(vocab), std::move(docs));
}

std::vector<RawDocument> read_documents_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<RawDocument> out;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("docid") || !j["docid"].is_string())
      throw Error(where + ": missing string field \"docid\"");
    if (!j.contains("text") || !j["text"].is_string())
      throw Error(where + ": missing string field \"text\"");
    RawDocument r;
    r.external_id = j["docid"].get<std::string>();
    r.text = j["text"].get<std::string>();
    if (j.contains("clicks")) {
      if (!j["clicks"].is_number_integer() || j["clicks"].get<std::int64_t>() < 0)
        throw Error(where + ": \"clicks\" must be a nonnegative integer");
      r.clicks = j["clicks"].get<std::int64_t>();
    }
    if (!seen.emplace(r.external_id, lineno).second)
      throw Error(where + ": duplicate docid '" + r.external_id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

Corpus ingest_corpus(const std::filesystem::path& path, int min_freq) {
  return build_corpus(read_documents_jsonl(path), min_freq);
}

void write_documents_jsonl(const std::filesystem::path& path, const std::vector<RawDocument>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j = {{"docid", r.external_id}, {"text", r.text}};
    if (r.clicks != 0) j["clicks"] = r.clicks;
    out << j.dump() << '\n';
  }
}

namespace {

std::vector<std::pair<std::string, std::string>> read_tsv_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected two tab-separated fields");
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

}  // namespace

QuerySet read_queries(const std::filesystem::path& path, const Vocabulary& vocab) {
  QuerySet out;
  std::unordered_map<std::string, int> seen;
  for (auto& [qid, text] : read_tsv_pairs(path)) {
    if (!seen.emplace(qid, 0).second) throw Error(path.string() + ": duplicate qid '" + qid + "'");
    out.push_back({qid, tokenize(text, vocab)});
  }
  return out;
}

void write_queries(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>& queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [qid, text] : queries) out << qid << '\t' << text << '\n';
}

QRels read_qrels(const std::filesystem::path& path, const Corpus& corpus) {
  QRels out;
  for (auto& [qid, docid] : read_tsv_pairs(path)) {
    // Tolerate trailing columns (e.g. a relevance grade).
    auto doc = docid.substr(0, docid.find('\t'));
    DocId id = corpus.require(doc);
    if (!out.emplace(qid, id).second)
      log::warn("qrels: query '" + qid + "' has more than one positive; keeping the first");
  }
  return out;
}

void write_qrels(const std::filesystem::path& path, const QRels& qrels, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [qid, doc] : qrels) out << qid << '\t' << corpus[doc].external_id << '\n';
}

SubsetStrategy parse_subset_strategy(std::string_view name) {
  if (name == "top_click" || name == "top-click") return SubsetStrategy::kTopClick;
  if (name == "random") return SubsetStrategy::kRandom;
  throw Error("unknown subset strategy '" + std::string(name) + "'");
}

Subset sample_subset(const Corpus& corpus, const QRels& qrels, SubsetStrategy strategy,
                     std::int64_t size, std::uint64_t seed) {
  if (size <= 0) throw Error("subset size must be positive");
  if (static_cast<std::size_t>(size) > corpus.size())
    throw Error("subset size exceeds corpus size");

  std::vector<DocId> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  if (strategy == SubsetStrategy::kTopClick) {
    std::stable_sort(order.begin(), order.end(), [&](DocId a, DocId b) {
      return corpus[a].click_count > corpus[b].click_count;
    });
  } else {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  // Kept documents stay in their original relative order so that a larger
  // `size` only ever adds documents for a fixed strategy and seed.
  std::vector<DocId> kept(order.begin(), order.begin() + size);
  std::sort(kept.begin(), kept.end());

  std::vector<DocId> remap(corpus.size(), -1);
  std::vector<Document> docs;
  docs.reserve(kept.size());
  for (DocId old : kept) {
    remap[old] = static_cast<DocId>(docs.size());
    docs.push_back(corpus[old]);
  }
  Subset out{Corpus(corpus.vocabulary(), std::move(docs)), {}, kept};
  for (const auto& [qid, doc] : qrels)
    if (remap[doc] >= 0) out.qrels.emplace(qid, remap[doc]);
  return out;
}

QuerySet filter_queries(const QuerySet& queries, const QRels& qrels) {
  QuerySet out;
  for (const auto& q : queries)
    if (qrels.count(q.qid)) out.push_back(q);
  return out;
}

}  // namespace dynret
