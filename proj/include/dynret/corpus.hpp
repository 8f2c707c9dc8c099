#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dynret {

using TokenId = std::int32_t;
using DocId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Raised for malformed inputs and violated preconditions across the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kReserved = 3;

  Vocabulary();

  /// Appends `token` if absent; returns its index either way.
  TokenId add(const std::string& token);

  TokenId lookup(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  TokenSeq encode(const std::vector<std::string>& words) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Document {
  DocId internal_id = 0;
  std::string external_id;
  TokenSeq tokens;
  std::int64_t click_count = 0;
};

struct Query {
  std::string qid;
  TokenSeq tokens;
};

using QuerySet = std::vector<Query>;

/// qid -> positive internal docid. Ordered so iteration is deterministic.
using QRels = std::map<std::string, DocId>;

/// A raw record before tokenization and vocabulary lookup.
struct RawDocument {
  std::string external_id;
  std::string text;
  std::int64_t clicks = 0;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(Vocabulary vocab, std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](DocId id) const { return docs_.at(static_cast<std::size_t>(id)); }
  const std::vector<Document>& documents() const { return docs_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  std::optional<DocId> find(std::string_view external_id) const;
  DocId require(std::string_view external_id) const;

  /// Number of documents containing `token`; computed lazily once.
  std::size_t document_frequency(TokenId token) const;

 private:
  Vocabulary vocab_;
  std::vector<Document> docs_;
  std::unordered_map<std::string, DocId> by_external_;
  mutable std::vector<std::size_t> df_;
};

/// Lowercase, replace every non-alphanumeric byte by a space, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

/// Index order: frequency descending, then lexicographic.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_freq);

/// Tokenizes, builds the vocabulary and assigns internal ids in record order.
Corpus build_corpus(const std::vector<RawDocument>& records, int min_freq = 1);

/// One JSON object per line: {"docid": str, "text": str, "clicks": int?}.
std::vector<RawDocument> read_documents_jsonl(const std::filesystem::path& path);
Corpus ingest_corpus(const std::filesystem::path& path, int min_freq = 1);
void write_documents_jsonl(const std::filesystem::path& path, const std::vector<RawDocument>& records);

/// `qid \t text` lines.
QuerySet read_queries(const std::filesystem::path& path, const Vocabulary& vocab);
void write_queries(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>& queries);

/// `qid \t external_docid` lines. A second positive for a qid is dropped with a warning.
QRels read_qrels(const std::filesystem::path& path, const Corpus& corpus);
void write_qrels(const std::filesystem::path& path, const QRels& qrels, const Corpus& corpus);

enum class SubsetStrategy { kTopClick, kRandom };

SubsetStrategy parse_subset_strategy(std::string_view name);

struct Subset {
  Corpus corpus;
  QRels qrels;
  /// new internal id -> old internal id
  std::vector<DocId> origin;
};

Subset sample_subset(const Corpus& corpus, const QRels& qrels, SubsetStrategy strategy,
                     std::int64_t size, std::uint64_t seed);

/// Keeps only the queries that appear in `qrels`, in their original order.
QuerySet filter_queries(const QuerySet& queries, const QRels& qrels);

}  // namespace dynret
