#include "dynret/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"
#include "json.hpp"

#include "dynret/checkpoint.hpp"
#include "dynret/evalkit.hpp"
#include "dynret/log.hpp"
#include "dynret/model.hpp"

namespace dynret {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw UsageError("'" + std::string(text) + "' is not a valid number");
  return value;
}

template <class T>
  requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
void parse_into(std::string_view text, T& out) {
  out = parse_number<T>(text);
}
void parse_into(std::string_view text, std::string& out) { out = std::string(text); }
void parse_into(std::string_view text, MergeMode& out) {
  try {
    out = parse_merge_mode(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}
void parse_into(std::string_view text, bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else throw UsageError("'" + std::string(text) + "' is not a boolean (true/false)");
}
void parse_into(std::string_view text, double& out) {
  // from_chars for double is not available everywhere; strtod with a full-consumption check.
  const std::string s(text);
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    throw UsageError("'" + s + "' is not a valid number");
}

template <class T>
  requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
std::string format(T v) {
  return std::to_string(v);
}
std::string format(const std::string& v) { return v; }
std::string format(MergeMode v) { return std::string(merge_mode_name(v)); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Ref>
Field field(std::string name, Ref ref) {
  return {std::move(name),
          [ref](ExperimentConfig& c, std::string_view v) { parse_into(v, ref(c)); },
          [ref](const ExperimentConfig& c) { return format(ref(const_cast<ExperimentConfig&>(c))); }};
}

#define DYNRET_FIELD(key, expr) field(key, [](ExperimentConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        DYNRET_FIELD("corpus", c.corpus),
        DYNRET_FIELD("queries", c.queries),
        DYNRET_FIELD("qrels", c.qrels),
        DYNRET_FIELD("min_freq", c.min_freq),
        DYNRET_FIELD("d_model", c.d_model),
        DYNRET_FIELD("layers", c.layers),
        DYNRET_FIELD("heads", c.heads),
        DYNRET_FIELD("d_ff", c.d_ff),
        DYNRET_FIELD("max_len", c.max_len),
        DYNRET_FIELD("window", c.pairs.window),
        DYNRET_FIELD("samples_per_doc", c.pairs.samples_per_doc),
        DYNRET_FIELD("min_terms", c.pairs.min_terms),
        DYNRET_FIELD("max_terms", c.pairs.max_terms),
        DYNRET_FIELD("ngram_n", c.pairs.ngram_n),
        DYNRET_FIELD("ngram_min_df", c.pairs.ngram_min_df),
        DYNRET_FIELD("max_ngrams", c.pairs.max_ngrams),
        DYNRET_FIELD("pair_max_len", c.pairs.max_len),
        DYNRET_FIELD("weight_passage", c.pairs.task_weights[0]),
        DYNRET_FIELD("weight_terms", c.pairs.task_weights[1]),
        DYNRET_FIELD("weight_ngram", c.pairs.task_weights[2]),
        DYNRET_FIELD("lr", c.optim.lr),
        DYNRET_FIELD("beta1", c.optim.beta1),
        DYNRET_FIELD("beta2", c.optim.beta2),
        DYNRET_FIELD("eps", c.optim.eps),
        DYNRET_FIELD("weight_decay", c.optim.weight_decay),
        DYNRET_FIELD("batch_size", c.batch_size),
        DYNRET_FIELD("pretrain_epochs", c.pretrain_epochs),
        DYNRET_FIELD("finetune_epochs", c.finetune_epochs),
        DYNRET_FIELD("dense_epochs", c.dense_epochs),
        DYNRET_FIELD("dense_lr", c.dense_lr),
        DYNRET_FIELD("finetune_lr", c.finetune_lr),
        DYNRET_FIELD("dense_shared", c.dense_shared),
        DYNRET_FIELD("patience", c.patience),
        DYNRET_FIELD("plateau_tol", c.plateau_tol),
        DYNRET_FIELD("seed", c.seed),
        DYNRET_FIELD("k", c.k),
        DYNRET_FIELD("threads", c.threads),
        DYNRET_FIELD("run_tag", c.run_tag),
        DYNRET_FIELD("groups", c.groups),
        DYNRET_FIELD("per_group_k", c.per_group_k),
        DYNRET_FIELD("merge", c.merge),
        DYNRET_FIELD("common_docs", c.common_docs),
        DYNRET_FIELD("synth_docs", c.synth.num_docs),
        DYNRET_FIELD("synth_topics", c.synth.num_topics),
        DYNRET_FIELD("synth_words_per_topic", c.synth.words_per_topic),
        DYNRET_FIELD("synth_background_words", c.synth.background_words),
        DYNRET_FIELD("synth_min_doc_len", c.synth.min_doc_len),
        DYNRET_FIELD("synth_max_doc_len", c.synth.max_doc_len),
        DYNRET_FIELD("synth_topic_share", c.synth.topic_share),
        DYNRET_FIELD("synth_unique_words", c.synth.unique_words),
        DYNRET_FIELD("synth_unique_repeats", c.synth.unique_repeats),
        DYNRET_FIELD("synth_min_query_terms", c.synth.min_query_terms),
        DYNRET_FIELD("synth_max_query_terms", c.synth.max_query_terms),
        DYNRET_FIELD("synth_query_pool", c.synth.query_pool),
        DYNRET_FIELD("synth_query_noise", c.synth.query_noise_terms),
        DYNRET_FIELD("synth_train_fraction", c.synth.train_fraction),
        DYNRET_FIELD("synth_heldout_queries", c.synth.heldout_queries),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.name < b.name; });
    return f;
  }();
  return table;
}

#undef DYNRET_FIELD

const Field& find_field(std::string_view key) {
  const auto& table = fields();
  auto it = std::lower_bound(table.begin(), table.end(), key,
                             [](const Field& f, std::string_view k) { return f.name < k; });
  if (it == table.end() || it->name != key) throw UsageError("unknown config key '" + std::string(key) + "'");
  return *it;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const auto& f = find_field(key);
  try {
    f.set(*this, trim(value));
  } catch (const UsageError& e) {
    throw UsageError("config key '" + std::string(key) + "': " + e.what());
  }
}

std::string ExperimentConfig::get(std::string_view key) const { return find_field(key).get(*this); }

void ExperimentConfig::apply_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_text(text.str(), path.string());
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid config: " + what);
  };
  require(min_freq >= 1, "min_freq must be >= 1");
  require(d_model >= 1 && layers >= 1 && heads >= 1 && d_ff >= 1, "model sizes must be positive");
  require(d_model % heads == 0, "d_model must be divisible by heads");
  require(max_len >= 2, "max_len must be >= 2");
  require(pairs.window >= 1, "window must be >= 1");
  require(pairs.samples_per_doc >= 0, "samples_per_doc must be >= 0");
  require(pairs.min_terms >= 1 && pairs.min_terms <= pairs.max_terms, "need 1 <= min_terms <= max_terms");
  require(pairs.ngram_n >= 1 && pairs.ngram_min_df >= 1, "ngram_n and ngram_min_df must be >= 1");
  require(pairs.max_ngrams >= 0, "max_ngrams must be >= 0");
  require(pairs.max_len >= 1, "pair_max_len must be >= 1");
  for (double w : pairs.task_weights) require(w >= 0, "task weights must be >= 0");
  require(pairs.task_weights[0] + pairs.task_weights[1] + pairs.task_weights[2] > 0,
          "at least one task weight must be positive");
  require(optim.lr > 0, "lr must be > 0");
  require(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1, "betas must be in [0, 1)");
  require(optim.eps > 0, "eps must be > 0");
  require(optim.weight_decay >= 0, "weight_decay must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(pretrain_epochs >= 0 && finetune_epochs >= 0 && dense_epochs >= 0, "epochs must be >= 0");
  require(dense_lr >= 0 && finetune_lr >= 0, "dense_lr and finetune_lr must be >= 0");
  require(patience >= 0 && plateau_tol >= 0, "patience and plateau_tol must be >= 0");
  require(k >= 1, "k must be >= 1");
  require(threads >= 0, "threads must be >= 0");
  require(!run_tag.empty() && run_tag.find_first_of(" \t") == std::string::npos, "run_tag must be one word");
  require(groups >= 1, "groups must be >= 1");
  require(per_group_k >= 1, "per_group_k must be >= 1");
  require(common_docs >= 0, "common_docs must be >= 0");
  try {
    synth.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  const auto text = canonical();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return buf;
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return names;
}

EncoderConfig ExperimentConfig::encoder(std::size_t vocab_size) const {
  EncoderConfig cfg{static_cast<int>(vocab_size), d_model, layers, heads, d_ff, max_len};
  cfg.validate();
  return cfg;
}

TrainConfig ExperimentConfig::train() const {
  TrainConfig cfg;
  cfg.optim = optim;
  cfg.finetune_lr = finetune_lr;
  cfg.batch_size = batch_size;
  cfg.pretrain_epochs = pretrain_epochs;
  cfg.finetune_epochs = finetune_epochs;
  cfg.plateau_tol = plateau_tol;
  cfg.patience = patience;
  cfg.task_weights = pairs.task_weights;
  cfg.seed = seed;
  return cfg;
}

TwoTowerConfig ExperimentConfig::two_tower() const {
  TwoTowerConfig cfg;
  cfg.optim = optim;
  if (dense_lr > 0) cfg.optim.lr = dense_lr;
  cfg.batch_size = std::max(2, batch_size);
  cfg.epochs = dense_epochs;
  cfg.shared = dense_shared;
  cfg.seed = seed;
  return cfg;
}

Dataset load_dataset(const ExperimentConfig& config, bool need_queries) {
  if (config.corpus.empty()) throw UsageError("no corpus configured (set 'corpus' or pass --corpus)");
  Dataset data;
  data.corpus = ingest_corpus(config.corpus, config.min_freq);
  if (need_queries && (config.queries.empty() || config.qrels.empty()))
    throw UsageError("this command needs 'queries' and 'qrels'");
  if (!config.queries.empty()) data.queries = read_queries(config.queries, data.corpus.vocabulary());
  if (!config.qrels.empty()) data.qrels = read_qrels(config.qrels, data.corpus);
  return data;
}

void write_meta(const fs::path& artifact, const ExperimentConfig& config, std::string_view command) {
  nlohmann::json meta;
  meta["artifact"] = artifact.filename().string();
  meta["command"] = std::string(command);
  meta["config_hash"] = config.hash();
  meta["seed"] = config.seed;
  fs::path path = artifact;
  path += ".meta.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << meta.dump(2) << '\n';
}

void write_train_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "stage,epoch,mean_loss,first_batch_loss,last_batch_loss\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f\n", e.stage.c_str(), e.epoch, e.mean_loss,
                  e.first_batch_loss, e.last_batch_loss);
    out << buf;
  }
}

DensePipeline run_dense_pipeline(const Corpus& corpus, const std::vector<TrainingPair>& pairs,
                                 const ExperimentConfig& config, std::uint64_t seed) {
  auto tt = config.two_tower();
  tt.seed = seed;
  DensePipeline out;
  out.model = train_two_tower(corpus, config.encoder(corpus.vocabulary().size()), pairs, tt);
  out.index = dense_encode_corpus(out.model.towers.doc_tower(), corpus);
  return out;
}

ShardModels train_shards(const Dataset& data, const ExperimentConfig& config) {
  ShardModels out;
  out.plan = partition(data.corpus, config.groups, config.seed, static_cast<std::size_t>(config.common_docs));
  for (int g = 0; g < config.groups; ++g) {
    const auto sub = shard_corpus(data.corpus, out.plan, g);
    const auto pairs = query_pairs(data.queries, shard_qrels(data.qrels, out.plan, g));
    if (pairs.size() < 2)
      throw Error("group " + std::to_string(g) + " has " + std::to_string(pairs.size()) +
                  " labelled queries; at least 2 are needed to train its dense tower");
    log::info("group " + std::to_string(g) + ": " + std::to_string(sub.size()) + " docs, " +
              std::to_string(pairs.size()) + " training queries");
    const auto dense = run_dense_pipeline(sub, pairs, config, derive_seed(config.seed, 1000 + g));
    auto tc = config.train();
    tc.seed = derive_seed(config.seed, 2000 + g);
    out.models.push_back(train_overdense(dense.model.towers.query, dense.index, pairs, tc).model);
  }
  return out;
}

namespace {

struct Outputs {
  std::vector<fs::path> paths;
  void add(const fs::path& p) { paths.push_back(p); }
};

struct Context {
  ExperimentConfig config;
  fs::path out_dir;
  std::string command;
  Outputs outputs;

  fs::path out(const std::string& name) {
    fs::create_directories(out_dir);
    return out_dir / name;
  }
  /// Records an artifact and writes its provenance sidecar.
  void artifact(const fs::path& p) {
    write_meta(p, config, command);
    outputs.add(p);
  }
};

std::vector<RawDocument> raw_subset(const std::vector<RawDocument>& raw, const Subset& subset) {
  std::vector<RawDocument> out;
  for (DocId old : subset.origin) out.push_back(raw[static_cast<std::size_t>(old)]);
  return out;
}

void cmd_synth(Context& ctx) {
  auto cfg = ctx.config.synth;
  cfg.seed = ctx.config.seed;
  const auto files = write_synthetic(generate_synthetic(cfg), ctx.out_dir);
  for (const auto& p : {files.docs, files.train_queries, files.train_qrels, files.heldout_queries, files.heldout_qrels})
    ctx.artifact(p);
}

void cmd_ingest(Context& ctx) {
  const auto data = load_dataset(ctx.config, false);
  const auto& vocab = data.corpus.vocabulary();
  const auto vocab_path = ctx.out("vocab.tsv");
  {
    std::ofstream out(vocab_path, std::ios::binary | std::ios::trunc);
    for (TokenId t = 0; t < static_cast<TokenId>(vocab.size()); ++t) out << t << '\t' << vocab.token(t) << '\n';
  }
  ctx.artifact(vocab_path);
  std::size_t tokens = 0;
  for (const auto& d : data.corpus.documents()) tokens += d.tokens.size();
  nlohmann::json stats;
  stats["documents"] = data.corpus.size();
  stats["vocabulary"] = vocab.size();
  stats["tokens"] = tokens;
  stats["queries"] = data.queries.size();
  stats["judged_queries"] = data.qrels.size();
  const auto stats_path = ctx.out("corpus_stats.json");
  std::ofstream(stats_path, std::ios::binary | std::ios::trunc) << stats.dump(2) << '\n';
  ctx.artifact(stats_path);
  std::cout << stats.dump(2) << '\n';
}

void cmd_subset(Context& ctx, const std::string& strategy, long long size) {
  SubsetStrategy s;
  try {
    s = parse_subset_strategy(strategy);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (size <= 0) throw UsageError("--size must be positive");
  const auto data = load_dataset(ctx.config, false);
  const auto raw = read_documents_jsonl(ctx.config.corpus);
  const auto subset = sample_subset(data.corpus, data.qrels, s, size, ctx.config.seed);
  const auto docs_path = ctx.out("docs.jsonl");
  write_documents_jsonl(docs_path, raw_subset(raw, subset));
  ctx.artifact(docs_path);
  if (!ctx.config.qrels.empty()) {
    const auto qrels_path = ctx.out("qrels.tsv");
    write_qrels(qrels_path, subset.qrels, subset.corpus);
    ctx.artifact(qrels_path);
  }
  if (!ctx.config.queries.empty()) {
    // Re-emit the surviving queries with their original text.
    std::ifstream in(ctx.config.queries);
    std::vector<std::pair<std::string, std::string>> kept;
    std::string line;
    while (std::getline(in, line)) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      if (subset.qrels.count(line.substr(0, tab))) kept.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    const auto q_path = ctx.out("queries.tsv");
    write_queries(q_path, kept);
    ctx.artifact(q_path);
  }
  log::info("subset keeps " + std::to_string(subset.corpus.size()) + " docs and " +
            std::to_string(subset.qrels.size()) + " judged queries");
}

std::vector<TrainingPair> pretrain_pairs_for(const Corpus& corpus, const ExperimentConfig& config,
                                             const std::string& pairs_file) {
  if (!pairs_file.empty()) return read_pairs(pairs_file, corpus);
  return generate_pretrain_pairs(corpus, config.pairs, config.seed);
}

void cmd_pairs(Context& ctx) {
  const auto data = load_dataset(ctx.config, false);
  const auto pairs = generate_pretrain_pairs(data.corpus, ctx.config.pairs, ctx.config.seed);
  std::array<std::size_t, 4> counts{};
  for (const auto& p : pairs) ++counts[static_cast<std::size_t>(p.task)];
  log::info("pairs: passage " + std::to_string(counts[0]) + ", terms " + std::to_string(counts[1]) +
            ", ngram " + std::to_string(counts[2]));
  const auto path = ctx.out("pretrain_pairs.tsv");
  write_pairs(path, pairs, data.corpus);
  ctx.artifact(path);
  if (!data.queries.empty() && !data.qrels.empty()) {
    const auto qpath = ctx.out("query_pairs.tsv");
    write_pairs(qpath, query_pairs(data.queries, data.qrels), data.corpus);
    ctx.artifact(qpath);
  }
}

void cmd_train_dense(Context& ctx) {
  const auto data = load_dataset(ctx.config, true);
  const auto dense = run_dense_pipeline(data.corpus, query_pairs(data.queries, data.qrels), ctx.config,
                                        ctx.config.seed);
  const auto q_path = ctx.out("query_tower.ckpt");
  save_checkpoint(q_path, dense.model.towers.query);
  ctx.artifact(q_path);
  if (dense.model.towers.doc) {
    const auto d_path = ctx.out("doc_tower.ckpt");
    save_checkpoint(d_path, *dense.model.towers.doc);
    ctx.artifact(d_path);
  }
  const auto idx_path = ctx.out("dense_index.bin");
  save_dense_index(idx_path, dense.index);
  ctx.artifact(idx_path);
  const auto log_path = ctx.out("train_log.csv");
  write_train_log(log_path, dense.model.log);
  ctx.artifact(log_path);
}

struct StageFlags {
  bool skip_pretrain = false;
  bool skip_finetune = false;
  bool freeze_encoder = false;
};

void save_model(Context& ctx, const DynamicRetriever& model, const std::vector<EpochLog>& log) {
  const auto path = ctx.out("model.ckpt");
  save_checkpoint(path, model.params().encoder, &model.params().docids);
  ctx.artifact(path);
  const auto log_path = ctx.out("train_log.csv");
  write_train_log(log_path, log);
  ctx.artifact(log_path);
}

void cmd_train_vanilla(Context& ctx, const StageFlags& flags, const std::string& pairs_file) {
  const auto data = load_dataset(ctx.config, !flags.skip_finetune);
  auto tc = ctx.config.train();
  tc.skip_pretrain = flags.skip_pretrain;
  tc.skip_finetune = flags.skip_finetune;
  tc.freeze_encoder = flags.freeze_encoder;
  const auto pretrain = flags.skip_pretrain ? std::vector<TrainingPair>{}
                                            : pretrain_pairs_for(data.corpus, ctx.config, pairs_file);
  const auto finetune = flags.skip_finetune ? std::vector<TrainingPair>{} : query_pairs(data.queries, data.qrels);
  const auto trained = train_vanilla(data.corpus.size(), ctx.config.encoder(data.corpus.vocabulary().size()),
                                     pretrain, finetune, tc);
  save_model(ctx, trained.model, trained.log);
}

void cmd_train_overdense(Context& ctx, const StageFlags& flags, const fs::path& dense_dir) {
  const auto data = load_dataset(ctx.config, !flags.skip_finetune);
  const auto tower = load_checkpoint(dense_dir / "query_tower.ckpt");
  const auto index = load_dense_index(dense_dir / "dense_index.bin");
  if (tower.encoder.config.vocab_size != static_cast<int>(data.corpus.vocabulary().size()))
    throw Error("query tower vocabulary does not match the corpus");
  auto tc = ctx.config.train();
  tc.skip_finetune = flags.skip_finetune;
  tc.freeze_encoder = flags.freeze_encoder;
  const auto pairs = flags.skip_finetune ? std::vector<TrainingPair>{} : query_pairs(data.queries, data.qrels);
  const auto trained = train_overdense(tower.encoder, index, pairs, tc);
  save_model(ctx, trained.model, trained.log);
}

struct RetrieveArgs {
  std::string checkpoint, dense_index, output = "run.trec";
  bool bm25 = false;
};

void cmd_retrieve(Context& ctx, const RetrieveArgs& args) {
  if (ctx.config.queries.empty()) throw UsageError("retrieve needs 'queries'");
  auto cfg = ctx.config;
  cfg.qrels.clear();
  const auto data = load_dataset(cfg, false);
  const auto k = ctx.config.k;
  std::vector<RankedList> lists(data.queries.size());
  if (args.bm25) {
    const InvertedIndex index(data.corpus);
    parallel_for(data.queries.size(), [&](std::size_t i) { lists[i] = bm25_retrieve(index, data.queries[i], k); });
  } else {
    if (args.checkpoint.empty()) throw UsageError("retrieve needs --checkpoint or --bm25");
    auto ckpt = load_checkpoint(args.checkpoint);
    if (ckpt.encoder.config.vocab_size != static_cast<int>(data.corpus.vocabulary().size()))
      throw Error("checkpoint vocabulary (" + std::to_string(ckpt.encoder.config.vocab_size) +
                  ") does not match the corpus (" + std::to_string(data.corpus.vocabulary().size()) + ")");
    if (!args.dense_index.empty()) {
      const auto index = load_dense_index(args.dense_index);
      if (static_cast<std::size_t>(index.rows()) != data.corpus.size())
        throw Error("dense index has " + std::to_string(index.rows()) + " rows for " +
                    std::to_string(data.corpus.size()) + " documents");
      parallel_for(data.queries.size(), [&](std::size_t i) {
        lists[i] = dense_retrieve(ckpt.encoder, index, data.queries[i], k);
      });
    } else {
      if (ckpt.docids.num_docs() == 0)
        throw UsageError("checkpoint has no docid matrix; pass --dense-index for a dense tower");
      if (ckpt.docids.num_docs() != data.corpus.size())
        throw Error("checkpoint covers " + std::to_string(ckpt.docids.num_docs()) + " documents, corpus has " +
                    std::to_string(data.corpus.size()));
      const DynamicRetriever model(RetrieverParams<float>{std::move(ckpt.encoder), std::move(ckpt.docids)});
      lists = model.retrieve_all(data.queries, k);
    }
  }
  const auto path = ctx.out(args.output);
  write_run_file(path, lists, data.corpus, ctx.config.run_tag);
  ctx.artifact(path);
}

int cmd_eval(Context& ctx, const std::string& run_path, bool csv) {
  if (ctx.config.qrels.empty()) throw UsageError("eval needs 'qrels'");
  const auto report = evaluate_run_file(run_path, ctx.config.qrels);
  std::cout << render_table(report);
  const auto path = ctx.out("metrics.csv");
  std::ofstream(path, std::ios::binary | std::ios::trunc) << render_csv(report);
  ctx.artifact(path);
  if (csv) std::cout << render_csv(report);
  if (report.has_nan()) {
    log::warn("a metric is NaN");
    return 1;
  }
  return 0;
}

fs::path group_checkpoint(const fs::path& dir, int g) {
  return dir / ("group_" + std::to_string(g) + ".ckpt");
}

void cmd_shard_train(Context& ctx) {
  const auto data = load_dataset(ctx.config, true);
  const auto shards = train_shards(data, ctx.config);
  const auto manifest = ctx.out("manifest.tsv");
  write_manifest(manifest, shards.plan, data.corpus);
  ctx.artifact(manifest);
  for (int g = 0; g < shards.plan.groups; ++g) {
    const auto& p = shards.models[static_cast<std::size_t>(g)].params();
    const auto path = group_checkpoint(ctx.out_dir, g);
    save_checkpoint(path, p.encoder, &p.docids);
    ctx.artifact(path);
  }
}

std::vector<ShardRun> load_shard_runs(const Dataset& data, const fs::path& shard_dir, long long per_group_k,
                                      ShardPlan& plan) {
  plan = read_manifest(shard_dir / "manifest.tsv", data.corpus);
  std::vector<DynamicRetriever> models;
  for (int g = 0; g < plan.groups; ++g) {
    auto ckpt = load_checkpoint(group_checkpoint(shard_dir, g));
    if (ckpt.docids.num_docs() != plan.group_size(g))
      throw Error("group " + std::to_string(g) + " checkpoint covers " + std::to_string(ckpt.docids.num_docs()) +
                  " documents, manifest lists " + std::to_string(plan.group_size(g)));
    models.emplace_back(RetrieverParams<float>{std::move(ckpt.encoder), std::move(ckpt.docids)});
  }
  return shard_retrieve(models, plan, data.queries, per_group_k);
}

Dataset queries_only(const ExperimentConfig& config) {
  if (config.queries.empty()) throw UsageError("this command needs 'queries'");
  auto cfg = config;
  cfg.qrels.clear();
  return load_dataset(cfg, false);
}

void cmd_shard_merge(Context& ctx, const fs::path& shard_dir) {
  const auto data = queries_only(ctx.config);
  ShardPlan plan;
  const auto runs = load_shard_runs(data, shard_dir, ctx.config.per_group_k, plan);
  for (const auto& run : runs) {
    const auto path = ctx.out("group_" + std::to_string(run.group) + ".trec");
    write_run_file(path, run.lists, data.corpus, ctx.config.run_tag);
    ctx.artifact(path);
  }
  const auto merged = merge_shard_runs(runs, ctx.config.k, ctx.config.merge);
  const auto path = ctx.out("merged_" + std::string(merge_mode_name(ctx.config.merge)) + ".trec");
  write_run_file(path, merged, data.corpus, ctx.config.run_tag);
  ctx.artifact(path);
}

void cmd_diag_scores(Context& ctx, const fs::path& shard_dir) {
  const auto data = queries_only(ctx.config);
  ShardPlan plan;
  const auto runs = load_shard_runs(data, shard_dir, ctx.config.per_group_k, plan);
  const auto stats = score_distribution_stats(runs);
  const auto path = ctx.out("score_stats.csv");
  std::ofstream(path, std::ios::binary | std::ios::trunc) << render_stats_csv(stats);
  ctx.artifact(path);
  const auto d = diagnose(stats);
  char buf[256];
  std::snprintf(buf, sizeof buf, "mean_spread %.6f\nmean_within_std %.6f\nratio %.6f\n", d.mean_spread,
                d.mean_within_std, d.ratio);
  std::cout << render_stats_csv(stats) << buf;
}

int cmd_gradcheck(double eps, std::size_t coords) {
  GradCheckConfig cfg;
  cfg.eps = eps;
  cfg.coords_per_tensor = coords;
  GradCheckResult r;
  try {
    r = gradcheck_retriever(cfg);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  char buf[160];
  for (const auto& [name, err] : r.per_tensor) {
    std::snprintf(buf, sizeof buf, "%-24s %.3e\n", name.c_str(), err);
    std::cout << buf;
  }
  std::snprintf(buf, sizeof buf, "max relative error %.3e (%s, %zu coordinates)\n", r.max_rel_error,
                r.worst_tensor.c_str(), r.checked);
  std::cout << buf;
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Model-based document retrieval with a trainable docid index", "dynret"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = ".", corpus, queries, qrels;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("--config", config_path, "Flat key = value config file");
  app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("--out-dir", out_dir, "Directory for every output artifact");
  app.add_option("--set", overrides, "Override a config key: key=value (repeatable)");
  app.add_option("--corpus", corpus, "Documents JSONL");
  app.add_option("--queries", queries, "Queries TSV");
  app.add_option("--qrels", qrels, "QRels TSV");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  app.add_flag("--quiet", quiet, "Suppress progress logging");

  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic corpus, queries and qrels");
  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and write its vocabulary and statistics");
  auto* subset = app.add_subcommand("subset", "Sample a top-click or random document subset");
  std::string strategy;
  long long size = 0;
  subset->add_option("--strategy", strategy, "top_click or random")->required();
  subset->add_option("--size", size, "Number of documents to keep")->required();
  auto* pairs = app.add_subcommand("pairs", "Generate self-supervised pre-training pairs");
  auto* train_dense = app.add_subcommand("train-dense", "Train the two-tower dense baseline and its index");

  StageFlags flags;
  std::string pairs_file, dense_dir;
  auto* vanilla = app.add_subcommand("train-vanilla", "Pre-train and fine-tune a retriever from random docids");
  vanilla->add_flag("--skip-pretrain", flags.skip_pretrain, "Skip the pre-training stage");
  vanilla->add_flag("--skip-finetune", flags.skip_finetune, "Skip query fine-tuning");
  vanilla->add_flag("--freeze-encoder", flags.freeze_encoder, "Train only the docid matrix");
  vanilla->add_option("--pairs", pairs_file, "Pre-training pairs TSV (generated when absent)");
  auto* overdense = app.add_subcommand("train-overdense", "Initialize docids from a dense index, then fine-tune");
  overdense->add_option("--dense-dir", dense_dir, "Output directory of train-dense")->required();
  overdense->add_flag("--skip-finetune", flags.skip_finetune, "Keep the dense initialization as is");
  overdense->add_flag("--freeze-encoder", flags.freeze_encoder, "Train only the docid matrix");

  RetrieveArgs rargs;
  auto* retrieve = app.add_subcommand("retrieve", "Write a TREC run for the configured queries");
  retrieve->add_option("--checkpoint", rargs.checkpoint, "Retriever or query tower checkpoint");
  retrieve->add_option("--dense-index", rargs.dense_index, "Dense index, for two-tower retrieval");
  retrieve->add_flag("--bm25", rargs.bm25, "Use BM25 instead of a trained model");
  retrieve->add_option("--output", rargs.output, "Run file name inside --out-dir");
  std::optional<long long> depth;
  retrieve->add_option("--k", depth, "Retrieval depth (overrides the config)");

  std::string run_path;
  bool csv = false;
  auto* eval = app.add_subcommand("eval", "Recall@k and MRR of a run against qrels");
  eval->add_option("--run", run_path, "TREC run file")->required();
  eval->add_flag("--csv", csv, "Also print the CSV rendering");

  std::string shard_dir, merge_mode;
  auto* shard_train = app.add_subcommand("shard-train", "Partition the corpus and train one retriever per group");
  auto* shard_merge = app.add_subcommand("shard-merge", "Retrieve per group and merge the ranked lists");
  shard_merge->add_option("--shard-dir", shard_dir, "Output directory of shard-train")->required();
  shard_merge->add_option("--mode", merge_mode, "raw or zscore");
  auto* diag = app.add_subcommand("diag-scores", "Per-group score distribution report");
  diag->add_option("--shard-dir", shard_dir, "Output directory of shard-train")->required();

  double gc_eps = 1e-4;
  std::size_t gc_coords = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient on a tiny model");
  gradcheck->add_option("--epsilon", gc_eps, "Central difference step");
  gradcheck->add_option("--coords", gc_coords, "Coordinates checked per tensor (0 = all)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    log::set_quiet(quiet);
    Context ctx;
    ctx.out_dir = out_dir;
    ctx.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) ctx.config.load(config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
      ctx.config.set(trim(o.substr(0, eq)), o.substr(eq + 1));
    }
    if (seed) ctx.config.seed = *seed;
    if (threads) ctx.config.threads = *threads;
    if (!corpus.empty()) ctx.config.corpus = corpus;
    if (!queries.empty()) ctx.config.queries = queries;
    if (!qrels.empty()) ctx.config.qrels = qrels;
    if (!merge_mode.empty()) ctx.config.set("merge", merge_mode);
    if (depth) ctx.config.k = *depth;
    ctx.config.validate();
    set_num_threads(static_cast<unsigned>(ctx.config.threads));
    log::info(ctx.command + ": config " + ctx.config.hash() + " seed " + std::to_string(ctx.config.seed));

    int code = 0;
    if (*synth) cmd_synth(ctx);
    else if (*ingest) cmd_ingest(ctx);
    else if (*subset) cmd_subset(ctx, strategy, size);
    else if (*pairs) cmd_pairs(ctx);
    else if (*train_dense) cmd_train_dense(ctx);
    else if (*vanilla) cmd_train_vanilla(ctx, flags, pairs_file);
    else if (*overdense) cmd_train_overdense(ctx, flags, dense_dir);
    else if (*retrieve) cmd_retrieve(ctx, rargs);
    else if (*eval) code = cmd_eval(ctx, run_path, csv);
    else if (*shard_train) cmd_shard_train(ctx);
    else if (*shard_merge) cmd_shard_merge(ctx, shard_dir);
    else if (*diag) cmd_diag_scores(ctx, shard_dir);
    else if (*gradcheck) code = cmd_gradcheck(gc_eps, gc_coords);

    for (const auto& p : ctx.outputs.paths) std::cout << "wrote " << p.string() << '\n';
    return code;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace dynret
