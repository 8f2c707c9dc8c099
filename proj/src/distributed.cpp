#include "dynret/distributed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dynret {

ShardPlan partition(const Corpus& corpus, int groups, std::uint64_t seed, std::size_t common_docs) {
  if (groups <= 0) throw Error("group count must be positive");
  if (static_cast<std::size_t>(groups) > corpus.size())
    throw Error("group count exceeds the number of documents");
  if (common_docs > corpus.size()) throw Error("more common documents than documents");

  ShardPlan plan;
  plan.groups = groups;
  plan.seed = seed;
  std::vector<DocId> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  plan.group_of.assign(corpus.size(), 0);
  plan.local_id.assign(corpus.size(), 0);
  plan.members.assign(static_cast<std::size_t>(groups), {});
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    plan.group_of[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(groups));
  for (std::size_t d = 0; d < corpus.size(); ++d)
    plan.members[static_cast<std::size_t>(plan.group_of[d])].push_back(static_cast<DocId>(d));

  if (common_docs > 0) {
    std::vector<DocId> pick = order;
    std::shuffle(pick.begin(), pick.end(), rng);
    plan.common.assign(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(common_docs));
    std::sort(plan.common.begin(), plan.common.end());
    for (DocId d : plan.common)
      for (int g = 0; g < groups; ++g)
        if (plan.group_of[static_cast<std::size_t>(d)] != g) plan.members[static_cast<std::size_t>(g)].push_back(d);
  }
  // Local ids follow ascending global id within each group, replicas included.
  for (int g = 0; g < groups; ++g) {
    auto& m = plan.members[static_cast<std::size_t>(g)];
    std::sort(m.begin(), m.end());
    for (std::size_t i = 0; i < m.size(); ++i)
      if (plan.group_of[static_cast<std::size_t>(m[i])] == g) plan.local_id[static_cast<std::size_t>(m[i])] = static_cast<DocId>(i);
  }
  return plan;
}

Corpus shard_corpus(const Corpus& corpus, const ShardPlan& plan, int group) {
  std::vector<Document> docs;
  for (DocId d : plan.members.at(static_cast<std::size_t>(group))) docs.push_back(corpus[d]);
  return Corpus(corpus.vocabulary(), std::move(docs));
}

QRels shard_qrels(const QRels& qrels, const ShardPlan& plan, int group) {
  QRels out;
  for (const auto& [qid, doc] : qrels)
    if (plan.group_of.at(static_cast<std::size_t>(doc)) == group)
      out.emplace(qid, plan.local_id[static_cast<std::size_t>(doc)]);
  return out;
}

void write_manifest(const std::filesystem::path& path, const ShardPlan& plan, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "# groups=" << plan.groups << " seed=" << plan.seed << " common=" << plan.common.size() << '\n';
  for (int g = 0; g < plan.groups; ++g)
    for (DocId d : plan.members[static_cast<std::size_t>(g)])
      if (plan.group_of[static_cast<std::size_t>(d)] == g) out << g << '\t' << corpus[d].external_id << '\n';
  for (int g = 0; g < plan.groups; ++g)
    for (DocId d : plan.members[static_cast<std::size_t>(g)])
      if (plan.group_of[static_cast<std::size_t>(d)] != g) out << g << '\t' << corpus[d].external_id << '\n';
}

ShardPlan read_manifest(const std::filesystem::path& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  ShardPlan plan;
  {
    std::getline(in, line);
    std::istringstream header(line);
    std::string hash, groups, seed;
    header >> hash >> groups >> seed;
    if (hash != "#" || groups.rfind("groups=", 0) != 0 || seed.rfind("seed=", 0) != 0)
      throw Error(path.string() + ": missing '# groups=G seed=S' header");
    plan.groups = std::stoi(groups.substr(7));
    plan.seed = std::stoull(seed.substr(5));
  }
  if (plan.groups <= 0) throw Error(path.string() + ": group count must be positive");
  plan.group_of.assign(corpus.size(), -1);
  plan.local_id.assign(corpus.size(), 0);
  plan.members.assign(static_cast<std::size_t>(plan.groups), {});
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 'group \\t docid'");
    const int g = std::stoi(line.substr(0, tab));
    if (g < 0 || g >= plan.groups) throw Error(path.string() + ":" + std::to_string(lineno) + ": group out of range");
    const DocId d = corpus.require(line.substr(tab + 1));
    auto& home = plan.group_of[static_cast<std::size_t>(d)];
    if (home < 0) {
      home = g;
    } else if (std::find(plan.common.begin(), plan.common.end(), d) == plan.common.end()) {
      plan.common.push_back(d);
    }
    plan.members[static_cast<std::size_t>(g)].push_back(d);
  }
  for (std::size_t d = 0; d < corpus.size(); ++d)
    if (plan.group_of[d] < 0) throw Error(path.string() + ": document '" + corpus[static_cast<DocId>(d)].external_id + "' has no group");
  for (auto& m : plan.members) std::sort(m.begin(), m.end());
  for (int g = 0; g < plan.groups; ++g) {
    const auto& m = plan.members[static_cast<std::size_t>(g)];
    for (std::size_t i = 0; i < m.size(); ++i)
      if (plan.group_of[static_cast<std::size_t>(m[i])] == g) plan.local_id[static_cast<std::size_t>(m[i])] = static_cast<DocId>(i);
  }
  std::sort(plan.common.begin(), plan.common.end());
  return plan;
}

std::vector<ShardRun> shard_retrieve(const std::vector<DynamicRetriever>& models,
                                     const ShardPlan& plan, const QuerySet& queries,
                                     long long per_group_k) {
  checked_k(per_group_k);
  if (models.size() < static_cast<std::size_t>(plan.groups))
    throw Error("missing model for group " + std::to_string(models.size()));
  std::vector<ShardRun> out(static_cast<std::size_t>(plan.groups));
  for (int g = 0; g < plan.groups; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    const auto& members = plan.members[gi];
    if (models[gi].num_docs() != members.size())
      throw Error("model for group " + std::to_string(g) + " indexes " +
                  std::to_string(models[gi].num_docs()) + " docs, group has " +
                  std::to_string(members.size()));
    out[gi].group = g;
    out[gi].lists = models[gi].retrieve_all(queries, per_group_k);
    for (auto& list : out[gi].lists)
      for (auto& e : list.entries) e.doc = members[static_cast<std::size_t>(e.doc)];
  }
  return out;
}

MergeMode parse_merge_mode(std::string_view name) {
  if (name == "raw") return MergeMode::kRaw;
  if (name == "zscore") return MergeMode::kZScore;
  throw Error("unknown merge mode '" + std::string(name) + "'");
}

std::string_view merge_mode_name(MergeMode mode) {
  return mode == MergeMode::kRaw ? "raw" : "zscore";
}

RankedList merge_runs(const std::vector<RankedList>& lists, long long k, MergeMode mode) {
  const auto kk = checked_k(k);
  RankedList out;
  if (lists.empty()) return out;
  out.qid = lists.front().qid;
  std::vector<ScoredDoc> pool;
  for (const auto& list : lists) {
    if (list.qid != out.qid) throw Error("merge_runs: lists for different queries ('" + out.qid + "' vs '" + list.qid + "')");
    if (list.entries.empty()) continue;
    double mean = 0, sd = 0;
    if (mode == MergeMode::kZScore) {
      for (const auto& e : list.entries) mean += e.score;
      mean /= static_cast<double>(list.entries.size());
      for (const auto& e : list.entries) sd += (e.score - mean) * (e.score - mean);
      sd = std::sqrt(sd / static_cast<double>(list.entries.size()));
    }
    for (const auto& e : list.entries) {
      double s = e.score;
      if (mode == MergeMode::kZScore) s = sd > 0 ? (e.score - mean) / sd : 0.0;
      pool.push_back({e.doc, s});
    }
  }
  std::sort(pool.begin(), pool.end(), ranks_before);
  std::vector<char> seen;
  for (const auto& e : pool) {
    const auto d = static_cast<std::size_t>(e.doc);
    if (d >= seen.size()) seen.resize(d + 1, 0);
    if (seen[d]) continue;
    seen[d] = 1;
    out.entries.push_back(e);
    if (out.entries.size() == kk) break;
  }
  return out;
}

std::vector<RankedList> merge_shard_runs(const std::vector<ShardRun>& runs, long long k, MergeMode mode) {
  std::map<std::string, std::vector<RankedList>> by_qid;
  std::vector<std::string> order;
  for (const auto& run : runs)
    for (const auto& list : run.lists) {
      auto [it, inserted] = by_qid.try_emplace(list.qid);
      if (inserted) order.push_back(list.qid);
      it->second.push_back(list);
    }
  std::vector<RankedList> out;
  out.reserve(order.size());
  for (const auto& qid : order) out.push_back(merge_runs(by_qid[qid], k, mode));
  return out;
}

namespace {

/// Linear-interpolation quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<ScoreStats> score_distribution_stats(const std::vector<ShardRun>& runs) {
  if (runs.empty()) throw Error("score_distribution_stats: no shard runs");
  std::vector<ScoreStats> out;
  for (const auto& run : runs) {
    std::vector<double> scores;
    for (const auto& list : run.lists)
      for (const auto& e : list.entries) scores.push_back(e.score);
    ScoreStats s;
    s.group = run.group;
    s.count = scores.size();
    if (!scores.empty()) {
      std::sort(scores.begin(), scores.end());
      s.min = scores.front();
      s.max = scores.back();
      s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
      double ss = 0;
      for (double v : scores) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(scores.size()));
      for (std::size_t i = 0; i < 9; ++i) s.deciles[i] = quantile(scores, static_cast<double>(i + 1) / 10.0);
    }
    out.push_back(s);
  }
  return out;
}

ScoreDiagnosis diagnose(const std::vector<ScoreStats>& stats) {
  ScoreDiagnosis d;
  if (stats.empty()) return d;
  double lo = stats.front().mean, hi = lo, within = 0;
  for (const auto& s : stats) {
    lo = std::min(lo, s.mean);
    hi = std::max(hi, s.mean);
    within += s.stddev;
  }
  d.mean_spread = hi - lo;
  d.mean_within_std = within / static_cast<double>(stats.size());
  d.ratio = d.mean_within_std > 0 ? d.mean_spread / d.mean_within_std
                                   : (d.mean_spread > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  return d;
}

std::string render_stats_csv(const std::vector<ScoreStats>& stats) {
  std::ostringstream out;
  out << "group,mean,std,min,max,d1,d2,d3,d4,d5,d6,d7,d8,d9\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& s : stats) {
    out << s.group << ',' << fmt(s.mean) << ',' << fmt(s.stddev) << ',' << fmt(s.min) << ',' << fmt(s.max);
    for (double q : s.deciles) out << ',' << fmt(q);
    out << '\n';
  }
  return out.str();
}

}  // namespace dynret
