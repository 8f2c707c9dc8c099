#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dynret/baselines.hpp"
#include "dynret/checkpoint.hpp"
#include "dynret/distributed.hpp"
#include "dynret/evalkit.hpp"
#include "dynret/experiment.hpp"
#include "dynret/retriever.hpp"
#include "dynret/synth.hpp"

namespace py = pybind11;
using namespace dynret;

namespace {

using Hits = std::vector<std::pair<std::string, double>>;

Hits to_hits(const RankedList& list, const Corpus& corpus) {
  Hits out;
  out.reserve(list.entries.size());
  for (const auto& e : list.entries) out.emplace_back(corpus[e.doc].external_id, e.score);
  return out;
}

/// A checkpoint-backed retriever bound to the corpus it indexes.
class PyRetriever {
 public:
  PyRetriever(const std::filesystem::path& checkpoint, const Corpus& corpus) : corpus_(corpus) {
    auto ck = load_checkpoint(checkpoint);
    if (ck.docids.num_docs() != corpus.size())
      throw Error("checkpoint covers " + std::to_string(ck.docids.num_docs()) + " documents, corpus has " +
                  std::to_string(corpus.size()));
    model_ = DynamicRetriever({std::move(ck.encoder), std::move(ck.docids)});
  }

  Hits search(const std::string& text, long long k) const {
    return to_hits(model_.retrieve({"q", tokenize(text, corpus_.vocabulary())}, k), corpus_);
  }

  /// (logits, probabilities) over every document in docid order.
  std::pair<Vec<float>, Vec<float>> score_all(const std::string& text) const {
    auto r = dynret::score_all(model_.encode_query(tokenize(text, corpus_.vocabulary())), model_.params().docids);
    return {std::move(r.logits), std::move(r.probs)};
  }

  std::size_t num_docs() const { return model_.num_docs(); }

 private:
  Corpus corpus_;
  DynamicRetriever model_;
};

std::map<std::string, double> report_dict(const MetricReport& r) {
  std::map<std::string, double> out(r.metrics.begin(), r.metrics.end());
  out["queries"] = static_cast<double>(r.query_count);
  return out;
}

}  // namespace

PYBIND11_MODULE(_dynret, m) {
  m.doc() = "Model-based document retrieval with a trainable docid index";

  py::register_exception<Error>(m, "DynretError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  m.def("run_cli", [](const std::vector<std::string>& args) { return run_cli(args); }, py::arg("args"),
        "Runs a dynret command line (without the program name) and returns its exit code.");

  py::class_<Corpus>(m, "Corpus")
      .def_static("load", [](const std::filesystem::path& p, int min_freq) { return ingest_corpus(p, min_freq); },
                  py::arg("path"), py::arg("min_freq") = 1)
      .def("__len__", &Corpus::size)
      .def("docids", [](const Corpus& c) {
        std::vector<std::string> out;
        for (const auto& d : c.documents()) out.push_back(d.external_id);
        return out;
      })
      .def_property_readonly("vocab_size", [](const Corpus& c) { return c.vocabulary().size(); });

  m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));

  m.def(
      "bm25_search",
      [](const Corpus& corpus, const std::string& text, long long k, double k1, double b) {
        const InvertedIndex index(corpus);
        return to_hits(bm25_retrieve(index, {"q", tokenize(text, corpus.vocabulary())}, k, {k1, b}), corpus);
      },
      py::arg("corpus"), py::arg("query"), py::arg("k") = 100, py::arg("k1") = 1.2, py::arg("b") = 0.75);

  py::class_<PyRetriever>(m, "Retriever")
      .def(py::init<const std::filesystem::path&, const Corpus&>(), py::arg("checkpoint"), py::arg("corpus"))
      .def("search", &PyRetriever::search, py::arg("query"), py::arg("k") = 100)
      .def("score_all", &PyRetriever::score_all, py::arg("query"))
      .def_property_readonly("num_docs", &PyRetriever::num_docs);

  m.def("recall_at_k", &recall_at_k, py::arg("run"), py::arg("qrels"), py::arg("k"));
  m.def("mrr", &mrr, py::arg("run"), py::arg("qrels"), py::arg("cutoff") = 100);
  m.def(
      "evaluate",
      [](const Run& run, const Judgments& qrels) { return report_dict(evaluate(run, qrels)); },
      py::arg("run"), py::arg("qrels"));
  m.def(
      "evaluate_files",
      [](const std::filesystem::path& run, const std::filesystem::path& qrels) {
        return report_dict(evaluate_run_file(run, qrels));
      },
      py::arg("run"), py::arg("qrels"));
  m.def("read_run", &read_run_file, py::arg("path"));

  m.def(
      "merge",
      [](const std::vector<std::vector<std::pair<long long, double>>>& lists, long long k, const std::string& mode) {
        std::vector<RankedList> ranked;
        for (const auto& l : lists) {
          RankedList r{"q", {}};
          for (const auto& [doc, score] : l) r.entries.push_back({static_cast<DocId>(doc), score});
          ranked.push_back(std::move(r));
        }
        std::vector<std::pair<long long, double>> out;
        for (const auto& e : merge_runs(ranked, k, parse_merge_mode(mode)).entries) out.emplace_back(e.doc, e.score);
        return out;
      },
      py::arg("lists"), py::arg("k"), py::arg("mode") = "raw",
      "Fuses per-shard (docid, score) lists for one query.");

  m.def(
      "synthesize",
      [](const std::filesystem::path& dir, std::uint64_t seed, int num_docs) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.num_docs = num_docs;
        const auto files = write_synthetic(generate_synthetic(cfg), dir);
        return std::map<std::string, std::filesystem::path>{{"docs", files.docs},
                                                            {"train_queries", files.train_queries},
                                                            {"train_qrels", files.train_qrels},
                                                            {"heldout_queries", files.heldout_queries},
                                                            {"heldout_qrels", files.heldout_qrels}};
      },
      py::arg("directory"), py::arg("seed") = 13, py::arg("num_docs") = 1000);

  m.def(
      "config_hash",
      [](const std::string& text) {
        ExperimentConfig c;
        c.apply_text(text);
        return c.hash();
      },
      py::arg("text"), "Hash of a key = value config after defaults are applied.");

  m.def(
      "gradcheck",
      [](double eps) {
        GradCheckConfig cfg;
        cfg.eps = eps;
        const auto r = gradcheck_retriever(cfg);
        return py::make_tuple(r.max_rel_error, r.per_tensor);
      },
      py::arg("epsilon") = 1e-4, "Returns (max relative error, [(tensor, error), ...]).");
}
