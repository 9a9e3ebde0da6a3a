#include <filesystem>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protst/checkpoint.hpp"
#include "protst/pipeline.hpp"
#include "protst/tokenizer.hpp"

namespace py = pybind11;
using namespace protst;

namespace {

std::vector<std::uint8_t> to_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::bytes from_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

py::array_t<double> to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict report_dict(const EvaluationReport& r) {
  py::dict d;
  d["node_id"] = r.node_id;
  d["kind"] = r.kind;
  d["primary_metric"] = r.primary_metric;
  d["pool_size"] = r.pool_size;
  d["metrics"] = r.metrics;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Byte-level transformer pretraining and sequential task transfer on a synthetic binary corpus.";
  m.attr("__version__") = std::string(kVersion);

  // Messages start with the error class name, e.g. "Checksum: ...".
  py::register_exception<Error>(m, "Error");

  py::module_ v = m.def_submodule("vocab", "Token ids");
  v.attr("CLS") = Vocabulary::kCls;
  v.attr("SEP") = Vocabulary::kSep;
  v.attr("PAD") = Vocabulary::kPad;
  v.attr("UNK") = Vocabulary::kUnk;
  v.attr("MASK") = Vocabulary::kMask;
  v.attr("SIZE") = Vocabulary::kSize;

  py::class_<TokenSequence>(m, "TokenSequence")
      .def_readonly("ids", &TokenSequence::ids)
      .def_readonly("attention_mask", &TokenSequence::attention_mask)
      .def_readonly("raw_len", &TokenSequence::raw_len)
      .def("content_len", &TokenSequence::content_len)
      .def("content_mask", &TokenSequence::content_mask)
      .def("__len__", &TokenSequence::length);

  m.def("encode", [](const py::bytes& b, std::size_t max_len) { return encode(to_bytes(b), max_len); },
        py::arg("data"), py::arg("max_len"));
  m.def("decode", [](const TokenSequence& s) { return from_bytes(decode(s)); });
  m.def(
      "apply_mlm_mask",
      [](const TokenSequence& seq, double p_mask, double p_replace, std::uint64_t seed) {
        const auto r = apply_mlm_mask(seq, p_mask, p_replace, seed);
        return py::make_tuple(r.sequence, r.plan.masked_positions, r.plan.originals);
      },
      py::arg("sequence"), py::arg("p_mask") = 0.2, py::arg("p_replace") = 0.5, py::arg("seed") = 1,
      "Returns (masked sequence, masked positions, original ids).");

  py::class_<LabeledRecord>(m, "Record")
      .def_readonly("record_id", &LabeledRecord::record_id)
      .def_property_readonly("is_function", [](const LabeledRecord& r) { return r.kind == RecordKind::kFunction; })
      .def_readonly("shard", &LabeledRecord::shard)
      .def_readonly("file_key", &LabeledRecord::file_key)
      .def_readonly("project_key", &LabeledRecord::project_key)
      .def_property_readonly("bytes", [](const LabeledRecord& r) { return from_bytes(r.bytes); })
      .def_readonly("inst_labels", &LabeledRecord::inst_labels)
      .def_readonly("func_labels", &LabeledRecord::func_labels)
      .def_readonly("arg_class", &LabeledRecord::arg_class)
      .def_readonly("ret_type", &LabeledRecord::ret_type)
      .def_readonly("name_words", &LabeledRecord::name_words)
      .def_readonly("family_id", &LabeledRecord::family_id)
      .def("to_line", &record_to_line);

  m.def("shard_names", &shard_names);
  m.def(
      "generate_shard",
      [](const std::string& shard, std::uint64_t seed, std::optional<std::size_t> files) {
        CorpusConfig cfg;
        cfg.seed = seed;
        if (files)
          for (auto& [_, n] : cfg.files_per_shard) n = *files;
        return generate_shard(shard, cfg);
      },
      py::arg("shard"), py::arg("seed") = 7, py::arg("files") = py::none());
  m.def("read_corpus", &read_corpus);
  m.def("write_corpus", &write_corpus);
  m.def("corpus_digest", &corpus_digest);
  m.def("reference_decode", [](const py::bytes& b) {
    const auto d = reference_decode(to_bytes(b));
    return py::make_tuple(d.inst, d.func, d.arg_marker_counts);
  });

  m.def("macro_f1", [](const std::vector<int>& truth, const std::vector<int>& pred) {
    return macro_f1(ConfusionTally::from(truth, pred)).macro;
  });
  m.def("micro_f1", &micro_f1);
  m.def("cosine", &protst::cosine);
  m.def(
      "rank_pool",
      [](std::vector<double> query, std::vector<std::vector<double>> candidates, std::vector<std::int64_t> ids,
         std::int64_t ground_truth) {
        return rank_pool(PoolQuery{std::move(query), std::move(candidates), std::move(ids), ground_truth});
      },
      py::arg("query"), py::arg("candidates"), py::arg("candidate_ids"), py::arg("ground_truth"));
  m.def("mrr_from_ranks", &mrr_from_ranks);
  m.def("recall_from_ranks", &recall_from_ranks);
  m.def("read_report", [](const std::string& path) { return report_dict(EvaluationReport::read(path)); });

  py::class_<ParameterCheckpoint>(m, "Checkpoint")
      .def_readonly("node_id", &ParameterCheckpoint::node_id)
      .def_readonly("head_kind", &ParameterCheckpoint::head_kind)
      .def_readonly("lineage", &ParameterCheckpoint::lineage)
      .def_readonly("digest", &ParameterCheckpoint::digest)
      .def_readonly("fingerprint", &ParameterCheckpoint::fingerprint)
      .def_property_readonly("config", [](const ParameterCheckpoint& c) { return backbone_config_text(c.config); })
      .def("parameter_names",
           [](const ParameterCheckpoint& c) {
             std::vector<std::string> names;
             for (const auto& [name, _] : c.params.entries()) names.push_back(name);
             return names;
           })
      .def("parameter", [](const ParameterCheckpoint& c, const std::string& name) { return to_array(c.params.get(name)); });
  m.def("load_checkpoint", &load_checkpoint);

  m.def(
      "run_graph",
      [](const std::string& graph_path, const std::string& out_dir, std::optional<std::string> data_root, bool force) {
        RunOptions options;
        options.out_dir = out_dir;
        options.force = force;
        options.data_root = data_root.value_or(std::filesystem::path(graph_path).parent_path().string());
        if (options.data_root.empty()) options.data_root = ".";
        const auto graph = read_task_graph(graph_path);
        std::map<std::string, NodeOutcome> outcomes;
        {
          py::gil_scoped_release release;
          outcomes = run_graph(graph, options);
        }
        py::dict result;
        for (const auto& [id, o] : outcomes) {
          auto d = report_dict(o.report);
          d["reused"] = o.reused;
          d["lineage"] = o.checkpoint.lineage;
          result[py::str(id)] = d;
        }
        return result;
      },
      py::arg("graph"), py::arg("out_dir"), py::arg("data_root") = py::none(), py::arg("force") = false,
      "Runs a task graph file and returns each node's held-out report.");
}
