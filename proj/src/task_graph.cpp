#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "protst/digest.hpp"
#include "protst/pipeline.hpp"

namespace protst {

namespace {

[[noreturn]] void graph_error(const std::string& message) { fail(ErrorCode::kGraphInvalid, message); }

[[noreturn]] void line_error(std::size_t line_no, const std::string& message) {
  graph_error("graph line " + std::to_string(line_no) + ": " + message);
}

std::pair<std::string, std::string> key_value(const std::string& token, std::size_t line_no) {
  const auto eq = token.find('=');
  if (eq == std::string::npos || eq == 0) line_error(line_no, "expected name=value, got '" + token + "'");
  return {token.substr(0, eq), token.substr(eq + 1)};
}

void apply_backbone_setting(TaskGraph& g, const std::string& key, const std::string& value, std::size_t line_no) {
  try {
    auto& b = g.backbone;
    if (key == "hidden") b.hidden_dim = std::stoul(value);
    else if (key == "layers") b.num_layers = std::stoul(value);
    else if (key == "heads") b.num_heads = std::stoul(value);
    else if (key == "ffn") b.ffn_dim = std::stoul(value);
    else if (key == "max_len") b.max_len = std::stoul(value);
    else if (key == "dropout") b.dropout = std::stod(value);
    else if (key == "activation") b.activation = parse_activation(value);
    else if (key == "norm") {
      if (value != "pre" && value != "post") line_error(line_no, "norm must be pre or post");
      b.norm_order = value == "pre" ? NormOrder::kPreNorm : NormOrder::kPostNorm;
    } else if (key == "seed") g.init_seed = std::stoull(value);
    else line_error(line_no, "unknown backbone setting " + key);
  } catch (const std::logic_error&) {
    line_error(line_no, "bad value for " + key + ": " + value);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kGraphInvalid) throw;
    line_error(line_no, e.what());
  }
}

void apply_stage(StageConfig& cfg, const std::string& key, const std::string& value, std::size_t line_no) {
  try {
    if (!apply_stage_setting(cfg, key, value)) line_error(line_no, "unknown setting " + key);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kGraphInvalid) throw;
    line_error(line_no, e.what());
  }
}

}  // namespace

const TaskNode& TaskGraph::node(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n;
  graph_error("no node named " + id);
}

bool TaskGraph::contains(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return true;
  return false;
}

void TaskGraph::validate() const {
  if (nodes.empty()) graph_error("graph has no nodes");
  try {
    backbone.validate();
  } catch (const Error& e) {
    graph_error(std::string("backbone: ") + e.what());
  }
  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (n.id.empty()) graph_error("node with an empty id");
    if (!ids.insert(n.id).second) graph_error("duplicate node id " + n.id);
    if (n.data.empty()) graph_error("node " + n.id + " has no data");
    const auto& s = n.stage;
    if (s.epochs == 0 || s.batch_size == 0) graph_error("node " + n.id + ": epochs and batch must be positive");
    if (!(s.train_ratio > 0.0 && s.train_ratio < 1.0)) graph_error("node " + n.id + ": ratio must lie in (0, 1)");
    if (s.max_len < 3 || s.max_len > backbone.max_len) {
      graph_error("node " + n.id + ": max_len must lie in [3, " + std::to_string(backbone.max_len) + "]");
    }
  }
  for (const auto& n : nodes)
    if (!n.parent.empty() && !ids.count(n.parent)) graph_error("node " + n.id + " names unknown parent " + n.parent);
  for (const auto& n : nodes) {
    if (n.parent.empty()) continue;
    // Every node has one parent, so walking up must reach a root within |nodes| steps.
    std::string at = n.parent;
    for (std::size_t steps = 0; !at.empty(); ++steps) {
      if (at == n.id || steps > nodes.size()) graph_error("cycle through node " + n.id);
      at = node(at).parent;
    }
  }
  std::vector<std::string> roots;
  for (const auto& n : nodes)
    if (n.parent.empty()) roots.push_back(n.id);
  if (roots.size() != 1) {
    graph_error("graph needs exactly one root, found " + std::to_string(roots.size()) +
                (roots.empty() ? "" : " (" + roots[0] + ", " + roots.back() + ")"));
  }
  if (node(roots[0]).kind != HeadKind::kMlm) graph_error("root node " + roots[0] + " must be an MLM node");
}

std::vector<std::size_t> TaskGraph::topological_order() const {
  validate();
  std::vector<std::size_t> order;
  std::set<std::string> done;
  while (order.size() < nodes.size()) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (done.count(n.id) || (!n.parent.empty() && !done.count(n.parent))) continue;
      order.push_back(i);
      done.insert(n.id);
    }
  }
  return order;
}

std::vector<std::string> TaskGraph::lineage(const std::string& id) const {
  std::vector<std::string> out;
  for (auto at = node(id).parent; !at.empty(); at = node(at).parent) out.insert(out.begin(), at);
  return out;
}

std::vector<std::string> TaskGraph::children(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (n.parent == id) out.push_back(n.id);
  return out;
}

std::string TaskGraph::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "graph " << name << "\n";
  os << "backbone hidden=" << backbone.hidden_dim << " layers=" << backbone.num_layers
     << " heads=" << backbone.num_heads << " ffn=" << backbone.ffn_dim << " max_len=" << backbone.max_len
     << " dropout=" << backbone.dropout << " activation=" << activation_name(backbone.activation)
     << " norm=" << (backbone.norm_order == NormOrder::kPreNorm ? "pre" : "post") << " seed=" << init_seed << "\n";
  for (const auto& n : nodes) {
    os << "node " << n.id << " kind=" << head_kind_short(n.kind) << " data=" << n.data;
    if (!n.parent.empty()) os << " parent=" << n.parent;
    os << " " << n.stage.to_text() << "\n";
  }
  return os.str();
}

TaskGraph parse_task_graph(const std::string& text) {
  TaskGraph g;
  StageConfig defaults;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    const auto& directive = tokens[0];
    if (directive == "graph") {
      if (tokens.size() != 2) line_error(line_no, "expected 'graph <name>'");
      g.name = tokens[1];
    } else if (directive == "backbone") {
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto [k, v] = key_value(tokens[i], line_no);
        apply_backbone_setting(g, k, v, line_no);
      }
    } else if (directive == "defaults") {
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto [k, v] = key_value(tokens[i], line_no);
        apply_stage(defaults, k, v, line_no);
      }
    } else if (directive == "node") {
      if (tokens.size() < 2 || tokens[1].find('=') != std::string::npos) line_error(line_no, "node needs an id");
      TaskNode n;
      n.id = tokens[1];
      n.stage = defaults;
      bool has_kind = false;
      for (std::size_t i = 2; i < tokens.size(); ++i) {
        const auto [k, v] = key_value(tokens[i], line_no);
        if (k == "kind") {
          try {
            n.kind = parse_head_kind(v);
          } catch (const Error&) {
            line_error(line_no, "unknown kind " + v);
          }
          has_kind = true;
        } else if (k == "data") {
          n.data = v;
        } else if (k == "parent") {
          n.parent = v;
        } else {
          apply_stage(n.stage, k, v, line_no);
        }
      }
      if (!has_kind) line_error(line_no, "node " + n.id + " lacks kind=");
      g.nodes.push_back(std::move(n));
    } else {
      line_error(line_no, "unknown directive " + directive);
    }
  }
  g.validate();
  return g;
}

TaskGraph read_task_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read graph " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_task_graph(ss.str());
}

std::string node_fingerprint(const TaskGraph& graph, const TaskNode& node, const std::string& parent_digest,
                             const std::string& data_digest) {
  std::ostringstream os;
  os << backbone_config_text(graph.backbone) << "init_seed=" << graph.init_seed << "\n"
     << "kind=" << head_kind_name(node.kind) << "\n"
     << "stage=" << node.stage.to_text() << "\n"
     << "parent=" << parent_digest << "\n"
     << "data=" << data_digest << "\n";
  return to_hex(sha256(os.str()));
}

std::map<std::string, NodeOutcome> run_graph(const TaskGraph& graph, const RunOptions& options) {
  namespace fs = std::filesystem;
  const auto order = graph.topological_order();
  fs::create_directories(options.out_dir);

  struct Corpus {
    std::vector<LabeledRecord> records;
    std::string digest;
  };
  std::map<std::string, Corpus> corpora;
  std::map<std::string, NodeOutcome> outcomes;
  std::map<std::string, std::set<std::string>> consumed;  // records trained on by a node and its ancestors

  for (auto idx : order) {
    const auto& node = graph.nodes[idx];
    const auto data_path = (fs::path(options.data_root) / node.data).string();
    auto& corpus = corpora[data_path];
    if (corpus.digest.empty()) {
      corpus.records = read_corpus(data_path);
      corpus.digest = corpus_digest(corpus.records);
    }
    const ParameterCheckpoint* teacher = node.parent.empty() ? nullptr : &outcomes.at(node.parent).checkpoint;
    const auto fingerprint = node_fingerprint(graph, node, teacher ? teacher->digest : "", corpus.digest);

    // A descendant never trains on records an ancestor already trained on.
    const auto& excluded = node.parent.empty() ? std::set<std::string>{} : consumed.at(node.parent);
    std::vector<LabeledRecord> records;
    for (const auto& r : corpus.records)
      if (!excluded.count(r.record_id)) records.push_back(r);
    const auto dataset = derive_task_dataset(records, node.kind, Windowing{node.stage.max_len});
    auto cfg = node.stage;
    if (options.threads) cfg.threads = *options.threads;

    const auto ckpt_path = (fs::path(options.out_dir) / (node.id + ".ckpt")).string();
    const auto report_path = (fs::path(options.out_dir) / (node.id + ".report")).string();
    const auto log_path = (fs::path(options.out_dir) / (node.id + ".log")).string();
    NodeOutcome outcome;
    if (!options.force && fs::exists(ckpt_path) && fs::exists(report_path)) {
      auto existing = load_checkpoint(ckpt_path);
      if (existing.fingerprint != fingerprint) {
        fail(ErrorCode::kIncompatibleCheckpoint, "node " + node.id + ": " + ckpt_path +
                                                     " was produced from different inputs; pass force or use a fresh output directory");
      }
      outcome.checkpoint = std::move(existing);
      outcome.report = EvaluationReport::read(report_path);
      outcome.reused = true;
      for (const auto& s : stage_split(dataset, cfg).first) {
        outcome.log.train_records.insert(s.record_id.substr(0, s.record_id.find("#w")));
      }
    }
    if (!outcome.reused) {
      StageInit init;
      init.teacher = teacher;
      init.config = graph.backbone;
      init.seed = graph.init_seed;
      auto result = train_stage(init, dataset, cfg, node.kind, {node.id, fingerprint});
      outcome.checkpoint = std::move(result.checkpoint);
      outcome.report = std::move(result.report);
      outcome.log = std::move(result.log);
      save_checkpoint(outcome.checkpoint, ckpt_path);
      outcome.report.write(report_path);
      std::ofstream(log_path) << outcome.log.to_text();
    }
    auto used = node.parent.empty() ? std::set<std::string>{} : consumed.at(node.parent);
    used.insert(outcome.log.train_records.begin(), outcome.log.train_records.end());
    consumed[node.id] = std::move(used);
    if (options.on_node) options.on_node(node.id, outcome);
    outcomes.emplace(node.id, std::move(outcome));
  }
  return outcomes;
}

}  // namespace protst
