#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "protst/digest.hpp"
#include "protst/pipeline.hpp"

namespace protst::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    case ErrorCode::kGraphInvalid:
      return kExitGraph;
    case ErrorCode::kChecksum:
    case ErrorCode::kVersion:
    case ErrorCode::kIncompatibleCheckpoint:
      return kExitCheckpoint;
    case ErrorCode::kInternal:
      return kExitFailure;
    default:
      return kExitData;
  }
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<std::string, std::string> split_setting(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

StageConfig stage_from(const std::vector<std::string>& settings) {
  StageConfig cfg;
  for (const auto& s : settings) {
    const auto [k, v] = split_setting(s);
    if (!apply_stage_setting(cfg, k, v)) throw UsageError("unknown stage setting " + k);
  }
  return cfg;
}

BackboneConfig backbone_from(const std::vector<std::string>& settings) {
  // Reuses the graph grammar so the two spellings cannot drift apart.
  std::string text = "backbone";
  for (const auto& s : settings) text += " " + s;
  // The placeholder node must fit any backbone length.
  text += "\ndefaults max_len=3\nnode root kind=mlm data=-\n";
  try {
    return parse_task_graph(text).backbone;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return to_hex(sha256(bytes));
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) {
    add("tool", "protst");
    add("version", std::string(kVersion));
    add("command", std::move(command));
    std::string joined;
    for (const auto& a : args) joined += (joined.empty() ? "" : " ") + a;
    add("argv", joined);
  }
  void add(const std::string& name, const std::string& value) { lines_.push_back(name + "=" + value); }
  void add_multiline(const std::string& prefix, const std::string& text) {
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);)
      if (!line.empty()) lines_.push_back(prefix + line);
  }
  void output(const std::string& path) { add("output", path + " sha256=" + file_digest(path)); }
  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::kIo, "cannot write manifest " + path);
    for (const auto& l : lines_) out << l << "\n";
  }

 private:
  std::vector<std::string> lines_;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::kIo, "cannot create output directory " + dir);
}

TaskDataset load_dataset(const std::string& path, HeadKind kind, const StageConfig& cfg) {
  return derive_task_dataset(read_corpus(path), kind, Windowing{cfg.max_len});
}

std::string join_list(const std::vector<std::string>& items, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

void print_sweep(std::ostream& out, const std::vector<EvaluationReport>& reports) {
  std::set<std::string> columns;
  for (const auto& r : reports)
    for (const auto& [name, _] : r.metrics) columns.insert(name);
  out << std::left << std::setw(8) << "pool";
  for (const auto& c : columns) out << std::setw(12) << c;
  out << "\n" << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << std::setw(8) << r.pool_size;
    for (const auto& c : columns) {
      auto it = r.metrics.find(c);
      if (it == r.metrics.end()) out << std::setw(12) << "-";
      else out << std::setw(12) << it->second;
    }
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

// --- subcommands -------------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::uint64_t seed = 7;
  double scale = 1.0;
  std::vector<std::string> shards;
  std::size_t variants = 3;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (!(a.scale > 0.0)) throw UsageError("--scale must be positive");
  CorpusConfig config;
  config.seed = a.seed;
  config.similarity_variants = a.variants;
  for (auto& [_, n] : config.files_per_shard) {
    n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * a.scale)));
  }
  auto shards = a.shards.empty() ? shard_names() : a.shards;
  for (const auto& s : shards)
    if (!config.files_per_shard.count(s)) throw UsageError("unknown shard " + s);
  ensure_dir(a.out);
  Manifest m("generate", argv);
  m.add("seed", std::to_string(a.seed));
  m.add("scale", std::to_string(a.scale));
  m.add("variants", std::to_string(a.variants));
  for (const auto& s : shards) {
    const auto records = generate_shard(s, config);
    const auto path = (fs::path(a.out) / (s + ".corpus")).string();
    write_corpus(records, path);
    std::size_t files = 0;
    for (const auto& r : records) files += r.kind == RecordKind::kFile;
    const auto digest = corpus_digest(records);
    out << "shard " << s << ": " << records.size() << " records (" << files << " files) sha256=" << digest << "\n";
    m.add("shard." + s + ".files_requested", std::to_string(config.files_per_shard.at(s)));
    m.output(path);
  }
  m.write((fs::path(a.out) / "generate.manifest").string());
  return kExitOk;
}

struct TrainArgs {
  std::string data, kind, out, init, node;
  std::vector<std::string> settings, backbone;
  std::uint64_t init_seed = 1;
  std::size_t threads = 0;
};

int cmd_train_stage(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto kind = parse_head_kind(a.kind);
  auto cfg = stage_from(a.settings);
  if (a.threads) cfg.threads = a.threads;
  const auto node = a.node.empty() ? head_kind_short(kind) : a.node;
  const auto dataset = load_dataset(a.data, kind, cfg);
  ensure_dir(a.out);
  const auto ckpt_path = (fs::path(a.out) / (node + ".ckpt")).string();
  if (fs::exists(ckpt_path)) fail(ErrorCode::kIo, ckpt_path + " already exists; checkpoints are never overwritten");

  StageInit init;
  std::optional<ParameterCheckpoint> teacher;
  if (!a.init.empty()) {
    teacher = load_checkpoint(a.init);
    init.teacher = &*teacher;
    init.config = a.backbone.empty() ? teacher->config : backbone_from(a.backbone);
  } else {
    init.config = backbone_from(a.backbone);
  }
  init.seed = a.init_seed;
  const auto fingerprint = to_hex(sha256(backbone_config_text(init.config) + cfg.to_text() + head_kind_name(kind) +
                                         (teacher ? teacher->digest : "") + file_digest(a.data)));
  StageHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " loss=" << e.train_loss;
    if (e.metric) out << " " << head_kind_short(kind) << "=" << *e.metric;
    out << "\n" << std::flush;
  };
  const auto result = train_stage(init, dataset, cfg, kind, {node, fingerprint}, hooks);
  save_checkpoint(result.checkpoint, ckpt_path);
  const auto report_path = (fs::path(a.out) / (node + ".report")).string();
  const auto log_path = (fs::path(a.out) / (node + ".log")).string();
  result.report.write(report_path);
  std::ofstream(log_path) << result.log.to_text();
  out << result.report.to_table();

  Manifest m("train-stage", argv);
  m.add("kind", head_kind_name(kind));
  m.add("node", node);
  m.add("data", a.data + " sha256=" + file_digest(a.data));
  m.add("init", a.init.empty() ? "fresh seed=" + std::to_string(a.init_seed) : a.init + " digest=" + teacher->digest);
  m.add("stage", cfg.to_text());
  m.add_multiline("", backbone_config_text(init.config));
  m.add("lineage", join_list(result.checkpoint.lineage, ","));
  m.output(ckpt_path);
  m.output(report_path);
  m.output(log_path);
  m.write((fs::path(a.out) / (node + ".manifest")).string());
  return kExitOk;
}

struct GraphArgs {
  std::string graph, data_root, out;
  std::size_t threads = 0;
  bool force = false;
};

int cmd_run_graph(const GraphArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto graph = read_task_graph(a.graph);
  RunOptions options;
  options.data_root = a.data_root.empty() ? fs::path(a.graph).parent_path().string() : a.data_root;
  if (options.data_root.empty()) options.data_root = ".";
  options.out_dir = a.out;
  options.force = a.force;
  if (a.threads) options.threads = a.threads;
  options.on_node = [&](const std::string& id, const NodeOutcome& o) {
    out << "node " << id << (o.reused ? " (reused)" : "") << " lineage=" << join_list(o.checkpoint.lineage_kinds, ">")
        << " " << o.report.primary_metric << "=" << o.report.primary() << "\n"
        << std::flush;
  };
  const auto outcomes = run_graph(graph, options);

  out << "\nsummary for graph " << graph.name << "\n";
  for (auto idx : graph.topological_order()) {
    const auto& n = graph.nodes[idx];
    const auto& o = outcomes.at(n.id);
    out << "[" << join_list(o.checkpoint.lineage_kinds, " > ") << (o.checkpoint.lineage_kinds.empty() ? "" : " > ")
        << head_kind_name(n.kind) << "]\n"
        << o.report.to_table();
  }
  Manifest m("run-graph", argv);
  m.add("graph", a.graph + " sha256=" + file_digest(a.graph));
  m.add("data_root", options.data_root);
  m.add_multiline("graph.", graph.to_text());
  for (auto idx : graph.topological_order()) {
    const auto& id = graph.nodes[idx].id;
    m.add("node." + id + ".digest", outcomes.at(id).checkpoint.digest);
    m.add("node." + id + ".reused", outcomes.at(id).reused ? "1" : "0");
  }
  m.write((fs::path(a.out) / "run-graph.manifest").string());
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, kind, out;
  std::vector<std::string> settings;
  std::vector<std::size_t> pool_sizes;
};

std::vector<std::size_t> pools_for(const EvalArgs& a, const StageConfig& cfg) {
  auto pools = a.pool_sizes;
  if (pools.empty()) pools.push_back(cfg.pool_size);
  for (auto p : pools)
    if (p == 0) throw UsageError("pool sizes must be positive");
  return pools;
}

void finish_reports(const std::vector<EvaluationReport>& reports, const std::string& stem, const std::string& command,
                    const EvalArgs& a, const StageConfig& cfg, const ParameterCheckpoint& ckpt,
                    const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m(command, argv);
  m.add("checkpoint", a.checkpoint + " digest=" + ckpt.digest);
  m.add("data", a.data + " sha256=" + file_digest(a.data));
  m.add("stage", cfg.to_text());
  for (const auto& r : reports) {
    const auto path =
        (fs::path(a.out) / (reports.size() > 1 ? stem + ".pool" + std::to_string(r.pool_size) + ".report"
                                                : stem + ".report"))
            .string();
    r.write(path);
    m.output(path);
  }
  if (reports.size() > 1) print_sweep(out, reports);
  else out << reports.front().to_table();
  m.write((fs::path(a.out) / (stem + ".manifest")).string());
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.head_kind.empty()) fail(ErrorCode::kIncompatibleCheckpoint, a.checkpoint + " stores no head");
  const auto kind = parse_head_kind(a.kind.empty() ? ckpt.head_kind : a.kind);
  if (head_kind_name(kind) != ckpt.head_kind) {
    fail(ErrorCode::kIncompatibleCheckpoint, a.checkpoint + " holds a " + ckpt.head_kind + " head, not " + head_kind_name(kind));
  }
  auto cfg = stage_from(a.settings);
  cfg.head = ckpt.head_config;
  const auto dataset = load_dataset(a.data, kind, cfg);
  const auto test = stage_split(dataset, cfg).second;
  ensure_dir(a.out);
  std::vector<EvaluationReport> reports;
  for (auto pool : pools_for(a, cfg)) {
    auto r = evaluate(ckpt.params, ckpt.config, kind, ckpt.head_config, test, {cfg.max_len, pool, cfg.seed, cfg.masking});
    r.node_id = ckpt.node_id;
    reports.push_back(std::move(r));
    if (kind != HeadKind::kFuncSimilarity) break;
  }
  const auto stem = (ckpt.node_id.empty() ? head_kind_short(kind) : ckpt.node_id) + ".eval";
  finish_reports(reports, stem, "eval", a, cfg, ckpt, argv, out);
  return kExitOk;
}

int cmd_zero_shot(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto kind = parse_head_kind(a.kind);
  auto cfg = stage_from(a.settings);
  const auto dataset = load_dataset(a.data, kind, cfg);
  ensure_dir(a.out);
  std::vector<EvaluationReport> reports;
  for (auto pool : pools_for(a, cfg)) {
    auto c = cfg;
    c.pool_size = pool;
    reports.push_back(zero_shot_eval(ckpt, dataset, c, kind));
    if (kind != HeadKind::kFuncSimilarity) break;
  }
  const auto stem = (ckpt.node_id.empty() ? std::string("teacher") : ckpt.node_id) + ".zeroshot." + head_kind_short(kind);
  finish_reports(reports, stem, "zero-shot", a, cfg, ckpt, argv, out);
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> files;
  std::string format = "table";
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (a.format != "table" && a.format != "lines") throw UsageError("--format must be table or lines");
  std::vector<EvaluationReport> reports;
  for (const auto& f : a.files) reports.push_back(EvaluationReport::read(f));
  for (const auto& r : reports) out << (a.format == "table" ? r.to_table() : r.to_lines());
  if (reports.size() > 1 && a.format == "table") {
    std::set<std::string> columns;
    for (const auto& r : reports) columns.insert(r.primary_metric);
    out << "\n" << std::left << std::setw(28) << "report";
    for (const auto& c : columns) out << std::setw(16) << c;
    out << "\n" << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      out << std::setw(28) << fs::path(a.files[i]).filename().string();
      for (const auto& c : columns) {
        auto it = reports[i].metrics.find(c);
        if (it == reports[i].metrics.end()) out << std::setw(16) << "-";
        else out << std::setw(16) << it->second;
      }
      out << "\n";
    }
  }
  return kExitOk;
}

void add_settings(CLI::App* app, std::vector<std::string>& settings) {
  app->add_option("--set", settings, "Stage setting key=value (repeatable): epochs, batch, split, ratio, seed, lr, "
                                     "max_len, max_train, max_eval, p_mask, p_replace, margin, pool, select, target");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive teacher-student training for byte-level binary code models", "protst"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write the synthetic corpus shards");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  generate->add_option("--scale", gen.scale, "Multiplier on files per shard")->capture_default_str();
  generate->add_option("--shards", gen.shards, "Subset of shards to write");
  generate->add_option("--variants", gen.variants, "Profiles per program in the similarity shard")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-stage", "Train one stage from a teacher checkpoint or from scratch");
  train_cmd->add_option("--data", train.data, "Corpus file")->required();
  train_cmd->add_option("--kind", train.kind, "Head kind (mlm, ib, fb, fsig, fsim, fname, cp, mc)")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--init", train.init, "Teacher checkpoint; omit for random initialization");
  train_cmd->add_option("--node", train.node, "Node id used for output names");
  train_cmd->add_option("--backbone", train.backbone, "Backbone setting key=value (repeatable)");
  train_cmd->add_option("--init-seed", train.init_seed, "Seed of a fresh backbone")->capture_default_str();
  train_cmd->add_option("--threads", train.threads, "Gradient worker threads");
  add_settings(train_cmd, train.settings);

  GraphArgs graph;
  auto* graph_cmd = app.add_subcommand("run-graph", "Run every node of a task graph");
  graph_cmd->add_option("--graph", graph.graph, "Task graph file")->required();
  graph_cmd->add_option("--data-root", graph.data_root, "Directory holding the corpus files (default: the graph's)");
  graph_cmd->add_option("--out", graph.out, "Output directory")->required();
  graph_cmd->add_option("--threads", graph.threads, "Gradient worker threads for every node");
  graph_cmd->add_flag("--force", graph.force, "Retrain nodes whose stored checkpoint came from other inputs");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint's head on the held-out split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Corpus file")->required();
  eval_cmd->add_option("--kind", ev.kind, "Head kind (default: the checkpoint's)");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--pool-sizes", ev.pool_sizes, "Similarity pool sizes to sweep")->delimiter(',');
  add_settings(eval_cmd, ev.settings);

  EvalArgs zs;
  auto* zs_cmd = app.add_subcommand("zero-shot", "Score a frozen teacher backbone on a student task");
  zs_cmd->add_option("--checkpoint", zs.checkpoint, "Teacher checkpoint")->required();
  zs_cmd->add_option("--data", zs.data, "Corpus file")->required();
  zs_cmd->add_option("--kind", zs.kind, "Student head kind")->required();
  zs_cmd->add_option("--out", zs.out, "Output directory")->required();
  zs_cmd->add_option("--pool-sizes", zs.pool_sizes, "Similarity pool sizes to sweep")->delimiter(',');
  add_settings(zs_cmd, zs.settings);

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Tabulate report files");
  report_cmd->add_option("files", rep.files, "Report files")->required();
  report_cmd->add_option("--format", rep.format, "table or lines")->capture_default_str();

  std::vector<const char*> argv{"protst"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen, args, out);
    if (*train_cmd) return cmd_train_stage(train, args, out);
    if (*graph_cmd) return cmd_run_graph(graph, args, out);
    if (*eval_cmd) return cmd_eval(ev, args, out);
    if (*zs_cmd) return cmd_zero_shot(zs, args, out);
    if (*report_cmd) return cmd_report(rep, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace protst::cli
