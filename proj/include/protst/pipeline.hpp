#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "protst/checkpoint.hpp"
#include "protst/corpus.hpp"
#include "protst/metrics.hpp"

namespace protst {

enum class Selection { kFinal, kBest };

struct StageConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  SplitMode split_mode = SplitMode::kBinary;
  double train_ratio = 0.9;
  std::uint64_t seed = 1;
  double learning_rate = 1e-3;
  std::size_t max_len = 128;
  std::size_t max_train = 0;  // 0 keeps every training sample
  std::size_t max_eval = 0;   // 0 keeps every held-out sample
  MaskingConfig masking;
  HeadConfig head;
  std::size_t pool_size = 32;
  Selection selection = Selection::kFinal;
  std::optional<double> target;  // stop once the held-out primary metric reaches this
  std::size_t threads = 1;
  bool eval_each_epoch = true;

  // Canonical one-line form; keys match the task-graph grammar.
  std::string to_text() const;
};

// Applies one "key=value" stage setting; returns false for unknown keys.
bool apply_stage_setting(StageConfig& cfg, const std::string& key, const std::string& value);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> metric;  // held-out primary metric
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t train_samples = 0;
  std::size_t eval_samples = 0;
  std::optional<std::size_t> target_epoch;  // first epoch at which the target was met
  std::set<std::string> train_records;      // base record ids used for gradient updates

  std::string to_text() const;
};

struct StageResult {
  ParameterCheckpoint checkpoint;
  EvaluationReport report;
  TrainingLog log;
};

// Where a stage starts: a teacher checkpoint, or fresh random weights drawn
// from `seed`. A teacher must be compatible with `config`.
struct StageInit {
  const ParameterCheckpoint* teacher = nullptr;
  BackboneConfig config;
  std::uint64_t seed = 0;
};

struct StageIdentity {
  std::string node_id;
  std::string fingerprint;
};

struct StageHooks {
  // Called once with the backbone about to be trained, before any update.
  std::function<void(const ad::ParameterSet& backbone)> on_initialized;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Trains a backbone plus a fresh head of `kind` on the training part of
// `dataset`, then evaluates on the held-out part. The returned checkpoint
// holds the backbone and the head; descendants only take the backbone.
StageResult train_stage(const StageInit& init, const TaskDataset& dataset, const StageConfig& cfg, HeadKind kind,
                        const StageIdentity& identity = {}, const StageHooks& hooks = {});

// Held-out split exactly as train_stage draws it.
SplitParts<Sample> stage_split(const TaskDataset& dataset, const StageConfig& cfg);

struct EvalOptions {
  std::size_t max_len = 128;
  std::size_t pool_size = 32;
  std::uint64_t seed = 1;
  MaskingConfig masking;
};

// Scores backbone+head parameters on `samples`.
EvaluationReport evaluate(const ad::ParameterSet& params, const BackboneConfig& config, HeadKind kind,
                          const HeadConfig& head_config, const std::vector<Sample>& samples, const EvalOptions& options);

// One query per group with two or more members: the group's first member
// queries, its second is the ground truth, and up to pool_size - 1 other
// groups each contribute one random member as a distractor.
std::vector<PoolQuery> build_similarity_pools(const std::vector<std::vector<double>>& embeddings,
                                              const std::vector<std::int64_t>& groups, std::size_t pool_size,
                                              std::uint64_t seed);

// Frozen-backbone baseline. Similarity compares mean-pooled states directly;
// every other kind fits a linear probe on frozen features of the training
// split for cfg.epochs epochs and reports it on the held-out split.
EvaluationReport zero_shot_eval(const ParameterCheckpoint& teacher, const TaskDataset& dataset, const StageConfig& cfg,
                                HeadKind kind);

// --- task graphs ------------------------------------------------------------------

struct TaskNode {
  std::string id;
  HeadKind kind = HeadKind::kMlm;
  std::string data;    // corpus file, relative to the graph's data root
  std::string parent;  // empty for a root
  StageConfig stage;
};

struct TaskGraph {
  std::string name = "graph";
  BackboneConfig backbone;
  std::uint64_t init_seed = 1;
  std::vector<TaskNode> nodes;

  const TaskNode& node(const std::string& id) const;
  bool contains(const std::string& id) const;
  // Raises GraphInvalid unless the nodes form one tree rooted at an MLM node.
  void validate() const;
  // Node indices, parents before children, ties in declaration order.
  std::vector<std::size_t> topological_order() const;
  // Ancestor ids, root first.
  std::vector<std::string> lineage(const std::string& id) const;
  std::vector<std::string> children(const std::string& id) const;

  std::string to_text() const;
};

// Line grammar:
//   graph <name>
//   backbone hidden=64 layers=2 heads=4 ffn=128 max_len=128 dropout=0.1 activation=gelu norm=pre seed=1
//   defaults <stage settings>          (applies to the nodes that follow)
//   node <id> kind=<K> data=<file> [parent=<id>] [stage settings]
// '#' starts a comment.
TaskGraph parse_task_graph(const std::string& text);
TaskGraph read_task_graph(const std::string& path);

struct NodeOutcome {
  ParameterCheckpoint checkpoint;
  EvaluationReport report;
  TrainingLog log;
  bool reused = false;
};

struct RunOptions {
  std::string data_root = ".";
  std::string out_dir = "out";
  bool force = false;
  std::optional<std::size_t> threads;  // overrides every node's thread count
  std::function<void(const std::string& node_id, const NodeOutcome&)> on_node;
};

// Runs every node in topological order. A node whose checkpoint already sits
// in out_dir with a matching fingerprint is loaded instead of retrained, so
// adding a leaf leaves existing checkpoints untouched. A checkpoint with a
// different fingerprint is only overwritten when `force` is set.
std::map<std::string, NodeOutcome> run_graph(const TaskGraph& graph, const RunOptions& options);

// Fingerprint of a node: its settings, its parent's checkpoint digest and its data.
std::string node_fingerprint(const TaskGraph& graph, const TaskNode& node, const std::string& parent_digest,
                             const std::string& data_digest);

}  // namespace protst
