#include "protst/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

namespace protst {

namespace {

// Gradients of a batch are computed in this many fixed chunks, each on its own
// parameter replica, and summed in chunk order. The result does not depend on
// how many threads run the chunks.
constexpr std::size_t kGradChunks = 4;

TokenSequence encode_sample(const std::vector<std::uint8_t>& bytes, std::size_t max_len) {
  // Padding rows never influence content rows, so the sequence is only as long as it needs to be.
  return encode(bytes, std::min(max_len, bytes.size() + 2));
}

std::string base_record(const std::string& id) { return id.substr(0, id.find("#w")); }

std::vector<int> position_labels(const Sample& s, std::size_t length) {
  std::vector<int> labels(length, 0);
  for (std::size_t i = 0; i < s.token_labels.size() && i + 1 < length - 1; ++i) labels[i + 1] = s.token_labels[i];
  return labels;
}

std::vector<double> name_targets(const Sample& s, std::size_t vocab) {
  std::vector<double> t(vocab, 0.0);
  for (int w : s.name_words) {
    if (w < 0 || static_cast<std::size_t>(w) >= vocab) {
      fail(ErrorCode::kLabelRange, "name word " + std::to_string(w) + " outside the name vocabulary");
    }
    t[static_cast<std::size_t>(w)] = 1.0;
  }
  return t;
}

std::vector<double> as_vector(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Loss of a labelled (non-MLM, non-similarity) sample given its hidden states.
ad::Tensor supervised_loss(HeadKind kind, const Head& head, const HiddenStates& h, const Sample& s) {
  switch (kind) {
    case HeadKind::kInstBoundary:
    case HeadKind::kFuncBoundary:
      return token_classification_loss(h, position_labels(s, h.states.rows()), head, h.content_mask);
    case HeadKind::kFuncSignature:
    case HeadKind::kCompilerProv:
      return joint_pair_loss(h, s.label_a, s.label_b, head);
    case HeadKind::kFuncName: {
      const auto targets = name_targets(s, head.config().name_vocab);
      return multilabel_name_loss(h, std::vector<int>(targets.begin(), targets.end()), head);
    }
    case HeadKind::kMalwareClass:
      return malware_loss(h, s.label_a, head);
    default:
      fail(ErrorCode::kInternal, "supervised_loss called for " + head_kind_name(kind));
  }
}

// A training item: one sample, or an (anchor, positive, negative) triple for similarity.
struct Item {
  std::size_t a = 0, b = 0, n = 0;
  std::uint64_t seed = 0;
};

ad::Tensor item_loss(const Backbone& bb, const Head& head, HeadKind kind, const std::vector<Sample>& train,
                     const Item& item, const StageConfig& cfg) {
  Rng drop(mix_seed(item.seed, 0xD80));
  Rng* drop_rng = bb.config().dropout > 0.0 ? &drop : nullptr;
  const auto& s = train[item.a];
  switch (kind) {
    case HeadKind::kMlm: {
      const auto masked = apply_mlm_mask(encode_sample(s.bytes, cfg.max_len), cfg.masking.p_mask,
                                         cfg.masking.p_replace, mix_seed(item.seed, 0x3A5));
      return mlm_loss(bb.encode(masked.sequence, drop_rng), masked.plan, head);
    }
    case HeadKind::kFuncSimilarity: {
      auto embed = [&](const Sample& x) { return function_embedding(bb.encode(encode_sample(x.bytes, cfg.max_len), drop_rng), head); };
      const auto ea = embed(s), eb = embed(train[item.b]), en = embed(train[item.n]);
      return cosine_embedding_loss(ea, eb, 1, head.config().margin) +
             cosine_embedding_loss(ea, en, -1, head.config().margin);
    }
    default:
      return supervised_loss(kind, head, bb.encode(encode_sample(s.bytes, cfg.max_len), drop_rng), s);
  }
}

// Mean loss over `items`; leaves the summed gradient on `params`.
double batch_gradient(ad::ParameterSet& params, const std::vector<Item>& items, std::size_t threads,
                      const std::function<ad::Tensor(const ad::ParameterSet&, const Item&)>& loss_of) {
  const std::size_t chunks = std::min(kGradChunks, items.size());
  std::vector<ad::ParameterSet> replicas(chunks);
  std::vector<double> losses(chunks, 0.0);
  const double weight = 1.0 / static_cast<double>(items.size());
  auto run = [&](std::size_t c) {
    replicas[c] = params.clone();
    const auto begin = c * items.size() / chunks, end = (c + 1) * items.size() / chunks;
    for (auto i = begin; i < end; ++i) {
      auto loss = ad::scale(loss_of(replicas[c], items[i]), weight);
      losses[c] += loss.item();
      loss.backward();
    }
  };
  if (threads <= 1 || chunks == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
  } else {
    for (std::size_t start = 0; start < chunks; start += threads) {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(chunks);
      for (auto c = start; c < std::min(chunks, start + threads); ++c) {
        pool.emplace_back([&, c] {
          try {
            run(c);
          } catch (...) {
            errors[c] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
  }
  params.zero_grad();
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += losses[c];
    for (const auto& [name, entry] : params.entries()) {
      const auto& r = replicas[c].get(name);
      if (!r.has_grad()) continue;
      ad::Tensor p = entry;
      auto g = p.mutable_grad();
      const auto rg = r.grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += rg[k];
    }
  }
  return total;
}

std::vector<Sample> cap_samples(std::vector<Sample> samples, std::size_t limit, std::uint64_t seed, bool by_group) {
  if (limit == 0 || samples.size() <= limit) return samples;
  Rng rng(seed);
  if (!by_group) {
    rng.shuffle(samples);
    samples.resize(limit);
    return samples;
  }
  std::vector<std::int64_t> groups;
  for (const auto& s : samples) groups.push_back(s.group);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  rng.shuffle(groups);
  std::map<std::int64_t, std::vector<Sample>> by;
  for (auto& s : samples) by[s.group].push_back(std::move(s));
  std::vector<Sample> out;
  for (auto g : groups) {
    if (out.size() >= limit) break;
    for (auto& s : by[g]) out.push_back(std::move(s));
  }
  return out;
}

struct PairPlan {
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::vector<std::int64_t> groups;  // per training sample
};

PairPlan similarity_pairs(const std::vector<Sample>& train) {
  PairPlan plan;
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < train.size(); ++i) {
    members[train[i].group].push_back(i);
    plan.groups.push_back(train[i].group);
  }
  for (const auto& [_, idx] : members)
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = i + 1; j < idx.size(); ++j) plan.positives.emplace_back(idx[i], idx[j]);
  if (plan.positives.empty() || members.size() < 2) {
    fail(ErrorCode::kEmptyDataset, "similarity training needs two groups and a group with two variants");
  }
  return plan;
}

std::vector<Item> epoch_items(HeadKind kind, const std::vector<Sample>& train, const PairPlan& pairs,
                              std::uint64_t seed, std::size_t epoch) {
  Rng rng(mix_seed(seed, 0xE90C + epoch));
  std::vector<Item> items;
  if (kind == HeadKind::kFuncSimilarity) {
    for (const auto& [a, b] : pairs.positives) {
      std::size_t n = rng.below(train.size());
      while (pairs.groups[n] == pairs.groups[a]) n = rng.below(train.size());
      items.push_back({a, b, n, 0});
    }
  } else {
    for (std::size_t i = 0; i < train.size(); ++i) items.push_back({i, 0, 0, 0});
  }
  rng.shuffle(items);
  for (std::size_t i = 0; i < items.size(); ++i) items[i].seed = mix_seed(mix_seed(seed, epoch), i);
  return items;
}

// --- evaluation ------------------------------------------------------------------

void add_classes(EvaluationReport& r, const std::string& axis, const MacroF1& m) {
  for (const auto& c : m.per_class) r.classes.push_back({axis, c.label, c.f1, c.support});
}

std::string axis_name(HeadKind kind, std::size_t axis) {
  if (kind == HeadKind::kFuncSignature) return axis == 0 ? "args" : "ret";
  if (kind == HeadKind::kCompilerProv) return axis == 0 ? "compiler" : "opt";
  return "class";
}

// Scores a supervised kind given a way to obtain each sample's hidden states.
void score_supervised(EvaluationReport& r, HeadKind kind, const Head& head, const std::vector<Sample>& samples,
                      const std::function<HiddenStates(std::size_t)>& hidden_of) {
  ConfusionTally tally[2];
  std::vector<std::vector<int>> name_truth, name_pred;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto h = hidden_of(i);
    switch (head_family(kind)) {
      case HeadFamily::kTokenLevel: {
        const auto logits = head.project(h.states);
        const auto labels = position_labels(s, h.states.rows());
        const auto cols = logits.cols();
        for (std::size_t p = 0; p < h.content_mask.size(); ++p) {
          if (!h.content_mask[p]) continue;
          tally[0].add(labels[p], static_cast<int>(argmax(logits.values().subspan(p * cols, cols))));
        }
        break;
      }
      default: {
        const auto cls = pool_cls(h);
        if (kind == HeadKind::kFuncName) {
          const auto logits = head.project_vector(cls, 0);
          std::vector<int> pred;
          for (std::size_t w = 0; w < logits.numel(); ++w)
            if (logits.at(w) > 0.0) pred.push_back(static_cast<int>(w));
          auto truth = s.name_words;
          std::sort(truth.begin(), truth.end());
          if (truth == pred) ++exact;
          name_truth.push_back(std::move(truth));
          name_pred.push_back(std::move(pred));
        } else {
          tally[0].add(s.label_a, static_cast<int>(argmax(head.project_vector(cls, 0).values())));
          if (head.axes() > 1) tally[1].add(s.label_b, static_cast<int>(argmax(head.project_vector(cls, 1).values())));
        }
      }
    }
  }
  const auto n = static_cast<double>(samples.size());
  if (kind == HeadKind::kFuncName) {
    r.metrics["micro_f1"] = micro_f1(name_truth, name_pred);
    r.metrics["exact_match"] = static_cast<double>(exact) / n;
    r.primary_metric = "micro_f1";
    return;
  }
  auto accuracy = [](const ConfusionTally& t) {
    std::size_t tp = 0;
    for (const auto& [_, c] : t.classes()) tp += c.tp;
    return static_cast<double>(tp) / static_cast<double>(t.total());
  };
  if (head.axes() > 1) {
    const auto a = macro_f1(tally[0]), b = macro_f1(tally[1]);
    const auto na = axis_name(kind, 0), nb = axis_name(kind, 1);
    r.metrics[na + "_macro_f1"] = a.macro;
    r.metrics[nb + "_macro_f1"] = b.macro;
    r.metrics[na + "_accuracy"] = accuracy(tally[0]);
    r.metrics[nb + "_accuracy"] = accuracy(tally[1]);
    r.metrics["macro_f1_mean"] = 0.5 * (a.macro + b.macro);
    r.primary_metric = "macro_f1_mean";
    add_classes(r, na, a);
    add_classes(r, nb, b);
  } else {
    const auto m = macro_f1(tally[0]);
    r.metrics["macro_f1"] = m.macro;
    r.metrics["accuracy"] = accuracy(tally[0]);
    r.primary_metric = "macro_f1";
    add_classes(r, head_family(kind) == HeadFamily::kTokenLevel ? "token" : "class", m);
  }
}

void score_similarity(EvaluationReport& r, const std::vector<std::vector<double>>& embeddings,
                      const std::vector<Sample>& samples, std::size_t pool_size, std::uint64_t seed) {
  std::vector<std::int64_t> groups;
  for (const auto& s : samples) groups.push_back(s.group);
  const auto pools = build_similarity_pools(embeddings, groups, pool_size, seed);
  std::vector<std::size_t> ranks;
  for (const auto& q : pools) ranks.push_back(rank_pool(q));
  const auto size = pools.front().pool_size();
  r.pool_size = size;
  r.metrics["mrr"] = mrr_from_ranks(ranks);
  for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}})
    if (k <= size) r.metrics["recall@" + std::to_string(k)] = recall_from_ranks(ranks, k);
  r.metrics["queries"] = static_cast<double>(ranks.size());
  r.primary_metric = "mrr";
}

EvaluationReport evaluate_mlm(const Backbone& bb, const Head& head, const std::vector<Sample>& samples,
                              const EvalOptions& options) {
  EvaluationReport r;
  std::size_t hits = 0, total = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto masked = apply_mlm_mask(encode_sample(samples[i].bytes, options.max_len), options.masking.p_mask,
                                       options.masking.p_replace, mix_seed(options.seed, i));
    const auto h = bb.encode(masked.sequence);
    loss += mlm_loss(h, masked.plan, head).item();
    const auto logits = head.project(h.states);
    const auto cols = logits.cols();
    for (std::size_t k = 0; k < masked.plan.size(); ++k) {
      const auto p = masked.plan.masked_positions[k];
      hits += argmax(logits.values().subspan(p * cols, cols)) == static_cast<std::size_t>(masked.plan.originals[k]);
      ++total;
    }
  }
  r.metrics["masked_accuracy"] = static_cast<double>(hits) / static_cast<double>(total);
  r.metrics["mlm_loss"] = loss / static_cast<double>(samples.size());
  r.primary_metric = "masked_accuracy";
  return r;
}

}  // namespace

std::vector<PoolQuery> build_similarity_pools(const std::vector<std::vector<double>>& embeddings,
                                              const std::vector<std::int64_t>& groups, std::size_t pool_size,
                                              std::uint64_t seed) {
  if (embeddings.size() != groups.size()) fail(ErrorCode::kInvalidArgument, "one group per embedding required");
  if (pool_size == 0) fail(ErrorCode::kInvalidArgument, "a pool needs at least one candidate");
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  std::vector<PoolQuery> out;
  for (const auto& [g, idx] : members) {
    if (idx.size() < 2) continue;
    PoolQuery q;
    q.query = embeddings[idx[0]];
    q.ground_truth = static_cast<std::int64_t>(idx[1]);
    q.candidates.push_back(embeddings[idx[1]]);
    q.candidate_ids.push_back(q.ground_truth);
    std::vector<std::int64_t> others;
    for (const auto& [o, _] : members)
      if (o != g) others.push_back(o);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(g)));
    rng.shuffle(others);
    for (std::size_t k = 0; k < others.size() && q.candidates.size() < pool_size; ++k) {
      const auto& m = members[others[k]];
      const auto pick = m[rng.below(m.size())];
      q.candidates.push_back(embeddings[pick]);
      q.candidate_ids.push_back(static_cast<std::int64_t>(pick));
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) fail(ErrorCode::kEmptyEvaluation, "no similarity group has two held-out variants");
  return out;
}

EvaluationReport evaluate(const ad::ParameterSet& params, const BackboneConfig& config, HeadKind kind,
                          const HeadConfig& head_config, const std::vector<Sample>& samples,
                          const EvalOptions& options) {
  if (samples.empty()) fail(ErrorCode::kEmptyEvaluation, "nothing to evaluate");
  ad::NoGradGuard no_grad;
  const Backbone bb(config, params);
  const Head head(kind, head_config, params);
  EvaluationReport r;
  if (kind == HeadKind::kMlm) {
    r = evaluate_mlm(bb, head, samples, options);
  } else if (kind == HeadKind::kFuncSimilarity) {
    std::vector<std::vector<double>> embeddings;
    for (const auto& s : samples)
      embeddings.push_back(as_vector(function_embedding(bb.encode(encode_sample(s.bytes, options.max_len)), head)));
    score_similarity(r, embeddings, samples, options.pool_size, options.seed);
  } else {
    score_supervised(r, kind, head, samples,
                     [&](std::size_t i) { return bb.encode(encode_sample(samples[i].bytes, options.max_len)); });
  }
  r.kind = head_kind_name(kind);
  r.seed = options.seed;
  return r;
}

SplitParts<Sample> stage_split(const TaskDataset& dataset, const StageConfig& cfg) {
  if (dataset.empty()) fail(ErrorCode::kEmptyDataset, head_kind_name(dataset.kind) + " dataset is empty");
  auto parts = split_samples(dataset.samples, cfg.split_mode, cfg.train_ratio, mix_seed(cfg.seed, 0x5917));
  const bool by_group = dataset.kind == HeadKind::kFuncSimilarity;
  parts.first = cap_samples(std::move(parts.first), cfg.max_train, mix_seed(cfg.seed, 0xCA9), by_group);
  parts.second = cap_samples(std::move(parts.second), cfg.max_eval, mix_seed(cfg.seed, 0xCAB), by_group);
  if (parts.first.empty() || parts.second.empty()) fail(ErrorCode::kEmptyDataset, "a split part is empty");
  return parts;
}

StageResult train_stage(const StageInit& init, const TaskDataset& dataset, const StageConfig& cfg, HeadKind kind,
                        const StageIdentity& identity, const StageHooks& hooks) {
  if (dataset.kind != kind) {
    fail(ErrorCode::kInvalidArgument,
         "dataset holds " + head_kind_name(dataset.kind) + " samples, stage trains " + head_kind_name(kind));
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0) fail(ErrorCode::kInvalidArgument, "epochs and batch size must be positive");
  const auto parts = stage_split(dataset, cfg);
  const auto& train = parts.first;
  const auto& test = parts.second;

  BackboneConfig config;
  ad::ParameterSet params;
  std::vector<std::string> lineage, lineage_kinds;
  init.config.validate();
  if (init.teacher) {
    if (!init.teacher->config.compatible_with(init.config)) {
      fail(ErrorCode::kIncompatibleCheckpoint, "teacher " + init.teacher->node_id + " has a different backbone shape");
    }
    config = init.teacher->config;
    // Exact copy of the teacher's backbone values; its head is discarded.
    params = init.teacher->backbone_params().clone();
    const auto expected = init_backbone(config, 0);
    for (const auto& [name, _] : expected.entries()) {
      if (!params.contains(name)) fail(ErrorCode::kIncompatibleCheckpoint, "teacher lacks parameter " + name);
    }
    lineage = init.teacher->lineage;
    lineage.push_back(init.teacher->node_id);
    lineage_kinds = init.teacher->lineage_kinds;
    lineage_kinds.push_back(init.teacher->head_kind);
  } else {
    config = init.config;
    params = init_backbone(config, init.seed);
  }
  if (cfg.max_len > config.max_len) {
    fail(ErrorCode::kSequenceTooLong, "stage max_len exceeds the backbone's positional table");
  }
  if (hooks.on_initialized) hooks.on_initialized(params);
  params.merge(init_head(kind, config.hidden_dim, cfg.head, mix_seed(cfg.seed, 0x4EAD)));

  PairPlan pairs;
  if (kind == HeadKind::kFuncSimilarity) pairs = similarity_pairs(train);

  StageResult result;
  auto& log = result.log;
  log.train_samples = train.size();
  log.eval_samples = test.size();
  for (const auto& s : train) log.train_records.insert(base_record(s.record_id));

  const EvalOptions eval_opts{cfg.max_len, cfg.pool_size, cfg.seed, cfg.masking};
  auto loss_of = [&](const ad::ParameterSet& p, const Item& item) {
    return item_loss(Backbone(config, p), Head(kind, cfg.head, p), kind, train, item, cfg);
  };
  ad::Adam adam({cfg.learning_rate});
  std::optional<double> best_metric;
  ad::ParameterSet best;
  const bool need_metric = cfg.eval_each_epoch || cfg.target || cfg.selection == Selection::kBest;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto items = epoch_items(kind, train, pairs, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::vector<Item> batch(items.begin() + static_cast<std::ptrdiff_t>(start),
                                    items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), start + cfg.batch_size)));
      loss_sum += batch_gradient(params, batch, cfg.threads, loss_of) * static_cast<double>(batch.size());
      adam.step(params);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(items.size()), std::nullopt};
    if (need_metric) {
      rec.metric = evaluate(params, config, kind, cfg.head, test, eval_opts).primary();
      if (cfg.selection == Selection::kBest && (!best_metric || *rec.metric > *best_metric)) {
        best_metric = rec.metric;
        best = params.clone();
      }
    }
    log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (cfg.target && rec.metric && *rec.metric >= *cfg.target) {
      log.target_epoch = epoch;
      break;
    }
  }
  const auto& chosen = cfg.selection == Selection::kBest && best_metric ? best : params;
  result.checkpoint = make_checkpoint(config, chosen, identity.node_id, lineage, lineage_kinds, head_kind_name(kind),
                                      cfg.head, identity.fingerprint);
  result.report = evaluate(result.checkpoint.params, config, kind, cfg.head, test, eval_opts);
  result.report.node_id = identity.node_id;
  return result;
}

EvaluationReport zero_shot_eval(const ParameterCheckpoint& teacher, const TaskDataset& dataset, const StageConfig& cfg,
                                HeadKind kind) {
  if (kind == HeadKind::kMlm) fail(ErrorCode::kInvalidArgument, "zero-shot evaluation has no meaning for MLM");
  if (dataset.kind != kind) fail(ErrorCode::kInvalidArgument, "dataset kind does not match the requested kind");
  const auto parts = stage_split(dataset, cfg);
  const auto backbone_params = teacher.backbone_params();
  const Backbone bb(teacher.config, backbone_params);
  auto frozen = [&](const std::vector<Sample>& samples) {
    ad::NoGradGuard no_grad;
    std::vector<HiddenStates> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(bb.encode(encode_sample(s.bytes, cfg.max_len)));
    return out;
  };

  EvaluationReport r;
  if (kind == HeadKind::kFuncSimilarity) {
    ad::NoGradGuard no_grad;
    const auto hidden = frozen(parts.second);
    std::vector<std::vector<double>> embeddings;
    for (const auto& h : hidden) embeddings.push_back(as_vector(pool_mean(h)));
    score_similarity(r, embeddings, parts.second, cfg.pool_size, cfg.seed);
  } else {
    const auto train_hidden = frozen(parts.first);
    auto head_params = init_head(kind, teacher.config.hidden_dim, cfg.head, mix_seed(cfg.seed, 0x4EAD));
    ad::Adam adam({cfg.learning_rate});
    Rng rng(mix_seed(cfg.seed, 0x960BE));
    std::vector<std::size_t> order(parts.first.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const auto end = std::min(order.size(), start + cfg.batch_size);
        head_params.zero_grad();
        const Head head(kind, cfg.head, head_params);
        for (auto k = start; k < end; ++k) {
          ad::scale(supervised_loss(kind, head, train_hidden[order[k]], parts.first[order[k]]),
                    1.0 / static_cast<double>(end - start))
              .backward();
        }
        adam.step(head_params);
      }
    }
    ad::NoGradGuard no_grad;
    const auto test_hidden = frozen(parts.second);
    const Head head(kind, cfg.head, head_params);
    score_supervised(r, kind, head, parts.second, [&](std::size_t i) { return test_hidden[i]; });
  }
  r.kind = head_kind_name(kind);
  r.seed = cfg.seed;
  r.node_id = teacher.node_id.empty() ? "" : "zero-shot:" + teacher.node_id;
  return r;
}

// --- stage settings ---------------------------------------------------------------

std::string StageConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "epochs=" << epochs << " batch=" << batch_size << " split=" << split_mode_name(split_mode)
     << " ratio=" << train_ratio << " seed=" << seed << " lr=" << learning_rate << " max_len=" << max_len
     << " max_train=" << max_train << " max_eval=" << max_eval << " p_mask=" << masking.p_mask
     << " p_replace=" << masking.p_replace << " margin=" << head.margin << " families=" << head.malware_families
     << " name_vocab=" << head.name_vocab << " mlp_activation=" << activation_name(head.mlp_activation)
     << " pool=" << pool_size << " select=" << (selection == Selection::kBest ? "best" : "final");
  if (target) os << " target=" << *target;
  os << " eval_each_epoch=" << (eval_each_epoch ? 1 : 0);
  return os.str();
}

bool apply_stage_setting(StageConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "epochs") cfg.epochs = std::stoul(value);
    else if (key == "batch") cfg.batch_size = std::stoul(value);
    else if (key == "split") cfg.split_mode = parse_split_mode(value);
    else if (key == "ratio") cfg.train_ratio = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "lr") cfg.learning_rate = std::stod(value);
    else if (key == "max_len") cfg.max_len = std::stoul(value);
    else if (key == "max_train") cfg.max_train = std::stoul(value);
    else if (key == "max_eval") cfg.max_eval = std::stoul(value);
    else if (key == "p_mask") cfg.masking.p_mask = std::stod(value);
    else if (key == "p_replace") cfg.masking.p_replace = std::stod(value);
    else if (key == "margin") cfg.head.margin = std::stod(value);
    else if (key == "families") cfg.head.malware_families = std::stoul(value);
    else if (key == "name_vocab") cfg.head.name_vocab = std::stoul(value);
    else if (key == "mlp_activation") cfg.head.mlp_activation = parse_activation(value);
    else if (key == "pool") cfg.pool_size = std::stoul(value);
    else if (key == "threads") cfg.threads = std::stoul(value);
    else if (key == "eval_each_epoch") cfg.eval_each_epoch = value != "0";
    else if (key == "target") cfg.target = std::stod(value);
    else if (key == "select") {
      if (value != "best" && value != "final") fail(ErrorCode::kInvalidArgument, "select must be best or final");
      cfg.selection = value == "best" ? Selection::kBest : Selection::kFinal;
    } else {
      return false;
    }
  } catch (const std::logic_error&) {
    fail(ErrorCode::kInvalidArgument, "bad value for " + key + ": " + value);
  }
  return true;
}

std::string TrainingLog::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "train_samples=" << train_samples << " eval_samples=" << eval_samples;
  if (target_epoch) os << " target_epoch=" << *target_epoch;
  os << "\n";
  for (const auto& e : epochs) {
    os << "epoch=" << e.epoch << " loss=" << e.train_loss;
    if (e.metric) os << " metric=" << *e.metric;
    os << "\n";
  }
  return os.str();
}

}  // namespace protst
