#include "protst/heads.hpp"

#include <algorithm>
#include <cctype>

namespace protst {

std::string head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlm: return "MLM";
    case HeadKind::kInstBoundary: return "InstBoundary";
    case HeadKind::kFuncBoundary: return "FuncBoundary";
    case HeadKind::kFuncSignature: return "FuncSignature";
    case HeadKind::kFuncSimilarity: return "FuncSimilarity";
    case HeadKind::kFuncName: return "FuncName";
    case HeadKind::kCompilerProv: return "CompilerProv";
    case HeadKind::kMalwareClass: return "MalwareClass";
  }
  return "?";
}

std::string head_kind_short(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlm: return "mlm";
    case HeadKind::kInstBoundary: return "ib";
    case HeadKind::kFuncBoundary: return "fb";
    case HeadKind::kFuncSignature: return "fsig";
    case HeadKind::kFuncSimilarity: return "fsim";
    case HeadKind::kFuncName: return "fname";
    case HeadKind::kCompilerProv: return "cp";
    case HeadKind::kMalwareClass: return "mc";
  }
  return "?";
}

HeadKind parse_head_kind(const std::string& text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (HeadKind k : kAllHeadKinds) {
    std::string full;
    for (char c : head_kind_name(k)) full.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == full || lower == head_kind_short(k)) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown head kind '" + text + "'");
}

HeadFamily head_family(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlm: return HeadFamily::kMaskedLm;
    case HeadKind::kInstBoundary:
    case HeadKind::kFuncBoundary: return HeadFamily::kTokenLevel;
    case HeadKind::kFuncSimilarity: return HeadFamily::kEmbedding;
    default: return HeadFamily::kSequenceLevel;
  }
}

std::vector<std::size_t> head_output_sizes(HeadKind kind, const HeadConfig& config) {
  switch (kind) {
    case HeadKind::kMlm: return {Vocabulary::kSize};
    case HeadKind::kInstBoundary: return {kInstClasses};
    case HeadKind::kFuncBoundary: return {kFuncClasses};
    case HeadKind::kFuncSignature: return {kArgClasses, kRetClasses};
    case HeadKind::kFuncSimilarity: return {};
    case HeadKind::kFuncName: return {config.name_vocab};
    case HeadKind::kCompilerProv: return {kCompilerClasses, kOptClasses};
    case HeadKind::kMalwareClass: return {config.malware_families};
  }
  return {};
}

namespace {

std::string head_name(HeadKind kind, const std::string& leaf) { return "head." + head_kind_short(kind) + "." + leaf; }

ad::Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, 0.02);
  return ad::Tensor::from({rows, cols}, std::move(v), true);
}

ad::Tensor as_row(const ad::Tensor& vec) { return vec.rank() == 2 ? vec : ad::reshape(vec, {1, vec.numel()}); }

}  // namespace

ad::ParameterSet init_head(HeadKind kind, std::size_t hidden_dim, const HeadConfig& config, std::uint64_t seed) {
  if (config.margin < 0.0 || config.margin > 1.0) fail(ErrorCode::kInvalidArgument, "margin must lie in [0, 1]");
  Rng rng(seed);
  ad::ParameterSet p;
  if (kind == HeadKind::kFuncSimilarity) {
    p.add(head_name(kind, "mlp.w1"), normal_matrix(hidden_dim, hidden_dim, rng));
    p.add(head_name(kind, "mlp.b1"), ad::Tensor::zeros({hidden_dim}, true));
    p.add(head_name(kind, "mlp.w2"), normal_matrix(hidden_dim, hidden_dim, rng));
    p.add(head_name(kind, "mlp.b2"), ad::Tensor::zeros({hidden_dim}, true));
    return p;
  }
  const auto sizes = head_output_sizes(kind, config);
  for (std::size_t axis = 0; axis < sizes.size(); ++axis) {
    p.add(head_name(kind, "w" + std::to_string(axis)), normal_matrix(hidden_dim, sizes[axis], rng));
    p.add(head_name(kind, "b" + std::to_string(axis)), ad::Tensor::zeros({sizes[axis]}, true));
  }
  return p;
}

Head::Head(HeadKind kind, HeadConfig config, const ad::ParameterSet& params) : kind_(kind), config_(config) {
  if (kind == HeadKind::kFuncSimilarity) {
    mlp_w1_ = params.get(head_name(kind, "mlp.w1"));
    mlp_b1_ = params.get(head_name(kind, "mlp.b1"));
    mlp_w2_ = params.get(head_name(kind, "mlp.w2"));
    mlp_b2_ = params.get(head_name(kind, "mlp.b2"));
    return;
  }
  const auto sizes = head_output_sizes(kind, config);
  for (std::size_t axis = 0; axis < sizes.size(); ++axis) {
    auto w = params.get(head_name(kind, "w" + std::to_string(axis)));
    if (w.cols() != sizes[axis]) {
      fail(ErrorCode::kIncompatibleCheckpoint, head_kind_name(kind) + " head axis " + std::to_string(axis) +
                                                   " has " + std::to_string(w.cols()) + " outputs, expected " +
                                                   std::to_string(sizes[axis]));
    }
    weights_.push_back(w);
    biases_.push_back(params.get(head_name(kind, "b" + std::to_string(axis))));
  }
}

ad::Tensor Head::project(const ad::Tensor& rows, std::size_t axis) const {
  return ad::add_row(ad::matmul(rows, weights_.at(axis)), biases_.at(axis));
}

ad::Tensor Head::project_vector(const ad::Tensor& vec, std::size_t axis) const { return project(as_row(vec), axis); }

ad::Tensor Head::mlp(const ad::Tensor& vec) const {
  if (!mlp_w1_.defined()) fail(ErrorCode::kInvalidArgument, head_kind_name(kind_) + " head has no MLP");
  auto h = activate(ad::add_row(ad::matmul(as_row(vec), mlp_w1_), mlp_b1_), config_.mlp_activation);
  h = ad::add_row(ad::matmul(h, mlp_w2_), mlp_b2_);
  return ad::reshape(h, {h.numel()});
}

ad::Tensor mlm_loss(const HiddenStates& hidden, const MaskPlan& plan, const Head& head) {
  if (plan.empty()) fail(ErrorCode::kEmptyMaskPlan, "MLM loss needs at least one masked position");
  const auto n = hidden.states.rows();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan.masked_positions[i] >= n) fail(ErrorCode::kInvalidArgument, "mask position outside sequence");
    if (!Vocabulary::is_byte(plan.originals[i])) fail(ErrorCode::kLabelRange, "masked original is not a byte id");
  }
  // Only the masked rows are projected onto the vocabulary.
  std::vector<ad::Tensor> rows;
  std::vector<int> row_labels;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    rows.push_back(ad::reshape(ad::select_row(hidden.states, plan.masked_positions[i]), {1, hidden.states.cols()}));
    row_labels.push_back(plan.originals[i]);
  }
  ad::Tensor gathered = rows.size() == 1 ? rows[0] : ad::reshape(ad::concat_cols(rows), {rows.size(), hidden.states.cols()});
  const auto logits = head.project(gathered);
  return ad::cross_entropy_rows(logits, row_labels, std::vector<bool>(row_labels.size(), true));
}

ad::Tensor token_classification_loss(const HiddenStates& hidden, const std::vector<int>& labels, const Head& head,
                                     const std::vector<bool>& content_mask) {
  if (labels.size() != hidden.states.rows() || content_mask.size() != labels.size()) {
    fail(ErrorCode::kInvalidArgument, "token labels must cover every position");
  }
  return ad::cross_entropy_rows(head.project(hidden.states), labels, content_mask);
}

ad::Tensor joint_pair_loss(const HiddenStates& hidden, int class_a, int class_b, const Head& head) {
  if (head.axes() != 2) fail(ErrorCode::kInvalidArgument, head_kind_name(head.kind()) + " is not a two-axis head");
  const auto cls = pool_cls(hidden);
  const std::vector<bool> one{true};
  const std::vector<int> a{class_a}, b{class_b};
  return ad::cross_entropy_rows(head.project_vector(cls, 0), a, one) +
         ad::cross_entropy_rows(head.project_vector(cls, 1), b, one);
}

ad::Tensor multilabel_name_loss(const HiddenStates& hidden, const std::vector<int>& name_labels, const Head& head) {
  if (name_labels.size() != head.config().name_vocab) {
    fail(ErrorCode::kInvalidArgument, "name label vector must span the name vocabulary");
  }
  if (std::none_of(name_labels.begin(), name_labels.end(), [](int v) { return v != 0; })) {
    fail(ErrorCode::kDegenerateLabel, "function name has no positive word");
  }
  std::vector<double> targets(name_labels.begin(), name_labels.end());
  const auto logits = head.project_vector(pool_cls(hidden));
  return ad::bce_with_logits(logits, targets);
}

ad::Tensor function_embedding(const HiddenStates& hidden, const Head& head) { return head.mlp(pool_mean(hidden)); }

ad::Tensor cosine_embedding_loss(const ad::Tensor& e1, const ad::Tensor& e2, int y, double margin) {
  if (y != 1 && y != -1) fail(ErrorCode::kInvalidArgument, "similarity label must be +1 or -1");
  if (margin < 0.0 || margin > 1.0) fail(ErrorCode::kInvalidArgument, "margin must lie in [0, 1]");
  const auto cos = ad::cosine_similarity(e1, e2);
  if (y == 1) return ad::affine(cos, -1.0, 1.0);
  return ad::relu(ad::affine(cos, 1.0, -margin));
}

ad::Tensor malware_loss(const HiddenStates& hidden, int family_id, const Head& head) {
  const std::vector<int> label{family_id};
  return ad::cross_entropy_rows(head.project_vector(pool_cls(hidden)), label, {true});
}

}  // namespace protst
