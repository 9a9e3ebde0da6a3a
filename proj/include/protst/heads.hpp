#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "protst/autodiff.hpp"
#include "protst/backbone.hpp"
#include "protst/tokenizer.hpp"

namespace protst {

enum class HeadKind {
  kMlm,
  kInstBoundary,
  kFuncBoundary,
  kFuncSignature,
  kFuncSimilarity,
  kFuncName,
  kCompilerProv,
  kMalwareClass,
};

inline constexpr std::array<HeadKind, 8> kAllHeadKinds = {
    HeadKind::kMlm,           HeadKind::kInstBoundary, HeadKind::kFuncBoundary, HeadKind::kFuncSignature,
    HeadKind::kFuncSimilarity, HeadKind::kFuncName,    HeadKind::kCompilerProv, HeadKind::kMalwareClass,
};

std::string head_kind_name(HeadKind kind);   // "MLM", "InstBoundary", ...
std::string head_kind_short(HeadKind kind);  // "mlm", "ib", ...
HeadKind parse_head_kind(const std::string& text);  // accepts either form

enum class HeadFamily { kMaskedLm, kTokenLevel, kSequenceLevel, kEmbedding };
HeadFamily head_family(HeadKind kind);

// Class counts. Argument count {0,1,2,3,4,5,others}; return type
// {int,char,void,double,bool,others}; compiler {gcc,clang}; optimization
// {O0,O1,O2,O3,Os,Ofast}.
inline constexpr int kInstClasses = 2;  // SI, MI
inline constexpr int kFuncClasses = 3;  // SF, MF, EF
inline constexpr int kArgClasses = 7;
inline constexpr int kRetClasses = 6;
inline constexpr int kCompilerClasses = 2;
inline constexpr int kOptClasses = 6;
inline constexpr int kDefaultMalwareFamilies = 9;
inline constexpr int kDefaultNameVocab = 32;

struct HeadConfig {
  std::size_t malware_families = kDefaultMalwareFamilies;
  std::size_t name_vocab = kDefaultNameVocab;
  double margin = 0.5;  // cosine embedding loss, in [0, 1]
  Activation mlp_activation = Activation::kGelu;
};

// Output arities of the projection(s) a kind owns; empty for the embedding head.
std::vector<std::size_t> head_output_sizes(HeadKind kind, const HeadConfig& config);

// Fresh head parameters, named "head.<short>.*".
ad::ParameterSet init_head(HeadKind kind, std::size_t hidden_dim, const HeadConfig& config, std::uint64_t seed);

// Borrowed view over one kind's head parameters.
class Head {
 public:
  Head(HeadKind kind, HeadConfig config, const ad::ParameterSet& params);

  HeadKind kind() const { return kind_; }
  const HeadConfig& config() const { return config_; }

  // Logits of projection `axis` applied to every row of `rows` (L x d).
  ad::Tensor project(const ad::Tensor& rows, std::size_t axis = 0) const;
  // Logits of projection `axis` applied to a single vector.
  ad::Tensor project_vector(const ad::Tensor& vec, std::size_t axis = 0) const;
  // Similarity embedding head: MLP(pool_mean(h)).
  ad::Tensor mlp(const ad::Tensor& vec) const;

  std::size_t axes() const { return weights_.size(); }

 private:
  HeadKind kind_;
  HeadConfig config_;
  std::vector<ad::Tensor> weights_, biases_;
  ad::Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

// Mean NLL of the original bytes at the masked positions only.
ad::Tensor mlm_loss(const HiddenStates& hidden, const MaskPlan& plan, const Head& head);

// Mean cross-entropy over positions where content_mask is true.
ad::Tensor token_classification_loss(const HiddenStates& hidden, const std::vector<int>& labels, const Head& head,
                                     const std::vector<bool>& content_mask);

// Sum of two cross-entropies from parallel projections of the CLS state.
ad::Tensor joint_pair_loss(const HiddenStates& hidden, int class_a, int class_b, const Head& head);

// Mean sigmoid binary cross-entropy over the name vocabulary, CLS state.
ad::Tensor multilabel_name_loss(const HiddenStates& hidden, const std::vector<int>& name_labels, const Head& head);

// F(x) = MLP(pool_mean(hidden)).
ad::Tensor function_embedding(const HiddenStates& hidden, const Head& head);

// y=+1: 1 - cos(e1,e2); y=-1: max(0, cos(e1,e2) - margin).
ad::Tensor cosine_embedding_loss(const ad::Tensor& e1, const ad::Tensor& e2, int y, double margin);

// Cross-entropy of the CLS projection against one family id.
ad::Tensor malware_loss(const HiddenStates& hidden, int family_id, const Head& head);

}  // namespace protst
