#pragma once

#include <string>
#include <vector>

#include "protst/autodiff.hpp"
#include "protst/tokenizer.hpp"

namespace protst {

enum class Activation { kGelu, kRelu, kIdentity };
enum class NormOrder { kPreNorm, kPostNorm };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

struct BackboneConfig {
  std::size_t vocab_size = Vocabulary::kSize;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 128;
  double dropout = 0.1;
  Activation activation = Activation::kGelu;
  NormOrder norm_order = NormOrder::kPreNorm;

  std::size_t head_dim() const { return hidden_dim / num_heads; }
  void validate() const;

  static BackboneConfig desk() { return {}; }
  static BackboneConfig paper_scale() {
    BackboneConfig c;
    c.hidden_dim = 768;
    c.num_layers = 12;
    c.num_heads = 12;
    c.ffn_dim = 3072;
    c.max_len = 512;
    return c;
  }

  // Fields that must agree for a checkpoint to be loaded into a model.
  bool compatible_with(const BackboneConfig& other) const;
  bool operator==(const BackboneConfig&) const = default;
};

// Parameter naming scheme, stable across checkpoints.
namespace names {
inline const std::string kByteEmbedding = "backbone.embed.byte";
inline const std::string kPosEmbedding = "backbone.embed.pos";
inline const std::string kFinalNormGamma = "backbone.final_norm.gamma";
inline const std::string kFinalNormBeta = "backbone.final_norm.beta";
std::string layer(std::size_t index, const std::string& leaf);
}  // namespace names

// normal(0, 0.02) weights, zero biases, unit norm scales.
ad::ParameterSet init_backbone(const BackboneConfig& config, std::uint64_t seed);

// Borrowed view over the backbone entries of a ParameterSet.
class Backbone {
 public:
  Backbone(BackboneConfig config, const ad::ParameterSet& params);

  const BackboneConfig& config() const { return config_; }

  struct Layer {
    ad::Tensor wq, wk, wv, wo, bo;
    ad::Tensor norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
    ad::Tensor w1, b1, w2, b2;
  };
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  ad::Tensor embed(const TokenSequence& seq) const;

  struct HiddenStates {
    ad::Tensor states;  // L x d
    std::vector<bool> attention_mask;
    std::vector<bool> content_mask;
  };

  // Full encoder stack. A non-null rng enables dropout.
  HiddenStates encode(const TokenSequence& seq, Rng* dropout_rng = nullptr) const;

 private:
  ad::Tensor block(const ad::Tensor& x, const Layer& layer, const std::vector<bool>& mask, Rng* rng) const;

  BackboneConfig config_;
  ad::Tensor byte_embedding_, pos_embedding_, final_gamma_, final_beta_;
  std::vector<Layer> layers_;
};

using HiddenStates = Backbone::HiddenStates;

// Multi-head scaled dot-product attention before the output projection:
// per head, softmax(X Wq (X Wk)^T / sqrt(d_k)) X Wv restricted to unmasked
// keys; heads are concatenated along columns.
ad::Tensor self_attention(const ad::Tensor& x, const ad::Tensor& wq, const ad::Tensor& wk, const ad::Tensor& wv,
                          std::size_t num_heads, const std::vector<bool>& key_mask);

ad::Tensor activate(const ad::Tensor& x, Activation a);

ad::Tensor pool_cls(const HiddenStates& h);
// Mean over content rows; CLS, SEP and PAD excluded.
ad::Tensor pool_mean(const HiddenStates& h);

}  // namespace protst
