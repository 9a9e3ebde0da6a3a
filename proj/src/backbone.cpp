#include "protst/backbone.hpp"

#include <cmath>

namespace protst {

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  fail(ErrorCode::kInvalidArgument, "unknown activation " + name);
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "gelu";
}

void BackboneConfig::validate() const {
  if (num_heads == 0 || hidden_dim == 0 || hidden_dim % num_heads != 0) {
    fail(ErrorCode::kInvalidArgument, "hidden_dim must be divisible by num_heads");
  }
  if (max_len < 3) fail(ErrorCode::kInvalidArgument, "max_len must be at least 3");
  if (vocab_size != Vocabulary::kSize) fail(ErrorCode::kInvalidArgument, "vocab_size must be 261");
  if (dropout < 0.0 || dropout >= 1.0) fail(ErrorCode::kInvalidArgument, "dropout must lie in [0, 1)");
}

bool BackboneConfig::compatible_with(const BackboneConfig& other) const {
  return vocab_size == other.vocab_size && hidden_dim == other.hidden_dim && num_layers == other.num_layers &&
         num_heads == other.num_heads && ffn_dim == other.ffn_dim && max_len == other.max_len &&
         norm_order == other.norm_order;
}

namespace names {
std::string layer(std::size_t index, const std::string& leaf) {
  return "backbone.layer" + std::to_string(index) + "." + leaf;
}
}  // namespace names

namespace {

ad::Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, 0.02);
  return ad::Tensor::from({rows, cols}, std::move(v), true);
}

}  // namespace

ad::ParameterSet init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto d = config.hidden_dim;
  ad::ParameterSet p;
  p.add(names::kByteEmbedding, normal_matrix(config.vocab_size, d, rng));
  p.add(names::kPosEmbedding, normal_matrix(config.max_len, d, rng));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    p.add(names::layer(l, "attn.wq"), normal_matrix(d, d, rng));
    p.add(names::layer(l, "attn.wk"), normal_matrix(d, d, rng));
    p.add(names::layer(l, "attn.wv"), normal_matrix(d, d, rng));
    p.add(names::layer(l, "attn.wo"), normal_matrix(d, d, rng));
    p.add(names::layer(l, "attn.bo"), ad::Tensor::zeros({d}, true));
    p.add(names::layer(l, "norm1.gamma"), ad::Tensor::full({d}, 1.0, true));
    p.add(names::layer(l, "norm1.beta"), ad::Tensor::zeros({d}, true));
    p.add(names::layer(l, "norm2.gamma"), ad::Tensor::full({d}, 1.0, true));
    p.add(names::layer(l, "norm2.beta"), ad::Tensor::zeros({d}, true));
    p.add(names::layer(l, "ffn.w1"), normal_matrix(d, config.ffn_dim, rng));
    p.add(names::layer(l, "ffn.b1"), ad::Tensor::zeros({config.ffn_dim}, true));
    p.add(names::layer(l, "ffn.w2"), normal_matrix(config.ffn_dim, d, rng));
    p.add(names::layer(l, "ffn.b2"), ad::Tensor::zeros({d}, true));
  }
  p.add(names::kFinalNormGamma, ad::Tensor::full({d}, 1.0, true));
  p.add(names::kFinalNormBeta, ad::Tensor::zeros({d}, true));
  return p;
}

Backbone::Backbone(BackboneConfig config, const ad::ParameterSet& params) : config_(std::move(config)) {
  config_.validate();
  auto fetch = [&](const std::string& name, const ad::Shape& shape) {
    const auto& t = params.get(name);
    if (t.shape() != shape) {
      fail(ErrorCode::kIncompatibleCheckpoint,
           name + " has shape " + ad::shape_string(t.shape()) + ", expected " + ad::shape_string(shape));
    }
    return t;
  };
  const auto d = config_.hidden_dim, f = config_.ffn_dim;
  byte_embedding_ = fetch(names::kByteEmbedding, {config_.vocab_size, d});
  pos_embedding_ = fetch(names::kPosEmbedding, {config_.max_len, d});
  final_gamma_ = fetch(names::kFinalNormGamma, {d});
  final_beta_ = fetch(names::kFinalNormBeta, {d});
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    Layer layer;
    layer.wq = fetch(names::layer(l, "attn.wq"), {d, d});
    layer.wk = fetch(names::layer(l, "attn.wk"), {d, d});
    layer.wv = fetch(names::layer(l, "attn.wv"), {d, d});
    layer.wo = fetch(names::layer(l, "attn.wo"), {d, d});
    layer.bo = fetch(names::layer(l, "attn.bo"), {d});
    layer.norm1_gamma = fetch(names::layer(l, "norm1.gamma"), {d});
    layer.norm1_beta = fetch(names::layer(l, "norm1.beta"), {d});
    layer.norm2_gamma = fetch(names::layer(l, "norm2.gamma"), {d});
    layer.norm2_beta = fetch(names::layer(l, "norm2.beta"), {d});
    layer.w1 = fetch(names::layer(l, "ffn.w1"), {d, f});
    layer.b1 = fetch(names::layer(l, "ffn.b1"), {f});
    layer.w2 = fetch(names::layer(l, "ffn.w2"), {f, d});
    layer.b2 = fetch(names::layer(l, "ffn.b2"), {d});
    layers_.push_back(std::move(layer));
  }
}

ad::Tensor Backbone::embed(const TokenSequence& seq) const {
  const auto n = seq.ids.size();
  if (n > config_.max_len) {
    fail(ErrorCode::kSequenceTooLong,
         "sequence of length " + std::to_string(n) + " exceeds max_len " + std::to_string(config_.max_len));
  }
  for (int id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  return ad::embedding(byte_embedding_, seq.ids) + ad::embedding(pos_embedding_, positions);
}

ad::Tensor activate(const ad::Tensor& x, Activation a) {
  switch (a) {
    case Activation::kGelu: return ad::gelu(x);
    case Activation::kRelu: return ad::relu(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

ad::Tensor self_attention(const ad::Tensor& x, const ad::Tensor& wq, const ad::Tensor& wk, const ad::Tensor& wv,
                          std::size_t num_heads, const std::vector<bool>& key_mask) {
  const auto d = wq.cols();
  if (num_heads == 0 || d % num_heads != 0) fail(ErrorCode::kInvalidArgument, "head count must divide width");
  const auto dk = d / num_heads;
  const auto q = ad::matmul(x, wq);
  const auto k = ad::matmul(x, wk);
  const auto v = ad::matmul(x, wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  if (num_heads == 1) {
    return ad::matmul(ad::masked_softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt), key_mask), v);
  }
  std::vector<ad::Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto qh = ad::slice_cols(q, h * dk, dk);
    const auto kh = ad::slice_cols(k, h * dk, dk);
    const auto vh = ad::slice_cols(v, h * dk, dk);
    const auto weights = ad::masked_softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), key_mask);
    heads.push_back(ad::matmul(weights, vh));
  }
  return ad::concat_cols(heads);
}

ad::Tensor Backbone::block(const ad::Tensor& x, const Layer& layer, const std::vector<bool>& mask, Rng* rng) const {
  auto attend = [&](const ad::Tensor& in) {
    auto a = self_attention(in, layer.wq, layer.wk, layer.wv, config_.num_heads, mask);
    a = ad::add_row(ad::matmul(a, layer.wo), layer.bo);
    return rng ? ad::dropout(a, config_.dropout, *rng) : a;
  };
  auto feed_forward = [&](const ad::Tensor& in) {
    auto h = activate(ad::add_row(ad::matmul(in, layer.w1), layer.b1), config_.activation);
    h = ad::add_row(ad::matmul(h, layer.w2), layer.b2);
    return rng ? ad::dropout(h, config_.dropout, *rng) : h;
  };
  if (config_.norm_order == NormOrder::kPreNorm) {
    auto h = x + attend(ad::layer_norm_rows(x, layer.norm1_gamma, layer.norm1_beta));
    return h + feed_forward(ad::layer_norm_rows(h, layer.norm2_gamma, layer.norm2_beta));
  }
  auto h = ad::layer_norm_rows(x + attend(x), layer.norm1_gamma, layer.norm1_beta);
  return ad::layer_norm_rows(h + feed_forward(h), layer.norm2_gamma, layer.norm2_beta);
}

Backbone::HiddenStates Backbone::encode(const TokenSequence& seq, Rng* dropout_rng) const {
  HiddenStates out;
  out.attention_mask = seq.attention_mask;
  out.content_mask = seq.content_mask();
  auto x = embed(seq);
  if (config_.num_layers == 0) {
    out.states = x;
    return out;
  }
  if (dropout_rng) x = ad::dropout(x, config_.dropout, *dropout_rng);
  for (const auto& layer : layers_) x = block(x, layer, seq.attention_mask, dropout_rng);
  if (config_.norm_order == NormOrder::kPreNorm) x = ad::layer_norm_rows(x, final_gamma_, final_beta_);
  out.states = x;
  return out;
}

ad::Tensor pool_cls(const HiddenStates& h) { return ad::select_row(h.states, 0); }

ad::Tensor pool_mean(const HiddenStates& h) { return ad::masked_mean_rows(h.states, h.content_mask); }

}  // namespace protst
