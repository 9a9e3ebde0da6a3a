#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "protst/backbone.hpp"
#include "support.hpp"

using namespace protst;
using ad::Tensor;

namespace {

std::vector<std::uint8_t> sample_bytes(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(rng.below(256));
  return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST_CASE("config validation and scales") {
  CHECK_NOTHROW(BackboneConfig::desk().validate());
  CHECK_NOTHROW(BackboneConfig::paper_scale().validate());
  CHECK(BackboneConfig::paper_scale().head_dim() == 64);
  auto bad = BackboneConfig::desk();
  bad.num_heads = 3;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
  bad = BackboneConfig::desk();
  bad.max_len = 2;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
}

TEST_CASE("initialization is seeded and uses the documented statistics") {
  const auto cfg = BackboneConfig::desk();
  const auto a = init_backbone(cfg, 4), b = init_backbone(cfg, 4), c = init_backbone(cfg, 5);
  const auto& ea = a.get(names::kByteEmbedding);
  CHECK(ea.shape() == ad::Shape{261, 64});
  CHECK(max_abs_diff(ea, b.get(names::kByteEmbedding)) == 0.0);
  CHECK(max_abs_diff(ea, c.get(names::kByteEmbedding)) > 0.0);
  double sq = 0.0;
  for (double v : ea.values()) sq += v * v;
  CHECK(std::sqrt(sq / ea.numel()) == doctest::Approx(0.02).epsilon(0.05));
  for (double v : a.get(names::layer(0, "ffn.b1")).values()) CHECK(v == 0.0);
}

TEST_CASE("embedding with zero positional table equals byte rows") {
  const auto cfg = testing::tiny_backbone();
  auto params = init_backbone(cfg, 1);
  for (auto& v : params.get(names::kPosEmbedding).mutable_values()) v = 0.0;
  const Backbone bb(cfg, params);
  const auto seq = encode(sample_bytes(5, 2), 10);
  const auto e = bb.embed(seq);
  const auto& table = params.get(names::kByteEmbedding);
  for (std::size_t i = 0; i < seq.length(); ++i)
    for (std::size_t c = 0; c < cfg.hidden_dim; ++c) CHECK(e.at(i, c) == table.at(seq.ids[i], c));
}

TEST_CASE("a repeated byte differs by the positional rows") {
  const auto cfg = testing::tiny_backbone();
  const auto params = init_backbone(cfg, 1);
  const Backbone bb(cfg, params);
  std::vector<std::uint8_t> bytes(8, 0x11);
  const auto e = bb.embed(encode(bytes, 10));
  const auto& pos = params.get(names::kPosEmbedding);
  for (std::size_t c = 0; c < cfg.hidden_dim; ++c)
    CHECK(e.at(2, c) - e.at(7, c) == doctest::Approx(pos.at(2, c) - pos.at(7, c)).epsilon(1e-12));
}

TEST_CASE("swapping two content bytes changes the embedding") {
  const auto cfg = testing::tiny_backbone();
  const Backbone bb(cfg, init_backbone(cfg, 1));
  auto bytes = sample_bytes(6, 3);
  bytes[1] = 0x10;
  bytes[4] = 0x20;
  const auto a = bb.embed(encode(bytes, 10));
  std::swap(bytes[1], bytes[4]);
  CHECK(max_abs_diff(a, bb.embed(encode(bytes, 10))) > 0.0);
}

TEST_CASE("sequence longer than max_len is rejected") {
  const auto cfg = testing::tiny_backbone(8);
  const Backbone bb(cfg, init_backbone(cfg, 1));
  CHECK_ERROR_CODE(bb.embed(encode(sample_bytes(20, 1), 16)), ErrorCode::kSequenceTooLong);
}

TEST_CASE("self attention matches the extended precision oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.below(8), heads = std::size_t{1} << rng.below(3), d = heads * (1 + rng.below(4));
    const auto x = testing::random_tensor({n, d}, rng, 1.0, false);
    const auto wq = testing::random_tensor({d, d}, rng, 0.5, false);
    const auto wk = testing::random_tensor({d, d}, rng, 0.5, false);
    const auto wv = testing::random_tensor({d, d}, rng, 0.5, false);
    std::vector<bool> mask(n, true);
    for (std::size_t j = 1; j < n; ++j) mask[j] = rng.bernoulli(0.8);
    const auto got = self_attention(x, wq, wk, wv, heads, mask);
    const auto want = oracle::attention(x, wq, wk, wv, heads, mask);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c)
        CHECK(std::abs(got.at(i, c) - static_cast<double>(want[i][c])) <= 1e-10);
  }
}

TEST_CASE("single key attention returns x W_v") {
  Rng rng(2);
  const auto x = testing::random_tensor({1, 4}, rng, 1.0, false);
  const auto w = testing::random_tensor({4, 4}, rng, 1.0, false);
  const auto out = self_attention(x, w, w, w, 2, {true});
  const auto ref = ad::matmul(x, w);
  CHECK(max_abs_diff(out, ref) < 1e-15);
}

TEST_CASE("zero query and key weights give uniform attention") {
  Rng rng(3);
  const auto x = testing::random_tensor({3, 4}, rng, 1.0, false);
  const auto wv = testing::random_tensor({4, 4}, rng, 1.0, false);
  const auto zero = Tensor::zeros({4, 4});
  const auto out = self_attention(x, zero, zero, wv, 2, {true, true, false});
  const auto xv = ad::matmul(x, wv);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i, c) == doctest::Approx((xv.at(0, c) + xv.at(1, c)) / 2.0));
}

TEST_CASE("zero layers reduce encode to embed") {
  auto cfg = testing::tiny_backbone();
  cfg.num_layers = 0;
  const Backbone bb(cfg, init_backbone(cfg, 1));
  const auto seq = encode(sample_bytes(5, 1), 8);
  CHECK(max_abs_diff(bb.encode(seq).states, bb.embed(seq)) == 0.0);
}

TEST_CASE("padding never influences content rows") {
  for (const auto norm : {NormOrder::kPreNorm, NormOrder::kPostNorm}) {
    auto cfg = testing::tiny_backbone();
    cfg.norm_order = norm;
    const Backbone bb(cfg, init_backbone(cfg, 6));
    const auto bytes = sample_bytes(7, 4);
    auto short_seq = encode(bytes, 9), long_seq = encode(bytes, 24);
    const auto a = bb.encode(short_seq), b = bb.encode(long_seq);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t c = 0; c < cfg.hidden_dim; ++c) CHECK(std::abs(a.states.at(i, c) - b.states.at(i, c)) <= 1e-12);
    // Changing a PAD id leaves content rows untouched.
    long_seq.ids[20] = 0x42;
    const auto c = bb.encode(long_seq);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t k = 0; k < cfg.hidden_dim; ++k) CHECK(c.states.at(i, k) == b.states.at(i, k));
    const auto pa = pool_mean(a), pb = pool_mean(b);
    for (std::size_t k = 0; k < cfg.hidden_dim; ++k) CHECK(std::abs(pa.at(k) - pb.at(k)) <= 1e-12);
  }
}

TEST_CASE("one content byte changes the CLS row") {
  const auto cfg = testing::tiny_backbone();
  const Backbone bb(cfg, init_backbone(cfg, 6));
  auto bytes = sample_bytes(7, 4);
  const auto a = pool_cls(bb.encode(encode(bytes, 12)));
  bytes[3] ^= 0x5A;
  CHECK(max_abs_diff(a, pool_cls(bb.encode(encode(bytes, 12)))) > 0.0);
}

TEST_CASE("pooling") {
  Backbone::HiddenStates h;
  h.states = Tensor::from({4, 2}, {9, 9, 1, 1, 3, 3, 7, 7});
  h.attention_mask = {true, true, true, true};
  h.content_mask = {false, true, true, false};
  const auto m = pool_mean(h);
  CHECK(m.at(0) == 2.0);
  CHECK(m.at(1) == 2.0);
  CHECK(pool_cls(h).at(0) == 9.0);
}

TEST_CASE("encoding is deterministic without dropout and stochastic with it") {
  const auto cfg = testing::tiny_backbone();
  const Backbone bb(cfg, init_backbone(cfg, 6));
  const auto seq = encode(sample_bytes(10, 9), 16);
  CHECK(max_abs_diff(bb.encode(seq).states, bb.encode(seq).states) == 0.0);
  Rng r1(1), r2(2);
  CHECK(max_abs_diff(bb.encode(seq, &r1).states, bb.encode(seq, &r2).states) > 0.0);
}

TEST_CASE("every backbone parameter receives gradient") {
  const auto cfg = testing::tiny_backbone();
  auto params = init_backbone(cfg, 6);
  const Backbone bb(cfg, params);
  const auto h = bb.encode(encode(sample_bytes(10, 9), 16));
  ad::sum(ad::mul(h.states, h.states)).backward();
  for (const auto& [name, t] : params.entries()) {
    if (name == names::kByteEmbedding || name == names::kPosEmbedding) continue;
    CAPTURE(name);
    double norm = 0.0;
    for (double g : t.grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("wrong parameter shapes are reported") {
  const auto cfg = testing::tiny_backbone();
  auto other = cfg;
  other.hidden_dim = 4;
  CHECK_ERROR_CODE(Backbone(cfg, init_backbone(other, 1)), ErrorCode::kIncompatibleCheckpoint);
}
