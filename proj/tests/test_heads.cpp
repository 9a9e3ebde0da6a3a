#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "protst/heads.hpp"

using namespace protst;
using ad::Tensor;

namespace {

constexpr std::size_t kDim = 6;

HiddenStates hidden_of(std::size_t n, Rng& rng) {
  HiddenStates h;
  h.states = testing::random_tensor({n, kDim}, rng, 1.0, false);
  h.attention_mask.assign(n, true);
  h.content_mask.assign(n, true);
  h.content_mask.front() = false;
  h.content_mask.back() = false;
  return h;
}

// Head whose logits are exactly its biases, so outputs can be dictated.
ad::ParameterSet bias_only_head(HeadKind kind, const HeadConfig& cfg, const std::vector<std::vector<double>>& biases) {
  auto p = init_head(kind, kDim, cfg, 1);
  for (std::size_t axis = 0; axis < biases.size(); ++axis) {
    const auto suffix = std::to_string(axis);
    for (auto& v : p.get("head." + head_kind_short(kind) + ".w" + suffix).mutable_values()) v = 0.0;
    auto b = p.get("head." + head_kind_short(kind) + ".b" + suffix).mutable_values();
    std::copy(biases[axis].begin(), biases[axis].end(), b.begin());
  }
  return p;
}

std::vector<double> one_hot_logits(std::size_t classes, std::size_t hot) {
  std::vector<double> v(classes, -40.0);
  v[hot] = 40.0;
  return v;
}

// Cross-entropy of one logit row, extended precision.
double ce_oracle(const std::vector<long double>& logits, int label) {
  long double top = logits[0];
  for (auto l : logits) top = std::max(top, l);
  long double z = 0.0L;
  for (auto l : logits) z += std::exp(l - top);
  return static_cast<double>(std::log(z) + top - logits[label]);
}

std::vector<long double> row_logits(const Head& head, const Tensor& rows, std::size_t r, std::size_t axis = 0) {
  const auto out = head.project(rows, axis);
  std::vector<long double> v;
  for (std::size_t c = 0; c < out.cols(); ++c) v.push_back(out.at(r, c));
  return v;
}

}  // namespace

TEST_CASE("kind names and families") {
  for (auto k : kAllHeadKinds) {
    CHECK(parse_head_kind(head_kind_name(k)) == k);
    CHECK(parse_head_kind(head_kind_short(k)) == k);
  }
  CHECK(head_kind_name(HeadKind::kFuncSignature) == "FuncSignature");
  CHECK(head_family(HeadKind::kInstBoundary) == HeadFamily::kTokenLevel);
  CHECK(head_family(HeadKind::kFuncSimilarity) == HeadFamily::kEmbedding);
  CHECK(head_output_sizes(HeadKind::kFuncSignature, {}) == std::vector<std::size_t>{7, 6});
  CHECK(head_output_sizes(HeadKind::kCompilerProv, {}) == std::vector<std::size_t>{2, 6});
  CHECK_ERROR_CODE(parse_head_kind("nope"), ErrorCode::kInvalidArgument);
}

TEST_CASE("uniform logits give ln C") {
  Rng rng(1);
  const HeadConfig cfg;
  const auto h = hidden_of(6, rng);
  SUBCASE("token level") {
    const Head ib(HeadKind::kInstBoundary, cfg, bias_only_head(HeadKind::kInstBoundary, cfg, {{0, 0}}));
    CHECK(token_classification_loss(h, {0, 1, 0, 1, 1, 0}, ib, h.content_mask).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const Head fb(HeadKind::kFuncBoundary, cfg, bias_only_head(HeadKind::kFuncBoundary, cfg, {{0, 0, 0}}));
    CHECK(token_classification_loss(h, {0, 2, 1, 1, 2, 0}, fb, h.content_mask).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("joint pair") {
    const Head fs(HeadKind::kFuncSignature, cfg,
                  bias_only_head(HeadKind::kFuncSignature, cfg, {std::vector<double>(7), std::vector<double>(6)}));
    CHECK(joint_pair_loss(h, 3, 5, fs).item() == doctest::Approx(std::log(7.0) + std::log(6.0)).epsilon(1e-12));
  }
  SUBCASE("malware") {
    const Head mc(HeadKind::kMalwareClass, cfg, bias_only_head(HeadKind::kMalwareClass, cfg, {std::vector<double>(9)}));
    CHECK(malware_loss(h, 4, mc).item() == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  }
  SUBCASE("masked language model") {
    const Head mlm(HeadKind::kMlm, cfg, bias_only_head(HeadKind::kMlm, cfg, {std::vector<double>(261)}));
    MaskPlan plan;
    plan.masked_positions = {1, 3};
    plan.originals = {0x10, 0xFF};
    plan.replacement = {Replacement::kMaskToken, Replacement::kRandomByte};
    CHECK(mlm_loss(h, plan, mlm).item() == doctest::Approx(std::log(261.0)).epsilon(1e-12));
  }
  SUBCASE("function name") {
    const Head fn(HeadKind::kFuncName, cfg, bias_only_head(HeadKind::kFuncName, cfg, {std::vector<double>(32)}));
    std::vector<int> labels(32, 0);
    labels[3] = labels[9] = 1;
    CHECK(multilabel_name_loss(h, labels, fn).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("confident correct logits give zero loss") {
  Rng rng(2);
  const HeadConfig cfg;
  const auto h = hidden_of(5, rng);
  const Head mc(HeadKind::kMalwareClass, cfg, bias_only_head(HeadKind::kMalwareClass, cfg, {one_hot_logits(9, 2)}));
  CHECK(malware_loss(h, 2, mc).item() <= 1e-9);
  CHECK(malware_loss(h, 3, mc).item() > 1.0);
  const Head cp(HeadKind::kCompilerProv, cfg,
                bias_only_head(HeadKind::kCompilerProv, cfg, {one_hot_logits(2, 1), one_hot_logits(6, 4)}));
  CHECK(joint_pair_loss(h, 1, 4, cp).item() <= 1e-9);
  std::vector<double> name_logits(32, -40.0);
  name_logits[5] = 40.0;
  const Head fn(HeadKind::kFuncName, cfg, bias_only_head(HeadKind::kFuncName, cfg, {name_logits}));
  std::vector<int> labels(32, 0);
  labels[5] = 1;
  CHECK(multilabel_name_loss(h, labels, fn).item() <= 1e-9);
}

TEST_CASE("random instances match the cross-entropy oracle") {
  Rng rng(3);
  const HeadConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = hidden_of(7, rng);
    const auto fb_params = init_head(HeadKind::kFuncBoundary, kDim, cfg, rng.next());
    const Head fb(HeadKind::kFuncBoundary, cfg, fb_params);
    std::vector<int> labels(7);
    for (auto& l : labels) l = rng.range(0, 2);
    double expected = 0.0;
    for (std::size_t r = 1; r + 1 < 7; ++r) expected += ce_oracle(row_logits(fb, h.states, r), labels[r]) / 5.0;
    CHECK(std::abs(token_classification_loss(h, labels, fb, h.content_mask).item() - expected) <= 1e-10);

    const Head fs(HeadKind::kFuncSignature, cfg, init_head(HeadKind::kFuncSignature, kDim, cfg, rng.next()));
    const auto cls = ad::reshape(pool_cls(h), {1, kDim});
    const int a = rng.range(0, 6), b = rng.range(0, 5);
    const double pair = ce_oracle(row_logits(fs, cls, 0, 0), a) + ce_oracle(row_logits(fs, cls, 0, 1), b);
    CHECK(std::abs(joint_pair_loss(h, a, b, fs).item() - pair) <= 1e-10);

    const Head mlm(HeadKind::kMlm, cfg, init_head(HeadKind::kMlm, kDim, cfg, rng.next()));
    MaskPlan plan;
    plan.masked_positions = {2, 4};
    plan.originals = {rng.range(0, 255), rng.range(0, 255)};
    plan.replacement = {Replacement::kMaskToken, Replacement::kMaskToken};
    const double mlm_expected =
        (ce_oracle(row_logits(mlm, h.states, 2), plan.originals[0]) + ce_oracle(row_logits(mlm, h.states, 4), plan.originals[1])) / 2.0;
    CHECK(std::abs(mlm_loss(h, plan, mlm).item() - mlm_expected) <= 1e-10);

    const Head fn(HeadKind::kFuncName, cfg, init_head(HeadKind::kFuncName, kDim, cfg, rng.next()));
    std::vector<int> words(32, 0);
    words[rng.below(32)] = 1;
    const auto logits = row_logits(fn, cls, 0);
    long double bce = 0.0L;
    for (std::size_t i = 0; i < 32; ++i) {
      const long double p = 1.0L / (1.0L + std::exp(-logits[i]));
      bce -= words[i] ? std::log(p) : std::log(1.0L - p);
    }
    CHECK(std::abs(multilabel_name_loss(h, words, fn).item() - static_cast<double>(bce / 32.0L)) <= 1e-10);
  }
}

TEST_CASE("token losses ignore framing positions") {
  Rng rng(4);
  const HeadConfig cfg;
  auto h = hidden_of(6, rng);
  const Head ib(HeadKind::kInstBoundary, cfg, init_head(HeadKind::kInstBoundary, kDim, cfg, 2));
  const std::vector<int> labels{0, 1, 0, 1, 1, 0};
  const double before = token_classification_loss(h, labels, ib, h.content_mask).item();
  auto v = h.states.mutable_values();
  for (std::size_t c = 0; c < kDim; ++c) {
    v[c] += 3.0;
    v[5 * kDim + c] -= 2.0;
  }
  CHECK(token_classification_loss(h, labels, ib, h.content_mask).item() == before);
}

TEST_CASE("joint pair loss is the sum of its axes") {
  Rng rng(5);
  const HeadConfig cfg;
  const auto h = hidden_of(4, rng);
  const Head cp(HeadKind::kCompilerProv, cfg, init_head(HeadKind::kCompilerProv, kDim, cfg, 3));
  const auto cls = pool_cls(h);
  const auto a = ad::cross_entropy_rows(cp.project_vector(cls, 0), std::vector<int>{1}, {true});
  const auto b = ad::cross_entropy_rows(cp.project_vector(cls, 1), std::vector<int>{4}, {true});
  CHECK(joint_pair_loss(h, 1, 4, cp).item() == a.item() + b.item());
}

TEST_CASE("cosine embedding loss table") {
  const auto e = Tensor::from({2}, {1.0, 0.0});
  CHECK(cosine_embedding_loss(e, e, 1, 0.5).item() == doctest::Approx(0.0));
  // cos = 0.8
  const auto f = Tensor::from({2}, {0.8, 0.6});
  CHECK(cosine_embedding_loss(e, f, -1, 0.5).item() == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(cosine_embedding_loss(e, f, 1, 0.5).item() == doctest::Approx(0.2).epsilon(1e-12));
  // cos = 0.3
  const auto g = Tensor::from({2}, {0.3, std::sqrt(1.0 - 0.09)});
  CHECK(cosine_embedding_loss(e, g, -1, 0.5).item() == 0.0);
  CHECK_ERROR_CODE(cosine_embedding_loss(e, Tensor::zeros({2}), 1, 0.5), ErrorCode::kZeroNorm);
  CHECK_ERROR_CODE(cosine_embedding_loss(e, f, 0, 0.5), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(cosine_embedding_loss(e, f, 1, 1.5), ErrorCode::kInvalidArgument);
}

TEST_CASE("function embedding") {
  Rng rng(6);
  HeadConfig cfg;
  cfg.mlp_activation = Activation::kIdentity;
  auto params = init_head(HeadKind::kFuncSimilarity, kDim, cfg, 4);
  // Identity MLP: w1 = I, w2 = I, zero biases.
  for (const auto* name : {"head.fsim.mlp.w1", "head.fsim.mlp.w2"}) {
    auto w = params.get(name).mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i / kDim == i % kDim) ? 1.0 : 0.0;
  }
  const Head head(HeadKind::kFuncSimilarity, cfg, params);
  const auto h = hidden_of(5, rng);
  const auto emb = function_embedding(h, head), mean = pool_mean(h);
  for (std::size_t c = 0; c < kDim; ++c) CHECK(emb.at(c) == doctest::Approx(mean.at(c)).epsilon(1e-14));
  CHECK(cosine_embedding_loss(emb, function_embedding(h, head), 1, 0.5).item() == doctest::Approx(0.0));
}

TEST_CASE("label errors") {
  Rng rng(7);
  const HeadConfig cfg;
  const auto h = hidden_of(4, rng);
  const Head ib(HeadKind::kInstBoundary, cfg, init_head(HeadKind::kInstBoundary, kDim, cfg, 1));
  CHECK_ERROR_CODE(token_classification_loss(h, {0, 2, 0, 0}, ib, h.content_mask), ErrorCode::kLabelRange);
  const Head mc(HeadKind::kMalwareClass, cfg, init_head(HeadKind::kMalwareClass, kDim, cfg, 1));
  CHECK_ERROR_CODE(malware_loss(h, 9, mc), ErrorCode::kLabelRange);
  const Head fn(HeadKind::kFuncName, cfg, init_head(HeadKind::kFuncName, kDim, cfg, 1));
  CHECK_ERROR_CODE(multilabel_name_loss(h, std::vector<int>(32, 0), fn), ErrorCode::kDegenerateLabel);
  const Head mlm(HeadKind::kMlm, cfg, init_head(HeadKind::kMlm, kDim, cfg, 1));
  CHECK_ERROR_CODE(mlm_loss(h, MaskPlan{}, mlm), ErrorCode::kEmptyMaskPlan);
  HeadConfig bad;
  bad.margin = 2.0;
  CHECK_ERROR_CODE(init_head(HeadKind::kFuncSimilarity, kDim, bad, 1), ErrorCode::kInvalidArgument);
}

TEST_CASE("every head loss passes the finite-difference check") {
  Rng rng(8);
  for (const auto& c : testing::head_loss_cases()) {
    CAPTURE(c.name);
    for (int i = 0; i < 5; ++i) CHECK(c.run(rng).max_rel_error < 1e-4);
  }
}

TEST_CASE("losses are non-negative on random instances") {
  Rng rng(9);
  const HeadConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const auto h = hidden_of(5, rng);
    const Head mc(HeadKind::kMalwareClass, cfg, init_head(HeadKind::kMalwareClass, kDim, cfg, rng.next()));
    CHECK(malware_loss(h, rng.range(0, 8), mc).item() >= 0.0);
    const auto a = testing::random_tensor({kDim}, rng, 1.0, false), b = testing::random_tensor({kDim}, rng, 1.0, false);
    CHECK(cosine_embedding_loss(a, b, -1, 0.5).item() >= 0.0);
    CHECK(cosine_embedding_loss(a, b, 1, 0.5).item() >= 0.0);
  }
}
