#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "protst/checkpoint.hpp"
#include "protst/digest.hpp"
#include "support.hpp"

using namespace protst;

namespace {

ParameterCheckpoint sample_checkpoint() {
  const auto cfg = testing::tiny_backbone();
  auto params = init_backbone(cfg, 9);
  HeadConfig hc;
  hc.margin = 0.25;
  params.merge(init_head(HeadKind::kFuncSignature, cfg.hidden_dim, hc, 4));
  return make_checkpoint(cfg, params, "fsig", {"mlm", "ib"}, {"MLM", "InstBoundary"}, "FuncSignature", hc, "abc123");
}

bool bitwise_equal(const ad::ParameterSet& a, const ad::ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a.entries()) {
    if (!b.contains(name)) return false;
    const auto& u = b.get(name);
    if (t.shape() != u.shape()) return false;
    if (std::memcmp(t.values().data(), u.values().data(), t.numel() * sizeof(double)) != 0) return false;
  }
  return true;
}

// Replaces the trailer so that a tampered body still passes the digest check.
void reseal(std::vector<std::uint8_t>& bytes) {
  const auto body = bytes.size() - 32;
  const auto d = sha256(std::span<const std::uint8_t>(bytes.data(), body));
  std::copy(d.begin(), d.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body));
}

}  // namespace

TEST_CASE("values are rounded to single precision") {
  const auto ckpt = sample_checkpoint();
  for (const auto& [_, t] : ckpt.params.entries())
    for (double v : t.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("save and load reproduce the checkpoint bit for bit") {
  testing::TempDir dir("ckpt");
  const auto ckpt = sample_checkpoint();
  save_checkpoint(ckpt, dir.file("a.ckpt"));
  const auto back = load_checkpoint(dir.file("a.ckpt"));
  CHECK(back.digest == ckpt.digest);
  CHECK(bitwise_equal(back.params, ckpt.params));
  CHECK(back.config == ckpt.config);
  CHECK(back.node_id == "fsig");
  CHECK(back.lineage == std::vector<std::string>{"mlm", "ib"});
  CHECK(back.lineage_kinds == std::vector<std::string>{"MLM", "InstBoundary"});
  CHECK(back.head_kind == "FuncSignature");
  CHECK(back.head_config.margin == 0.25);
  CHECK(back.fingerprint == "abc123");
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
  CHECK(back.backbone_params().size() + back.head_params().size() == back.params.size());
}

TEST_CASE("any single flipped byte is detected") {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    auto corrupt = bytes;
    corrupt[rng.below(corrupt.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    CHECK_ERROR_CODE(deserialize_checkpoint(corrupt), ErrorCode::kChecksum);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_ERROR_CODE(deserialize_checkpoint(truncated), ErrorCode::kChecksum);
}

TEST_CASE("unknown versions and foreign files are rejected") {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  auto future = bytes;
  future[8] = 2;
  reseal(future);
  CHECK_ERROR_CODE(deserialize_checkpoint(future), ErrorCode::kVersion);
  auto foreign = bytes;
  foreign[0] = 'X';
  reseal(foreign);
  CHECK_ERROR_CODE(deserialize_checkpoint(foreign), ErrorCode::kVersion);
}

TEST_CASE("missing files raise an io error") {
  CHECK_ERROR_CODE(load_checkpoint("/nonexistent/dir/x.ckpt"), ErrorCode::kIo);
}

TEST_CASE("backbone config text is canonical") {
  const auto a = backbone_config_text(BackboneConfig::desk());
  CHECK(a == backbone_config_text(BackboneConfig::desk()));
  CHECK(a != backbone_config_text(BackboneConfig::paper_scale()));
  CHECK(a.find("backbone.hidden_dim=64") != std::string::npos);
}

TEST_CASE("checkpoints without a head") {
  const auto cfg = testing::tiny_backbone();
  const auto ckpt = make_checkpoint(cfg, init_backbone(cfg, 1), "root", {}, {});
  const auto back = deserialize_checkpoint(serialize_checkpoint(ckpt));
  CHECK(back.head_kind.empty());
  CHECK(back.lineage.empty());
  CHECK(back.head_params().size() == 0);
}
