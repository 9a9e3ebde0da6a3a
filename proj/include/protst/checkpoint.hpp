#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protst/autodiff.hpp"
#include "protst/backbone.hpp"
#include "protst/heads.hpp"

namespace protst {

// Backbone (and optionally head) parameters produced by one pipeline node.
//
// On disk: "PROTSTCK", u32 version, u32 metadata length, metadata text
// (name=value lines: configuration, lineage and one "param=" line per
// tensor), then every tensor in lexicographic name order as little-endian
// float32, then a SHA-256 digest of all preceding bytes. Values held in
// memory are always float32-representable, so save/load is lossless.
struct ParameterCheckpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  BackboneConfig config;
  std::string head_kind;  // empty when no head is stored
  HeadConfig head_config;
  ad::ParameterSet params;
  std::string node_id;
  std::vector<std::string> lineage;        // teacher node ids, root first
  std::vector<std::string> lineage_kinds;  // matching head kinds
  std::string fingerprint;                 // stage inputs this checkpoint was trained from
  std::string digest;                      // hex SHA-256 of the serialized payload

  ad::ParameterSet backbone_params() const { return params.with_prefix("backbone."); }
  ad::ParameterSet head_params() const { return params.with_prefix("head."); }
};

// Rounds every value to the nearest float32.
void round_to_float32(ad::ParameterSet& params);

// Builds a checkpoint from live parameters: values are copied, rounded and digested.
ParameterCheckpoint make_checkpoint(const BackboneConfig& config, const ad::ParameterSet& params,
                                    const std::string& node_id, std::vector<std::string> lineage,
                                    std::vector<std::string> lineage_kinds, const std::string& head_kind = "",
                                    const HeadConfig& head_config = {}, const std::string& fingerprint = "");

std::vector<std::uint8_t> serialize_checkpoint(const ParameterCheckpoint& ckpt);
ParameterCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParameterCheckpoint& ckpt, const std::string& path);
ParameterCheckpoint load_checkpoint(const std::string& path);

std::string backbone_config_text(const BackboneConfig& config);

}  // namespace protst
