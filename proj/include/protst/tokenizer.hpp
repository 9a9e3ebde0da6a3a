#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protst/common.hpp"

namespace protst {

// Byte vocabulary: ids 0-255 are the byte values themselves, followed by
// five special tokens.
struct Vocabulary {
  static constexpr int kByteCount = 256;
  static constexpr int kCls = 256;
  static constexpr int kSep = 257;
  static constexpr int kPad = 258;
  static constexpr int kUnk = 259;
  static constexpr int kMask = 260;
  static constexpr int kSize = 261;

  static constexpr int byte_id(std::uint8_t b) { return static_cast<int>(b); }
  static constexpr bool is_byte(int id) { return id >= 0 && id < kByteCount; }
  static constexpr bool is_special(int id) { return id >= kByteCount && id < kSize; }
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<bool> attention_mask;  // false on PAD
  std::size_t raw_len = 0;           // byte count before truncation

  std::size_t length() const { return ids.size(); }
  // Number of byte tokens between CLS and SEP.
  std::size_t content_len() const;
  // True on byte positions (excludes CLS, SEP and PAD).
  std::vector<bool> content_mask() const;
};

enum class Replacement : std::uint8_t { kMaskToken, kRandomByte };

struct MaskPlan {
  std::vector<std::size_t> masked_positions;  // ascending
  std::vector<int> originals;
  std::vector<Replacement> replacement;

  std::size_t size() const { return masked_positions.size(); }
  bool empty() const { return masked_positions.empty(); }
};

struct MaskingConfig {
  double p_mask = 0.2;
  double p_replace = 0.5;
};

// Encodes bytes as [CLS] b0 b1 ... [SEP] [PAD]...; output length is max_len exactly.
TokenSequence encode(std::span<const std::uint8_t> bytes, std::size_t max_len);

// Byte content of a sequence; special tokens are dropped.
std::vector<std::uint8_t> decode(const TokenSequence& seq);

std::size_t masked_count(std::size_t content_len, double p_mask);

struct MaskedSequence {
  TokenSequence sequence;
  MaskPlan plan;
};

// Selects max(1, round(p_mask * content_len)) distinct content positions and
// replaces each with [MASK] (probability p_replace) or a uniformly random byte.
MaskedSequence apply_mlm_mask(const TokenSequence& seq, double p_mask, double p_replace, std::uint64_t seed);

}  // namespace protst
