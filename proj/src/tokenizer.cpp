#include "protst/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace protst {

std::size_t TokenSequence::content_len() const {
  std::size_t n = 0;
  for (int id : ids)
    if (Vocabulary::is_byte(id) || id == Vocabulary::kMask || id == Vocabulary::kUnk) ++n;
  return n;
}

std::vector<bool> TokenSequence::content_mask() const {
  std::vector<bool> mask(ids.size(), false);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    mask[i] = id != Vocabulary::kCls && id != Vocabulary::kSep && id != Vocabulary::kPad;
  }
  return mask;
}

TokenSequence encode(std::span<const std::uint8_t> bytes, std::size_t max_len) {
  if (bytes.empty()) fail(ErrorCode::kEmptyInput, "cannot encode an empty byte string");
  if (max_len < 3) fail(ErrorCode::kInvalidArgument, "max_len must leave room for CLS, one byte and SEP");

  const std::size_t kept = std::min(bytes.size(), max_len - 2);
  TokenSequence seq;
  seq.raw_len = bytes.size();
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kCls);
  for (std::size_t i = 0; i < kept; ++i) seq.ids.push_back(Vocabulary::byte_id(bytes[i]));
  seq.ids.push_back(Vocabulary::kSep);
  seq.attention_mask.assign(seq.ids.size(), true);
  while (seq.ids.size() < max_len) {
    seq.ids.push_back(Vocabulary::kPad);
    seq.attention_mask.push_back(false);
  }
  return seq;
}

std::vector<std::uint8_t> decode(const TokenSequence& seq) {
  std::vector<std::uint8_t> out;
  for (int id : seq.ids)
    if (Vocabulary::is_byte(id)) out.push_back(static_cast<std::uint8_t>(id));
  return out;
}

std::size_t masked_count(std::size_t content_len, double p_mask) {
  const auto n = static_cast<std::size_t>(std::llround(p_mask * static_cast<double>(content_len)));
  return std::min(content_len, std::max<std::size_t>(1, n));
}

MaskedSequence apply_mlm_mask(const TokenSequence& seq, double p_mask, double p_replace, std::uint64_t seed) {
  if (!(p_mask > 0.0 && p_mask <= 1.0)) fail(ErrorCode::kInvalidArgument, "p_mask must lie in (0, 1]");
  if (!(p_replace >= 0.0 && p_replace <= 1.0)) fail(ErrorCode::kInvalidArgument, "p_replace must lie in [0, 1]");

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (Vocabulary::is_byte(seq.ids[i])) candidates.push_back(i);
  if (candidates.empty()) fail(ErrorCode::kInvalidArgument, "sequence has no content tokens to mask");

  Rng rng(seed);
  const std::size_t count = masked_count(candidates.size(), p_mask);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  MaskedSequence out{seq, {}};
  out.plan.masked_positions = candidates;
  for (std::size_t pos : candidates) {
    out.plan.originals.push_back(seq.ids[pos]);
    if (rng.bernoulli(p_replace)) {
      out.plan.replacement.push_back(Replacement::kMaskToken);
      out.sequence.ids[pos] = Vocabulary::kMask;
    } else {
      out.plan.replacement.push_back(Replacement::kRandomByte);
      out.sequence.ids[pos] = static_cast<int>(rng.below(Vocabulary::kByteCount));
    }
  }
  return out;
}

}  // namespace protst
