#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protst/heads.hpp"

namespace protst {

// Toy instruction set. Every instruction's length is fixed by its first
// byte: (b >> 6) + 1. Special instructions obey the same rule and are padded
// with operand bytes:
//   prologue      AA BB op          (3 bytes)
//   arg marker    A0+i op op        (3 bytes, i = argument index)
//   return marker B0+j op op        (3 bytes, j = return type class)
//   epilogue      CC op op op       (4 bytes)
//   no-op         30 (gcc) / 3F (clang), 1 byte
// Operands are drawn from 00-9F, so A0-BF and CC never occur inside an
// instruction except as its first byte (and BB as the prologue's second).
namespace isa {
inline constexpr std::uint8_t kPrologue0 = 0xAA;
inline constexpr std::uint8_t kPrologue1 = 0xBB;
inline constexpr std::uint8_t kEpilogue = 0xCC;
inline constexpr std::uint8_t kArgMarkerBase = 0xA0;
inline constexpr std::uint8_t kRetMarkerBase = 0xB0;
inline constexpr std::uint8_t kOperandMax = 0x9F;
inline constexpr std::uint8_t kNopGcc = 0x30;
inline constexpr std::uint8_t kNopClang = 0x3F;
inline constexpr int kMaxArgs = 7;  // realized argument counts 0..7; class 6 means "more than 5"

constexpr std::size_t instruction_length(std::uint8_t first) { return static_cast<std::size_t>(first >> 6) + 1; }
constexpr bool is_arg_marker(std::uint8_t b) { return b >= kArgMarkerBase && b < kArgMarkerBase + 8; }
constexpr bool is_ret_marker(std::uint8_t b) { return b >= kRetMarkerBase && b < kRetMarkerBase + 6; }
constexpr bool is_reserved(std::uint8_t b) { return (b >= 0xA0 && b <= 0xBF) || b == kEpilogue; }
constexpr int arg_class(int arg_count) { return arg_count > 5 ? 6 : arg_count; }
}  // namespace isa

// Label values.
inline constexpr int kLabelSI = 0, kLabelMI = 1;
inline constexpr int kLabelSF = 0, kLabelMF = 1, kLabelEF = 2;

enum class CompilerTag { kGcc, kClang };
enum class OptTag { kO0, kO1, kO2 };

std::string compiler_tag_name(CompilerTag c);  // "G" / "C"
std::string opt_tag_name(OptTag o);            // "O0" ...
CompilerTag parse_compiler_tag(const std::string& s);
OptTag parse_opt_tag(const std::string& s);

struct Profile {
  CompilerTag compiler = CompilerTag::kGcc;
  OptTag opt = OptTag::kO1;
  int family_id = 0;  // 0..8
};

enum class RecordKind { kFile, kFunction };

struct LabeledRecord {
  std::string record_id;
  RecordKind kind = RecordKind::kFile;
  std::string shard;
  std::string file_key;     // binary-level split key
  std::string project_key;  // project-level split key
  std::vector<std::uint8_t> bytes;
  std::vector<int> inst_labels;  // SI/MI per byte
  std::vector<int> func_labels;  // SF/MF/EF per byte
  std::optional<int> arg_class;
  std::optional<int> ret_type;
  std::vector<int> name_words;
  std::optional<std::int64_t> source_function_id;
  std::optional<CompilerTag> compiler;
  std::optional<OptTag> opt;
  std::optional<int> family_id;

  bool operator==(const LabeledRecord&) const = default;
};

inline constexpr int kNameVocabSize = 32;

// A generated binary: one whole-file record plus one record per function.
struct GeneratedProgram {
  LabeledRecord file;
  std::vector<LabeledRecord> functions;
};

// Deterministic in (seed, profile, shard). Functions per file 3-10, bodies
// 5-40 instructions. O0 inserts a no-op after every 4th body instruction,
// O2 drops no-ops that directly follow a marker, the compiler picks the
// no-op opcode and the family biases the opcode distribution.
GeneratedProgram generate_program(std::uint64_t seed, const Profile& profile, const std::string& shard = "any");

// Straight linear scan with the length rule; independent of the generator.
struct DecodedLabels {
  std::vector<int> inst;
  std::vector<int> func;
  std::vector<int> arg_marker_counts;  // per function, in order
};
DecodedLabels reference_decode(const std::vector<std::uint8_t>& bytes);

// --- corpus files ---------------------------------------------------------------

// One record per line, space-separated name=value fields, bytes as hex and
// labels as one hex digit per byte.
std::string record_to_line(const LabeledRecord& r);
LabeledRecord record_from_line(const std::string& line, std::size_t line_no = 0);
void write_corpus(const std::vector<LabeledRecord>& records, const std::string& path);
std::vector<LabeledRecord> read_corpus(const std::string& path);
// SHA-256 over the canonical line form of every record, hex encoded.
std::string corpus_digest(const std::vector<LabeledRecord>& records);

// --- shards ------------------------------------------------------------------------

struct CorpusConfig {
  std::uint64_t seed = 7;
  std::map<std::string, std::size_t> files_per_shard = {
      {"mlm", 200}, {"ib", 420}, {"fb", 200}, {"fsig", 150}, {"fsim", 150}, {"fname", 150}, {"cp", 300}, {"mc", 300},
  };
  std::size_t similarity_variants = 3;  // profiles per source program in the fsim shard
};

std::vector<std::string> shard_names();
std::vector<LabeledRecord> generate_shard(const std::string& shard, const CorpusConfig& config);

// --- task datasets ---------------------------------------------------------------

struct Sample {
  std::string record_id;
  std::string file_key;
  std::string project_key;
  std::vector<std::uint8_t> bytes;
  std::vector<int> token_labels;  // per byte, token-level kinds only
  int label_a = -1;               // arg class / compiler / family
  int label_b = -1;               // return type / optimization
  std::vector<int> name_words;
  std::int64_t group = -1;  // similarity group
};

struct TaskDataset {
  HeadKind kind = HeadKind::kMlm;
  std::vector<Sample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

struct Windowing {
  std::size_t max_len = 128;  // encoded length; each window carries max_len - 2 bytes
};

TaskDataset derive_task_dataset(const std::vector<LabeledRecord>& records, HeadKind kind, const Windowing& windowing);

// Label histograms per axis ("token", "a", "b", "name"), for logging.
std::map<std::string, std::map<int, std::size_t>> class_histogram(const TaskDataset& dataset);

enum class SplitMode { kBinary, kProject };
std::string split_mode_name(SplitMode m);
SplitMode parse_split_mode(const std::string& s);

// Keys assigned to the first part: round(ratio * n) of the shuffled unique
// keys, clamped so both parts are non-empty.
std::vector<std::string> split_keys(std::vector<std::string> keys, double ratio, std::uint64_t seed);

template <typename T>
struct SplitParts {
  std::vector<T> first;
  std::vector<T> second;
};

SplitParts<LabeledRecord> split(const std::vector<LabeledRecord>& records, SplitMode mode, double ratio,
                                std::uint64_t seed);
SplitParts<Sample> split_samples(const std::vector<Sample>& samples, SplitMode mode, double ratio, std::uint64_t seed);

}  // namespace protst
