#include "protst/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "protst/digest.hpp"

namespace protst {

std::string compiler_tag_name(CompilerTag c) { return c == CompilerTag::kGcc ? "G" : "C"; }

std::string opt_tag_name(OptTag o) {
  switch (o) {
    case OptTag::kO0: return "O0";
    case OptTag::kO1: return "O1";
    case OptTag::kO2: return "O2";
  }
  return "O1";
}

CompilerTag parse_compiler_tag(const std::string& s) {
  if (s == "G") return CompilerTag::kGcc;
  if (s == "C") return CompilerTag::kClang;
  fail(ErrorCode::kParse, "unknown compiler tag " + s);
}

OptTag parse_opt_tag(const std::string& s) {
  if (s == "O0") return OptTag::kO0;
  if (s == "O1") return OptTag::kO1;
  if (s == "O2") return OptTag::kO2;
  fail(ErrorCode::kParse, "unknown optimization tag " + s);
}

// --- generation ------------------------------------------------------------------

namespace {

struct Instruction {
  std::vector<std::uint8_t> bytes;
  bool is_nop = false;
  bool is_marker = false;
  bool nop_after = false;  // markers only: a no-op follows unless O2 fuses it
};

struct AbstractFunction {
  int arg_count = 0;
  int ret_type = 0;
  std::vector<std::uint8_t> prologue_tail;  // operand after AA BB
  std::vector<Instruction> markers;         // arg markers
  std::vector<Instruction> body;
  Instruction ret_marker;
  std::vector<std::uint8_t> epilogue_tail;
};

std::uint8_t operand(Rng& rng) { return static_cast<std::uint8_t>(rng.below(isa::kOperandMax + 1)); }

std::vector<std::uint8_t> high_opcodes() {
  std::vector<std::uint8_t> v;
  for (int b = 0xC0; b <= 0xFF; ++b)
    if (b != isa::kEpilogue) v.push_back(static_cast<std::uint8_t>(b));
  return v;
}

std::vector<std::uint8_t> low_opcodes() {
  std::vector<std::uint8_t> v;
  for (int b = 0x00; b <= isa::kOperandMax; ++b)
    if (b != isa::kNopGcc && b != isa::kNopClang) v.push_back(static_cast<std::uint8_t>(b));
  return v;
}

std::vector<std::uint8_t> family_band(int family) {
  std::vector<std::uint8_t> v;
  for (int r = 0; r < 7; ++r) {
    const int b = 0xC0 + (family * 7 + r) % 64;
    if (b != isa::kEpilogue) v.push_back(static_cast<std::uint8_t>(b));
  }
  return v;
}

Instruction regular_instruction(Rng& rng, int family) {
  static const auto kHigh = high_opcodes();
  static const auto kLow = low_opcodes();
  Instruction ins;
  const double roll = rng.uniform();
  if (roll < 0.05) {
    ins.is_nop = true;  // opcode filled in at realization time
    ins.bytes.push_back(0);
    return ins;
  }
  std::uint8_t op;
  if (roll < 0.70) {
    const auto band = family_band(family);
    op = rng.bernoulli(0.6) ? band[rng.below(band.size())] : kHigh[rng.below(kHigh.size())];
  } else {
    op = kLow[rng.below(kLow.size())];
  }
  ins.bytes.push_back(op);
  for (std::size_t i = 1; i < isa::instruction_length(op); ++i) ins.bytes.push_back(operand(rng));
  return ins;
}

Instruction marker(std::uint8_t opcode, Rng& rng) {
  Instruction ins;
  ins.is_marker = true;
  ins.bytes = {opcode, operand(rng), operand(rng)};
  ins.nop_after = rng.bernoulli(0.5);
  return ins;
}

AbstractFunction abstract_function(Rng& rng, int family) {
  AbstractFunction f;
  f.arg_count = rng.range(0, isa::kMaxArgs);
  f.ret_type = rng.range(0, kRetClasses - 1);
  f.prologue_tail = {operand(rng)};
  for (int i = 0; i < f.arg_count; ++i) f.markers.push_back(marker(static_cast<std::uint8_t>(isa::kArgMarkerBase + i), rng));
  const int body = rng.range(5, 40);
  for (int i = 0; i < body; ++i) f.body.push_back(regular_instruction(rng, family));
  f.ret_marker = marker(static_cast<std::uint8_t>(isa::kRetMarkerBase + f.ret_type), rng);
  f.epilogue_tail = {operand(rng), operand(rng), operand(rng)};
  return f;
}

std::vector<int> name_words(int arg_cls, int ret, int family) {
  const int count = 1 + (arg_cls + ret + family) % 3;
  std::vector<int> words{arg_cls, 7 + ret, 13 + (family * 2 + ret) % 19};
  words.resize(static_cast<std::size_t>(count));
  std::sort(words.begin(), words.end());
  return words;
}

// Appends one instruction and its labels.
void emit(LabeledRecord& r, const std::vector<std::uint8_t>& bytes) {
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    r.bytes.push_back(bytes[i]);
    r.inst_labels.push_back(i == 0 ? kLabelSI : kLabelMI);
    r.func_labels.push_back(kLabelMF);
  }
}

LabeledRecord realize(const AbstractFunction& f, const Profile& profile) {
  const std::uint8_t nop = profile.compiler == CompilerTag::kGcc ? isa::kNopGcc : isa::kNopClang;
  const bool fuse = profile.opt == OptTag::kO2;
  LabeledRecord r;
  r.kind = RecordKind::kFunction;

  emit(r, {isa::kPrologue0, isa::kPrologue1, f.prologue_tail[0]});
  auto emit_marker = [&](const Instruction& m) {
    emit(r, m.bytes);
    if (m.nop_after && !fuse) emit(r, {nop});
  };
  for (const auto& m : f.markers) emit_marker(m);
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    emit(r, f.body[i].is_nop ? std::vector<std::uint8_t>{nop} : f.body[i].bytes);
    if (profile.opt == OptTag::kO0 && (i + 1) % 4 == 0) emit(r, {nop});
  }
  emit_marker(f.ret_marker);
  emit(r, {isa::kEpilogue, f.epilogue_tail[0], f.epilogue_tail[1], f.epilogue_tail[2]});

  r.func_labels.front() = kLabelSF;
  r.func_labels.back() = kLabelEF;
  r.arg_class = isa::arg_class(f.arg_count);
  r.ret_type = f.ret_type;
  r.name_words = name_words(*r.arg_class, f.ret_type, profile.family_id);
  r.compiler = profile.compiler;
  r.opt = profile.opt;
  r.family_id = profile.family_id;
  return r;
}

std::string profile_tag(const Profile& p) {
  return compiler_tag_name(p.compiler) + opt_tag_name(p.opt) + "m" + std::to_string(p.family_id);
}

}  // namespace

GeneratedProgram generate_program(std::uint64_t seed, const Profile& profile, const std::string& shard) {
  if (profile.family_id < 0 || profile.family_id >= kDefaultMalwareFamilies) {
    fail(ErrorCode::kInvalidArgument, "family id must lie in 0..8");
  }
  // The abstract program depends on (seed, family) only, so profiles that
  // differ in compiler or optimization yield variants of the same functions.
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(profile.family_id)));
  const int count = rng.range(3, 10);

  GeneratedProgram out;
  const std::string project = shard + ":" + std::to_string(seed);
  out.file.record_id = project + ":" + profile_tag(profile);
  out.file.kind = RecordKind::kFile;
  out.file.shard = shard;
  out.file.file_key = out.file.record_id;
  out.file.project_key = project;
  out.file.compiler = profile.compiler;
  out.file.opt = profile.opt;
  out.file.family_id = profile.family_id;

  for (int k = 0; k < count; ++k) {
    auto fn = realize(abstract_function(rng, profile.family_id), profile);
    fn.record_id = out.file.record_id + ":f" + std::to_string(k);
    fn.shard = shard;
    fn.file_key = out.file.record_id;
    fn.project_key = project;
    fn.source_function_id = static_cast<std::int64_t>(((seed & 0xFFFFFFFFFFULL) << 16) |
                                                      (static_cast<std::uint64_t>(profile.family_id) << 8) |
                                                      static_cast<std::uint64_t>(k));
    out.file.bytes.insert(out.file.bytes.end(), fn.bytes.begin(), fn.bytes.end());
    out.file.inst_labels.insert(out.file.inst_labels.end(), fn.inst_labels.begin(), fn.inst_labels.end());
    out.file.func_labels.insert(out.file.func_labels.end(), fn.func_labels.begin(), fn.func_labels.end());
    out.functions.push_back(std::move(fn));
  }
  return out;
}

DecodedLabels reference_decode(const std::vector<std::uint8_t>& bytes) {
  DecodedLabels out;
  out.inst.assign(bytes.size(), kLabelMI);
  out.func.assign(bytes.size(), kLabelMF);
  std::size_t pos = 0;
  bool in_prefix = false;  // between the prologue and the first non-marker instruction
  while (pos < bytes.size()) {
    const auto op = bytes[pos];
    const auto len = isa::instruction_length(op);
    out.inst[pos] = kLabelSI;
    if (op == isa::kPrologue0 && pos + 1 < bytes.size() && bytes[pos + 1] == isa::kPrologue1) {
      out.func[pos] = kLabelSF;
      out.arg_marker_counts.push_back(0);
      in_prefix = true;
    } else if (in_prefix && isa::is_arg_marker(op)) {
      ++out.arg_marker_counts.back();
    } else if (op == isa::kEpilogue) {
      out.func[std::min(pos + len, bytes.size()) - 1] = kLabelEF;
      in_prefix = false;
    } else if (!(op == isa::kNopGcc || op == isa::kNopClang)) {
      in_prefix = false;
    }
    pos += len;
  }
  return out;
}

// --- line format ------------------------------------------------------------------

namespace {

const std::set<std::string> kFields = {"id",   "kind", "shard", "file", "project", "bytes",    "inst",  "func",
                                       "args", "ret",  "name",  "src",  "compiler", "opt",     "family"};

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string encode_labels(const std::vector<int>& labels) {
  std::string s;
  for (int v : labels) s.push_back("0123456789abcdef"[v & 0xF]);
  return s;
}

[[noreturn]] void parse_error(std::size_t line_no, const std::string& message) {
  fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + message);
}

int parse_int(const std::string& s, std::size_t line_no, const std::string& field) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    parse_error(line_no, "field " + field + " is not an integer: " + s);
  }
}

}  // namespace

std::string record_to_line(const LabeledRecord& r) {
  std::ostringstream os;
  os << "id=" << r.record_id << " kind=" << (r.kind == RecordKind::kFile ? "file" : "func");
  if (!r.shard.empty()) os << " shard=" << r.shard;
  if (!r.file_key.empty()) os << " file=" << r.file_key;
  if (!r.project_key.empty()) os << " project=" << r.project_key;
  os << " bytes=" << to_hex(r.bytes);
  if (!r.inst_labels.empty()) os << " inst=" << encode_labels(r.inst_labels);
  if (!r.func_labels.empty()) os << " func=" << encode_labels(r.func_labels);
  if (r.arg_class) os << " args=" << *r.arg_class;
  if (r.ret_type) os << " ret=" << *r.ret_type;
  if (!r.name_words.empty()) {
    os << " name=";
    for (std::size_t i = 0; i < r.name_words.size(); ++i) os << (i ? "," : "") << r.name_words[i];
  }
  if (r.source_function_id) os << " src=" << *r.source_function_id;
  if (r.compiler) os << " compiler=" << compiler_tag_name(*r.compiler);
  if (r.opt) os << " opt=" << opt_tag_name(*r.opt);
  if (r.family_id) os << " family=" << *r.family_id;
  return os.str();
}

LabeledRecord record_from_line(const std::string& line, std::size_t line_no) {
  LabeledRecord r;
  std::istringstream is(line);
  std::string token;
  std::set<std::string> seen;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) parse_error(line_no, "expected name=value, got '" + token + "'");
    const auto name = token.substr(0, eq);
    const auto value = token.substr(eq + 1);
    if (!kFields.count(name)) parse_error(line_no, "unknown field '" + name + "'");
    if (!seen.insert(name).second) parse_error(line_no, "duplicate field '" + name + "'");
    if (name == "id") {
      r.record_id = value;
    } else if (name == "kind") {
      if (value == "file") r.kind = RecordKind::kFile;
      else if (value == "func") r.kind = RecordKind::kFunction;
      else parse_error(line_no, "kind must be file or func");
    } else if (name == "shard") {
      r.shard = value;
    } else if (name == "file") {
      r.file_key = value;
    } else if (name == "project") {
      r.project_key = value;
    } else if (name == "bytes") {
      if (value.size() % 2 != 0) parse_error(line_no, "bytes has an odd number of hex digits");
      for (std::size_t i = 0; i < value.size(); i += 2) {
        const int hi = hex_value(value[i]), lo = hex_value(value[i + 1]);
        if (hi < 0 || lo < 0) parse_error(line_no, "bad hex in bytes at offset " + std::to_string(i));
        r.bytes.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
      }
    } else if (name == "inst" || name == "func") {
      auto& labels = name == "inst" ? r.inst_labels : r.func_labels;
      const int limit = name == "inst" ? kInstClasses : kFuncClasses;
      for (char c : value) {
        const int v = hex_value(c);
        if (v < 0 || v >= limit) parse_error(line_no, "bad label digit '" + std::string(1, c) + "' in " + name);
        labels.push_back(v);
      }
    } else if (name == "args") {
      r.arg_class = parse_int(value, line_no, name);
      if (*r.arg_class < 0 || *r.arg_class >= kArgClasses) parse_error(line_no, "args class out of range");
    } else if (name == "ret") {
      r.ret_type = parse_int(value, line_no, name);
      if (*r.ret_type < 0 || *r.ret_type >= kRetClasses) parse_error(line_no, "ret class out of range");
    } else if (name == "name") {
      std::istringstream ws(value);
      std::string w;
      while (std::getline(ws, w, ',')) {
        const int id = parse_int(w, line_no, name);
        if (id < 0 || id >= kNameVocabSize) parse_error(line_no, "name word out of range");
        r.name_words.push_back(id);
      }
    } else if (name == "src") {
      try {
        r.source_function_id = std::stoll(value);
      } catch (const std::logic_error&) {
        parse_error(line_no, "src is not an integer");
      }
    } else if (name == "compiler") {
      try {
        r.compiler = parse_compiler_tag(value);
      } catch (const Error& e) {
        parse_error(line_no, e.what());
      }
    } else if (name == "opt") {
      try {
        r.opt = parse_opt_tag(value);
      } catch (const Error& e) {
        parse_error(line_no, e.what());
      }
    } else if (name == "family") {
      r.family_id = parse_int(value, line_no, name);
      if (*r.family_id < 0) parse_error(line_no, "family must be non-negative");
    }
  }
  if (r.record_id.empty()) parse_error(line_no, "missing id");
  if (r.bytes.empty()) parse_error(line_no, "missing bytes");
  if (!r.inst_labels.empty() && r.inst_labels.size() != r.bytes.size()) {
    parse_error(line_no, "inst has " + std::to_string(r.inst_labels.size()) + " labels for " +
                             std::to_string(r.bytes.size()) + " bytes");
  }
  if (!r.func_labels.empty() && r.func_labels.size() != r.bytes.size()) {
    parse_error(line_no, "func has " + std::to_string(r.func_labels.size()) + " labels for " +
                             std::to_string(r.bytes.size()) + " bytes");
  }
  if (r.file_key.empty()) r.file_key = r.record_id;
  if (r.project_key.empty()) r.project_key = r.file_key;
  return r;
}

void write_corpus(const std::vector<LabeledRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write corpus " + path);
  for (const auto& r : records) out << record_to_line(r) << "\n";
  if (!out) fail(ErrorCode::kIo, "failed writing corpus " + path);
}

std::vector<LabeledRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read corpus " + path);
  std::vector<LabeledRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    try {
      records.push_back(record_from_line(line, line_no));
    } catch (const Error& e) {
      fail(ErrorCode::kParse, path + ": " + std::string(e.what()).substr(std::string("ParseError: ").size()));
    }
  }
  return records;
}

std::string corpus_digest(const std::vector<LabeledRecord>& records) {
  std::string all;
  for (const auto& r : records) {
    all += record_to_line(r);
    all += '\n';
  }
  const auto d = sha256(all);
  return to_hex(d);
}

// --- shards -----------------------------------------------------------------------

std::vector<std::string> shard_names() { return {"mlm", "ib", "fb", "fsig", "fsim", "fname", "cp", "mc"}; }

std::vector<LabeledRecord> generate_shard(const std::string& shard, const CorpusConfig& config) {
  auto it = config.files_per_shard.find(shard);
  if (it == config.files_per_shard.end()) fail(ErrorCode::kInvalidArgument, "unknown shard " + shard);
  const std::uint64_t base = mix_seed(config.seed, hash_string(shard));
  std::vector<LabeledRecord> records;
  auto append = [&](GeneratedProgram&& p) {
    records.push_back(std::move(p.file));
    for (auto& f : p.functions) records.push_back(std::move(f));
  };
  for (std::size_t i = 0; i < it->second; ++i) {
    const std::uint64_t seed = mix_seed(base, i) & 0xFFFFFFFFFFULL;
    Rng rng(mix_seed(seed, 0xC0FFEE));
    Profile profile;
    profile.family_id = rng.range(0, kDefaultMalwareFamilies - 1);
    if (shard == "fsim") {
      // Several compiler/optimization variants of the same source program.
      std::vector<std::pair<CompilerTag, OptTag>> all;
      for (auto c : {CompilerTag::kGcc, CompilerTag::kClang})
        for (auto o : {OptTag::kO0, OptTag::kO1, OptTag::kO2}) all.emplace_back(c, o);
      rng.shuffle(all);
      const auto variants = std::min(config.similarity_variants, all.size());
      for (std::size_t v = 0; v < variants; ++v) {
        profile.compiler = all[v].first;
        profile.opt = all[v].second;
        append(generate_program(seed, profile, shard));
      }
    } else {
      profile.compiler = rng.bernoulli(0.5) ? CompilerTag::kGcc : CompilerTag::kClang;
      profile.opt = static_cast<OptTag>(rng.range(0, 2));
      append(generate_program(seed, profile, shard));
    }
  }
  return records;
}

// --- task datasets ------------------------------------------------------------------

namespace {

[[noreturn]] void missing(const LabeledRecord& r, HeadKind kind, const std::string& field) {
  fail(ErrorCode::kMissingLabel, "record " + r.record_id + " has no " + field + " label needed by " +
                                     head_kind_name(kind));
}

Sample base_sample(const LabeledRecord& r) {
  Sample s;
  s.record_id = r.record_id;
  s.file_key = r.file_key;
  s.project_key = r.project_key;
  return s;
}

}  // namespace

TaskDataset derive_task_dataset(const std::vector<LabeledRecord>& records, HeadKind kind, const Windowing& windowing) {
  if (windowing.max_len < 3) fail(ErrorCode::kInvalidArgument, "window max_len must be at least 3");
  const std::size_t width = windowing.max_len - 2;
  TaskDataset ds;
  ds.kind = kind;
  const bool wants_functions = kind == HeadKind::kFuncSignature || kind == HeadKind::kFuncName ||
                               kind == HeadKind::kFuncSimilarity;
  for (const auto& r : records) {
    const bool is_function = r.kind == RecordKind::kFunction;
    if (wants_functions != is_function) continue;
    switch (kind) {
      case HeadKind::kMlm:
      case HeadKind::kInstBoundary:
      case HeadKind::kFuncBoundary: {
        const std::vector<int>* labels = nullptr;
        if (kind == HeadKind::kInstBoundary) {
          if (r.inst_labels.empty()) missing(r, kind, "inst");
          labels = &r.inst_labels;
        } else if (kind == HeadKind::kFuncBoundary) {
          if (r.func_labels.empty()) missing(r, kind, "func");
          labels = &r.func_labels;
        }
        for (std::size_t start = 0, w = 0; start < r.bytes.size(); start += width, ++w) {
          const auto end = std::min(start + width, r.bytes.size());
          Sample s = base_sample(r);
          s.record_id += "#w" + std::to_string(w);
          s.bytes.assign(r.bytes.begin() + static_cast<std::ptrdiff_t>(start),
                         r.bytes.begin() + static_cast<std::ptrdiff_t>(end));
          if (labels) {
            s.token_labels.assign(labels->begin() + static_cast<std::ptrdiff_t>(start),
                                  labels->begin() + static_cast<std::ptrdiff_t>(end));
          }
          ds.samples.push_back(std::move(s));
        }
        break;
      }
      case HeadKind::kFuncSignature: {
        if (!r.arg_class) missing(r, kind, "args");
        if (!r.ret_type) missing(r, kind, "ret");
        Sample s = base_sample(r);
        s.bytes = r.bytes;
        s.label_a = *r.arg_class;
        s.label_b = *r.ret_type;
        ds.samples.push_back(std::move(s));
        break;
      }
      case HeadKind::kFuncName: {
        if (r.name_words.empty()) missing(r, kind, "name");
        Sample s = base_sample(r);
        s.bytes = r.bytes;
        s.name_words = r.name_words;
        ds.samples.push_back(std::move(s));
        break;
      }
      case HeadKind::kFuncSimilarity: {
        if (!r.source_function_id) missing(r, kind, "src");
        Sample s = base_sample(r);
        s.bytes = r.bytes;
        s.group = *r.source_function_id;
        ds.samples.push_back(std::move(s));
        break;
      }
      case HeadKind::kCompilerProv: {
        if (!r.compiler) missing(r, kind, "compiler");
        if (!r.opt) missing(r, kind, "opt");
        Sample s = base_sample(r);
        s.bytes = r.bytes;
        s.label_a = static_cast<int>(*r.compiler);
        s.label_b = static_cast<int>(*r.opt);
        ds.samples.push_back(std::move(s));
        break;
      }
      case HeadKind::kMalwareClass: {
        if (!r.family_id) missing(r, kind, "family");
        Sample s = base_sample(r);
        s.bytes = r.bytes;
        s.label_a = *r.family_id;
        ds.samples.push_back(std::move(s));
        break;
      }
    }
  }
  return ds;
}

std::map<std::string, std::map<int, std::size_t>> class_histogram(const TaskDataset& dataset) {
  std::map<std::string, std::map<int, std::size_t>> h;
  for (const auto& s : dataset.samples) {
    for (int v : s.token_labels) ++h["token"][v];
    if (s.label_a >= 0) ++h["a"][s.label_a];
    if (s.label_b >= 0) ++h["b"][s.label_b];
    for (int w : s.name_words) ++h["name"][w];
  }
  return h;
}

// --- splits -------------------------------------------------------------------------

std::string split_mode_name(SplitMode m) { return m == SplitMode::kBinary ? "binary" : "project"; }

SplitMode parse_split_mode(const std::string& s) {
  if (s == "binary") return SplitMode::kBinary;
  if (s == "project") return SplitMode::kProject;
  fail(ErrorCode::kInvalidArgument, "split mode must be binary or project, got " + s);
}

std::vector<std::string> split_keys(std::vector<std::string> keys, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorCode::kInvalidArgument, "split ratio must lie in (0, 1)");
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.size() < 2) fail(ErrorCode::kCannotSplit, "need at least two split keys, have " + std::to_string(keys.size()));
  Rng rng(seed);
  rng.shuffle(keys);
  auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(keys.size())));
  take = std::clamp<std::size_t>(take, 1, keys.size() - 1);
  keys.resize(take);
  std::sort(keys.begin(), keys.end());
  return keys;
}

namespace {

template <typename T, typename KeyFn>
SplitParts<T> split_by(const std::vector<T>& items, KeyFn key, double ratio, std::uint64_t seed) {
  std::vector<std::string> keys;
  keys.reserve(items.size());
  for (const auto& it : items) keys.push_back(key(it));
  const auto first = split_keys(keys, ratio, seed);
  const std::set<std::string> first_set(first.begin(), first.end());
  SplitParts<T> parts;
  for (const auto& it : items) (first_set.count(key(it)) ? parts.first : parts.second).push_back(it);
  return parts;
}

}  // namespace

SplitParts<LabeledRecord> split(const std::vector<LabeledRecord>& records, SplitMode mode, double ratio,
                                std::uint64_t seed) {
  return split_by(
      records, [mode](const LabeledRecord& r) { return mode == SplitMode::kBinary ? r.file_key : r.project_key; },
      ratio, seed);
}

SplitParts<Sample> split_samples(const std::vector<Sample>& samples, SplitMode mode, double ratio,
                                 std::uint64_t seed) {
  return split_by(
      samples, [mode](const Sample& s) { return mode == SplitMode::kBinary ? s.file_key : s.project_key; }, ratio,
      seed);
}

}  // namespace protst
