#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "protst/corpus.hpp"
#include "support.hpp"

using namespace protst;

namespace {

std::size_t count_of(const std::vector<int>& v, int label) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), label));
}

}  // namespace

TEST_CASE("generation is deterministic and profile dependent") {
  const Profile p{CompilerTag::kClang, OptTag::kO0, 3};
  const auto a = generate_program(42, p), b = generate_program(42, p);
  CHECK(a.file == b.file);
  CHECK(a.functions == b.functions);
  auto q = p;
  q.opt = OptTag::kO2;
  CHECK(generate_program(42, q).file.bytes != a.file.bytes);
  CHECK(generate_program(43, p).file.bytes != a.file.bytes);
  CHECK_ERROR_CODE(generate_program(1, Profile{CompilerTag::kGcc, OptTag::kO1, 9}), ErrorCode::kInvalidArgument);
}

TEST_CASE("labels are aligned and each function has one start and one end") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Profile p{rng.bernoulli(0.5) ? CompilerTag::kGcc : CompilerTag::kClang, static_cast<OptTag>(rng.range(0, 2)),
                    rng.range(0, 8)};
    const auto prog = generate_program(rng.next(), p);
    CHECK(prog.functions.size() >= 3);
    CHECK(prog.functions.size() <= 10);
    CHECK(prog.file.inst_labels.size() == prog.file.bytes.size());
    CHECK(prog.file.func_labels.size() == prog.file.bytes.size());
    for (const auto& f : prog.functions) {
      CHECK(count_of(f.func_labels, kLabelSF) == 1);
      CHECK(count_of(f.func_labels, kLabelEF) == 1);
      CHECK(f.func_labels.front() == kLabelSF);
      CHECK(f.func_labels.back() == kLabelEF);
      REQUIRE(f.arg_class.has_value());
      CHECK(*f.arg_class < 7);
      CHECK(*f.ret_type < 6);
      CHECK_FALSE(f.name_words.empty());
      for (int w : f.name_words) CHECK(w < kNameVocabSize);
    }
  }
}

TEST_CASE("reference decoder agrees with the generator") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Profile p{CompilerTag::kGcc, static_cast<OptTag>(rng.range(0, 2)), rng.range(0, 8)};
    const auto prog = generate_program(rng.next(), p);
    const auto decoded = reference_decode(prog.file.bytes);
    CHECK(decoded.inst == prog.file.inst_labels);
    CHECK(decoded.func == prog.file.func_labels);
    REQUIRE(decoded.arg_marker_counts.size() == prog.functions.size());
    for (std::size_t k = 0; k < prog.functions.size(); ++k)
      CHECK(isa::arg_class(decoded.arg_marker_counts[k]) == *prog.functions[k].arg_class);
  }
}

TEST_CASE("optimization level changes no-op placement only") {
  const auto o1 = generate_program(77, {CompilerTag::kGcc, OptTag::kO1, 2});
  const auto o0 = generate_program(77, {CompilerTag::kGcc, OptTag::kO0, 2});
  CHECK(o0.file.bytes.size() > o1.file.bytes.size());
  CHECK(o0.functions.size() == o1.functions.size());
  for (std::size_t k = 0; k < o0.functions.size(); ++k) {
    CHECK(o0.functions[k].source_function_id == o1.functions[k].source_function_id);
    CHECK(o0.functions[k].arg_class == o1.functions[k].arg_class);
  }
  const auto clang = generate_program(77, {CompilerTag::kClang, OptTag::kO1, 2});
  CHECK(clang.file.bytes.size() == o1.file.bytes.size());
  CHECK(std::count(clang.file.bytes.begin(), clang.file.bytes.end(), isa::kNopGcc) <=
        std::count(o1.file.bytes.begin(), o1.file.bytes.end(), isa::kNopGcc));
}

TEST_CASE("record lines round trip") {
  const auto prog = generate_program(5, {CompilerTag::kClang, OptTag::kO2, 8});
  for (const auto& r : prog.functions) CHECK(record_from_line(record_to_line(r)) == r);
  CHECK(record_from_line(record_to_line(prog.file)) == prog.file);
}

TEST_CASE("parse errors name the line") {
  const auto good = record_to_line(generate_program(5, {}).functions[0]);
  auto check_parse = [](const std::string& line, const std::string& fragment) {
    try {
      (void)record_from_line(line, 17);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(std::string(e.what()).find("line 17") != std::string::npos);
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  check_parse(good + " bogus=1", "bogus");
  auto bad_hex = good;
  bad_hex.replace(bad_hex.find("bytes=") + 6, 1, "z");
  check_parse(bad_hex, "hex");
  auto short_labels = good;
  const auto pos = short_labels.find("inst=") + 5;
  short_labels.erase(pos, 1);
  check_parse(short_labels, "inst");
}

TEST_CASE("corpus files round trip and report the failing line") {
  testing::TempDir dir("corpus");
  const auto records = generate_shard("fsig", testing::small_corpus(4));
  write_corpus(records, dir.file("a.corpus"));
  const auto back = read_corpus(dir.file("a.corpus"));
  CHECK(back == records);
  CHECK(corpus_digest(back) == corpus_digest(records));
  {
    std::ofstream out(dir.file("b.corpus"));
    out << "# comment\n" << record_to_line(records[0]) << "\nrecord_id=x bytes=zz\n";
  }
  try {
    (void)read_corpus(dir.file("b.corpus"));
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_ERROR_CODE(read_corpus(dir.file("missing.corpus")), ErrorCode::kIo);
}

TEST_CASE("shards are deterministic and disjoint") {
  const auto cfg = testing::small_corpus(5);
  const auto ib = generate_shard("ib", cfg), fb = generate_shard("fb", cfg);
  CHECK(corpus_digest(ib) == corpus_digest(generate_shard("ib", cfg)));
  std::set<std::string> ib_ids;
  for (const auto& r : ib) ib_ids.insert(r.record_id);
  for (const auto& r : fb) CHECK(ib_ids.count(r.record_id) == 0);
  CHECK_ERROR_CODE(generate_shard("nope", cfg), ErrorCode::kInvalidArgument);
}

TEST_CASE("similarity shard holds variants of each source program") {
  auto cfg = testing::small_corpus(4);
  const auto records = generate_shard("fsim", cfg);
  std::map<std::int64_t, std::set<std::string>> files_per_group;
  std::map<std::int64_t, std::set<std::string>> projects_per_group;
  for (const auto& r : records) {
    if (r.kind != RecordKind::kFunction) continue;
    files_per_group[*r.source_function_id].insert(r.file_key);
    projects_per_group[*r.source_function_id].insert(r.project_key);
  }
  for (const auto& [g, files] : files_per_group) {
    CHECK(files.size() == cfg.similarity_variants);
    CHECK(projects_per_group[g].size() == 1);
  }
}

TEST_CASE("task datasets pick the right records") {
  const auto records = generate_shard("ib", testing::small_corpus(6));
  const auto ib = derive_task_dataset(records, HeadKind::kInstBoundary, Windowing{32});
  std::size_t file_bytes = 0;
  for (const auto& r : records)
    if (r.kind == RecordKind::kFile) file_bytes += r.bytes.size();
  std::size_t window_bytes = 0;
  for (const auto& s : ib.samples) {
    CHECK(s.bytes.size() <= 30);
    CHECK(s.token_labels.size() == s.bytes.size());
    CHECK(s.record_id.find("#w") != std::string::npos);
    window_bytes += s.bytes.size();
  }
  CHECK(window_bytes == file_bytes);

  const auto fsig = derive_task_dataset(records, HeadKind::kFuncSignature, Windowing{128});
  for (const auto& s : fsig.samples) {
    CHECK(s.label_a >= 0);
    CHECK(s.label_b >= 0);
  }
  const auto cp = derive_task_dataset(records, HeadKind::kCompilerProv, Windowing{128});
  for (const auto& s : cp.samples) CHECK(s.label_b <= 2);
  CHECK_ERROR_CODE(derive_task_dataset(records, HeadKind::kInstBoundary, Windowing{2}), ErrorCode::kInvalidArgument);
}

TEST_CASE("missing labels are reported") {
  auto records = generate_shard("ib", testing::small_corpus(2));
  for (auto& r : records) r.family_id.reset();
  CHECK_ERROR_CODE(derive_task_dataset(records, HeadKind::kMalwareClass, Windowing{128}), ErrorCode::kMissingLabel);
}

TEST_CASE("function boundary set is dominated by middle bytes") {
  const auto ds = derive_task_dataset(generate_shard("fb", testing::small_corpus(10)), HeadKind::kFuncBoundary,
                                      Windowing{128});
  const auto hist = class_histogram(ds).at("token");
  CHECK(hist.at(kLabelMF) > 10 * hist.at(kLabelSF));
  CHECK(hist.at(kLabelSF) == hist.at(kLabelEF));
}

TEST_CASE("splits are disjoint by key and reproducible") {
  const auto records = generate_shard("fsim", testing::small_corpus(10));
  for (const auto mode : {SplitMode::kBinary, SplitMode::kProject}) {
    const auto parts = split(records, mode, 0.7, 3);
    const auto again = split(records, mode, 0.7, 3);
    CHECK(parts.first == again.first);
    CHECK(parts.first.size() + parts.second.size() == records.size());
    std::set<std::string> first_keys;
    for (const auto& r : parts.first) first_keys.insert(mode == SplitMode::kBinary ? r.file_key : r.project_key);
    for (const auto& r : parts.second)
      CHECK(first_keys.count(mode == SplitMode::kBinary ? r.file_key : r.project_key) == 0);
  }
  CHECK_ERROR_CODE(split(records, SplitMode::kBinary, 1.0, 1), ErrorCode::kInvalidArgument);
  std::vector<LabeledRecord> one(records.begin(), records.begin() + 1);
  CHECK_ERROR_CODE(split(one, SplitMode::kBinary, 0.5, 1), ErrorCode::kCannotSplit);
  CHECK(parse_split_mode("project") == SplitMode::kProject);
}
