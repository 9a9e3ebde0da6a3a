#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protst/common.hpp"

namespace protst {

// Per-class counts for one label axis. Classes are those seen in truth or
// predictions; macro-F1 averages over classes present in the truth.
class ConfusionTally {
 public:
  struct Counts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t support = 0;  // occurrences in the truth
  };

  void add(int truth, int prediction);
  static ConfusionTally from(const std::vector<int>& truth, const std::vector<int>& predictions);

  std::size_t total() const { return total_; }
  const std::map<int, Counts>& classes() const { return classes_; }

 private:
  std::map<int, Counts> classes_;
  std::size_t total_ = 0;
};

struct ClassF1 {
  int label;
  double f1;
  std::size_t support;
};

struct MacroF1 {
  double macro = 0.0;
  std::vector<ClassF1> per_class;  // classes present in the truth, ascending
};

// Unweighted mean of per-class F1 over classes present in the truth.
// F1 is 0 when precision + recall is zero or undefined.
MacroF1 macro_f1(const ConfusionTally& tally);

// Micro-averaged F1 over multilabel decisions (function names).
double micro_f1(const std::vector<std::vector<int>>& truth, const std::vector<std::vector<int>>& predictions);

struct PoolQuery {
  std::vector<double> query;
  std::vector<std::vector<double>> candidates;
  std::vector<std::int64_t> candidate_ids;
  std::int64_t ground_truth = 0;

  std::size_t pool_size() const { return candidates.size(); }
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// 1-based rank of the ground truth after sorting candidates by descending
// cosine similarity to the query, ties broken by ascending candidate id.
std::size_t rank_pool(const PoolQuery& q);

double mrr_from_ranks(const std::vector<std::size_t>& ranks);
double recall_from_ranks(const std::vector<std::size_t>& ranks, std::size_t k);
double mrr(const std::vector<PoolQuery>& queries);
double recall_at_k(const std::vector<PoolQuery>& queries, std::size_t k);

// Line-oriented evaluation record. One "report" header line, then "metric"
// lines, then "class" lines; every field is name=value.
struct EvaluationReport {
  std::string node_id;
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t pool_size = 0;
  std::string primary_metric;
  std::map<std::string, double> metrics;
  struct ClassRow {
    std::string axis;
    int label;
    double f1;
    std::size_t support;
  };
  std::vector<ClassRow> classes;

  double primary() const;
  double metric(const std::string& name) const;

  std::string to_lines() const;
  static EvaluationReport from_lines(const std::string& text);
  std::string to_table() const;

  void write(const std::string& path) const;
  static EvaluationReport read(const std::string& path);
};

}  // namespace protst
