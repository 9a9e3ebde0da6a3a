#include "protst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace protst {

void ConfusionTally::add(int truth, int prediction) {
  ++total_;
  auto& t = classes_[truth];
  ++t.support;
  if (truth == prediction) {
    ++t.tp;
  } else {
    ++t.fn;
    ++classes_[prediction].fp;
  }
}

ConfusionTally ConfusionTally::from(const std::vector<int>& truth, const std::vector<int>& predictions) {
  if (truth.size() != predictions.size()) fail(ErrorCode::kInvalidArgument, "truth and prediction counts differ");
  ConfusionTally t;
  for (std::size_t i = 0; i < truth.size(); ++i) t.add(truth[i], predictions[i]);
  return t;
}

MacroF1 macro_f1(const ConfusionTally& tally) {
  if (tally.total() == 0) fail(ErrorCode::kEmptyEvaluation, "macro-F1 of an empty tally");
  MacroF1 out;
  double total = 0.0;
  for (const auto& [label, c] : tally.classes()) {
    if (c.support == 0) continue;
    const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) + static_cast<double>(c.fn);
    // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN).
    const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
    out.per_class.push_back({label, f1, c.support});
    total += f1;
  }
  out.macro = total / static_cast<double>(out.per_class.size());
  return out;
}

double micro_f1(const std::vector<std::vector<int>>& truth, const std::vector<std::vector<int>>& predictions) {
  if (truth.empty()) fail(ErrorCode::kEmptyEvaluation, "micro-F1 over no samples");
  if (truth.size() != predictions.size()) fail(ErrorCode::kInvalidArgument, "truth and prediction counts differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::set<int> t(truth[i].begin(), truth[i].end()), p(predictions[i].begin(), predictions[i].end());
    for (int w : p) (t.count(w) ? tp : fp)++;
    for (int w : t)
      if (!p.count(w)) ++fn;
  }
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
  return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(ErrorCode::kInvalidArgument, "cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::kZeroNorm, "cosine of a zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t rank_pool(const PoolQuery& q) {
  if (q.candidates.empty() || q.candidates.size() != q.candidate_ids.size()) {
    fail(ErrorCode::kInvalidArgument, "pool needs one id per candidate");
  }
  std::set<std::int64_t> unique(q.candidate_ids.begin(), q.candidate_ids.end());
  if (unique.size() != q.candidate_ids.size()) fail(ErrorCode::kInvalidArgument, "candidate ids must be unique");
  auto gt = std::find(q.candidate_ids.begin(), q.candidate_ids.end(), q.ground_truth);
  if (gt == q.candidate_ids.end()) fail(ErrorCode::kInvalidArgument, "ground truth missing from the pool");

  std::vector<double> sims(q.candidates.size());
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i] = cosine(q.query, q.candidates[i]);
  const auto gt_index = static_cast<std::size_t>(gt - q.candidate_ids.begin());
  const double gt_sim = sims[gt_index];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (i == gt_index) continue;
    if (sims[i] > gt_sim || (sims[i] == gt_sim && q.candidate_ids[i] < q.ground_truth)) ++rank;
  }
  return rank;
}

double mrr_from_ranks(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) fail(ErrorCode::kEmptyEvaluation, "MRR over no queries");
  double total = 0.0;
  for (auto r : ranks) total += 1.0 / static_cast<double>(r);
  return total / static_cast<double>(ranks.size());
}

double recall_from_ranks(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) fail(ErrorCode::kEmptyEvaluation, "Recall@k over no queries");
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be at least 1");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

namespace {
std::vector<std::size_t> all_ranks(const std::vector<PoolQuery>& queries) {
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  for (const auto& q : queries) ranks.push_back(rank_pool(q));
  return ranks;
}
}  // namespace

double mrr(const std::vector<PoolQuery>& queries) {
  if (queries.empty()) fail(ErrorCode::kEmptyEvaluation, "MRR over no queries");
  return mrr_from_ranks(all_ranks(queries));
}

double recall_at_k(const std::vector<PoolQuery>& queries, std::size_t k) {
  if (queries.empty()) fail(ErrorCode::kEmptyEvaluation, "Recall@k over no queries");
  return recall_from_ranks(all_ranks(queries), k);
}

// --- EvaluationReport --------------------------------------------------------

double EvaluationReport::primary() const { return metric(primary_metric); }

double EvaluationReport::metric(const std::string& name) const {
  auto it = metrics.find(name);
  if (it == metrics.end()) fail(ErrorCode::kInvalidArgument, "report has no metric " + name);
  return it->second;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::map<std::string, std::string> parse_fields(const std::string& line, std::size_t line_no) {
  std::map<std::string, std::string> out;
  std::istringstream is(line);
  std::string token;
  is >> token;  // record type
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kParse, "report line " + std::to_string(line_no) + ": expected name=value, got " + token);
    }
    out[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return out;
}

const std::string& field(const std::map<std::string, std::string>& f, const std::string& name, std::size_t line_no) {
  auto it = f.find(name);
  if (it == f.end()) fail(ErrorCode::kParse, "report line " + std::to_string(line_no) + ": missing " + name);
  return it->second;
}

}  // namespace

std::string EvaluationReport::to_lines() const {
  std::ostringstream os;
  os << "report node=" << (node_id.empty() ? "-" : node_id) << " kind=" << kind << " seed=" << seed
     << " pool_size=" << pool_size << " primary=" << primary_metric << "\n";
  for (const auto& [name, value] : metrics) os << "metric name=" << name << " value=" << fmt(value) << "\n";
  for (const auto& c : classes) {
    os << "class axis=" << c.axis << " label=" << c.label << " f1=" << fmt(c.f1) << " support=" << c.support << "\n";
  }
  return os.str();
}

EvaluationReport EvaluationReport::from_lines(const std::string& text) {
  EvaluationReport r;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto type = line.substr(0, line.find(' '));
    const auto f = parse_fields(line, line_no);
    try {
      if (type == "report") {
        r.node_id = field(f, "node", line_no);
        if (r.node_id == "-") r.node_id.clear();
        r.kind = field(f, "kind", line_no);
        r.seed = std::stoull(field(f, "seed", line_no));
        r.pool_size = std::stoul(field(f, "pool_size", line_no));
        r.primary_metric = field(f, "primary", line_no);
        header = true;
      } else if (type == "metric") {
        r.metrics[field(f, "name", line_no)] = std::stod(field(f, "value", line_no));
      } else if (type == "class") {
        r.classes.push_back({field(f, "axis", line_no), std::stoi(field(f, "label", line_no)),
                             std::stod(field(f, "f1", line_no)), std::stoul(field(f, "support", line_no))});
      } else {
        fail(ErrorCode::kParse, "report line " + std::to_string(line_no) + ": unknown record " + type);
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::kParse, "report line " + std::to_string(line_no) + ": bad number");
    }
  }
  if (!header) fail(ErrorCode::kParse, "report has no header line");
  return r;
}

std::string EvaluationReport::to_table() const {
  std::ostringstream os;
  os << (node_id.empty() ? kind : node_id + " (" + kind + ")");
  if (pool_size) os << "  pool=" << pool_size;
  os << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [name, value] : metrics) {
    os << "  " << std::left << std::setw(24) << name << (name == primary_metric ? "* " : "  ") << value << "\n";
  }
  std::string axis;
  for (const auto& c : classes) {
    if (c.axis != axis) {
      axis = c.axis;
      os << "  per-class F1 [" << axis << "]:";
    }
    os << "  " << c.label << "=" << c.f1;
    if (&c == &classes.back() || (&c + 1)->axis != axis) os << "\n";
  }
  return os.str();
}

void EvaluationReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write report " + path);
  out << to_lines();
}

EvaluationReport EvaluationReport::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read report " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_lines(ss.str());
}

}  // namespace protst
