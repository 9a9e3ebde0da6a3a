#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op returns a new Tensor whose node remembers its inputs and a
// closure that pushes the output gradient back to them. backward() walks the
// reachable graph in reverse topological order. Gradients accumulate, so
// calling backward() twice without zero_grad() sums both passes.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protst/common.hpp"

namespace protst::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // For rank-2 tensors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Populates gradients of every reachable requires_grad tensor; this must be rank 0.
  void backward() const;

  // Same values, cut from the graph.
  Tensor detach() const;
  // Independent copy of the values as a new leaf.
  Tensor clone(bool requires_grad) const;

  const detail::Node* node() const noexcept { return node_.get(); }

 private:
  friend struct OpBuilder;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// While alive, ops on this thread do not record graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- primitives ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& m, const Tensor& row);  // broadcast [n] over [m,n]
Tensor scale(const Tensor& a, double factor);
Tensor affine(const Tensor& a, double factor, double offset);
Tensor reshape(const Tensor& a, Shape shape);

// Row-wise softmax, stabilized by the row maximum.
Tensor softmax_rows(const Tensor& m);
// Row-wise softmax restricted to columns whose key_mask entry is true; the
// remaining columns get probability exactly 0.
Tensor masked_softmax_rows(const Tensor& m, const std::vector<bool>& key_mask);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
// Inverted dropout with an explicit keep-mask stream.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

Tensor embedding(const Tensor& table, std::span<const int> ids);  // gather rows
Tensor select_row(const Tensor& m, std::size_t row);              // -> [n]
Tensor masked_mean_rows(const Tensor& m, const std::vector<bool>& row_mask);  // -> [n]
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t count);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Mean cross-entropy over rows with row_mask set; labels index columns.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels, const std::vector<bool>& row_mask);
// Mean elementwise binary cross-entropy on logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);
// Cosine similarity of two vectors of equal length -> scalar.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- parameters and optimizer --------------------------------------------

// Named trainable leaves; std::map keeps names in lexicographic order.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Fresh leaves holding copies of the current values.
  ParameterSet clone() const;
  // Entries whose name starts with prefix, sharing the same tensors.
  ParameterSet with_prefix(const std::string& prefix) const;
  void merge(const ParameterSet& other);

 private:
  std::map<std::string, Tensor> entries_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One adaptive-moment update of every parameter that has a gradient.
  void step(ParameterSet& params);
  long step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  AdamConfig config_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace protst::ad
