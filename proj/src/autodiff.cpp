#include "protst/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace protst::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& message) {
  if (!cond) fail(ErrorCode::kInvalidArgument, message);
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) {
  if (s.empty()) return 1;
  return s.back();
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Builds an output node wired to its inputs when any of them needs a gradient.
struct OpBuilder {
  static Tensor make(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                     std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
      bool any = false;
      for (const Tensor* t : inputs) any = any || t->node_->requires_grad;
      if (any) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) node->parents.push_back(t->node_);
        node->backward_fn = std::move(backward_fn);
      }
    }
    return Tensor(std::move(node));
  }
  static Tensor make_many(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
      bool any = false;
      for (const Tensor& t : inputs) any = any || t.node_->requires_grad;
      if (any) {
        node->requires_grad = true;
        for (const Tensor& t : inputs) node->parents.push_back(t.node_);
        node->backward_fn = std::move(backward_fn);
      }
    }
    return Tensor(std::move(node));
  }
  static std::shared_ptr<Node> node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

// Pushes g into a parent's gradient when that parent tracks one.
template <typename F>
void accumulate(Node& parent, F&& fn) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  fn(parent.grad);
}

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  require(shape.size() <= 2, "tensors are rank 0, 1 or 2");
  if (values.size() != shape_numel(shape)) {
    fail(ErrorCode::kInvalidArgument, "value count " + std::to_string(values.size()) + " does not match shape " +
                                          shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require(node_->shape.empty(), "backward() starts from a rank-0 loss");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients start from zero on every pass; leaves accumulate.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(node_->shape, node_->value, requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  auto na = OpBuilder::node(a), nb = OpBuilder::node(b);
  return OpBuilder::make({m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node& self) {
    ConstMapMat g(self.grad.data(), m, n);
    accumulate(*na, [&](std::vector<double>& ga) {
      MapMat(ga.data(), m, k).noalias() += g * ConstMapMat(nb->value.data(), k, n).transpose();
    });
    accumulate(*nb, [&](std::vector<double>& gb) {
      MapMat(gb.data(), k, n).noalias() += ConstMapMat(na->value.data(), m, k).transpose() * g;
    });
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_nt shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), n, k).transpose();
  auto na = OpBuilder::node(a), nb = OpBuilder::node(b);
  return OpBuilder::make({m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node& self) {
    ConstMapMat g(self.grad.data(), m, n);
    accumulate(*na, [&](std::vector<double>& ga) {
      MapMat(ga.data(), m, k).noalias() += g * ConstMapMat(nb->value.data(), n, k);
    });
    accumulate(*nb, [&](std::vector<double>& gb) {
      MapMat(gb.data(), n, k).noalias() += g.transpose() * ConstMapMat(na->value.data(), m, k);
    });
  });
}

// --- elementwise ------------------------------------------------------------

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kInvalidArgument,
         std::string(op) + " shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto nx = OpBuilder::node(x);
  return OpBuilder::make(x.shape(), std::move(out), {&x}, [nx, deriv](Node& self) {
    accumulate(*nx, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(nx->value[i], self.value[i]);
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto na = OpBuilder::node(a), nb = OpBuilder::node(b);
  return OpBuilder::make(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*nb, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto na = OpBuilder::node(a), nb = OpBuilder::node(b);
  return OpBuilder::make(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*nb, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto na = OpBuilder::node(a), nb = OpBuilder::node(b);
  return OpBuilder::make(a.shape(), std::move(out), {&a, &b}, [na, nb](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
    });
    accumulate(*nb, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
    });
  });
}

Tensor add_row(const Tensor& m, const Tensor& row) {
  require(m.rank() == 2 && row.rank() == 1 && row.numel() == m.cols(),
          "add_row shape mismatch " + shape_string(m.shape()) + " + " + shape_string(row.shape()));
  const auto r = m.rows(), c = m.cols();
  std::vector<double> out(m.values().begin(), m.values().end());
  auto rv = row.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
  auto nm = OpBuilder::node(m), nr = OpBuilder::node(row);
  return OpBuilder::make(m.shape(), std::move(out), {&m, &row}, [nm, nr, r, c](Node& self) {
    accumulate(*nm, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(*nr, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    });
  });
}

Tensor scale(const Tensor& a, double factor) { return affine(a, factor, 0.0); }

Tensor affine(const Tensor& a, double factor, double offset) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.at(i) + offset;
  auto na = OpBuilder::node(a);
  return OpBuilder::make(a.shape(), std::move(out), {&a}, [na, factor](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel() && shape.size() <= 2, "reshape changes element count");
  auto na = OpBuilder::node(a);
  std::vector<double> out(a.values().begin(), a.values().end());
  return OpBuilder::make(std::move(shape), std::move(out), {&a}, [na](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

// --- softmax and normalization ---------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& m, const std::vector<bool>* key_mask) {
  require(m.rank() == 2, "softmax_rows expects a matrix");
  const auto r = m.rows(), c = m.cols();
  if (key_mask) require(key_mask->size() == c, "key mask length must equal column count");
  std::vector<double> out(r * c, 0.0);
  auto v = m.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (!key_mask || (*key_mask)[j]) mx = std::max(mx, v[i * c + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (key_mask && !(*key_mask)[j]) continue;
      const double e = std::exp(v[i * c + j] - mx);
      out[i * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  auto nm = OpBuilder::node(m);
  return OpBuilder::make(m.shape(), std::move(out), {&m}, [nm, r, c](Node& self) {
    accumulate(*nm, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
      }
    });
  });
}

}  // namespace

Tensor softmax_rows(const Tensor& m) { return softmax_impl(m, nullptr); }

Tensor masked_softmax_rows(const Tensor& m, const std::vector<bool>& key_mask) {
  require(std::any_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; }),
          "masked softmax needs at least one visible key");
  return softmax_impl(m, &key_mask);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() == 2 && gamma.numel() == x.cols() && beta.numel() == x.cols(), "layer_norm shape mismatch");
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c), xhat(r * c), inv_std(r);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv[i * c + j] - mu) * (xv[i * c + j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  auto nx = OpBuilder::node(x), ng = OpBuilder::node(gamma), nb = OpBuilder::node(beta);
  return OpBuilder::make(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [nx, ng, nb, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        accumulate(*ng, [&](std::vector<double>& g) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
        });
        accumulate(*nb, [&](std::vector<double>& g) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        });
        accumulate(*nx, [&](std::vector<double>& g) {
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * ng->value[j];
              sum_d += d;
              sum_dx += d * xhat[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double d = self.grad[i * c + j] * ng->value[j];
              g[i * c + j] += inv_std[i] * (d - sum_d / n - xhat[i * c + j] * sum_dx / n);
            }
          }
        });
      });
}

// --- activations ------------------------------------------------------------

Tensor gelu(const Tensor& x) {
  // tanh approximation
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + a * v * v * v);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * a * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  require(rate < 1.0, "dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * mask[i];
  auto nx = OpBuilder::node(x);
  return OpBuilder::make(x.shape(), std::move(out), {&x}, [nx, mask = std::move(mask)](Node& self) {
    accumulate(*nx, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
  });
}

// --- gathering and pooling ---------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding table must be a matrix");
  const auto n = ids.size(), d = table.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(n * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      fail(ErrorCode::kInvalidArgument, "embedding id " + std::to_string(id) + " outside table");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(id * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto nt = OpBuilder::node(table);
  return OpBuilder::make({n, d}, std::move(out), {&table}, [nt, idv = std::move(idv), d](Node& self) {
    accumulate(*nt, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idv[i]) * d + j] += self.grad[i * d + j];
    });
  });
}

Tensor select_row(const Tensor& m, std::size_t row) {
  require(m.rank() == 2 && row < m.rows(), "select_row out of range");
  const auto c = m.cols();
  std::vector<double> out(m.values().begin() + static_cast<std::ptrdiff_t>(row * c),
                          m.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * c));
  auto nm = OpBuilder::node(m);
  return OpBuilder::make({c}, std::move(out), {&m}, [nm, row, c](Node& self) {
    accumulate(*nm, [&](std::vector<double>& g) {
      for (std::size_t j = 0; j < c; ++j) g[row * c + j] += self.grad[j];
    });
  });
}

Tensor masked_mean_rows(const Tensor& m, const std::vector<bool>& row_mask) {
  require(m.rank() == 2 && row_mask.size() == m.rows(), "masked_mean_rows mask length mismatch");
  const auto r = m.rows(), c = m.cols();
  const auto count = static_cast<std::size_t>(std::count(row_mask.begin(), row_mask.end(), true));
  require(count > 0, "masked_mean_rows needs at least one selected row");
  std::vector<double> out(c, 0.0);
  auto v = m.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& o : out) o *= inv;
  auto nm = OpBuilder::node(m);
  return OpBuilder::make({c}, std::move(out), {&m}, [nm, row_mask, r, c, inv](Node& self) {
    accumulate(*nm, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < r; ++i) {
        if (!row_mask[i]) continue;
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
      }
    });
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols needs inputs");
  const auto r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.rows() == r, "concat_cols row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = v[i * widths[k] + j];
    offset += widths[k];
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(OpBuilder::node(p));
  return OpBuilder::make_many({r, total}, std::move(out), parts, [nodes, widths, r, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      accumulate(*nodes[k], [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      });
      off += widths[k];
    }
  });
}

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t count) {
  require(m.rank() == 2 && begin + count <= m.cols(), "slice_cols out of range");
  const auto r = m.rows(), c = m.cols();
  std::vector<double> out(r * count);
  auto v = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = v[i * c + begin + j];
  auto nm = OpBuilder::node(m);
  return OpBuilder::make({r, count}, std::move(out), {&m}, [nm, r, c, begin, count](Node& self) {
    accumulate(*nm, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
    });
  });
}

// --- reductions and losses ---------------------------------------------------

Tensor sum(const Tensor& a) {
  auto v = a.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  auto na = OpBuilder::node(a);
  return OpBuilder::make({}, {total}, {&a}, [na](Node& self) {
    accumulate(*na, [&](std::vector<double>& g) {
      for (auto& gi : g) gi += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels, const std::vector<bool>& row_mask) {
  require(logits.rank() == 2 && labels.size() == logits.rows() && row_mask.size() == logits.rows(),
          "cross_entropy_rows shape mismatch");
  const auto r = logits.rows(), c = logits.cols();
  std::vector<int> lab(labels.begin(), labels.end());
  std::size_t count = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!row_mask[i]) continue;
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c) {
      fail(ErrorCode::kLabelRange, "label " + std::to_string(lab[i]) + " at row " + std::to_string(i) +
                                       " outside " + std::to_string(c) + " classes");
    }
    ++count;
  }
  require(count > 0, "cross_entropy_rows needs at least one selected row");
  // Softmax probabilities are kept for the backward pass.
  std::vector<double> probs(r * c, 0.0);
  double total = 0.0;
  auto v = logits.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (!row_mask[i]) continue;
    double mx = v[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(v[i * c + j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - v[i * c + static_cast<std::size_t>(lab[i])];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(v[i * c + j] - log_z);
  }
  const double inv = 1.0 / static_cast<double>(count);
  auto nl = OpBuilder::node(logits);
  return OpBuilder::make({}, {total * inv}, {&logits},
                         [nl, probs = std::move(probs), lab = std::move(lab), row_mask, r, c, inv](Node& self) {
                           accumulate(*nl, [&](std::vector<double>& g) {
                             const double s = self.grad[0] * inv;
                             for (std::size_t i = 0; i < r; ++i) {
                               if (!row_mask[i]) continue;
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s * probs[i * c + j];
                               g[i * c + static_cast<std::size_t>(lab[i])] -= s;
                             }
                           });
                         });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  require(targets.size() == logits.numel() && !targets.empty(), "bce_with_logits target length mismatch");
  const auto n = logits.numel();
  std::vector<double> t(targets.begin(), targets.end());
  double total = 0.0;
  auto v = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = v[i];
    // max(x,0) - x*t + log(1 + exp(-|x|)); stable for large |x|
    total += std::max(x, 0.0) - x * t[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double inv = 1.0 / static_cast<double>(n);
  auto nl = OpBuilder::node(logits);
  return OpBuilder::make({}, {total * inv}, {&logits}, [nl, t = std::move(t), inv](Node& self) {
    accumulate(*nl, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-nl->value[i]));
        g[i] += self.grad[0] * inv * (sig - t[i]);
      }
    });
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel() && a.numel() > 0, "cosine_similarity length mismatch");
  auto av = a.values();
  auto bv = b.values();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) fail(ErrorCode::kZeroNorm, "cosine similarity of a zero vector");
  const double norm_a = std::sqrt(na2), norm_b = std::sqrt(nb2);
  const double cos = dot / (norm_a * norm_b);
  auto nA = OpBuilder::node(a), nB = OpBuilder::node(b);
  return OpBuilder::make({}, {cos}, {&a, &b}, [nA, nB, norm_a, norm_b, cos](Node& self) {
    const double g = self.grad[0];
    // d cos / d a = b/(|a||b|) - cos * a/|a|^2
    accumulate(*nA, [&](std::vector<double>& ga) {
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += g * (nB->value[i] / (norm_a * norm_b) - cos * nA->value[i] / (norm_a * norm_a));
    });
    accumulate(*nB, [&](std::vector<double>& gb) {
      for (std::size_t i = 0; i < gb.size(); ++i)
        gb[i] += g * (nA->value[i] / (norm_a * norm_b) - cos * nB->value[i] / (norm_b * norm_b));
    });
  });
}

// --- ParameterSet -----------------------------------------------------------------

void ParameterSet::add(const std::string& name, Tensor tensor) {
  if (!entries_.emplace(name, std::move(tensor)).second) {
    fail(ErrorCode::kInvalidArgument, "duplicate parameter name " + name);
  }
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::kInvalidArgument, "unknown parameter " + name);
  return it->second;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::kInvalidArgument, "unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.entries_.emplace(name, t.clone(t.requires_grad()));
  return out;
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : entries_)
    if (name.rfind(prefix, 0) == 0) out.entries_.emplace(name, t);
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [name, t] : other.entries_) add(name, t);
}

// --- Adam -------------------------------------------------------------------------

void Adam::step(ParameterSet& params) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (const auto& [name, entry] : params.entries()) {
    Tensor p = entry;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& mom = moments_[name];
    if (mom.first.empty()) {
      mom.first.assign(p.numel(), 0.0);
      mom.second.assign(p.numel(), 0.0);
    }
    if (mom.first.size() != p.numel() || p.grad().size() != p.numel()) {
      fail(ErrorCode::kInternal, "optimizer state for " + name + " does not match parameter shape");
    }
    auto g = p.grad();
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      mom.first[i] = config_.beta1 * mom.first[i] + (1.0 - config_.beta1) * g[i];
      mom.second[i] = config_.beta2 * mom.second[i] + (1.0 - config_.beta2) * g[i] * g[i];
      if (g[i] == 0.0 && mom.first[i] == 0.0) continue;
      const double m_hat = mom.first[i] / bc1;
      const double v_hat = mom.second[i] / bc2;
      v[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace protst::ad
