#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "protst/autodiff.hpp"
#include "protst/backbone.hpp"
#include "protst/corpus.hpp"

namespace protst::testing {

inline ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return ad::Tensor::from(shape, std::move(v), requires_grad);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences against backward() on every element of every leaf.
// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheck grad_check(std::vector<ad::Tensor> leaves, const std::function<ad::Tensor()>& f, double h = 1e-5,
                            double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  f().backward();
  GradCheck r;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto v = leaf.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double original = v[i];
      double plus, minus;
      {
        ad::NoGradGuard no_grad;
        v[i] = original + h;
        plus = f().item();
        v[i] = original - h;
        minus = f().item();
      }
      v[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

inline BackboneConfig tiny_backbone(std::size_t max_len = 32) {
  BackboneConfig c;
  c.hidden_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_len = max_len;
  return c;
}

inline CorpusConfig small_corpus(std::size_t files = 6, std::uint64_t seed = 7) {
  CorpusConfig c;
  c.seed = seed;
  for (auto& [_, n] : c.files_per_shard) n = files;
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("protst_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace protst::testing

// Evaluates `expr` and checks it raises protst::Error with `code`.
#define CHECK_ERROR_CODE(expr, expected_code)                                      \
  do {                                                                             \
    bool thrown_ = false;                                                          \
    try {                                                                          \
      (void)(expr);                                                                \
    } catch (const ::protst::Error& e_) {                                          \
      thrown_ = true;                                                              \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());                      \
    }                                                                              \
    CHECK_MESSAGE(thrown_, "expected an error from " #expr);                       \
  } while (false)
