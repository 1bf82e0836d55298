#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "phydisc/nn.hpp"

namespace phydisc {

/// FNV-1a over the raw bytes of a vector; used to fingerprint gradients.
std::uint64_t hash_vector(const Vec& v);

class RmsProp {
 public:
  explicit RmsProp(double decay = 0.9, double eps = 1e-8)
      : decay_(decay), eps_(eps) {}
  void step(Vec& x, const Vec& grad, double lr);
  std::uint64_t last_grad_hash() const { return last_hash_; }

 private:
  std::uint64_t last_hash_ = 0;
  double decay_;
  double eps_;
  Vec sq_;
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Vec& x, const Vec& grad, double lr);
  std::uint64_t last_grad_hash() const { return last_hash_; }

 private:
  std::uint64_t last_hash_ = 0;
  double beta1_;
  double beta2_;
  double eps_;
  Vec m_;
  Vec v_;
  std::size_t t_ = 0;
};

/// f(x), writing df/dx into grad. May return +inf or NaN for points where
/// the objective is undefined; the line search backs off from them.
using Objective = std::function<double(const Vec& x, Vec& grad)>;

struct LbfgsOptions {
  std::size_t history = 10;
  std::size_t max_iterations = 100;
  std::size_t max_line_search = 25;
  double c1 = 1e-4;
  double c2 = 0.9;
  double grad_tol = 1e-10;
};

struct LbfgsResult {
  Vec x;  ///< best point seen
  double f = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::string stop_reason;
};

/// Limited-memory BFGS with a strong Wolfe line search. `on_iteration` is
/// called after every accepted step with (iteration, f, grad).
LbfgsResult lbfgs_minimize(
    const Objective& objective, Vec x0, const LbfgsOptions& opts,
    const std::function<void(std::size_t, double, const Vec&)>& on_iteration = {});

}  // namespace phydisc
