#include "phydisc/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "phydisc/errors.hpp"

namespace phydisc {

std::uint64_t hash_vector(const Vec& v) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  const std::size_t n = static_cast<std::size_t>(v.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void RmsProp::step(Vec& x, const Vec& grad, double lr) {
  last_hash_ = hash_vector(grad);
  if (sq_.size() != x.size()) sq_ = Vec::Zero(x.size());
  sq_ = decay_ * sq_ + (1.0 - decay_) * grad.cwiseAbs2();
  x.array() -= lr * grad.array() / (sq_.array().sqrt() + eps_);
}

void Adam::step(Vec& x, const Vec& grad, double lr) {
  last_hash_ = hash_vector(grad);
  if (m_.size() != x.size()) {
    m_ = Vec::Zero(x.size());
    v_ = Vec::Zero(x.size());
    t_ = 0;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  x.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  Vec grad;
};

// Minimiser of the cubic through two points with derivatives, or bisection
// when it is undefined or falls outside the safeguarded bracket.
double interpolate(const LinePoint& lo, const LinePoint& hi) {
  const double a = lo.alpha, b = hi.alpha;
  const double mid = 0.5 * (a + b);
  if (!std::isfinite(hi.f) || !std::isfinite(hi.d)) return mid;
  const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
  const double disc = d1 * d1 - lo.d * hi.d;
  if (disc < 0.0) return mid;
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double denom = hi.d - lo.d + 2.0 * d2;
  if (denom == 0.0) return mid;
  const double t = b - (b - a) * (hi.d + d2 - d1) / denom;
  const double left = std::min(a, b), right = std::max(a, b);
  const double margin = 0.1 * (right - left);
  if (!std::isfinite(t) || t < left + margin || t > right - margin) return mid;
  return t;
}

}  // namespace

LbfgsResult lbfgs_minimize(
    const Objective& objective, Vec x0, const LbfgsOptions& opts,
    const std::function<void(std::size_t, double, const Vec&)>& on_iteration) {
  if (opts.history == 0) throw ConfigError("L-BFGS history must be >= 1");
  if (!(opts.c1 > 0.0 && opts.c1 < opts.c2 && opts.c2 < 1.0)) {
    throw ConfigError("L-BFGS needs 0 < c1 < c2 < 1");
  }
  LbfgsResult res;
  Vec x = std::move(x0);
  Vec g(x.size());
  double f = objective(x, g);
  ++res.evaluations;
  res.x = x;
  res.f = f;
  if (!std::isfinite(f) || !g.allFinite()) {
    res.stop_reason = "non-finite objective at the starting point";
    return res;
  }

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto evaluate = [&](double alpha, const Vec& dir, LinePoint& p) {
    p.alpha = alpha;
    p.grad.resize(x.size());
    p.f = objective(x + alpha * dir, p.grad);
    ++res.evaluations;
    p.d = std::isfinite(p.f) && p.grad.allFinite()
              ? p.grad.dot(dir)
              : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(p.f)) p.f = std::numeric_limits<double>::infinity();
  };

  for (std::size_t iter = 0; iter < opts.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.stop_reason = "gradient below tolerance";
      return res;
    }
    // Two-loop recursion.
    Vec q = g;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha_hist(m);
    for (std::size_t i = m; i-- > 0;) {
      alpha_hist[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha_hist[i] * y_hist[i];
    }
    if (m > 0) {
      q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha_hist[i] - beta) * s_hist[i];
    }
    Vec dir = -q;
    double d0 = g.dot(dir);
    if (!(d0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g / std::max(1.0, g.norm());
      d0 = g.dot(dir);
    }

    // Strong Wolfe search (bracketing then zoom).
    LinePoint start{0.0, f, d0, g};
    LinePoint prev = start, cur, found;
    bool ok = false;
    double alpha = 1.0;
    std::size_t evals = 0;
    auto zoom = [&](LinePoint lo, LinePoint hi) {
      while (evals < opts.max_line_search) {
        LinePoint t;
        evaluate(interpolate(lo, hi), dir, t);
        ++evals;
        if (t.f > f + opts.c1 * t.alpha * d0 || t.f >= lo.f) {
          hi = t;
        } else {
          if (std::abs(t.d) <= -opts.c2 * d0) {
            found = t;
            return true;
          }
          if (t.d * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
          lo = t;
        }
        if (std::abs(hi.alpha - lo.alpha) < 1e-16) break;
      }
      // Accept a sufficient-decrease point if the budget ran out.
      if (lo.alpha > 0.0 && lo.f < f) {
        found = lo;
        return true;
      }
      return false;
    };
    while (evals < opts.max_line_search) {
      evaluate(alpha, dir, cur);
      ++evals;
      if (cur.f > f + opts.c1 * alpha * d0 || (evals > 1 && cur.f >= prev.f) ||
          !std::isfinite(cur.d)) {
        ok = zoom(prev, cur);
        break;
      }
      if (std::abs(cur.d) <= -opts.c2 * d0) {
        found = cur;
        ok = true;
        break;
      }
      if (cur.d >= 0.0) {
        ok = zoom(cur, prev);
        break;
      }
      prev = cur;
      alpha *= 2.0;
    }
    if (!ok) {
      res.stop_reason = "line search failed";
      return res;
    }

    Vec s = found.alpha * dir;
    Vec y = found.grad - g;
    x += s;
    f = found.f;
    g = found.grad;
    ++res.iterations;
    if (f < res.f) {
      res.f = f;
      res.x = x;
    }
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (on_iteration) on_iteration(iter, f, g);
  }
  res.stop_reason = "iteration cap reached";
  return res;
}

}  // namespace phydisc
