#pragma once

// Shared helpers for the unit and acceptance suites: seeded tensor
// generators and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mcgaze/autograd.hpp"

namespace mcgaze::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;
// Below this magnitude both derivatives count as zero: relative error is
// measured against max(|analytic|, |numeric|, kGradFloor).
inline constexpr double kGradFloor = 1e-6;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

// Values in [lo,hi] but at least `gap` away from zero, for ops with a kink at 0.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.1, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    const double m = uniform(rng, gap, hi);
    v = uniform(rng, 0.0, 1.0) < 0.5 ? -m : m;
  }
  return t;
}

inline double rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), kGradFloor});
}

struct GradCheck {
  double max_rel = 0.0;
  int checked = 0;
  std::string worst;
};

// `loss` must rebuild the graph from the leaves on every call and return a
// one-element Var. Up to `per_leaf` entries of each leaf are probed.
inline GradCheck check_gradients(const std::function<ad::Var()>& loss, const std::vector<ad::Var>& leaves,
                                 int per_leaf, std::mt19937_64& rng, double h = kFdStep) {
  for (const auto& l : leaves) l.node()->grad = Tensor();
  ad::backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& l : leaves) {
    const Tensor& g = l.grad();
    analytic.push_back(g.size() == l.size() ? g : Tensor(l.shape()));
  }
  GradCheck out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    ad::Var leaf = leaves[li];
    std::vector<std::size_t> idx(leaf.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (static_cast<int>(idx.size()) > per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_leaf);
    }
    for (std::size_t i : idx) {
      double& v = leaf.mutable_value()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss().item();
      v = saved - h;
      const double down = loss().item();
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel = rel_error(analytic[li][i], numeric);
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = "leaf " + std::to_string(li) + " index " + std::to_string(i) + ": analytic " +
                    std::to_string(analytic[li][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

// Scalar projection of an arbitrary-shape output with fixed random weights,
// so every output element influences the checked loss.
inline ad::Var project(const ad::Var& y, const Tensor& weights) { return ad::sum(ad::mul_const(y, weights)); }

}  // namespace mcgaze::testing
