#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "e2d2/rng.hpp"
#include "e2d2/tensor.hpp"

namespace e2d2::testutil {

inline Tensor random_tensor(std::int64_t r, std::int64_t c, Rng& rng, double stddev = 1.0,
                            bool requires_grad = true) {
  Tensor t = Tensor::zeros(r, c, requires_grad);
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
};

// Central-difference gradient oracle, independent of the backward pass: it
// only re-evaluates the forward closure at perturbed parameter values.
// Relative error uses a small-magnitude floor so fd noise on near-zero
// gradients does not dominate.
template <typename LossFn>
FdReport fd_check_params(std::vector<std::pair<std::string, Tensor>>& params, LossFn&& loss_value,
                         double h = 1e-5, std::int64_t max_per_tensor = -1,
                         Rng* pick = nullptr) {
  // Analytic gradients must already be populated on the params.
  FdReport rep;
  for (auto& [name, p] : params) {
    std::vector<std::int64_t> idx;
    const std::int64_t n = p.size();
    if (max_per_tensor < 0 || n <= max_per_tensor) {
      for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      // Always include the largest-|grad| entry, then random picks.
      std::int64_t best = 0;
      for (std::int64_t i = 1; i < n; ++i)
        if (std::abs(p.grad()[std::size_t(i)]) > std::abs(p.grad()[std::size_t(best)])) best = i;
      idx.push_back(best);
      for (std::int64_t k = 1; k < max_per_tensor; ++k)
        idx.push_back(pick ? pick->uniform_int(n) : (k * 7919) % n);
    }
    for (std::int64_t i : idx) {
      const double saved = p.data()[std::size_t(i)];
      p.data()[std::size_t(i)] = saved + h;
      const double up = loss_value();
      p.data()[std::size_t(i)] = saved - h;
      const double down = loss_value();
      p.data()[std::size_t(i)] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = p.grad()[std::size_t(i)];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(an) +
                    " fd=" + std::to_string(fd);
      }
    }
  }
  return rep;
}

inline void zero_all_grads(std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace e2d2::testutil
