#pragma once

#include "mdpo/nn.hpp"
#include "mdpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace mdpo::testing {

struct FdReport {
  int checked = 0;
  double max_rel_error = 0;
};

// Central differences on `n` randomly chosen entries of the tensors flagged in
// `eligible` (all when empty), compared against the analytic `grads`.
inline FdReport fd_check(nn::ParamStore& store, const nn::Grads& grads, const std::function<double()>& loss, int n,
                         std::uint64_t seed, const std::vector<bool>& eligible = {}, double h = 1e-5) {
  std::vector<std::pair<std::size_t, Eigen::Index>> pool;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!eligible.empty() && !eligible[i]) continue;
    for (Eigen::Index k = 0; k < store.value(i).size(); ++k) pool.emplace_back(i, k);
  }
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  FdReport r;
  for (int c = 0; c < n && c < static_cast<int>(pool.size()); ++c) {
    const auto [i, k] = pool[static_cast<std::size_t>(c)];
    double& v = store.value(i).data()[k];
    const double orig = v;
    v = orig + h;
    const double lp = loss();
    v = orig - h;
    const double lm = loss();
    v = orig;
    const double fd = (lp - lm) / (2 * h);
    const double a = grads[i].data()[k];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  return r;
}

}  // namespace mdpo::testing
