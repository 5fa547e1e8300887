#include <doctest.h>

#include "mdpo/nn.hpp"

using namespace mdpo;
using namespace mdpo::nn;

namespace {

// Central finite difference of a scalar function over every entry of every tensor.
template <class F>
double max_fd_error(ParamStore& store, const Grads& g, F loss) {
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Mat& v = store.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double orig = v.data()[k];
      v.data()[k] = orig + h;
      const double lp = loss();
      v.data()[k] = orig - h;
      const double lm = loss();
      v.data()[k] = orig;
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i].data()[k]) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp backward matches finite differences") {
  for (auto act : {Activation::silu, Activation::tanh}) {
    ParamStore store;
    Rng rng(3);
    Mlp mlp(store, "m", {5, 7, 6, 3}, act, rng);
    const Mat x = rng.normal_matrix(5, 4);
    const Mat target = rng.normal_matrix(3, 4);
    auto loss = [&] { return 0.5 * (mlp.forward(store, x) - target).squaredNorm(); };
    Mlp::Cache cache;
    const Mat y = mlp.forward(store, x, &cache);
    Grads g(store);
    const Mat dx = mlp.backward(store, cache, y - target, g);
    CHECK(max_fd_error(store, g, loss) < 1e-6);

    // Input gradient.
    Mat xp = x;
    const double h = 1e-6;
    xp(2, 1) += h;
    const double lp = 0.5 * (mlp.forward(store, xp) - target).squaredNorm();
    xp(2, 1) -= 2 * h;
    const double lm = 0.5 * (mlp.forward(store, xp) - target).squaredNorm();
    CHECK(dx(2, 1) == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("normalize columns backward") {
  Rng rng(5);
  const Mat x = rng.normal_matrix(4, 3);
  const Mat w = rng.normal_matrix(4, 3);
  Vec norms;
  const Mat y = normalize_columns(x, &norms);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(y.col(j).norm() == doctest::Approx(1.0));
  const Mat dx = normalize_columns_backward(y, norms, w);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Mat xp = x, xm = x;
    xp.data()[k] += h;
    xm.data()[k] -= h;
    const double fd = ((normalize_columns(xp).array() * w.array()).sum() -
                       (normalize_columns(xm).array() * w.array()).sum()) /
                      (2 * h);
    CHECK(dx.data()[k] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("adam respects trainable mask and reduces a quadratic") {
  ParamStore store;
  store.add("a", Mat::Constant(2, 2, 3.0));
  store.add("b", Mat::Constant(1, 1, 3.0));
  Adam opt(store, {.lr = 0.1});
  Grads g(store);
  std::vector<bool> mask{true, false};
  for (int i = 0; i < 200; ++i) {
    g[0] = store.value(0);
    g[1] = store.value(1);
    opt.step(store, g, &mask);
  }
  CHECK(store.value(0).norm() < 0.5);
  CHECK(store.value(1)(0, 0) == 3.0);
}

TEST_CASE("param store rejects duplicates and compares bitwise") {
  ParamStore a;
  a.add("x", Mat::Ones(2, 2));
  CHECK_THROWS(a.add("x", Mat::Ones(1, 1)));
  ParamStore b = a;
  CHECK(a.bitwise_equal(b));
  b.value(0)(0, 0) = std::nextafter(1.0, 2.0);
  CHECK_FALSE(a.bitwise_equal(b));
}
