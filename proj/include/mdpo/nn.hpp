#pragma once

#include "mdpo/rng.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

// Minimal dense-network toolkit: named parameter storage, MLPs with explicit
// backward passes, and first-order optimizers. Batches are column-major:
// each column of an input matrix is one example.
namespace mdpo::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Tensor {
  std::string name;
  Mat value;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Mat value);

  std::size_t size() const { return tensors_.size(); }
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return tensors_[i].name; }
  Mat& value(std::size_t i) { return tensors_[i].value; }
  const Mat& value(std::size_t i) const { return tensors_[i].value; }
  std::size_t scalar_count() const;

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }

  // Exact equality of names, shapes and every stored bit.
  bool bitwise_equal(const ParamStore& other) const;

 private:
  std::vector<Tensor> tensors_;
};

// Gradient buffers aligned index-for-index with a ParamStore.
class Grads {
 public:
  Grads() = default;
  explicit Grads(const ParamStore& store);

  Mat& operator[](std::size_t i) { return g_[i]; }
  const Mat& operator[](std::size_t i) const { return g_[i]; }
  std::size_t size() const { return g_.size(); }
  void zero();
  void scale(double s);
  bool all_finite() const;

 private:
  std::vector<Mat> g_;
};

enum class Activation { silu, tanh };

class Mlp {
 public:
  struct Cache {
    std::vector<Mat> inputs;  // input to each linear layer
    std::vector<Mat> pre;     // pre-activation output of each linear layer
  };

  Mlp() = default;
  // Registers weights "<prefix>.l<i>.W" / ".b" in `store`. The final layer has no activation.
  Mlp(ParamStore& store, const std::string& prefix, std::vector<int> widths, Activation act, Rng& rng,
      double out_scale = 1.0);
  // Binds to tensors already present in `store` (e.g. after loading a checkpoint).
  static Mlp attach(const ParamStore& store, const std::string& prefix, std::vector<int> widths,
                    Activation act);

  Mat forward(const ParamStore& store, const Mat& x, Cache* cache = nullptr) const;
  // Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  Mat backward(const ParamStore& store, const Cache& cache, const Mat& dy, Grads& grads) const;

  int layers() const { return static_cast<int>(w_idx_.size()); }
  std::size_t weight_index(int layer) const { return w_idx_[layer]; }
  std::size_t bias_index(int layer) const { return b_idx_[layer]; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }

 private:
  std::vector<int> widths_;
  Activation act_ = Activation::silu;
  std::vector<std::size_t> w_idx_, b_idx_;
};

// Column-wise unit normalization and its backward pass.
Mat normalize_columns(const Mat& x, Vec* norms = nullptr);
Mat normalize_columns_backward(const Mat& y, const Vec& norms, const Mat& dy);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamStore& store, AdamOptions opt);
  // `trainable` (optional) masks which tensors are updated.
  void step(ParamStore& store, const Grads& grads, const std::vector<bool>* trainable = nullptr);
  void set_lr(double lr) { opt_.lr = lr; }

 private:
  AdamOptions opt_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

class Sgd {
 public:
  Sgd(const ParamStore& store, double lr, double momentum);
  void step(ParamStore& store, const Grads& grads, const std::vector<bool>* trainable = nullptr);

 private:
  double lr_, momentum_;
  std::vector<Mat> velocity_;
};

}  // namespace mdpo::nn
