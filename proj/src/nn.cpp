#include "mdpo/nn.hpp"

#include "mdpo/error.hpp"

#include <cmath>
#include <cstring>

namespace mdpo::nn {

std::size_t ParamStore::add(std::string name, Mat value) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  tensors_.push_back({std::move(name), std::move(value)});
  return tensors_.size() - 1;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  throw ContractError("unknown parameter: " + std::string(name));
}

bool ParamStore::contains(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ParamStore::bitwise_equal(const ParamStore& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0) return false;
  }
  return true;
}

Grads::Grads(const ParamStore& store) {
  g_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    g_.push_back(Mat::Zero(store.value(i).rows(), store.value(i).cols()));
}

void Grads::zero() {
  for (auto& g : g_) g.setZero();
}

void Grads::scale(double s) {
  for (auto& g : g_) g *= s;
}

bool Grads::all_finite() const {
  for (const auto& g : g_)
    if (!g.allFinite()) return false;
  return true;
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat activate(const Mat& z, Activation act) {
  if (act == Activation::tanh) return z.array().tanh().matrix();
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Mat activation_grad(const Mat& z, Activation act) {
  if (act == Activation::tanh) return (1.0 - z.array().tanh().square()).matrix();
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

}  // namespace

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<int> widths, Activation act,
         Rng& rng, double out_scale)
    : widths_(std::move(widths)), act_(act) {
  if (widths_.size() < 2) throw ContractError("Mlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int fan_in = widths_[l], fan_out = widths_[l + 1];
    double scale = std::sqrt(1.0 / fan_in);
    if (l + 2 == widths_.size()) scale *= out_scale;
    Mat w = rng.normal_matrix(fan_out, fan_in) * scale;
    const std::string p = prefix + ".l" + std::to_string(l);
    w_idx_.push_back(store.add(p + ".W", std::move(w)));
    b_idx_.push_back(store.add(p + ".b", Mat::Zero(fan_out, 1)));
  }
}

Mlp Mlp::attach(const ParamStore& store, const std::string& prefix, std::vector<int> widths,
                Activation act) {
  Mlp m;
  m.widths_ = std::move(widths);
  m.act_ = act;
  for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    const auto wi = store.index_of(p + ".W");
    const auto bi = store.index_of(p + ".b");
    if (store.value(wi).rows() != m.widths_[l + 1] || store.value(wi).cols() != m.widths_[l] ||
        store.value(bi).rows() != m.widths_[l + 1])
      throw ContractError("shape mismatch attaching " + p);
    m.w_idx_.push_back(wi);
    m.b_idx_.push_back(bi);
  }
  return m;
}

Mat Mlp::forward(const ParamStore& store, const Mat& x, Cache* cache) const {
  if (x.rows() != in_dim())
    throw ContractError("Mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(in_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat h = x;
  for (int l = 0; l < layers(); ++l) {
    Mat z = store.value(w_idx_[l]) * h;
    z.colwise() += store.value(b_idx_[l]).col(0);
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(z);
    }
    h = (l + 1 < layers()) ? activate(z, act_) : std::move(z);
  }
  return h;
}

Mat Mlp::backward(const ParamStore& store, const Cache& cache, const Mat& dy, Grads& grads) const {
  Mat g = dy;
  for (int l = layers() - 1; l >= 0; --l) {
    grads[w_idx_[l]].noalias() += g * cache.inputs[l].transpose();
    grads[b_idx_[l]].col(0) += g.rowwise().sum();
    Mat gin = store.value(w_idx_[l]).transpose() * g;
    if (l > 0) gin.array() *= activation_grad(cache.pre[l - 1], act_).array();
    g = std::move(gin);
  }
  return g;
}

Mat normalize_columns(const Mat& x, Vec* norms) {
  Vec n = x.colwise().norm().transpose();
  n = n.cwiseMax(1e-12);
  if (norms) *norms = n;
  return x * n.cwiseInverse().asDiagonal();
}

Mat normalize_columns_backward(const Mat& y, const Vec& norms, const Mat& dy) {
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index j = 0; j < dy.cols(); ++j) {
    const double proj = y.col(j).dot(dy.col(j));
    dx.col(j) = (dy.col(j) - y.col(j) * proj) / norms(j);
  }
  return dx;
}

Adam::Adam(const ParamStore& store, AdamOptions opt) : opt_(opt) {
  for (const auto& t : store.tensors()) {
    m_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  }
}

void Adam::step(ParamStore& store, const Grads& grads, const std::vector<bool>* trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grads[i];
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grads[i].cwiseProduct(grads[i]);
    store.value(i).array() -=
        opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
  }
}

Sgd::Sgd(const ParamStore& store, double lr, double momentum) : lr_(lr), momentum_(momentum) {
  for (const auto& t : store.tensors()) velocity_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
}

void Sgd::step(ParamStore& store, const Grads& grads, const std::vector<bool>* trainable) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    velocity_[i] = momentum_ * velocity_[i] + grads[i];
    store.value(i) -= lr_ * velocity_[i];
  }
}

}  // namespace mdpo::nn
