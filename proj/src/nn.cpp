#include "fusiontrack/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace fusiontrack::nn {

ParamStore::Id ParamStore::add(std::string name, Matrix value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Matrix grad = Matrix::Zero(value.rows(), value.cols());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

std::optional<ParamStore::Id> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

Index ParamStore::num_scalars() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

void ParamStore::accumulate_grad(const ParamStore& other) {
  if (other.entries_.size() != entries_.size()) {
    throw ShapeError("accumulate_grad: parameter layouts differ");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].grad += other.entries_[i].grad;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Matrix init_params(std::uint64_t seed, Index fan_in, Index fan_out) {
  if (fan_in <= 0 || fan_out <= 0) throw ShapeError("init_params needs positive dimensions");
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix w(fan_out, fan_in);
  // fill row-major so the stream order does not depend on storage order
  for (Index r = 0; r < fan_out; ++r)
    for (Index c = 0; c < fan_in; ++c) w(r, c) = dist(rng);
  return w;
}

Index Mlp::in_dim(const ParamStore& store) const {
  return layers.empty() ? 0 : store.value(layers.front().weight).cols();
}

Index Mlp::out_dim(const ParamStore& store) const {
  return layers.empty() ? 0 : store.value(layers.back().weight).rows();
}

DenseLayer add_dense(ParamStore& store, const std::string& name, Index in, Index out,
                     Activation activation, std::uint64_t seed) {
  DenseLayer layer;
  layer.weight = store.add(name + ".weight", init_params(derive_seed(seed, name), in, out));
  layer.bias = store.add(name + ".bias", Matrix::Zero(out, 1));
  layer.activation = activation;
  return layer;
}

Mlp add_mlp(ParamStore& store, const std::string& name, std::span<const Index> dims,
            Activation hidden, Activation output, std::uint64_t seed) {
  if (dims.size() < 2) throw ShapeError("add_mlp needs at least input and output widths");
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = l + 2 == dims.size();
    mlp.layers.push_back(add_dense(store, name + "." + std::to_string(l), dims[l], dims[l + 1],
                                   last ? output : hidden, seed));
  }
  return mlp;
}

namespace {

void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::sigmoid:
      z = sigmoid(z);
      break;
  }
}

}  // namespace

Matrix dense_forward(const ParamStore& store, const DenseLayer& layer, const Matrix& x) {
  const Matrix& w = store.value(layer.weight);
  if (x.cols() != w.cols()) {
    throw ShapeError("dense layer expects " + std::to_string(w.cols()) + " inputs, got " +
                     std::to_string(x.cols()));
  }
  Matrix z = x * w.transpose();
  z.rowwise() += store.value(layer.bias).col(0).transpose();
  activate(z, layer.activation);
  return z;
}

Matrix mlp_forward(const ParamStore& store, const Mlp& mlp, const Matrix& x, MlpTape* tape) {
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Matrix h = x;
  for (const auto& layer : mlp.layers) {
    Matrix next = dense_forward(store, layer, h);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->outputs.push_back(next);
    }
    h = std::move(next);
  }
  return h;
}

Matrix dense_backward(ParamStore& grads, const DenseLayer& layer, const Matrix& input,
                      const Matrix& output, const Matrix& grad_output) {
  Matrix dz;
  switch (layer.activation) {
    case Activation::identity:
      dz = grad_output;
      break;
    case Activation::relu:
      dz = (output.array() > 0.0).select(grad_output, 0.0);
      break;
    case Activation::sigmoid:
      dz = grad_output.array() * output.array() * (1.0 - output.array());
      break;
  }
  grads.grad(layer.weight).noalias() += dz.transpose() * input;
  grads.grad(layer.bias).col(0) += dz.colwise().sum().transpose();
  return dz * grads.value(layer.weight);
}

Matrix mlp_backward(ParamStore& grads, const Mlp& mlp, const MlpTape& tape,
                    const Matrix& grad_output) {
  Matrix g = grad_output;
  for (std::size_t l = mlp.layers.size(); l-- > 0;)
    g = dense_backward(grads, mlp.layers[l], tape.inputs[l], tape.outputs[l], g);
  return g;
}

double sigmoid(double x) {
  // kept strictly inside (0, 1): past |x| ~ 37 the exact value rounds to an endpoint
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  if (x >= 0.0) return std::min(hi, 1.0 / (1.0 + std::exp(-x)));
  const double e = std::exp(x);
  return std::max(lo, e / (1.0 + e));
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

double logit(double p) {
  constexpr double lo = 1e-12;
  p = std::clamp(p, lo, 1.0 - lo);
  return std::log(p) - std::log1p(-p);
}

Vector softmax_masked(const Vector& x, const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != x.size()) throw ShapeError("softmax mask size mismatch");
  double peak = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < x.size(); ++k)
    if (mask[static_cast<std::size_t>(k)]) peak = std::max(peak, x(k));
  if (peak == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("softmax_masked: every entry is masked out");
  }
  Vector y = Vector::Zero(x.size());
  double total = 0.0;
  for (Index k = 0; k < x.size(); ++k) {
    if (!mask[static_cast<std::size_t>(k)]) continue;
    y(k) = std::exp(x(k) - peak);
    total += y(k);
  }
  return y / total;
}

GradCheckResult grad_check(const Objective& f, ParamStore& store, double eps,
                           double analytic_scale) {
  store.zero_grad();
  const double f0 = f(store);
  // Central differences carry roundoff near 1e-16 * |f| / eps, so exactly-zero
  // gradients (softmax shift invariance) would otherwise score a relative error of 1.
  const double floor = std::max(1e-8, 1e-6 * std::max(1.0, std::abs(f0)));
  std::vector<Matrix> analytic;
  analytic.reserve(store.size());
  for (std::size_t id = 0; id < store.size(); ++id) analytic.push_back(store.grad(id) * analytic_scale);

  GradCheckResult result;
  for (std::size_t id = 0; id < store.size(); ++id) {
    Matrix& value = store.value(id);
    for (Index c = 0; c < value.size(); ++c) {
      const double saved = value(c);
      value(c) = saved + eps;
      store.zero_grad();
      const double up = f(store);
      value(c) = saved - eps;
      store.zero_grad();
      const double down = f(store);
      value(c) = saved;

      const double numeric = (up - down) / (2.0 * eps);
      ++result.coordinates;
      // one-sided slopes that disagree mean a relu/max kink lies within eps
      const double right = (up - f0) / eps;
      const double left = (f0 - down) / eps;
      if (std::abs(right - left) > 1e-2 * (std::abs(right) + std::abs(left)) + floor) {
        ++result.kinks;
        continue;
      }
      const double a = analytic[id](c);
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = store.name(id);
        result.worst_coordinate = c;
      }
    }
  }
  store.zero_grad();
  return result;
}

void Adam::step(ParamStore& store) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  if (m_.size() != store.size()) {
    m_.clear();
    v_.clear();
    for (std::size_t id = 0; id < store.size(); ++id) {
      m_.push_back(Matrix::Zero(store.value(id).rows(), store.value(id).cols()));
      v_.push_back(Matrix::Zero(store.value(id).rows(), store.value(id).cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t id = 0; id < store.size(); ++id) {
    const Matrix& g = store.grad(id);
    m_[id] = beta1 * m_[id] + (1.0 - beta1) * g;
    v_[id] = beta2 * v_[id] + (1.0 - beta2) * g.cwiseProduct(g);
    const auto m_hat = m_[id].array() / c1;
    const auto v_hat = v_[id].array() / c2;
    store.value(id).array() -= lr_ * m_hat / (v_hat.sqrt() + eps);
  }
  store.zero_grad();
}

}  // namespace fusiontrack::nn
