#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fusiontrack::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Named parameter tensors, each paired with a gradient buffer of the same shape.
class ParamStore {
 public:
  using Id = std::size_t;

  Id add(std::string name, Matrix value);

  const Matrix& value(Id id) const { return entries_.at(id).value; }
  Matrix& value(Id id) { return entries_.at(id).value; }
  const Matrix& grad(Id id) const { return entries_.at(id).grad; }
  Matrix& grad(Id id) { return entries_.at(id).grad; }
  const std::string& name(Id id) const { return entries_.at(id).name; }

  std::optional<Id> find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  Index num_scalars() const;

  void zero_grad();
  /// Adds `other`'s gradients into this store; layouts must match.
  void accumulate_grad(const ParamStore& other);

 private:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
  };
  std::vector<Entry> entries_;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); fan_out x fan_in.
Matrix init_params(std::uint64_t seed, Index fan_in, Index fan_out);

/// Mixes a base seed with a tensor name so every tensor gets its own stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

enum class Activation { identity, relu, sigmoid };

struct DenseLayer {
  ParamStore::Id weight = 0;  // out x in
  ParamStore::Id bias = 0;    // out x 1
  Activation activation = Activation::identity;
};

struct Mlp {
  std::vector<DenseLayer> layers;

  Index in_dim(const ParamStore& store) const;
  Index out_dim(const ParamStore& store) const;
};

DenseLayer add_dense(ParamStore& store, const std::string& name, Index in, Index out,
                     Activation activation, std::uint64_t seed);

/// dims = {in, hidden..., out}; hidden layers use `hidden`, the last one `output`.
Mlp add_mlp(ParamStore& store, const std::string& name, std::span<const Index> dims,
            Activation hidden, Activation output, std::uint64_t seed);

struct MlpTape {
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> outputs;  // post-activation output of each layer
};

/// Rows of x are independent samples.
Matrix dense_forward(const ParamStore& store, const DenseLayer& layer, const Matrix& x);
Matrix mlp_forward(const ParamStore& store, const Mlp& mlp, const Matrix& x,
                   MlpTape* tape = nullptr);

/// Accumulates parameter gradients into `grads` and returns d loss / d input.
Matrix mlp_backward(ParamStore& grads, const Mlp& mlp, const MlpTape& tape,
                    const Matrix& grad_output);
Matrix dense_backward(ParamStore& grads, const DenseLayer& layer, const Matrix& input,
                      const Matrix& output, const Matrix& grad_output);

double sigmoid(double x);
Matrix sigmoid(const Matrix& x);
double logit(double p);

/// Softmax over the retained entries; masked entries come out exactly zero.
/// Throws std::invalid_argument when no entry is retained.
Vector softmax_masked(const Vector& x, const std::vector<bool>& mask);

/// Computes the loss at the store's current values and accumulates the
/// analytic gradient into the store's gradient buffers.
using Objective = std::function<double(ParamStore&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  Index worst_coordinate = -1;
  Index coordinates = 0;
  Index kinks = 0;  // coordinates skipped because f is not differentiable within eps
};

/// Central-difference check of every parameter coordinate.
/// `analytic_scale` multiplies the analytic gradient (1.0 for a real check).
GradCheckResult grad_check(const Objective& f, ParamStore& store, double eps,
                           double analytic_scale = 1.0);

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8. Zeroes gradients after stepping.
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(ParamStore& store);
  std::int64_t steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Checkpoints: a text header naming each tensor and its shape, followed by
/// the tensors' doubles (little-endian, column-major) in header order.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* find(std::string_view name) const;
};

Checkpoint to_checkpoint(const ParamStore& store, std::map<std::string, std::string> meta = {});
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

/// Copies every tensor whose name starts with `prefix` into the store.
/// Throws ShapeError on shape mismatch and std::runtime_error on a missing tensor.
void load_into(ParamStore& store, const Checkpoint& ckpt, std::string_view prefix = {});

}  // namespace fusiontrack::nn
