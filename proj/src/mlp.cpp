#include "fieldguide/mlp.hpp"

#include "fieldguide/error.hpp"

#include <cmath>

namespace fieldguide {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw Error(ErrorCode::invalid_argument, "unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

namespace {

Matrix activate(const Matrix& z, Activation a) {
  if (a == Activation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

// Derivative expressed through the pre-activation.
Matrix activation_slope(const Matrix& z, Activation a) {
  if (a == Activation::tanh) return (1.0 - z.array().tanh().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

}  // namespace

Mlp::Mlp(std::vector<DenseLayer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  if (layers_.empty()) throw Error(ErrorCode::invalid_argument, "network needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.bias.size() != l.weight.rows())
      throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(k) + ": bias/weight shape mismatch");
    if (k > 0 && l.weight.cols() != layers_[k - 1].weight.rows())
      throw Error(ErrorCode::invalid_argument, "layer " + std::to_string(k) + ": input width mismatch");
  }
}

Mlp Mlp::random(const std::vector<std::size_t>& widths, Activation activation, std::mt19937_64& rng) {
  if (widths.size() < 2) throw Error(ErrorCode::invalid_argument, "network needs input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(widths[k]);
    const auto out = static_cast<Eigen::Index>(widths[k + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer l{Matrix(out, in), Vector::Zero(out)};
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers), activation);
}

std::size_t Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

Vector Mlp::forward(const Vector& x) const {
  Vector h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Vector z = layers_[k].weight * h + layers_[k].bias;
    h = k + 1 < layers_.size() ? Vector(activate(z, activation_)) : std::move(z);
  }
  return h;
}

Matrix Mlp::forward_batch(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Matrix z = layers_[k].weight * h;
    z.colwise() += layers_[k].bias;
    h = k + 1 < layers_.size() ? activate(z, activation_) : std::move(z);
  }
  return h;
}

Matrix Mlp::forward_batch(const Matrix& x, Trace& trace) const {
  trace.inputs.clear();
  trace.pre.clear();
  Matrix h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    trace.inputs.push_back(h);
    Matrix z = layers_[k].weight * h;
    z.colwise() += layers_[k].bias;
    trace.pre.push_back(z);
    h = k + 1 < layers_.size() ? activate(z, activation_) : std::move(z);
  }
  return h;
}

Matrix Mlp::backward(const Trace& trace, const Matrix& grad_out, std::vector<DenseLayer>& grads) const {
  Matrix delta = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) delta = delta.cwiseProduct(activation_slope(trace.pre[k], activation_));
    grads[k].weight.noalias() += delta * trace.inputs[k].transpose();
    grads[k].bias += delta.rowwise().sum();
    delta = layers_[k].weight.transpose() * delta;
  }
  return delta;
}

Matrix Mlp::jacobian(const Vector& x) const {
  Matrix jac = layers_.front().weight;
  Vector h = x;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    const Vector z = layers_[k].weight * h + layers_[k].bias;
    const Vector slope = activation_slope(z, activation_);
    jac = layers_[k + 1].weight * (slope.asDiagonal() * jac);
    h = activate(z, activation_);
  }
  return jac;
}

std::vector<DenseLayer> Mlp::zero_like() const {
  std::vector<DenseLayer> out;
  for (const auto& l : layers_)
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return out;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

bool Mlp::operator==(const Mlp& other) const {
  if (activation_ != other.activation_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k)
    if (!exactly_equal(layers_[k].weight, other.layers_[k].weight) ||
        !exactly_equal(layers_[k].bias, other.layers_[k].bias))
      return false;
  return true;
}

}  // namespace fieldguide
