#pragma once

#include "fieldguide/numeric.hpp"

#include <random>
#include <string>
#include <vector>

namespace fieldguide {

enum class Activation { tanh, relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

/// Feed-forward network: activation after every layer except the last,
/// which is linear. Batches are matrices whose columns are samples.
class Mlp {
 public:
  struct Trace {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(std::vector<DenseLayer> layers, Activation activation);

  /// widths = {in, hidden..., out}; Glorot-uniform weights, zero biases.
  static Mlp random(const std::vector<std::size_t>& widths, Activation activation, std::mt19937_64& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  Activation activation() const noexcept { return activation_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& x) const;
  Matrix forward_batch(const Matrix& x, Trace& trace) const;

  /// Accumulates parameter gradients into `grads` (same shapes as layers())
  /// given dLoss/dOutput, and returns dLoss/dInput.
  Matrix backward(const Trace& trace, const Matrix& grad_out, std::vector<DenseLayer>& grads) const;

  /// Exact d(output)/d(input) at x: output_dim x input_dim.
  Matrix jacobian(const Vector& x) const;

  std::vector<DenseLayer> zero_like() const;
  bool all_finite() const;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::tanh;
};

}  // namespace fieldguide
