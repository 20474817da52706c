#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccgan/tensor.hpp"

namespace ccgan {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Gradient-descent update over a fixed parameter list. Adam moments are
/// kept per parameter tensor and are part of a checkpoint.
template <typename T>
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::vector<Tensor<T>> params);

  /// Applies one update from the parameters' current gradients.
  void step();
  void zero_grad();

  const OptimizerConfig& config() const noexcept { return config_; }
  const std::vector<Tensor<T>>& params() const noexcept { return params_; }
  std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t steps) noexcept { steps_ = steps; }
  /// First and second moments (empty for SGD).
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace ccgan
