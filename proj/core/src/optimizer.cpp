#include "ccgan/optimizer.hpp"

#include <cmath>

namespace ccgan {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + text + "' (expected sgd or adam)");
}

template <typename T>
Optimizer<T>::Optimizer(const OptimizerConfig& config, std::vector<Tensor<T>> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.learning_rate >= 0)) throw ConfigError("optimizer: learning rate must be >= 0");
  if (config_.kind == OptimizerKind::kAdam) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }
}

template <typename T>
void Optimizer<T>::step() {
  ++steps_;
  const T lr = static_cast<T>(config_.learning_rate);
  if (config_.kind == OptimizerKind::kSgd) {
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      auto d = p.data();
      auto g = p.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    }
    return;
  }
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.epsilon);
  const auto t = static_cast<double>(steps_);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto d = p.data();
    auto g = p.grad();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      d[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace ccgan
