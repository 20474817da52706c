#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ccgan/tensor.hpp"

namespace ccgan {

/// Ordered record of differentiable operations. Records are appended in
/// execution order, which is a topological order of the graph.
template <typename T>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  /// Accumulates the output gradient into the gradients of active inputs.
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string_view op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Appends a record and stamps the output with its node id.
  void record(std::string_view op, std::vector<ImplPtr> inputs, const ImplPtr& output,
              BackwardFn backward);

  std::size_t size() const noexcept { return records_.size(); }
  const Record& at(std::size_t i) const { return records_.at(i); }
  void clear();

  /// Reverse pass from a scalar loss into every requires_grad leaf.
  void backward(const Tensor<T>& loss);
  /// Reverse pass restricted to the given leaves; nodes that cannot reach a
  /// target are skipped and other leaves receive nothing.
  void backward(const Tensor<T>& loss, std::span<const Tensor<T>> targets);

 private:
  void run_backward(const Tensor<T>& loss);

  std::vector<Record> records_;
};

/// Installs a tape as the thread's recording target for its lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Active tape for this thread, or nullptr when not recording.
template <typename T>
Tape<T>* current_tape() noexcept;

/// True when an op with these inputs must be recorded.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

/// Zeroes the gradient buffers of the given tensors.
template <typename T>
void zero_grad(std::span<Tensor<T>> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace ccgan
