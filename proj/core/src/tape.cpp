#include "ccgan/tape.hpp"

#include <algorithm>
#include <unordered_set>

namespace ccgan {

namespace {

template <typename T>
thread_local Tape<T>* g_current_tape = nullptr;

}  // namespace

template <typename T>
Tape<T>* current_tape() noexcept {
  return g_current_tape<T>;
}

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (g_current_tape<T> == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(g_current_tape<T>) {
  g_current_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  g_current_tape<T> = previous_;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<ImplPtr> inputs, const ImplPtr& output,
                     BackwardFn backward) {
  output->requires_grad = true;
  output->node_id = static_cast<std::int64_t>(records_.size());
  records_.push_back(Record{op, std::move(inputs), output, std::move(backward)});
}

template <typename T>
void Tape<T>::clear() {
  for (auto& r : records_) r.output->node_id = -1;
  records_.clear();
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  for (auto& r : records_) {
    r.output->active = false;
    for (auto& in : r.inputs) in->active = in->node_id < 0 && in->requires_grad;
  }
  run_backward(loss);
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss, std::span<const Tensor<T>> targets) {
  for (auto& r : records_) {
    r.output->active = false;
    for (auto& in : r.inputs) in->active = false;
  }
  for (const auto& t : targets) t.impl()->active = true;
  run_backward(loss);
}

template <typename T>
void Tape<T>::run_backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto id = loss.node_id();
  if (id < 0 || static_cast<std::size_t>(id) >= records_.size() ||
      records_[static_cast<std::size_t>(id)].output.get() != loss.impl()) {
    throw ContractError("backward: loss was not recorded on this tape");
  }

  // Forward sweep: a node is active iff one of its inputs is. Intermediate
  // gradients from a previous pass over the same tape are discarded.
  for (auto& r : records_) {
    r.output->active =
        std::any_of(r.inputs.begin(), r.inputs.end(), [](const ImplPtr& p) { return p->active; });
    if (r.output->active) std::fill(r.output->grad.begin(), r.output->grad.end(), T(0));
  }
  auto& root = *records_[static_cast<std::size_t>(id)].output;
  if (!root.active) return;
  if (root.grad.empty()) root.grad.assign(1, T(0));
  root.grad[0] += T(1);

  for (std::size_t i = static_cast<std::size_t>(id) + 1; i-- > 0;) {
    auto& r = records_[i];
    if (!r.output->active || r.output->grad.empty()) continue;
    r.backward();
  }
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* current_tape<float>() noexcept;
template Tape<double>* current_tape<double>() noexcept;
template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace ccgan
