#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tprune/tensor.hpp"

namespace tprune {

using VarId = std::int32_t;

// Gradients keyed by tape variable id.
template <typename T>
class GradStore {
 public:
  explicit GradStore(std::size_t size = 0) : grads_(size) {}

  bool has(VarId id) const { return id >= 0 && static_cast<std::size_t>(id) < grads_.size() && grads_[id].has_value(); }
  const BasicTensor<T>& at(VarId id) const;
  const BasicTensor<T>* find(VarId id) const { return has(id) ? &*grads_[id] : nullptr; }

  // Adds `grad` into the slot for `id`; the first contribution is moved in.
  void accumulate(VarId id, BasicTensor<T> grad, const Shape& expected);

  friend bool operator==(const GradStore& a, const GradStore& b) { return a.grads_ == b.grads_; }

 private:
  std::vector<std::optional<BasicTensor<T>>> grads_;
};

// Append-only record of primitive ops. Parents always precede children, so a
// reverse sweep over the node list is a valid topological backward order.
template <typename T>
class Tape {
 public:
  VarId leaf(BasicTensor<T> value, bool requires_grad);

  const BasicTensor<T>& value(VarId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(VarId id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  const std::vector<VarId>& parents(VarId id) const { return nodes_.at(static_cast<std::size_t>(id)).parents; }
  std::size_t size() const { return nodes_.size(); }

  VarId conv2d(VarId input, VarId weight, VarId bias, int stride, int pad, std::string_view layer = "conv2d");
  VarId relu(VarId x);
  VarId maxpool2x(VarId x);
  VarId upsample_nearest2x(VarId x);
  VarId concat_channels(VarId a, VarId b, std::string_view a_name = "a", std::string_view b_name = "b");
  VarId bce_with_logits(VarId logits, VarId targets);
  VarId scale(VarId x, T factor);

  // Reverse sweep from `output` seeded with `seed`. Every node is visited at
  // most once and contributions accumulate in tape order.
  GradStore<T> backward(VarId output, const BasicTensor<T>& seed) const;

 private:
  using BackwardFn = std::function<void(const Tape&, VarId self, const BasicTensor<T>& grad_out, GradStore<T>&)>;
  struct Node {
    BasicTensor<T> value;
    std::vector<VarId> parents;
    bool requires_grad = false;
    BackwardFn backward;
  };

  VarId push(BasicTensor<T> value, std::vector<VarId> parents, BackwardFn fn);
  void check_id(VarId id) const;

  std::vector<Node> nodes_;
};

}  // namespace tprune
