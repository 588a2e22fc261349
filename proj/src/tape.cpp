#include "tprune/tape.hpp"

#include "tprune/ops.hpp"

namespace tprune {

template <typename T>
const BasicTensor<T>& GradStore<T>::at(VarId id) const {
  if (!has(id)) fail(ErrorCode::kInvalidArgument, "no gradient recorded for variable " + std::to_string(id));
  return *grads_[static_cast<std::size_t>(id)];
}

template <typename T>
void GradStore<T>::accumulate(VarId id, BasicTensor<T> grad, const Shape& expected) {
  if (grad.shape() != expected) {
    fail(ErrorCode::kShape, "gradient shape " + shape_str(grad.shape()) + " does not match variable shape " +
                                shape_str(expected));
  }
  auto& slot = grads_.at(static_cast<std::size_t>(id));
  if (!slot) {
    slot = std::move(grad);
    return;
  }
  auto dst = slot->data();
  auto src = grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::check_id(VarId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail(ErrorCode::kInvalidArgument, "unknown tape variable " + std::to_string(id));
  }
}

template <typename T>
VarId Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  require_finite(value, "leaf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return static_cast<VarId>(nodes_.size() - 1);
}

template <typename T>
VarId Tape<T>::push(BasicTensor<T> value, std::vector<VarId> parents, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (VarId p : parents) node.requires_grad = node.requires_grad || requires_grad(p);
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return static_cast<VarId>(nodes_.size() - 1);
}

template <typename T>
VarId Tape<T>::conv2d(VarId input, VarId weight, VarId bias, int stride, int pad, std::string_view layer) {
  check_id(input);
  check_id(weight);
  check_id(bias);
  auto out = ops::conv2d(value(input), value(weight), value(bias), stride, pad, layer);
  return push(std::move(out), {input, weight, bias},
              [stride, pad](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
                const auto& ps = tape.parents(self);
                const bool wi = tape.requires_grad(ps[0]);
                const bool ww = tape.requires_grad(ps[1]);
                const bool wb = tape.requires_grad(ps[2]);
                auto grads = ops::conv2d_backward(tape.value(ps[0]), tape.value(ps[1]), g, stride, pad, wi, ww, wb);
                if (wi) store.accumulate(ps[0], std::move(grads.input), tape.value(ps[0]).shape());
                if (ww) store.accumulate(ps[1], std::move(grads.weight), tape.value(ps[1]).shape());
                if (wb) store.accumulate(ps[2], std::move(grads.bias), tape.value(ps[2]).shape());
              });
}

template <typename T>
VarId Tape<T>::relu(VarId x) {
  check_id(x);
  return push(ops::relu(value(x)), {x},
              [](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
                const VarId p = tape.parents(self)[0];
                store.accumulate(p, ops::relu_backward(tape.value(p), g), tape.value(p).shape());
              });
}

template <typename T>
VarId Tape<T>::maxpool2x(VarId x) {
  check_id(x);
  std::vector<std::int64_t> argmax;
  auto out = ops::maxpool2x(value(x), &argmax);
  return push(std::move(out), {x},
              [argmax = std::move(argmax)](const Tape& tape, VarId self, const BasicTensor<T>& g,
                                           GradStore<T>& store) {
                const VarId p = tape.parents(self)[0];
                BasicTensor<T> gin(tape.value(p).shape());
                for (std::size_t i = 0; i < argmax.size(); ++i) gin[static_cast<std::size_t>(argmax[i])] += g[i];
                store.accumulate(p, std::move(gin), tape.value(p).shape());
              });
}

template <typename T>
VarId Tape<T>::upsample_nearest2x(VarId x) {
  check_id(x);
  return push(ops::upsample_nearest2x(value(x)), {x},
              [](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
                const VarId p = tape.parents(self)[0];
                store.accumulate(p, ops::upsample_nearest2x_backward(g), tape.value(p).shape());
              });
}

template <typename T>
VarId Tape<T>::concat_channels(VarId a, VarId b, std::string_view a_name, std::string_view b_name) {
  check_id(a);
  check_id(b);
  auto out = ops::concat_channels(value(a), value(b), a_name, b_name);
  return push(std::move(out), {a, b}, [](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
    const auto& ps = tape.parents(self);
    BasicTensor<T> ga, gb;
    ops::split_channels(g, tape.value(ps[0]).dim(1), ga, gb);
    if (tape.requires_grad(ps[0])) store.accumulate(ps[0], std::move(ga), tape.value(ps[0]).shape());
    if (tape.requires_grad(ps[1])) store.accumulate(ps[1], std::move(gb), tape.value(ps[1]).shape());
  });
}

template <typename T>
VarId Tape<T>::bce_with_logits(VarId logits, VarId targets) {
  check_id(logits);
  check_id(targets);
  auto out = ops::bce_with_logits(value(logits), value(targets));
  return push(std::move(out), {logits, targets},
              [](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
                const auto& ps = tape.parents(self);
                if (!tape.requires_grad(ps[0])) return;
                auto grad = ops::bce_with_logits_grad(tape.value(ps[0]), tape.value(ps[1]));
                for (T& v : grad.data()) v *= g[0];
                store.accumulate(ps[0], std::move(grad), tape.value(ps[0]).shape());
              });
}

template <typename T>
VarId Tape<T>::scale(VarId x, T factor) {
  check_id(x);
  return push(ops::scale(value(x), factor), {x},
              [factor](const Tape& tape, VarId self, const BasicTensor<T>& g, GradStore<T>& store) {
                const VarId p = tape.parents(self)[0];
                store.accumulate(p, ops::scale(g, factor), tape.value(p).shape());
              });
}

template <typename T>
GradStore<T> Tape<T>::backward(VarId output, const BasicTensor<T>& seed) const {
  check_id(output);
  if (seed.shape() != value(output).shape()) {
    fail(ErrorCode::kShape, "backward: seed shape " + shape_str(seed.shape()) + " does not match output shape " +
                                shape_str(value(output).shape()));
  }
  GradStore<T> store(nodes_.size());
  store.accumulate(output, seed, seed.shape());
  for (VarId id = output; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward) continue;
    const BasicTensor<T>* g = store.find(id);
    if (!g) continue;
    node.backward(*this, id, *g, store);
  }
  return store;
}

template class GradStore<float>;
template class GradStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace tprune
