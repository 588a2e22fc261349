#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tprune/tape.hpp"
#include "tprune/tensor.hpp"

namespace tprune {

struct UNetConfig {
  int depth = 2;
  int base_channels = 8;
  int channel_multiplier = 2;
  int in_channels = 3;
  int out_channels = 1;
  int height = 64;
  int width = 64;
};

void validate(const UNetConfig& config);

// Sum of output channels over all prunable convs of the builder's layout.
std::int64_t prunable_channel_count(const UNetConfig& config);

// Depth 4, base 32, doubling per level: 2944 prunable channels. The widths are
// a reconstruction with the right channel total, not a published layout.
UNetConfig reference_config();

enum class LayerKind { kInput, kConv, kRelu, kMaxPool, kUpsample, kConcat };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::kInput;
  std::vector<int> inputs;

  // Output geometry at the model's native input size.
  int channels = 0;
  int height = 0;
  int width = 0;

  // Convolution fields; weight is [out, in, k, k].
  int in_channels = 0;
  int original_out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool prunable = false;
  Tensor weight;
  Tensor bias;
};

struct ChannelRef {
  std::string layer_id;
  int filter_index = 0;

  friend auto operator<=>(const ChannelRef&, const ChannelRef&) = default;
};

std::string to_string(const ChannelRef& ref);

// Directed acyclic layer graph. Nodes are stored in topological order and the
// last node is the output.
class Model {
 public:
  int add_input(std::string id, int channels, int height, int width);
  // pad < 0 selects "same" padding (k-1)/2.
  int add_conv(std::string id, int input, int out_channels, int kernel, bool prunable, int stride = 1, int pad = -1);
  int add_relu(std::string id, int input);
  int add_maxpool(std::string id, int input);
  int add_upsample(std::string id, int input);
  int add_concat(std::string id, int first, int second);

  const std::vector<LayerNode>& layers() const { return layers_; }
  std::vector<LayerNode>& mutable_layers() { return layers_; }
  const LayerNode& layer(int index) const { return layers_.at(static_cast<std::size_t>(index)); }
  LayerNode& layer(int index) { return layers_.at(static_cast<std::size_t>(index)); }
  std::optional<int> find(const std::string& id) const;
  int require(const std::string& id) const;
  bool empty() const { return layers_.empty(); }
  int output() const { return static_cast<int>(layers_.size()) - 1; }
  const LayerNode& input_node() const;

  std::vector<int> conv_layers() const;
  std::vector<int> prunable_layers() const;
  std::int64_t prunable_channel_count() const;
  std::vector<ChannelRef> prunable_channels() const;

  // Validates a ChannelRef against this model (throws on dangling refs).
  int resolve(const ChannelRef& ref) const;

  // Recomputes every node's output geometry from its inputs; throws on
  // inconsistent graphs (channel or spatial mismatches).
  void refresh_geometry();

  // Free-form provenance carried through save/load; not part of the fingerprint.
  std::string provenance;

 private:
  int push(LayerNode node);
  void infer(LayerNode& node) const;

  std::vector<LayerNode> layers_;
};

Model build_unet(const UNetConfig& config, std::uint64_t seed);

struct Geometry {
  int channels, height, width;
};
// Output geometry of every node for an input of size height x width.
std::vector<Geometry> infer_geometry(const Model& model, int height, int width);

std::int64_t count_params(const Model& model);
std::int64_t count_flops(const Model& model, int height, int width);
std::int64_t count_flops(const Model& model);

// Conv weights and biases in conv_layers() order, in any precision.
template <typename T>
struct ParamSet {
  std::vector<BasicTensor<T>> weights;
  std::vector<BasicTensor<T>> biases;
};

template <typename T>
ParamSet<T> params_as(const Model& model);

struct TraceOptions {
  bool params_require_grad = false;
  // Marks the input as differentiable so activation gradients are recorded
  // even when no parameter gradient is wanted.
  bool activations_require_grad = false;
};

template <typename T>
struct ForwardTrace {
  Tape<T> tape;
  VarId input = -1;
  VarId logits = -1;
  std::vector<VarId> node_vars;    // per layer node
  std::vector<VarId> preacts;      // per prunable conv, structural order
  std::vector<VarId> weight_vars;  // per conv, conv_layers() order
  std::vector<VarId> bias_vars;
};

// Runs the model on a tape. `params` overrides the stored weights (used for
// double-precision verification); pass nullptr to use the model's own.
template <typename T>
ForwardTrace<T> trace_forward(const Model& model, const BasicTensor<T>& batch, const ParamSet<T>* params = nullptr,
                              TraceOptions options = {});

// Pre-activations (conv output after bias, before ReLU) of every prunable conv,
// and after backprop_trace their gradients.
template <typename T>
struct ActivationTrace {
  std::vector<std::string> layer_ids;
  std::vector<BasicTensor<T>> preacts;
  std::vector<BasicTensor<T>> grads;
};

struct ForwardResult {
  Tensor logits;
  std::optional<ActivationTrace<float>> trace;
};

ForwardResult forward(const Model& model, const Tensor& batch, bool capture);

// Inference only. Large batches are processed in chunks of `chunk` samples.
Tensor predict(const Model& model, const Tensor& batch, int chunk = 16);

template <typename T>
ActivationTrace<T> activation_trace(const Model& model, const ForwardTrace<T>& trace, const GradStore<T>* grads);

}  // namespace tprune
