#include "tprune/model.hpp"

#include <cmath>
#include <stdexcept>

#include "tprune/ops.hpp"
#include "tprune/rng.hpp"

namespace tprune {

void validate(const UNetConfig& c) {
  if (c.depth < 1) fail(ErrorCode::kInvalidArgument, "UNet depth must be >= 1 (depth 0 has no hierarchy)");
  if (c.base_channels < 1 || c.channel_multiplier < 1 || c.in_channels < 1 || c.out_channels < 1) {
    fail(ErrorCode::kInvalidArgument, "UNet channel counts and multiplier must be >= 1");
  }
  if (c.depth > 16) fail(ErrorCode::kInvalidArgument, "UNet depth too large");
  const int factor = 1 << c.depth;
  if (c.height < 1 || c.width < 1 || c.height % factor != 0 || c.width % factor != 0) {
    fail(ErrorCode::kInvalidArgument, "input " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                                          " is not divisible by 2^depth = " + std::to_string(factor));
  }
}

std::int64_t prunable_channel_count(const UNetConfig& c) {
  std::int64_t total = 0;
  std::int64_t width = c.base_channels;
  for (int level = 0; level < c.depth; ++level, width *= c.channel_multiplier) total += 4 * width;  // enc + dec
  return total + 2 * width;                                                                      // bottleneck
}

UNetConfig reference_config() {
  UNetConfig c;
  c.depth = 4;
  c.base_channels = 32;
  c.channel_multiplier = 2;
  c.in_channels = 3;
  c.out_channels = 1;
  c.height = 256;
  c.width = 256;
  return c;
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool2x";
    case LayerKind::kUpsample: return "upsample_nearest2x";
    case LayerKind::kConcat: return "concat";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::kInput, LayerKind::kConv, LayerKind::kRelu, LayerKind::kMaxPool, LayerKind::kUpsample,
                 LayerKind::kConcat}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::kFormat, "unknown layer kind '" + name + "'");
}

std::string to_string(const ChannelRef& ref) { return ref.layer_id + "#" + std::to_string(ref.filter_index); }

std::optional<int> Model::find(const std::string& id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].id == id) return static_cast<int>(i);
  }
  return std::nullopt;
}

int Model::require(const std::string& id) const {
  auto idx = find(id);
  if (!idx) fail(ErrorCode::kInvalidArgument, "no layer named '" + id + "'");
  return *idx;
}

const LayerNode& Model::input_node() const {
  if (layers_.empty() || layers_.front().kind != LayerKind::kInput) {
    fail(ErrorCode::kInvalidArgument, "model has no input node");
  }
  return layers_.front();
}

std::vector<int> Model::conv_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::kConv) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> Model::prunable_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::kConv && layers_[i].prunable) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::int64_t Model::prunable_channel_count() const {
  std::int64_t n = 0;
  for (int i : prunable_layers()) n += layers_[static_cast<std::size_t>(i)].channels;
  return n;
}

std::vector<ChannelRef> Model::prunable_channels() const {
  std::vector<ChannelRef> out;
  for (int i : prunable_layers()) {
    const auto& node = layers_[static_cast<std::size_t>(i)];
    for (int f = 0; f < node.channels; ++f) out.push_back({node.id, f});
  }
  return out;
}

int Model::resolve(const ChannelRef& ref) const {
  auto idx = find(ref.layer_id);
  if (!idx) fail(ErrorCode::kInvalidArgument, "dangling channel reference " + to_string(ref) + ": no such layer");
  const auto& node = layers_[static_cast<std::size_t>(*idx)];
  if (node.kind != LayerKind::kConv || !node.prunable) {
    fail(ErrorCode::kInvalidArgument, "channel reference " + to_string(ref) + " does not name a prunable conv");
  }
  if (ref.filter_index < 0 || ref.filter_index >= node.channels) {
    fail(ErrorCode::kInvalidArgument, "dangling channel reference " + to_string(ref) + ": layer has " +
                                          std::to_string(node.channels) + " filters");
  }
  return *idx;
}

namespace {

// Output geometry of `node` given the geometry of every earlier node.
Geometry infer_one(const LayerNode& node, const std::vector<LayerNode>& layers, const std::vector<Geometry>& prior) {
  auto in = [&](std::size_t k) -> const Geometry& {
    const int idx = node.inputs.at(k);
    if (idx < 0 || static_cast<std::size_t>(idx) >= prior.size()) {
      fail(ErrorCode::kInvalidArgument, node.id + ": input must reference an earlier layer");
    }
    return prior[static_cast<std::size_t>(idx)];
  };
  auto name = [&](std::size_t k) { return layers[static_cast<std::size_t>(node.inputs.at(k))].id; };
  switch (node.kind) {
    case LayerKind::kInput:
      return {node.channels, node.height, node.width};
    case LayerKind::kConv: {
      const auto& src = in(0);
      if (src.channels != node.in_channels) {
        fail(ErrorCode::kShape, node.id + ": expects " + std::to_string(node.in_channels) + " input channels but " +
                                    name(0) + " produces " + std::to_string(src.channels));
      }
      const int span_h = src.height + 2 * node.pad - node.kernel;
      const int span_w = src.width + 2 * node.pad - node.kernel;
      if (span_h < 0 || span_w < 0 || span_h % node.stride || span_w % node.stride) {
        fail(ErrorCode::kShape, node.id + ": output size is not integral");
      }
      const int channels = node.weight.empty() ? node.channels : static_cast<int>(node.weight.dim(0));
      return {channels, span_h / node.stride + 1, span_w / node.stride + 1};
    }
    case LayerKind::kRelu:
      return in(0);
    case LayerKind::kMaxPool:
      if (in(0).height % 2 || in(0).width % 2) fail(ErrorCode::kShape, node.id + ": odd spatial size cannot be pooled");
      return {in(0).channels, in(0).height / 2, in(0).width / 2};
    case LayerKind::kUpsample:
      return {in(0).channels, in(0).height * 2, in(0).width * 2};
    case LayerKind::kConcat: {
      const auto& a = in(0);
      const auto& b = in(1);
      if (a.height != b.height || a.width != b.width) {
        fail(ErrorCode::kShape, node.id + ": cannot concatenate " + name(0) + " (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + ") with " + name(1) + " (" + std::to_string(b.height) +
                                    "x" + std::to_string(b.width) + ")");
      }
      return {a.channels + b.channels, a.height, a.width};
    }
  }
  return {};
}

}  // namespace

void Model::infer(LayerNode& node) const {
  std::vector<Geometry> prior;
  prior.reserve(layers_.size());
  for (const auto& l : layers_) {
    if (&l == &node) break;
    prior.push_back({l.channels, l.height, l.width});
  }
  const Geometry g = infer_one(node, layers_, prior);
  node.channels = g.channels;
  node.height = g.height;
  node.width = g.width;
}

int Model::push(LayerNode node) {
  if (find(node.id)) fail(ErrorCode::kInvalidArgument, "duplicate layer id '" + node.id + "'");
  if (node.kind != LayerKind::kInput && layers_.empty()) {
    fail(ErrorCode::kInvalidArgument, "the first layer must be an input");
  }
  infer(node);
  layers_.push_back(std::move(node));
  return static_cast<int>(layers_.size()) - 1;
}

int Model::add_input(std::string id, int channels, int height, int width) {
  if (!layers_.empty()) fail(ErrorCode::kInvalidArgument, "model already has an input");
  if (channels < 1 || height < 1 || width < 1) fail(ErrorCode::kInvalidArgument, "input dims must be positive");
  LayerNode node;
  node.id = std::move(id);
  node.kind = LayerKind::kInput;
  node.channels = channels;
  node.height = height;
  node.width = width;
  return push(std::move(node));
}

int Model::add_conv(std::string id, int input, int out_channels, int kernel, bool prunable, int stride, int pad) {
  if (out_channels < 1 || kernel < 1 || kernel % 2 == 0 || stride < 1) {
    fail(ErrorCode::kInvalidArgument, id + ": invalid conv parameters");
  }
  LayerNode node;
  node.id = std::move(id);
  node.kind = LayerKind::kConv;
  node.inputs = {input};
  node.in_channels = layer(input).channels;
  node.channels = out_channels;
  node.original_out_channels = out_channels;
  node.kernel = kernel;
  node.stride = stride;
  node.pad = pad < 0 ? (kernel - 1) / 2 : pad;
  node.prunable = prunable;
  node.weight = Tensor({out_channels, node.in_channels, kernel, kernel});
  node.bias = Tensor({out_channels});
  return push(std::move(node));
}

namespace {
LayerNode simple_node(std::string id, LayerKind kind, std::vector<int> inputs) {
  LayerNode node;
  node.id = std::move(id);
  node.kind = kind;
  node.inputs = std::move(inputs);
  return node;
}
}  // namespace

int Model::add_relu(std::string id, int input) { return push(simple_node(std::move(id), LayerKind::kRelu, {input})); }
int Model::add_maxpool(std::string id, int input) {
  return push(simple_node(std::move(id), LayerKind::kMaxPool, {input}));
}
int Model::add_upsample(std::string id, int input) {
  return push(simple_node(std::move(id), LayerKind::kUpsample, {input}));
}
int Model::add_concat(std::string id, int first, int second) {
  return push(simple_node(std::move(id), LayerKind::kConcat, {first, second}));
}

void Model::refresh_geometry() {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (int src : layers_[i].inputs) {
      if (src < 0 || static_cast<std::size_t>(src) >= i) {
        fail(ErrorCode::kInvalidArgument, layers_[i].id + ": graph is not topologically ordered");
      }
    }
    if (layers_[i].kind == LayerKind::kConv) {
      const auto& w = layers_[i].weight;
      if (w.rank() != 4 || w.dim(1) != layers_[i].in_channels || w.dim(2) != layers_[i].kernel ||
          layers_[i].bias.rank() != 1 || layers_[i].bias.dim(0) != w.dim(0)) {
        fail(ErrorCode::kShape, layers_[i].id + ": weight/bias shapes are inconsistent with the layer");
      }
    }
    infer(layers_[i]);
  }
}

Model build_unet(const UNetConfig& config, std::uint64_t seed) {
  validate(config);
  Model m;
  const int k = 3;
  int x = m.add_input("input", config.in_channels, config.height, config.width);
  auto conv_relu = [&](const std::string& prefix, int j, int src, int width) {
    const int c = m.add_conv(prefix + ".conv" + std::to_string(j), src, width, k, true);
    return m.add_relu(prefix + ".relu" + std::to_string(j), c);
  };
  std::vector<int> skips;
  std::vector<int> widths;
  int width = config.base_channels;
  for (int level = 0; level < config.depth; ++level, width *= config.channel_multiplier) {
    const std::string prefix = "enc" + std::to_string(level);
    x = conv_relu(prefix, 0, x, width);
    x = conv_relu(prefix, 1, x, width);
    skips.push_back(x);
    widths.push_back(width);
    x = m.add_maxpool(prefix + ".pool", x);
  }
  x = conv_relu("bottleneck", 0, x, width);
  x = conv_relu("bottleneck", 1, x, width);
  for (int level = config.depth - 1; level >= 0; --level) {
    const std::string prefix = "dec" + std::to_string(level);
    x = m.add_upsample(prefix + ".up", x);
    // Upsampled path first, skip second: skip channels sit at an offset.
    x = m.add_concat(prefix + ".cat", x, skips[static_cast<std::size_t>(level)]);
    x = conv_relu(prefix, 0, x, widths[static_cast<std::size_t>(level)]);
    x = conv_relu(prefix, 1, x, widths[static_cast<std::size_t>(level)]);
  }
  m.add_conv("head", x, config.out_channels, 1, false);

  // Kaiming-uniform weights, bias uniform in +-1/sqrt(fan_in), one stream in layer order.
  Rng rng(seed);
  for (auto& node : m.mutable_layers()) {
    if (node.kind != LayerKind::kConv) continue;
    const double fan_in = static_cast<double>(node.in_channels) * node.kernel * node.kernel;
    const double wb = std::sqrt(6.0 / fan_in);
    const double bb = 1.0 / std::sqrt(fan_in);
    for (float& v : node.weight.data()) v = static_cast<float>(rng.uniform(-wb, wb));
    for (float& v : node.bias.data()) v = static_cast<float>(rng.uniform(-bb, bb));
  }
  return m;
}

std::vector<Geometry> infer_geometry(const Model& model, int height, int width) {
  std::vector<Geometry> out;
  out.reserve(model.layers().size());
  for (const auto& node : model.layers()) {
    if (node.kind == LayerKind::kInput) {
      out.push_back({node.channels, height, width});
    } else {
      out.push_back(infer_one(node, model.layers(), out));
    }
  }
  return out;
}

std::int64_t count_params(const Model& model) {
  std::int64_t total = 0;
  for (const auto& node : model.layers()) {
    if (node.kind == LayerKind::kConv) total += static_cast<std::int64_t>(node.weight.numel() + node.bias.numel());
  }
  return total;
}

std::int64_t count_flops(const Model& model, int height, int width) {
  if (model.empty()) return 0;
  const auto geo = infer_geometry(model, height, width);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < geo.size(); ++i) {
    const auto& node = model.layers()[i];
    const std::int64_t out_elems = std::int64_t{geo[i].channels} * geo[i].height * geo[i].width;
    switch (node.kind) {
      case LayerKind::kConv:
        total += 2 * out_elems * node.in_channels * node.kernel * node.kernel + out_elems;
        break;
      case LayerKind::kRelu:
      case LayerKind::kMaxPool:
      case LayerKind::kUpsample:
        total += out_elems;
        break;
      case LayerKind::kInput:
      case LayerKind::kConcat:
        break;
    }
  }
  return total;
}

std::int64_t count_flops(const Model& model) {
  if (model.empty()) return 0;
  return count_flops(model, model.input_node().height, model.input_node().width);
}

template <typename T>
ParamSet<T> params_as(const Model& model) {
  ParamSet<T> p;
  for (int i : model.conv_layers()) {
    p.weights.push_back(model.layer(i).weight.template cast<T>());
    p.biases.push_back(model.layer(i).bias.template cast<T>());
  }
  return p;
}

template <typename T>
ForwardTrace<T> trace_forward(const Model& model, const BasicTensor<T>& batch, const ParamSet<T>* params,
                              TraceOptions options) {
  const LayerNode& in = model.input_node();
  if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height || batch.dim(3) != in.width) {
    fail(ErrorCode::kShape, "input: batch " + shape_str(batch.shape()) + " does not match model input [Nx" +
                                std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" +
                                std::to_string(in.width) + "]");
  }
  ParamSet<T> own;
  if (!params) {
    own = params_as<T>(model);
    params = &own;
  }
  const auto convs = model.conv_layers();
  if (params->weights.size() != convs.size() || params->biases.size() != convs.size()) {
    fail(ErrorCode::kInvalidArgument, "parameter set does not match the model's conv layers");
  }

  ForwardTrace<T> tr;
  tr.input = tr.tape.leaf(batch, options.activations_require_grad);
  tr.node_vars.assign(model.layers().size(), -1);
  tr.node_vars[0] = tr.input;
  std::size_t conv_i = 0;
  for (std::size_t i = 1; i < model.layers().size(); ++i) {
    const LayerNode& node = model.layers()[i];
    auto src = [&](std::size_t k) { return tr.node_vars[static_cast<std::size_t>(node.inputs[k])]; };
    VarId v = -1;
    switch (node.kind) {
      case LayerKind::kConv: {
        const VarId w = tr.tape.leaf(params->weights[conv_i], options.params_require_grad);
        const VarId b = tr.tape.leaf(params->biases[conv_i], options.params_require_grad);
        tr.weight_vars.push_back(w);
        tr.bias_vars.push_back(b);
        ++conv_i;
        v = tr.tape.conv2d(src(0), w, b, node.stride, node.pad, node.id);
        if (node.prunable) tr.preacts.push_back(v);
        break;
      }
      case LayerKind::kRelu: v = tr.tape.relu(src(0)); break;
      case LayerKind::kMaxPool: v = tr.tape.maxpool2x(src(0)); break;
      case LayerKind::kUpsample: v = tr.tape.upsample_nearest2x(src(0)); break;
      case LayerKind::kConcat:
        v = tr.tape.concat_channels(src(0), src(1), model.layer(node.inputs[0]).id, model.layer(node.inputs[1]).id);
        break;
      case LayerKind::kInput: fail(ErrorCode::kInvalidArgument, node.id + ": only one input node is allowed");
    }
    tr.node_vars[i] = v;
  }
  tr.logits = tr.node_vars.back();
  return tr;
}

template <typename T>
ActivationTrace<T> activation_trace(const Model& model, const ForwardTrace<T>& trace, const GradStore<T>* grads) {
  ActivationTrace<T> at;
  const auto prunable = model.prunable_layers();
  for (std::size_t i = 0; i < trace.preacts.size(); ++i) {
    at.layer_ids.push_back(model.layer(prunable[i]).id);
    at.preacts.push_back(trace.tape.value(trace.preacts[i]));
    if (grads) {
      const auto* g = grads->find(trace.preacts[i]);
      at.grads.push_back(g ? *g : BasicTensor<T>(at.preacts.back().shape()));
    }
  }
  return at;
}

ForwardResult forward(const Model& model, const Tensor& batch, bool capture) {
  auto tr = trace_forward<float>(model, batch);
  ForwardResult r{tr.tape.value(tr.logits), std::nullopt};
  if (capture) r.trace = activation_trace<float>(model, tr, nullptr);
  return r;
}

Tensor predict(const Model& model, const Tensor& batch, int chunk) {
  if (batch.rank() != 4) fail(ErrorCode::kShape, "input: batch must be rank 4, got " + shape_str(batch.shape()));
  const std::int64_t n = batch.dim(0);
  if (chunk < 1 || n <= chunk) return forward(model, batch, false).logits;
  const std::int64_t per = batch.dim(1) * batch.dim(2) * batch.dim(3);
  std::vector<float> out;
  Shape out_shape;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t len = std::min<std::int64_t>(chunk, n - start);
    std::vector<float> part(batch.ptr() + start * per, batch.ptr() + (start + len) * per);
    Tensor sub({len, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(part));
    Tensor logits = forward(model, sub, false).logits;
    out_shape = logits.shape();
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  out_shape[0] = n;
  return Tensor(out_shape, std::move(out));
}

template ParamSet<float> params_as(const Model&);
template ParamSet<double> params_as(const Model&);
template ForwardTrace<float> trace_forward(const Model&, const BasicTensor<float>&, const ParamSet<float>*,
                                           TraceOptions);
template ForwardTrace<double> trace_forward(const Model&, const BasicTensor<double>&, const ParamSet<double>*,
                                            TraceOptions);
template ActivationTrace<float> activation_trace(const Model&, const ForwardTrace<float>&, const GradStore<float>*);
template ActivationTrace<double> activation_trace(const Model&, const ForwardTrace<double>&,
                                                  const GradStore<double>*);

}  // namespace tprune
