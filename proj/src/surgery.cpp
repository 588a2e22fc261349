#include "tprune/surgery.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tprune/model_io.hpp"

namespace tprune {
namespace {

struct Source {
  int layer = -1;  // producing conv, -1 for the model input
  int filter = 0;
};

// Producer of every channel of every node.
std::vector<std::vector<Source>> channel_sources(const Model& model) {
  std::vector<std::vector<Source>> src(model.layers().size());
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerNode& node = model.layers()[i];
    auto& out = src[i];
    switch (node.kind) {
      case LayerKind::kInput:
        out.assign(static_cast<std::size_t>(node.channels), Source{});
        break;
      case LayerKind::kConv:
        for (int f = 0; f < node.channels; ++f) out.push_back({static_cast<int>(i), f});
        break;
      case LayerKind::kRelu:
      case LayerKind::kMaxPool:
      case LayerKind::kUpsample:
        out = src[static_cast<std::size_t>(node.inputs[0])];
        break;
      case LayerKind::kConcat:
        out = src[static_cast<std::size_t>(node.inputs[0])];
        out.insert(out.end(), src[static_cast<std::size_t>(node.inputs[1])].begin(),
                   src[static_cast<std::size_t>(node.inputs[1])].end());
        break;
    }
  }
  return src;
}

template <typename Keep>
Tensor select_rows(const Tensor& t, Keep keep) {
  const std::int64_t rows = t.dim(0);
  const std::size_t row_size = t.numel() / static_cast<std::size_t>(rows);
  std::vector<float> data;
  std::int64_t kept = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!keep(static_cast<int>(r))) continue;
    data.insert(data.end(), t.data().begin() + static_cast<std::ptrdiff_t>(r * row_size),
                t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * row_size));
    ++kept;
  }
  Shape shape = t.shape();
  shape[0] = kept;
  return Tensor(std::move(shape), std::move(data));
}

// Drops input channels (axis 1) of a [out, in, k, k] weight.
Tensor drop_inputs(const Tensor& w, const std::set<int>& drop) {
  const std::int64_t out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(out * (in - static_cast<std::int64_t>(drop.size())) * kk));
  for (std::int64_t o = 0; o < out; ++o) {
    for (std::int64_t c = 0; c < in; ++c) {
      if (drop.count(static_cast<int>(c))) continue;
      const auto base = w.data().begin() + static_cast<std::ptrdiff_t>((o * in + c) * kk);
      data.insert(data.end(), base, base + kk);
    }
  }
  return Tensor({out, in - static_cast<std::int64_t>(drop.size()), w.dim(2), w.dim(3)}, std::move(data));
}

}  // namespace

SurgeryPlan build_surgery_plan(const Model& model, std::span<const ChannelRef> victims) {
  SurgeryPlan plan;
  plan.fingerprint = fingerprint(model);
  std::map<int, std::set<int>> by_layer;
  std::set<ChannelRef> seen;
  for (const auto& v : victims) {
    if (!seen.insert(v).second) fail(ErrorCode::kInvalidArgument, "duplicate victim " + to_string(v));
    by_layer[model.resolve(v)].insert(v.filter_index);
    plan.remove.push_back(v);
  }
  for (const auto& [layer, filters] : by_layer) {
    if (static_cast<int>(filters.size()) >= model.layer(layer).channels) {
      plan.floor_violations.push_back(model.layer(layer).id);
    }
  }
  const auto sources = channel_sources(model);
  for (int ci : model.conv_layers()) {
    const auto& feed = sources[static_cast<std::size_t>(model.layer(ci).inputs[0])];
    InputSlice slice{model.layer(ci).id, {}};
    for (std::size_t j = 0; j < feed.size(); ++j) {
      const auto it = by_layer.find(feed[j].layer);
      if (it != by_layer.end() && it->second.count(feed[j].filter)) slice.input_indices.push_back(static_cast<int>(j));
    }
    if (!slice.input_indices.empty()) plan.downstream_slices.push_back(std::move(slice));
  }
  return plan;
}

Model apply_surgery(const Model& model, const SurgeryPlan& plan) {
  if (plan.fingerprint != fingerprint(model)) {
    fail(ErrorCode::kFingerprint, "surgery plan was built for a different model (fingerprint " +
                                      hex64(plan.fingerprint) + ")");
  }
  if (!plan.applicable()) {
    std::string layers;
    for (const auto& l : plan.floor_violations) layers += (layers.empty() ? "" : ", ") + l;
    fail(ErrorCode::kFloor, "surgery would leave no channels in: " + layers);
  }
  std::map<int, std::set<int>> rows;
  for (const auto& v : plan.remove) rows[model.resolve(v)].insert(v.filter_index);
  std::map<int, std::set<int>> inputs;
  for (const auto& s : plan.downstream_slices) {
    const int idx = model.require(s.consumer);
    if (model.layer(idx).kind != LayerKind::kConv) fail(ErrorCode::kInvalidArgument, s.consumer + " is not a conv");
    for (int j : s.input_indices) {
      if (j < 0 || j >= model.layer(idx).in_channels) {
        fail(ErrorCode::kInvalidArgument, s.consumer + ": input slice index out of range");
      }
      inputs[idx].insert(j);
    }
  }

  Model out = model;
  for (int ci : out.conv_layers()) {
    LayerNode& node = out.layer(ci);
    if (auto it = inputs.find(ci); it != inputs.end()) {
      node.weight = drop_inputs(node.weight, it->second);
      node.in_channels -= static_cast<int>(it->second.size());
    }
    if (auto it = rows.find(ci); it != rows.end()) {
      const auto& drop = it->second;
      auto keep = [&](int r) { return drop.count(r) == 0; };
      node.weight = select_rows(node.weight, keep);
      node.bias = select_rows(node.bias, keep);
    }
  }
  out.refresh_geometry();
  return out;
}

std::int64_t prune_budget(const Model& model) {
  return model.prunable_channel_count() - static_cast<std::int64_t>(model.prunable_layers().size());
}

VictimSelection select_victims(const Model& model, std::span<const ChannelRef> ranking, std::int64_t count) {
  if (count < 0) fail(ErrorCode::kInvalidArgument, "prune count must be >= 0");
  if (count > prune_budget(model)) {
    fail(ErrorCode::kBudget, "cannot prune " + std::to_string(count) + " channels; at most " +
                                 std::to_string(prune_budget(model)) + " can go while keeping one per layer");
  }
  VictimSelection sel;
  std::map<int, int> remaining;
  for (const auto& ref : ranking) {
    if (static_cast<std::int64_t>(sel.victims.size()) == count) break;
    const int layer = model.resolve(ref);
    auto [it, inserted] = remaining.try_emplace(layer, model.layer(layer).channels);
    if (it->second <= 1) {
      sel.substitutions.push_back("kept " + to_string(ref) + " so that " + ref.layer_id +
                                  " retains one channel; deferring to the next-ranked channel");
      continue;
    }
    --it->second;
    sel.victims.push_back(ref);
  }
  if (static_cast<std::int64_t>(sel.victims.size()) != count) {
    fail(ErrorCode::kBudget, "ranking does not contain enough prunable channels");
  }
  return sel;
}

PruneResult prune_lowest(const Model& model, const ImportanceReport& report, std::int64_t count) {
  if (report.model_fingerprint != fingerprint(model)) {
    fail(ErrorCode::kFingerprint, "importance report was computed for a different model (fingerprint " +
                                      hex64(report.model_fingerprint) + ", model " + hex64(fingerprint(model)) + ")");
  }
  const auto ranking = rank_channels(report);
  PruneResult result{Model{}, select_victims(model, ranking, count)};
  if (count == 0) {
    result.model = model;
    return result;
  }
  result.model = apply_surgery(model, build_surgery_plan(model, result.selection.victims));
  return result;
}

}  // namespace tprune
