#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tprune/importance.hpp"
#include "tprune/model.hpp"

namespace tprune {

struct InputSlice {
  std::string consumer;             // conv layer id
  std::vector<int> input_indices;   // ascending, in the consumer's current input numbering
};

struct SurgeryPlan {
  std::vector<ChannelRef> remove;
  std::vector<InputSlice> downstream_slices;  // consumer layer order
  std::vector<std::string> floor_violations;  // layers that would keep no channel
  std::uint64_t fingerprint = 0;

  bool applicable() const { return floor_violations.empty(); }
};

// Traces every victim filter through pass-through and concat nodes to the
// input channels it feeds. A filter reaching two convs (an encoder output that
// also feeds a skip connection) yields a slice in both.
SurgeryPlan build_surgery_plan(const Model& model, std::span<const ChannelRef> victims);

// Physically removes victim filters and every planned input slice. Returns a
// new model; the input is untouched.
Model apply_surgery(const Model& model, const SurgeryPlan& plan);

// Channels that can go while leaving one filter per prunable layer.
std::int64_t prune_budget(const Model& model);

struct VictimSelection {
  std::vector<ChannelRef> victims;
  // One message per ranked channel that was passed over to keep a layer alive.
  std::vector<std::string> substitutions;
};

// Walks `ranking` from the front, taking `count` channels and deferring any
// that would empty its layer to the next-ranked channel.
VictimSelection select_victims(const Model& model, std::span<const ChannelRef> ranking, std::int64_t count);

struct PruneResult {
  Model model;
  VictimSelection selection;
};

// Removes the `count` least important channels of `model` according to `report`.
PruneResult prune_lowest(const Model& model, const ImportanceReport& report, std::int64_t count);

}  // namespace tprune
