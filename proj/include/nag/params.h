// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter storage with named, disjoint groups. Every learnable value
// in a scene lives here exactly once; gradients are a parallel array.
// Optimizer state, checkpointing and phase gating all work on groups.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nag/check.h"

namespace nag {

enum class GroupKind {
  kCameraOffsets,
  kNodeOffsets,
  kColorMlp,
  kColorTables,
  kAlphaMlp,
  kAlphaTables,
  kFlowMlp,
  kFlowTables,
  kViewMlp,
  kViewTables,
};

inline const char* group_kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::kCameraOffsets: return "camera_offsets";
    case GroupKind::kNodeOffsets: return "node_offsets";
    case GroupKind::kColorMlp: return "color_field";
    case GroupKind::kColorTables: return "color_tables";
    case GroupKind::kAlphaMlp: return "alpha_field";
    case GroupKind::kAlphaTables: return "alpha_tables";
    case GroupKind::kFlowMlp: return "flow_field";
    case GroupKind::kFlowTables: return "flow_tables";
    case GroupKind::kViewMlp: return "view_field";
    case GroupKind::kViewTables: return "view_tables";
  }
  return "?";
}

struct ParamGroup {
  std::string name;
  GroupKind kind;
  int node = -1;  // node index, -1 for camera
  size_t offset = 0;
  size_t size = 0;
  bool trainable = true;
};

template <typename T>
class ParamRegistry {
 public:
  size_t add_group(const std::string& name, GroupKind kind, int node, size_t n) {
    ParamGroup g;
    g.name = name;
    g.kind = kind;
    g.node = node;
    g.offset = values.size();
    g.size = n;
    groups.push_back(g);
    values.resize(values.size() + n, T(0));
    return groups.size() - 1;
  }

  void finalize() {
    grads.assign(values.size(), T(0));
    touched.assign((values.size() + kBlock - 1) / kBlock, 0);
  }

  size_t size() const { return values.size(); }

  // Gradient scratch: blocks of kBlock parameters flagged when written, so
  // the optimizer can skip untouched regions. Mutable because accumulating
  // gradients does not change the model.
  static constexpr size_t kBlock = 1024;
  void mark_touched(size_t index) const { touched[index >> 10] = 1; }
  void mark_touched_range(size_t begin, size_t end) const {
    for (size_t b = begin >> 10; b <= (end - 1) >> 10; ++b) touched[b] = 1;
  }

  T* group_values(size_t gi) { return values.data() + groups[gi].offset; }
  const T* group_values(size_t gi) const { return values.data() + groups[gi].offset; }

  const ParamGroup& group_of(size_t param_index) const {
    for (const ParamGroup& g : groups)
      if (param_index >= g.offset && param_index < g.offset + g.size) return g;
    NAG_CHECK(false, "parameter index outside all groups");
    return groups.front();
  }

  std::vector<ParamGroup> groups;
  std::vector<T> values;
  mutable std::vector<T> grads;
  mutable std::vector<uint8_t> touched;
};

}  // namespace nag
