// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// The scene graph: one plane per annotated object plus a fixed background
// plane, a camera track, and the parameter registry holding every learnable
// value. Construction (extent estimation, base-texture projection,
// background placement) lives in scenegraph.cpp.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nag/dataset.h"
#include "nag/fields.h"
#include "nag/geometry.h"
#include "nag/motion.h"
#include "nag/params.h"

namespace nag {

// A user texture resampled into a node's atlas space.
template <typename T>
struct EditTexture {
  Grid2<T> color;  // same resolution as the node's base grids, 3 channels
  Grid2<T> alpha;  // 1 channel; 0 marks unedited texels
};

template <typename T>
struct AtlasNode {
  std::string id;
  bool is_background = false;
  Grid2<T> base_color;      // non-learnable, [0,1]
  Grid2<T> base_alpha;      // empty for the background (opacity fixed at 1)
  Vec2<T> extent{1, 1};     // world units
  RigidTrack<T> track;      // foreground trajectory; unused for background
  PlanePose<T> bg_pose;     // background only: fixed pose
  FieldStack<T> fields;
  size_t offsets_group = size_t(-1);  // registry group of the pose offsets
  int mask_track = -1;      // column in the dataset's mask stack
  T time_offset = 0;        // editing: queries sample clamp(t - time_offset)
  int edit = -1;            // index into SceneGraph::edits, -1 when unedited

  T node_time(T t) const {
    T u = t - time_offset;
    return u < 0 ? T(0) : (u > 1 ? T(1) : u);
  }

  PlanePose<T> pose_at(T t, const T* params) const {
    if (is_background) return bg_pose;
    return track_pose(track, node_time(t), params);
  }
};

template <typename T>
struct CameraRig {
  CameraIntrinsics<T> intrinsics;
  RigidTrack<T> track;
};

template <typename T>
struct SceneGraph {
  CameraRig<T> camera;
  int frame_count = 0;
  std::vector<AtlasNode<T>> nodes;  // exactly one background
  std::vector<EditTexture<T>> edits;
  ParamRegistry<T> params;
  size_t camera_group = size_t(-1);

  T frame_time(int f) const { return frame_count > 1 ? T(f) / T(frame_count - 1) : T(0); }

  int background_index() const {
    for (size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].is_background) return int(i);
    return -1;
  }

  int node_index(const std::string& id) const {
    for (size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id == id) return int(i);
    return -1;
  }

  void validate() const {
    NAG_CHECK(frame_count >= 2, "graph needs at least two frames");
    int bg = 0;
    for (const auto& n : nodes) bg += n.is_background ? 1 : 0;
    NAG_CHECK(bg == 1, "graph must contain exactly one background node");
    for (size_t i = 0; i < nodes.size(); ++i)
      for (size_t j = i + 1; j < nodes.size(); ++j)
        NAG_CHECK(nodes[i].id != nodes[j].id, "duplicate node id " + nodes[i].id);
  }
};

// Construction knobs; defaults follow the module notes.
struct GraphConfig {
  double margin = 0.2;            // relative extent margin around the largest mask
  double bg_margin = 0.05;        // relative margin around the background footprint
  double bg_depth_factor = 1.5;   // background distance past the farthest box
  double atlas_scale = 2.0;       // foreground atlas texels per image pixel
  int control_points = 0;         // spline P; 0 means one per frame
  uint64_t seed = 0;              // field initialization stream
};

// Largest-mask-frame bounding rectangle back-projected onto the node plane,
// scaled by (1 + margin). Throws when every mask is empty.
template <typename T>
Vec2<T> estimate_extent(const std::vector<Image>& node_masks, const RigidTrack<T>& track,
                        const CameraRig<T>& camera, double margin);

// One node from its masks and boxes: base pose with face selection, snapped
// extent, base grids projected from the largest-mask reference frame.
// Field parameters are not registered here; build_graph does that.
template <typename T>
AtlasNode<T> init_node(const Dataset& data, int object_index, const GraphConfig& cfg);

// Full graph: one node per mask track plus the background plane, with all
// learnable parameters registered and initialized.
template <typename T>
SceneGraph<T> build_graph(const Dataset& data, const GraphConfig& cfg);

// Registers offset splines and field parameters for every node (and the
// camera) of a graph whose nodes/base data are already constructed.
// Exposed for the synthetic generator, which rigs field weights afterwards.
template <typename T>
void register_graph_params(SceneGraph<T>& g, const GraphConfig& cfg);

}  // namespace nag
