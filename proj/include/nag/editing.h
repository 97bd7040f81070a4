// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Editing algebra on fitted graphs: numeric flow inversion, projection of
// image-space textures into atlas space, alpha-matted color blending, and
// graph surgery (remove / duplicate / translate / time-shift / texture).
// Edits never mutate the input graph; apply_script returns a new snapshot.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nag/image.h"
#include "nag/renderer.h"
#include "nag/scenegraph.h"

namespace nag {

struct EditOp {
  enum Kind { kRemove, kDuplicate, kTranslate, kTimeShift, kTexture } kind = kRemove;
  std::string node;
  Vec3<double> translation;   // duplicate / translate
  double dt_frames = 0;       // duplicate / time_shift, in frames
  std::string image;          // texture: path to an RGBA image
  Image texture;              // texture: in-memory alternative to `image`
  int reference_frame = 0;    // texture
};

struct EditScript {
  std::vector<EditOp> ops;
};

// Parses the line-based script format: one op per line,
//   remove node=<id>
//   duplicate node=<id> translation=<x,y,z> dt=<frames>
//   translate node=<id> translation=<x,y,z>
//   time_shift node=<id> dt=<frames>
//   texture node=<id> image=<path> reference_frame=<k>
EditScript parse_edit_script(const std::string& text);

struct FlowInverse {
  Vec2<double> x;
  bool converged = false;
  int iterations = 0;
};

// Solves x + f(x, t) = x_target by fixed-point iteration from x_target.
template <typename T>
FlowInverse invert_flow(const AtlasNode<T>& node, const T* params, Vec2<T> x_target, T t,
                        double tau, int max_iter = 20, double tol = 1e-5);

// Resamples a reference-frame RGBA texture into the node's atlas space,
// compensating the learned flow. Texels that do not land in the reference
// image (or whose flow inversion fails) get alpha 0.
template <typename T>
EditTexture<T> project_texture(const SceneGraph<T>& g, const std::string& node_id,
                               const Image& rgba, int reference_frame, double tau = 1.0);

// c* = (1 - a_hat) c + a_hat c_hat at a canonical atlas point.
template <typename T>
Vec3<T> blend_color(Vec3<T> base, const EditTexture<T>& edit, Vec2<T> x);

// Applies a script to a copy of the graph. Throws on unknown nodes and on
// attempts to remove the background.
template <typename T>
SceneGraph<T> apply_script(const SceneGraph<T>& g, const EditScript& script,
                           const Dataset* data_for_textures = nullptr);

}  // namespace nag
