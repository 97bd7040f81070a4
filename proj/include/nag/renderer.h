// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Rendering and the differentiable batch pipeline. shade_ray is the serial
// per-ray reference; BatchPipeline is the OpenMP kernel used for frames and
// training batches. Both call the same per-sample routines and produce
// bit-identical results.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nag/autodiff.h"
#include "nag/image.h"
#include "nag/scenegraph.h"

namespace nag {

template <typename T>
struct NodeSample {
  int node = -1;
  Vec3<T> color;
  T opacity = 0;
  T depth = 0;
};

template <typename T>
struct RaySample {
  Vec3<T> color;
  T transmittance = 1;
  std::vector<NodeSample<T>> samples;  // ascending depth, ties by node id
};

struct RenderOptions {
  double tau = 1.0;
  double early_out = 0.0;  // 0 disables; inference-only shortcut
};

// Front-to-back compositing of depth-sorted samples (Eq. form:
// C = sum_i c_i a_i prod_{j<i} (1 - a_j)).
template <typename T>
inline void composite_samples(const NodeSample<T>* s, int n, double early_out,
                              Vec3<T>& color, T& trans) {
  color = {0, 0, 0};
  trans = 1;
  for (int i = 0; i < n; ++i) {
    T w = s[i].opacity * trans;
    color.x += s[i].color.x * w;
    color.y += s[i].color.y * w;
    color.z += s[i].color.z * w;
    trans *= (T(1) - s[i].opacity);
    if (early_out > 0 && trans < T(early_out)) break;
  }
}

// Serial reference path: one ray through the whole graph.
template <typename T>
RaySample<T> shade_ray(const SceneGraph<T>& g, const Ray<T>& ray, T t,
                       const RenderOptions& opt = {});

// Full-frame renders. render_frame runs the parallel batch kernel;
// render_frame_serial loops shade_ray and is kept as the reference.
template <typename T>
Image render_frame(const SceneGraph<T>& g, int frame, const RenderOptions& opt = {});
template <typename T>
Image render_frame_serial(const SceneGraph<T>& g, int frame, const RenderOptions& opt = {});

// Single node with no occluders, premultiplied-alpha RGBA.
template <typename T>
Image render_layer(const SceneGraph<T>& g, const std::string& node_id, int frame,
                   const RenderOptions& opt = {});

// ---------------------------------------------------------------------------
// Training batches

template <typename T>
struct Batch {
  std::vector<Vec2<T>> pixels;  // B, fractional pixel coordinates
  std::vector<int> frames;      // B
  std::vector<Vec3<T>> gt;      // B, empty for plain rendering
  int n_masks = 0;
  std::vector<float> masks;     // B * n_masks, mask value per foreground track

  int size() const { return int(pixels.size()); }
};

// What the pipeline evaluates and differentiates on a given step.
struct ActivityMask {
  bool use_flow = true;      // ablation: flow model off entirely
  bool use_view = true;      // ablation: view-dependent field off entirely
  std::vector<char> group_grad;  // per registry group; empty = all when taped
  int solo_node = -1;        // render only this node (layers)

  bool grad_for(size_t group) const {
    return group_grad.empty() || group_grad[group] != 0;
  }
};

template <typename T>
struct BatchStats {
  T loss = 0, photo = 0, mask = 0;
  long mask_pairs = 0;
};

// Forward (and, when taped, recorded-backward) evaluation of a batch.
// Holds reusable scratch; one instance per fitting loop or renderer.
template <typename T>
class BatchPipeline {
 public:
  BatchPipeline();
  ~BatchPipeline();
  BatchPipeline(BatchPipeline&&) noexcept;

  // Computes per-ray composites (and the loss when batch.gt is present).
  // When `tape` is given, backward hooks accumulating into g.params.grads
  // are recorded; run tape->backward() to fire them. The graph must outlive
  // the tape.
  BatchStats<T> run(const SceneGraph<T>& g, const Batch<T>& batch, double beta,
                    const ActivityMask& act, const RenderOptions& opt, Tape<T>* tape);

  const std::vector<Vec3<T>>& colors() const;
  const std::vector<T>& transmittance() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

// Mean L1 color error plus beta * mean L1 between each hit node's opacity
// and its mask value. Standalone contract used by tests; the pipeline
// computes the same quantity with the same block summation.
template <typename T>
T atlas_loss(const std::vector<Vec3<T>>& pred, const std::vector<Vec3<T>>& gt,
             const std::vector<std::vector<std::pair<int, T>>>& node_hits,  // per fg track: (ray, opacity)
             const std::vector<float>& masks, int n_masks, double beta);

// Deterministic fixed-block summation (1024-wide blocks merged in order);
// independent of thread count.
template <typename T>
T block_sum(const T* v, size_t n);

}  // namespace nag
