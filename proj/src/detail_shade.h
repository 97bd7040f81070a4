// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Per-sample shading of one node at one plane point. Both the serial
// reference renderer and the batched OpenMP kernel call these routines, so
// their arithmetic is identical by construction. The capture struct lets the
// training pipeline keep the intermediates it needs for the backward pass
// without changing any forward arithmetic.

#pragma once

#include "nag/renderer.h"

namespace nag {
namespace detail {

// Which sub-models run. Fields whose output is provably zero (final layer
// still at its zero initialization and frozen this phase) can be skipped;
// skipping computes the same value, exactly.
struct NodeEval {
  bool flow = true;
  bool color = true;
  bool alpha = true;
  bool view = true;
};

template <typename T>
struct ShadeCapture {
  T* enc_f = nullptr;   // 64
  T* acts_f = nullptr;  // hidden*(depth-1)
  T* enc_c = nullptr;
  T* acts_c = nullptr;
  T* enc_a = nullptr;
  T* acts_a = nullptr;
  T* enc_v = nullptr;
  T* acts_v = nullptr;
  T* craw = nullptr;    // 3, pre-clamp color
  T* alogit = nullptr;  // 1, pre-sigmoid opacity
  T* fv = nullptr;      // 4
  T* edit_a = nullptr;  // 1, sampled edit alpha (0 when unedited)
};

template <typename T>
struct NodePoint {
  Vec2<T> xp;      // flow-warped atlas point
  Vec3<T> color;   // clamped, edit-blended
  T opacity = 1;
};

// Flow warp at (x, t): lambda_f * S(t, F_f(x)) with the encoding masked by tau.
template <typename T>
inline Vec2<T> eval_flow(const FieldStack<T>& fs, const T* params, Vec2<T> x, T t,
                         double tau, T* enc_buf, T* acts, T* cp_out) {
  int kept = active_features(tau, fs.flow.cfg);
  T enc_local[64];
  T* enc = enc_buf ? enc_buf : enc_local;
  T cp_local[64];
  T* cp = cp_out ? cp_out : cp_local;
  T xin[2] = {x.x, x.y};
  encode_point(fs.flow.cfg, fs.flow.levels, params + fs.flow.table_offset, xin, kept, enc);
  mlp_forward(fs.flow.mlp, params + fs.flow.mlp_offset, enc, cp, acts);
  T f[2];
  hermite_eval(cp, fs.pf, 2, t, f);
  return {T(kLambdaFlow) * f[0], T(kLambdaFlow) * f[1]};
}

// Color and opacity of one node at plane point x / view angle phi / node
// time t. `edit` may be null.
template <typename T>
inline NodePoint<T> shade_node_point(const AtlasNode<T>& node, const EditTexture<T>* edit,
                                     const T* params, Vec2<T> x, Vec2<T> phi, T t, double tau,
                                     const NodeEval& ev, ShadeCapture<T>* cap) {
  const FieldStack<T>& fs = node.fields;
  NodePoint<T> out;

  Vec2<T> xp = x;
  if (ev.flow) {
    Vec2<T> f = eval_flow(fs, params, x, t, tau, cap ? cap->enc_f : nullptr,
                          cap ? cap->acts_f : nullptr, nullptr);
    xp = x + f;
  }
  out.xp = xp;

  T base_c[3];
  sample_grid(node.base_color, xp, base_c);

  T fc[3] = {0, 0, 0};
  if (ev.color) {
    T enc_local[64];
    T* enc = cap && cap->enc_c ? cap->enc_c : enc_local;
    T xin[2] = {xp.x, xp.y};
    encode_point(fs.color.cfg, fs.color.levels, params + fs.color.table_offset, xin,
                 fs.color.cfg.out_dim(), enc);
    mlp_forward(fs.color.mlp, params + fs.color.mlp_offset, enc, fc,
                cap ? cap->acts_c : nullptr);
  }

  T fv[4] = {0, 0, 0, 0};
  if (ev.view) {
    int kept = active_features(tau, fs.view.cfg);
    T enc_local[64];
    T* enc = cap && cap->enc_v ? cap->enc_v : enc_local;
    T xin[4] = {xp.x, xp.y, phi.x, phi.y};
    encode_point(fs.view.cfg, fs.view.levels, params + fs.view.table_offset, xin, kept, enc);
    mlp_forward(fs.view.mlp, params + fs.view.mlp_offset, enc, fv,
                cap ? cap->acts_v : nullptr);
  }

  T craw[3];
  craw[0] = base_c[0] + T(kLambdaColor) * fc[0] + T(kLambdaView) * fv[0];
  craw[1] = base_c[1] + T(kLambdaColor) * fc[1] + T(kLambdaView) * fv[1];
  craw[2] = base_c[2] + T(kLambdaColor) * fc[2] + T(kLambdaView) * fv[2];
  out.color = {clamp01(craw[0]), clamp01(craw[1]), clamp01(craw[2])};

  T alogit = 0;
  if (fs.has_alpha) {
    T base_a;
    sample_grid(node.base_alpha, xp, &base_a);
    T fa = 0;
    if (ev.alpha) {
      T enc_local[64];
      T* enc = cap && cap->enc_a ? cap->enc_a : enc_local;
      T xin[2] = {xp.x, xp.y};
      encode_point(fs.alpha.cfg, fs.alpha.levels, params + fs.alpha.table_offset, xin,
                   fs.alpha.cfg.out_dim(), enc);
      mlp_forward(fs.alpha.mlp, params + fs.alpha.mlp_offset, enc, &fa,
                  cap ? cap->acts_a : nullptr);
    }
    alogit = logit_clamped(base_a) + T(kLambdaAlpha) * fa + T(kLambdaView) * fv[3];
    out.opacity = sigmoid(alogit);
  } else {
    out.opacity = 1;
  }

  T edit_a = 0;
  if (edit) {
    sample_grid(edit->alpha, xp, &edit_a);
    if (edit_a > 0) {
      T ec[3];
      sample_grid(edit->color, xp, ec);
      out.color.x = (T(1) - edit_a) * out.color.x + edit_a * ec[0];
      out.color.y = (T(1) - edit_a) * out.color.y + edit_a * ec[1];
      out.color.z = (T(1) - edit_a) * out.color.z + edit_a * ec[2];
    }
  }

  if (cap) {
    if (cap->craw) {
      cap->craw[0] = craw[0];
      cap->craw[1] = craw[1];
      cap->craw[2] = craw[2];
    }
    if (cap->alogit) *cap->alogit = alogit;
    if (cap->fv) {
      cap->fv[0] = fv[0];
      cap->fv[1] = fv[1];
      cap->fv[2] = fv[2];
      cap->fv[3] = fv[3];
    }
    if (cap->edit_a) *cap->edit_a = edit_a;
  }
  return out;
}

// Node index ranking by id, for deterministic depth ties.
template <typename T>
inline std::vector<int> id_ranks(const SceneGraph<T>& g) {
  std::vector<int> order(g.nodes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return g.nodes[a].id < g.nodes[b].id; });
  std::vector<int> rank(g.nodes.size());
  for (size_t i = 0; i < order.size(); ++i) rank[order[i]] = int(i);
  return rank;
}

}  // namespace detail
}  // namespace nag
