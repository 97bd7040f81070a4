// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Cubic Hermite splines with Catmull-Rom tangents, the rotation-vector to
// quaternion map, and the rigid track model: pose(t) = base pose at t plus
// weighted learnable spline offsets. The spline value is linear in its
// control points; hermite_weights exposes that linear form so the backward
// pass can reuse it.

#pragma once

#include <cstddef>
#include <vector>

#include "nag/check.h"
#include "nag/geometry.h"
#include "nag/vec.h"

namespace nag {

// Up to four control points contribute at any t. base may be negative or
// exceed P-1 at the ends; the corresponding weights are zero there.
template <typename T>
struct HermiteWeights {
  int base = 0;  // index of the first contributing control point (k-1)
  T w[4] = {0, 0, 0, 0};
};

template <typename T>
inline HermiteWeights<T> hermite_weights(int P, T t) {
  NAG_CHECK(P >= 2, "spline needs at least two control points");
  if (t < 0) t = 0;
  if (t > 1) t = 1;
  T u = t * T(P - 1);
  int k = int(u);
  if (k > P - 2) k = P - 2;
  T s = u - T(k);
  T s2 = s * s, s3 = s2 * s;
  T h00 = 2 * s3 - 3 * s2 + 1;
  T h10 = s3 - 2 * s2 + s;
  T h01 = -2 * s3 + 3 * s2;
  T h11 = s3 - s2;

  HermiteWeights<T> hw;
  hw.base = k - 1;
  T* w = hw.w;  // indices k-1, k, k+1, k+2
  w[1] += h00;
  w[2] += h01;
  // tangent at k: one-sided at the first knot, central elsewhere
  if (k == 0) {
    w[1] -= h10;
    w[2] += h10;
  } else {
    w[0] -= h10 / 2;
    w[2] += h10 / 2;
  }
  // tangent at k+1
  if (k + 1 == P - 1) {
    w[1] -= h11;
    w[2] += h11;
  } else {
    w[1] -= h11 / 2;
    w[3] += h11 / 2;
  }
  return hw;
}

// Piecewise cubic Hermite interpolation of P control points of dimension
// `dim`, with knots at i/(P-1). Exact at knots, C1 in between.
template <typename T>
inline void hermite_eval(const T* pts, int P, int dim, T t, T* out) {
  HermiteWeights<T> hw = hermite_weights(P, t);
  for (int d = 0; d < dim; ++d) out[d] = 0;
  for (int j = 0; j < 4; ++j) {
    int i = hw.base + j;
    if (i < 0 || i >= P || hw.w[j] == 0) continue;
    for (int d = 0; d < dim; ++d) out[d] += hw.w[j] * pts[size_t(i) * dim + d];
  }
}

// Axis-angle exponential map. Unit norm by construction; the small-angle
// series keeps it smooth through v = 0.
template <typename T>
inline Quat<T> rotvec_to_quat(Vec3<T> v) {
  T th2 = dot(v, v);
  T th = std::sqrt(th2);
  T c, k;
  if (th < T(1e-4)) {
    c = 1 - th2 / 8 + th2 * th2 / 384;
    k = T(0.5) - th2 / 48;
  } else {
    c = std::cos(th / 2);
    k = std::sin(th / 2) / th;
  }
  return {c, k * v.x, k * v.y, k * v.z};
}

// d(quat)/d(rotvec), needed by the fitting backward pass.
// q = (c, k*v) with c = cos(th/2), k = sin(th/2)/th.
template <typename T>
inline void rotvec_to_quat_grad(Vec3<T> v, const T dq[4], Vec3<T>& dv) {
  T th2 = dot(v, v);
  T th = std::sqrt(th2);
  T c, k, kp_over_th;  // kp_over_th = k'(th)/th
  if (th < T(1e-4)) {
    c = 1 - th2 / 8 + th2 * th2 / 384;
    k = T(0.5) - th2 / 48;
    kp_over_th = T(-1) / 24 + th2 / 960;
  } else {
    c = std::cos(th / 2);
    k = std::sin(th / 2) / th;
    kp_over_th = (c / 2 - k) / th2;
  }
  // dq_w/dv_i = -(k/2) v_i ; dq_j/dv_i = k delta_ij + v_j v_i k'/th
  T gv = dq[1] * v.x + dq[2] * v.y + dq[3] * v.z;
  T common = gv * kp_over_th - dq[0] * k / 2;
  dv.x += k * dq[1] + common * v.x;
  dv.y += k * dq[2] + common * v.y;
  dv.z += k * dq[3] + common * v.z;
}

// Learnable spline offsets live in the parameter registry; a track only
// remembers where.
struct OffsetSpline {
  size_t offset = 0;  // start of P*3 scalars in the registry
  int P = 0;
};

// Base trajectory sampled per frame plus learnable offset splines. Also used
// for the camera.
template <typename T>
struct RigidTrack {
  std::vector<Vec3<T>> base_t;  // F
  std::vector<Quat<T>> base_r;  // F, unit
  OffsetSpline off_t, off_r;
  T eta_t = T(0.5), eta_r = T(0.5);

  int frames() const { return int(base_t.size()); }
};

// Base pose between integer frames: linear translation, spherical rotation.
template <typename T>
inline void base_pose_at(const RigidTrack<T>& track, T t, Vec3<T>& p, Quat<T>& q) {
  int F = track.frames();
  NAG_CHECK(F >= 1, "empty track");
  if (F == 1) {
    p = track.base_t[0];
    q = track.base_r[0];
    return;
  }
  if (t < 0) t = 0;
  if (t > 1) t = 1;
  T u = t * T(F - 1);
  int k = int(u);
  if (k > F - 2) k = F - 2;
  T s = u - T(k);
  p = track.base_t[k] + s * (track.base_t[k + 1] - track.base_t[k]);
  q = slerp(track.base_r[k], track.base_r[k + 1], s);
}

// pose.p = base_t(t) + eta_t * S(t, P_t); pose.q = base_r(t) * q(eta_r * S(t, P_r)).
template <typename T>
inline PlanePose<T> track_pose(const RigidTrack<T>& track, T t, const T* params) {
  Vec3<T> p;
  Quat<T> q;
  base_pose_at(track, t, p, q);
  if (track.off_t.P >= 2) {
    T s[3];
    hermite_eval(params + track.off_t.offset, track.off_t.P, 3, t, s);
    p += track.eta_t * Vec3<T>{s[0], s[1], s[2]};
  }
  if (track.off_r.P >= 2) {
    T s[3];
    hermite_eval(params + track.off_r.offset, track.off_r.P, 3, t, s);
    q = normalized(qmul(q, rotvec_to_quat(track.eta_r * Vec3<T>{s[0], s[1], s[2]})));
  }
  return {q, p};
}

}  // namespace nag
