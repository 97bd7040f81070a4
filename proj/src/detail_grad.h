// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Hand-derived adjoints for the geometric chain: quaternion rotation,
// ray/plane intersection, plane coordinates and view angles. Matches the
// forward formulas in geometry.h exactly.

#pragma once

#include "nag/geometry.h"
#include "nag/vec.h"

namespace nag {
namespace detail {

// r = rotate(q, v) = v + 2w t + 2 qv x t with t = qv x v.
// Accumulates dL/dq into dq[4] (w,x,y,z) and dL/dv into dv.
template <typename T>
inline void rotate_backward(const Quat<T>& q, const Vec3<T>& v, const Vec3<T>& g, T dq[4],
                            Vec3<T>* dv) {
  Vec3<T> qv{q.x, q.y, q.z};
  Vec3<T> t = cross(qv, v);
  dq[0] += T(2) * dot(g, t);
  Vec3<T> dqv = T(2) * (q.w * cross(v, g) + cross(t, g) + cross(v, cross(g, qv)));
  dq[1] += dqv.x;
  dq[2] += dqv.y;
  dq[3] += dqv.z;
  if (dv) *dv += rotate_inv(q, g);
}

// r = rotate_inv(q, v) = rotate(conj(q), v).
template <typename T>
inline void rotate_inv_backward(const Quat<T>& q, const Vec3<T>& v, const Vec3<T>& g, T dq[4],
                                Vec3<T>* dv) {
  T dqc[4] = {0, 0, 0, 0};
  Vec3<T> dvl{0, 0, 0};
  rotate_backward(conj(q), v, g, dqc, dv ? &dvl : nullptr);
  dq[0] += dqc[0];
  dq[1] -= dqc[1];
  dq[2] -= dqc[2];
  dq[3] -= dqc[3];
  if (dv) *dv += rotate(q, dvl);  // R^-T of the conjugate chain
}

// phi = (theta/pi, psi/(2 pi) + 1/2) of d rotated into the plane frame.
// Accumulates into ddir (world direction) and dq (plane rotation).
template <typename T>
inline void view_angle_backward(const Vec3<T>& dir, const Quat<T>& q, Vec2<T> dphi,
                                Vec3<T>* ddir, T dq[4]) {
  constexpr double pi = 3.14159265358979323846;
  Vec3<T> d = rotate_inv(q, dir);
  T r2 = dot(d, d);
  T r = std::sqrt(r2);
  T cz = d.z / r;
  Vec3<T> dd{0, 0, 0};
  // theta = acos(clamp(cz)): singular at the poles, subgradient 0 there
  T s2 = T(1) - cz * cz;
  if (s2 > T(1e-24) && dphi.x != 0) {
    T dtheta = dphi.x / T(pi);
    T dcz = -dtheta / std::sqrt(s2);
    dd.z += dcz / r;
    T dr = -dcz * d.z / r2;
    dd += (dr / r) * d;
  }
  // psi = atan2(y, x)
  T xy2 = d.x * d.x + d.y * d.y;
  if (xy2 > T(1e-24) && dphi.y != 0) {
    T dpsi = dphi.y / T(2 * pi);
    dd.x += -d.y / xy2 * dpsi;
    dd.y += d.x / xy2 * dpsi;
  }
  if (dd.x != 0 || dd.y != 0 || dd.z != 0) rotate_inv_backward(q, dir, dd, dq, ddir);
}

// Adjoint of the full hit chain for one ray/plane pair:
//   n = rotate(q, ez); l = (p - o).n / (d.n); xw = o + l d;
//   local = rotate_inv(q, xw - p); uv = local.xy / extent + 0.5.
// Inputs: duv and (optionally) dxw_extra, an extra adjoint on the world
// point. Accumulates into dq, dp, dorigin, ddir.
template <typename T>
inline void hit_backward(const Ray<T>& ray, const PlanePose<T>& pose, Vec2<T> extent, T l,
                         Vec2<T> duv, T dq[4], Vec3<T>& dp, Vec3<T>* dorigin, Vec3<T>* ddir) {
  Vec3<T> xw = ray.origin + l * ray.dir;
  Vec3<T> n = pose.normal();

  Vec3<T> dlocal{duv.x / extent.x, duv.y / extent.y, T(0)};
  // local = rotate_inv(q, xw - p); dxw holds dL/d(xw - p) = dL/dxw = -dL/dp
  Vec3<T> dxw{0, 0, 0};
  rotate_inv_backward(pose.q, xw - pose.p, dlocal, dq, &dxw);
  dp -= dxw;

  // xw = o + l d
  T dl = dot(dxw, ray.dir);
  if (dorigin) *dorigin += dxw;
  Vec3<T> dd = l * dxw;

  // l = num / den, num = (p - o).n, den = d.n
  T den = dot(ray.dir, n);
  T dnum = dl / den;
  T dden = -dl * l / den;
  dp += dnum * n;
  Vec3<T> dn = dnum * (pose.p - ray.origin) + dden * ray.dir;
  if (dorigin) *dorigin += T(-dnum) * n;
  dd += dden * n;

  // n = rotate(q, ez)
  rotate_backward(pose.q, Vec3<T>{0, 0, 1}, dn, dq, static_cast<Vec3<T>*>(nullptr));
  if (ddir) *ddir += dd;
}

}  // namespace detail
}  // namespace nag
