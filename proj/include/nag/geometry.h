// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole ray generation, ray/plane intersection, plane-local coordinates
// and view angles. Everything here is a pure function; the fitting pipeline
// differentiates these by hand, so the formulas are kept in one place.

#pragma once

#include <optional>

#include "nag/check.h"
#include "nag/vec.h"

namespace nag {

// Rejection thresholds for near-parallel rays and hits at/behind the origin.
inline constexpr double kEpsParallel = 1e-8;  // relative to |d||n|
inline constexpr double kEpsNear = 1e-6;

template <typename T>
struct CameraIntrinsics {
  T focal = 1;            // pixels, isotropic
  Vec2<T> principal;      // pixels
  int width = 0, height = 0;

  void validate() const {
    NAG_CHECK(focal > 0, "focal must be positive");
    NAG_CHECK(width >= 1 && height >= 1, "image size must be at least 1x1");
    NAG_CHECK(principal.x >= 0 && principal.x <= T(width) &&
              principal.y >= 0 && principal.y <= T(height),
              "principal point outside image bounds");
  }
};

template <typename T>
struct Ray {
  Vec3<T> origin;
  Vec3<T> dir;  // not normalized; depth is in units of |dir|
};

// Rigid pose of a plane (or camera): local-to-world rotation + translation.
// Plane spans local x/y, normal is local +z.
template <typename T>
struct PlanePose {
  Quat<T> q;
  Vec3<T> p;

  Vec3<T> normal() const { return rotate(q, Vec3<T>{0, 0, 1}); }
};

template <typename T>
struct PlaneSample {
  T depth = 0;
  Vec3<T> world;
  Vec2<T> plane;  // in [0,1]^2 when inside
  Vec2<T> view;   // spherical view angle, in [0,1]^2
  bool inside = false;
};

// Ray through a (fractional) pixel. Origin is the camera center in world
// space; the direction is the unprojected pixel rotated into world space and
// is invariant under extrinsic translation.
template <typename T>
inline Ray<T> generate_ray(const CameraIntrinsics<T>& intr, const PlanePose<T>& extr,
                           Vec2<T> pixel) {
  Vec3<T> d_cam{(pixel.x - intr.principal.x) / intr.focal,
                (pixel.y - intr.principal.y) / intr.focal, T(1)};
  return Ray<T>{extr.p, rotate(extr.q, d_cam)};
}

// l = (p - o).n / (d.n); empty for parallel rays and hits at or behind the
// origin. Uses the ratio form, so positive rescaling of n does not change l.
template <typename T>
inline std::optional<std::pair<T, Vec3<T>>> intersect_plane(const Ray<T>& ray,
                                                            const PlanePose<T>& pose) {
  Vec3<T> n = pose.normal();
  T dn = dot(ray.dir, n);
  T scale = norm(ray.dir) * norm(n);
  if (std::abs(dn) <= T(kEpsParallel) * scale) return std::nullopt;
  T l = dot(pose.p - ray.origin, n) / dn;
  if (l <= T(kEpsNear)) return std::nullopt;
  return std::make_pair(l, ray.origin + l * ray.dir);
}

// World point to plane-local [0,1]^2 coordinates. The in-plane offsets are
// divided by the extent so an extent-sized plane maps onto the unit square.
template <typename T>
inline std::pair<Vec2<T>, bool> plane_coords(const Vec3<T>& world, const PlanePose<T>& pose,
                                             Vec2<T> extent) {
  Vec3<T> local = rotate_inv(pose.q, world - pose.p);
  Vec2<T> uv{local.x / extent.x + T(0.5), local.y / extent.y + T(0.5)};
  bool inside = uv.x >= 0 && uv.x <= 1 && uv.y >= 0 && uv.y <= 1;
  return {uv, inside};
}

template <typename T>
inline Vec3<T> plane_to_world(Vec2<T> uv, const PlanePose<T>& pose, Vec2<T> extent) {
  Vec3<T> local{(uv.x - T(0.5)) * extent.x, (uv.y - T(0.5)) * extent.y, T(0)};
  return rotate(pose.q, local) + pose.p;
}

// Direction in the plane frame as normalized spherical angles:
// inclination theta in [0,pi] -> theta/pi, azimuth psi in [-pi,pi) ->
// psi/(2pi) + 0.5. The mapping is frozen; checkpoints depend on it.
template <typename T>
inline Vec2<T> view_angle(const Vec3<T>& dir, const PlanePose<T>& pose) {
  Vec3<T> d = rotate_inv(pose.q, dir);
  T r = norm(d);
  T cz = d.z / r;
  if (cz > 1) cz = 1;
  if (cz < -1) cz = -1;
  T theta = std::acos(cz);
  T psi = std::atan2(d.y, d.x);
  constexpr double pi = 3.14159265358979323846;
  if (psi >= T(pi)) psi = T(-pi);
  return {theta / T(pi), psi / T(2 * pi) + T(0.5)};
}

}  // namespace nag
