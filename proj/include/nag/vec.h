// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Small fixed-size vector and quaternion types used throughout the core.
// Kept deliberately minimal: the differentiable pipeline needs explicit
// control over every arithmetic expression, so no expression templates.

#pragma once

#include <cmath>
#include <cstddef>

namespace nag {

template <typename T>
struct Vec2 {
  T x = 0, y = 0;
  Vec2() = default;
  Vec2(T x_, T y_) : x(x_), y(y_) {}
  T& operator[](int i) { return (&x)[i]; }
  const T& operator[](int i) const { return (&x)[i]; }
};

template <typename T>
struct Vec3 {
  T x = 0, y = 0, z = 0;
  Vec3() = default;
  Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}
  T& operator[](int i) { return (&x)[i]; }
  const T& operator[](int i) const { return (&x)[i]; }
};

template <typename T>
struct Vec4 {
  T x = 0, y = 0, z = 0, w = 0;
  Vec4() = default;
  Vec4(T x_, T y_, T z_, T w_) : x(x_), y(y_), z(z_), w(w_) {}
  T& operator[](int i) { return (&x)[i]; }
  const T& operator[](int i) const { return (&x)[i]; }
};

template <typename T> inline Vec2<T> operator+(Vec2<T> a, Vec2<T> b) { return {a.x + b.x, a.y + b.y}; }
template <typename T> inline Vec2<T> operator-(Vec2<T> a, Vec2<T> b) { return {a.x - b.x, a.y - b.y}; }
template <typename T> inline Vec2<T> operator*(T s, Vec2<T> a) { return {s * a.x, s * a.y}; }
template <typename T> inline T dot(Vec2<T> a, Vec2<T> b) { return a.x * b.x + a.y * b.y; }
template <typename T> inline T norm(Vec2<T> a) { return std::sqrt(dot(a, a)); }

template <typename T> inline Vec3<T> operator+(Vec3<T> a, Vec3<T> b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
template <typename T> inline Vec3<T> operator-(Vec3<T> a, Vec3<T> b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
template <typename T> inline Vec3<T> operator-(Vec3<T> a) { return {-a.x, -a.y, -a.z}; }
template <typename T> inline Vec3<T> operator*(T s, Vec3<T> a) { return {s * a.x, s * a.y, s * a.z}; }
template <typename T> inline Vec3<T>& operator+=(Vec3<T>& a, Vec3<T> b) { a.x += b.x; a.y += b.y; a.z += b.z; return a; }
template <typename T> inline T dot(Vec3<T> a, Vec3<T> b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
template <typename T> inline Vec3<T> cross(Vec3<T> a, Vec3<T> b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
template <typename T> inline T norm(Vec3<T> a) { return std::sqrt(dot(a, a)); }
template <typename T> inline Vec3<T> normalized(Vec3<T> a) { T n = norm(a); return {a.x / n, a.y / n, a.z / n}; }

template <typename T> inline Vec4<T> operator+(Vec4<T> a, Vec4<T> b) { return {a.x + b.x, a.y + b.y, a.z + b.z, a.w + b.w}; }
template <typename T> inline Vec4<T> operator*(T s, Vec4<T> a) { return {s * a.x, s * a.y, s * a.z, s * a.w}; }

// Unit quaternion, scalar-first (w, x, y, z).
template <typename T>
struct Quat {
  T w = 1, x = 0, y = 0, z = 0;
  Quat() = default;
  Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}
};

template <typename T> inline T dot(Quat<T> a, Quat<T> b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }
template <typename T> inline T norm(Quat<T> q) { return std::sqrt(dot(q, q)); }

template <typename T>
inline Quat<T> normalized(Quat<T> q) {
  T n = norm(q);
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

template <typename T>
inline Quat<T> qmul(Quat<T> a, Quat<T> b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

template <typename T> inline Quat<T> conj(Quat<T> q) { return {q.w, -q.x, -q.y, -q.z}; }

// Rotate v by unit quaternion q: v + 2w(qv x v) + 2 qv x (qv x v).
template <typename T>
inline Vec3<T> rotate(Quat<T> q, Vec3<T> v) {
  Vec3<T> qv{q.x, q.y, q.z};
  Vec3<T> t = cross(qv, v);
  Vec3<T> u = cross(qv, t);
  return {v.x + T(2) * (q.w * t.x + u.x),
          v.y + T(2) * (q.w * t.y + u.y),
          v.z + T(2) * (q.w * t.z + u.z)};
}

template <typename T>
inline Vec3<T> rotate_inv(Quat<T> q, Vec3<T> v) {
  return rotate(conj(q), v);
}

// Spherical interpolation along the shorter arc; falls back to nlerp for
// nearly parallel inputs.
template <typename T>
inline Quat<T> slerp(Quat<T> a, Quat<T> b, T s) {
  T d = dot(a, b);
  if (d < 0) {
    b = {-b.w, -b.x, -b.y, -b.z};
    d = -d;
  }
  if (d > T(1) - T(1e-7)) {
    Quat<T> q{a.w + s * (b.w - a.w), a.x + s * (b.x - a.x),
              a.y + s * (b.y - a.y), a.z + s * (b.z - a.z)};
    return normalized(q);
  }
  T th = std::acos(d);
  T sa = std::sin((T(1) - s) * th) / std::sin(th);
  T sb = std::sin(s * th) / std::sin(th);
  return {sa * a.w + sb * b.w, sa * a.x + sb * b.x, sa * a.y + sb * b.y, sa * a.z + sb * b.z};
}

// Quaternion from an orthonormal frame given by columns (u, v, n).
template <typename T>
inline Quat<T> quat_from_axes(Vec3<T> u, Vec3<T> v, Vec3<T> n) {
  // Shepperd's method on the 3x3 matrix with columns u, v, n.
  T m00 = u.x, m01 = v.x, m02 = n.x;
  T m10 = u.y, m11 = v.y, m12 = n.y;
  T m20 = u.z, m21 = v.z, m22 = n.z;
  T tr = m00 + m11 + m22;
  Quat<T> q;
  if (tr > 0) {
    T s = std::sqrt(tr + T(1)) * T(2);
    q = {T(0.25) * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s};
  } else if (m00 > m11 && m00 > m22) {
    T s = std::sqrt(T(1) + m00 - m11 - m22) * T(2);
    q = {(m21 - m12) / s, T(0.25) * s, (m01 + m10) / s, (m02 + m20) / s};
  } else if (m11 > m22) {
    T s = std::sqrt(T(1) + m11 - m00 - m22) * T(2);
    q = {(m02 - m20) / s, (m01 + m10) / s, T(0.25) * s, (m12 + m21) / s};
  } else {
    T s = std::sqrt(T(1) + m22 - m00 - m11) * T(2);
    q = {(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, T(0.25) * s};
  }
  return normalized(q);
}

}  // namespace nag
