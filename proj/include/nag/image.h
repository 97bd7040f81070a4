// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "nag/fields.h"

namespace nag {

// Images are double-precision grids; channel count distinguishes RGB,
// grayscale and RGBA.
using Image = Grid2<double>;

// Snap to the 8-bit lattice in [0,1]; how renders are compared against
// PNG-backed datasets.
inline Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.v) {
    double c = v < 0 ? 0 : (v > 1 ? 1 : v);
    v = std::floor(c * 255.0 + 0.5) / 255.0;
  }
  return out;
}

template <typename T>
inline Image to_image(const Grid2<T>& g) {
  Image out;
  out.resize(g.w, g.h, g.c);
  for (size_t i = 0; i < g.v.size(); ++i) out.v[i] = double(g.v[i]);
  return out;
}

template <typename T>
inline Grid2<T> from_image(const Image& img) {
  Grid2<T> out;
  out.resize(img.w, img.h, img.c);
  for (size_t i = 0; i < img.v.size(); ++i) out.v[i] = T(img.v[i]);
  return out;
}

}  // namespace nag
