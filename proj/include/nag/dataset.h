// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "nag/geometry.h"
#include "nag/image.h"
#include "nag/vec.h"

namespace nag {

// Per-frame 3D box annotations for one foreground object.
struct BoxTrack {
  std::string id;
  std::vector<Vec3<double>> center;    // F
  std::vector<Quat<double>> rotation;  // F, unit
  std::vector<Vec3<double>> size;      // F
};

// An input clip: frames, per-object binary masks, camera, boxes.
struct Dataset {
  std::vector<Image> frames;               // F images, W x H x 3 in [0,1]
  std::vector<std::vector<Image>> masks;   // [object][frame], W x H x 1, values {0,1}
  CameraIntrinsics<double> intrinsics;
  std::vector<PlanePose<double>> extrinsics;  // camera-to-world per frame
  std::vector<BoxTrack> boxes;

  int frame_count() const { return int(frames.size()); }
  int width() const { return frames.empty() ? 0 : frames[0].w; }
  int height() const { return frames.empty() ? 0 : frames[0].h; }

  void validate() const {
    NAG_CHECK(!frames.empty(), "dataset has no frames");
    NAG_CHECK(extrinsics.size() == frames.size(), "extrinsics count != frame count");
    intrinsics.validate();
    for (const Image& f : frames)
      NAG_CHECK(f.w == width() && f.h == height() && f.c == 3, "inconsistent frame shapes");
    NAG_CHECK(masks.size() == boxes.size(), "mask track count != box track count");
    for (const auto& track : masks) {
      NAG_CHECK(track.size() == frames.size(), "mask track length != frame count");
      for (const Image& m : track)
        NAG_CHECK(m.w == width() && m.h == height() && m.c == 1, "mask shape mismatch");
    }
    for (const BoxTrack& b : boxes)
      NAG_CHECK(b.center.size() == frames.size() && b.rotation.size() == frames.size() &&
                b.size.size() == frames.size(),
                "box track length != frame count");
  }
};

}  // namespace nag
