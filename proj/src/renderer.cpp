// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include "nag/renderer.h"

#include <algorithm>

#include "detail_shade.h"

namespace nag {

template <typename T>
RaySample<T> shade_ray(const SceneGraph<T>& g, const Ray<T>& ray, T t,
                       const RenderOptions& opt) {
  const T* params = g.params.values.data();
  std::vector<int> rank = detail::id_ranks(g);
  RaySample<T> out;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const AtlasNode<T>& node = g.nodes[i];
    PlanePose<T> pose = node.pose_at(t, params);
    auto hit = intersect_plane(ray, pose);
    if (!hit) continue;
    auto [uv, inside] = plane_coords(hit->second, pose, node.extent);
    if (!inside) continue;  // off the finite plane: opacity 0, dropped
    Vec2<T> phi = view_angle(ray.dir, pose);
    const EditTexture<T>* edit = node.edit >= 0 ? &g.edits[node.edit] : nullptr;
    detail::NodeEval ev;
    detail::NodePoint<T> np = detail::shade_node_point(node, edit, params, uv, phi,
                                                       node.node_time(t), opt.tau, ev, nullptr);
    out.samples.push_back(NodeSample<T>{int(i), np.color, np.opacity, hit->first});
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [&](const NodeSample<T>& a, const NodeSample<T>& b) {
              if (a.depth != b.depth) return a.depth < b.depth;
              return rank[a.node] < rank[b.node];
            });
  composite_samples(out.samples.data(), int(out.samples.size()), opt.early_out, out.color,
                    out.transmittance);
  return out;
}

template <typename T>
Image render_frame_serial(const SceneGraph<T>& g, int frame, const RenderOptions& opt) {
  const CameraIntrinsics<T>& intr = g.camera.intrinsics;
  T t = g.frame_time(frame);
  PlanePose<T> cam = track_pose(g.camera.track, t, g.params.values.data());
  Image img;
  img.resize(intr.width, intr.height, 3);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      Ray<T> ray = generate_ray(intr, cam, Vec2<T>{T(x) + T(0.5), T(y) + T(0.5)});
      RaySample<T> s = shade_ray(g, ray, t, opt);
      double* px = img.at(x, y);
      px[0] = double(s.color.x);
      px[1] = double(s.color.y);
      px[2] = double(s.color.z);
    }
  }
  return img;
}

template <typename T>
Image render_frame(const SceneGraph<T>& g, int frame, const RenderOptions& opt) {
  const CameraIntrinsics<T>& intr = g.camera.intrinsics;
  Batch<T> batch;
  int n = intr.width * intr.height;
  batch.pixels.resize(n);
  batch.frames.assign(n, frame);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x)
      batch.pixels[size_t(y) * intr.width + x] = {T(x) + T(0.5), T(y) + T(0.5)};
  BatchPipeline<T> pipe;
  ActivityMask act;
  pipe.run(g, batch, 0.0, act, opt, nullptr);
  Image img;
  img.resize(intr.width, intr.height, 3);
  const auto& colors = pipe.colors();
  for (int i = 0; i < n; ++i) {
    img.v[size_t(i) * 3 + 0] = double(colors[i].x);
    img.v[size_t(i) * 3 + 1] = double(colors[i].y);
    img.v[size_t(i) * 3 + 2] = double(colors[i].z);
  }
  return img;
}

template <typename T>
Image render_layer(const SceneGraph<T>& g, const std::string& node_id, int frame,
                   const RenderOptions& opt) {
  int ni = g.node_index(node_id);
  NAG_CHECK(ni >= 0, "unknown node id: " + node_id);
  const CameraIntrinsics<T>& intr = g.camera.intrinsics;
  Batch<T> batch;
  int n = intr.width * intr.height;
  batch.pixels.resize(n);
  batch.frames.assign(n, frame);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x)
      batch.pixels[size_t(y) * intr.width + x] = {T(x) + T(0.5), T(y) + T(0.5)};
  BatchPipeline<T> pipe;
  ActivityMask act;
  act.solo_node = ni;
  RenderOptions o = opt;
  o.early_out = 0;
  pipe.run(g, batch, 0.0, act, o, nullptr);
  Image img;
  img.resize(intr.width, intr.height, 4);
  const auto& colors = pipe.colors();
  const auto& trans = pipe.transmittance();
  for (int i = 0; i < n; ++i) {
    // premultiplied alpha: solo composite already weights color by opacity
    img.v[size_t(i) * 4 + 0] = double(colors[i].x);
    img.v[size_t(i) * 4 + 1] = double(colors[i].y);
    img.v[size_t(i) * 4 + 2] = double(colors[i].z);
    img.v[size_t(i) * 4 + 3] = 1.0 - double(trans[i]);
  }
  return img;
}

template RaySample<float> shade_ray(const SceneGraph<float>&, const Ray<float>&, float,
                                    const RenderOptions&);
template RaySample<double> shade_ray(const SceneGraph<double>&, const Ray<double>&, double,
                                     const RenderOptions&);
template Image render_frame_serial(const SceneGraph<float>&, int, const RenderOptions&);
template Image render_frame_serial(const SceneGraph<double>&, int, const RenderOptions&);
template Image render_frame(const SceneGraph<float>&, int, const RenderOptions&);
template Image render_frame(const SceneGraph<double>&, int, const RenderOptions&);
template Image render_layer(const SceneGraph<float>&, const std::string&, int,
                            const RenderOptions&);
template Image render_layer(const SceneGraph<double>&, const std::string&, int,
                            const RenderOptions&);

}  // namespace nag
