// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes: textured planes on spline trajectories, rendered with
// the repository's own renderer. Emits exact visibility masks and box
// tracks, so fits against these datasets have a known ground truth.

#include <omp.h>

#include <cmath>

#include "nag/io.h"
#include "nag/renderer.h"

namespace nag {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Band-limited random texture: white noise box-blurred a few times, then
// normalized to mean +- contrast.
template <typename T>
void make_texture(Grid2<T>& g, int w, int h, int channels, Rng& rng, double detail,
                  double contrast, double mean) {
  g.resize(w, h, channels);
  std::vector<double> buf(size_t(w) * h);
  int passes = detail >= 1.5 ? 2 : (detail >= 0.75 ? 3 : 4);
  for (int ch = 0; ch < channels; ++ch) {
    for (auto& v : buf) v = rng.normal();
    std::vector<double> tmp(buf.size());
    for (int p = 0; p < passes; ++p) {
      // 3x3 box blur with clamped borders
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int xx = std::min(w - 1, std::max(0, x + dx));
              int yy = std::min(h - 1, std::max(0, y + dy));
              s += buf[size_t(yy) * w + xx];
            }
          tmp[size_t(y) * w + x] = s / 9.0;
        }
      std::swap(buf, tmp);
    }
    double mn = buf[0], mx = buf[0];
    for (double v : buf) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    double span = mx - mn > 1e-12 ? mx - mn : 1.0;
    for (int i = 0; i < w * h; ++i) {
      double v = mean + contrast * (2.0 * (buf[i] - mn) / span - 1.0);
      g.v[size_t(i) * channels + ch] = T(v < 0.05 ? 0.05 : (v > 0.95 ? 0.95 : v));
    }
  }
}

// Scales a field's final MLP layer so its outputs over random inputs have
// the requested standard deviation; used to rig nonzero ground-truth flow
// and view effects. Row `zero_row` (if >= 0) stays zero.
template <typename T>
void rig_field(const Field<T>& f, ParamRegistry<T>& reg, Rng& rng, double target_std,
               int zero_row) {
  const MlpSpec& m = f.mlp;
  T* w = reg.values.data() + f.mlp_offset;
  size_t last = m.layer_offset(m.depth - 1);
  int ni = m.layer_in(m.depth - 1), no = m.layer_out(m.depth - 1);
  double lim = std::sqrt(6.0 / ni);
  for (int r = 0; r < no; ++r)
    for (int c = 0; c < ni; ++c)
      w[last + size_t(r) * ni + c] = T(rng.uniform(-lim, lim));
  for (int r = 0; r < no; ++r) w[last + size_t(ni) * no + r] = 0;

  // calibrate on random inputs
  const int kSamples = 256;
  std::vector<double> acc(no, 0), acc2(no, 0);
  std::vector<T> out(no);
  T enc[64];
  for (int s = 0; s < kSamples; ++s) {
    T x[4];
    for (int d = 0; d < f.cfg.dim; ++d) x[d] = T(rng.uniform());
    encode_point(f.cfg, f.levels, reg.values.data() + f.table_offset, x, f.cfg.out_dim(), enc);
    mlp_forward(m, w, enc, out.data(), nullptr);
    for (int r = 0; r < no; ++r) {
      acc[r] += double(out[r]);
      acc2[r] += double(out[r]) * double(out[r]);
    }
  }
  for (int r = 0; r < no; ++r) {
    double mean = acc[r] / kSamples;
    double var = acc2[r] / kSamples - mean * mean;
    double sd = std::sqrt(var > 1e-20 ? var : 1e-20);
    T scale = T(target_std / sd);
    for (int c = 0; c < ni; ++c) w[last + size_t(r) * ni + c] *= scale;
    if (r == zero_row)
      for (int c = 0; c < ni; ++c) w[last + size_t(r) * ni + c] = 0;
  }
}

}  // namespace

template <typename T>
SynthScene<T> synth_scene(uint64_t seed, const SynthSpec& spec) {
  NAG_CHECK(spec.frames >= 2, "synthetic scenes need at least two frames");
  NAG_CHECK(spec.width >= 16 && spec.height >= 16, "scene resolution too small");
  NAG_CHECK(spec.nodes >= 0, "negative node count");
  Rng master(seed);

  SynthScene<T> out;
  SceneGraph<T>& g = out.graph;
  Dataset& data = out.dataset;
  int F = spec.frames, W = spec.width, H = spec.height, N = spec.nodes;

  // camera
  data.intrinsics.focal = 1.15 * W;
  data.intrinsics.principal = {W / 2.0, H / 2.0};
  data.intrinsics.width = W;
  data.intrinsics.height = H;
  Rng shake = master.fork(10);
  for (int f = 0; f < F; ++f) {
    Quat<double> q{1, 0, 0, 0};
    Vec3<double> p{0, 0, 0};
    if (spec.camera_shake > 0) {
      Vec3<double> rv{shake.normal(), shake.normal(), shake.normal()};
      q = rotvec_to_quat(Vec3<double>{rv.x * 0.002 * spec.camera_shake,
                                      rv.y * 0.002 * spec.camera_shake,
                                      rv.z * 0.002 * spec.camera_shake});
      p = {shake.normal() * 0.01 * spec.camera_shake, shake.normal() * 0.01 * spec.camera_shake,
           shake.normal() * 0.005 * spec.camera_shake};
    }
    data.extrinsics.push_back({q, p});
  }

  g.frame_count = F;
  g.camera.intrinsics.focal = T(data.intrinsics.focal);
  g.camera.intrinsics.principal = {T(data.intrinsics.principal.x),
                                   T(data.intrinsics.principal.y)};
  g.camera.intrinsics.width = W;
  g.camera.intrinsics.height = H;
  g.camera.track.base_t.resize(F);
  g.camera.track.base_r.resize(F);
  for (int f = 0; f < F; ++f) {
    const auto& e = data.extrinsics[f];
    g.camera.track.base_t[f] = {T(e.p.x), T(e.p.y), T(e.p.z)};
    g.camera.track.base_r[f] = {T(e.q.w), T(e.q.x), T(e.q.y), T(e.q.z)};
  }

  const double focal = data.intrinsics.focal;
  Rng layout = master.fork(11);
  Rng tex_rng = master.fork(12);

  // foreground planes, nearest first
  for (int i = 0; i < N; ++i) {
    AtlasNode<T> node;
    node.id = "object_" + std::to_string(i);
    node.mask_track = i;
    node.fields.pf = flow_control_points(F);

    double z = 5.0 + 3.0 * (N > 1 ? double(i) / (N - 1) : 0.5);
    double px_w = W * layout.uniform(0.24, 0.30);
    double ex = z * px_w / focal;
    double ey = ex * layout.uniform(0.62, 0.74);
    node.extent = {T(ex), T(ey)};

    // faces the camera with a small constant tilt
    Vec3<double> n0{layout.uniform(-0.12, 0.12), layout.uniform(-0.12, 0.12), -1.0};
    n0 = normalized(n0);
    Vec3<double> vup{0, 1, 0};
    vup = normalized(vup - dot(vup, n0) * n0);
    Vec3<double> u0 = cross(vup, n0);
    Quat<double> q = quat_from_axes(u0, vup, n0);

    double vis_half_w = z * (W / 2.0) / focal;
    double sweep = spec.motion * (1.15 * ex + 0.35 * vis_half_w);
    double dir = (i % 2 == 0) ? 1.0 : -1.0;
    double x0 = -dir * sweep / 2 + layout.uniform(-0.15, 0.15) * vis_half_w;
    double y0 = (N > 1 ? (double(i) / (N - 1) - 0.5) : 0.0) * z * (H * 0.5) / focal;
    double phase = layout.uniform(0, 2 * kPi);

    node.track.base_t.resize(F);
    node.track.base_r.resize(F);
    for (int f = 0; f < F; ++f) {
      double t = F > 1 ? double(f) / (F - 1) : 0.0;
      double x = x0 + dir * sweep * t;
      double y = y0 + spec.wobble * (z / 6.0) * std::sin(2 * kPi * t + phase);
      node.track.base_t[f] = {T(x), T(y), T(z)};
      node.track.base_r[f] = {T(q.w), T(q.x), T(q.y), T(q.z)};
    }

    int tw = std::max(12, int(std::lround(ex / z * focal * 1.5)));
    int th = std::max(12, int(std::lround(ey / z * focal * 1.5)));
    make_texture(node.base_color, tw, th, 3, tex_rng, spec.texture_detail, 0.33, 0.5);
    node.base_alpha.resize(tw, th, 1, T(0));
    for (int yy = 0; yy < th; ++yy)
      for (int xx = 0; xx < tw; ++xx) {
        double du = (xx + 0.5) / tw - 0.5, dv = (yy + 0.5) / th - 0.5;
        double r = (du * du) / (0.46 * 0.46) + (dv * dv) / (0.46 * 0.46);
        *node.base_alpha.at(xx, yy) = r <= 1.0 ? T(1) : T(0);
      }
    g.nodes.push_back(std::move(node));
  }

  // background plane
  {
    AtlasNode<T> bg;
    bg.id = "background";
    bg.is_background = true;
    bg.fields.pf = flow_control_points(F);
    double z = 12.0;
    bg.bg_pose.q = quat_from_axes(Vec3<T>{-1, 0, 0}, Vec3<T>{0, 1, 0}, Vec3<T>{0, 0, -1});
    bg.bg_pose.p = {0, 0, T(z)};
    double ex = 2.0 * z * (W / 2.0 + 8.0 + 4.0 * spec.camera_shake) / focal;
    double ey = 2.0 * z * (H / 2.0 + 8.0 + 4.0 * spec.camera_shake) / focal;
    bg.extent = {T(ex), T(ey)};
    int tw = int(std::lround(ex / z * focal * 1.25));
    int th = int(std::lround(ey / z * focal * 1.25));
    make_texture(bg.base_color, tw, th, 3, tex_rng, spec.texture_detail, 0.16, 0.5);
    g.nodes.push_back(std::move(bg));
  }

  GraphConfig gc;
  uint64_t field_seed = seed ^ 0x9e3779b97f4a7c15ull;
  gc.seed = splitmix64(field_seed);
  register_graph_params(g, gc);

  // optional ground-truth flow / view effects
  if (spec.flow_amp > 0 || spec.view_amp > 0) {
    Rng rig = master.fork(13);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      if (spec.flow_amp > 0) {
        Rng r = rig.fork(i * 2);
        rig_field(g.nodes[i].fields.flow, g.params, r, 0.35 * spec.flow_amp, -1);
      }
      if (spec.view_amp > 0) {
        Rng r = rig.fork(i * 2 + 1);
        rig_field(g.nodes[i].fields.view, g.params, r, 0.4 * spec.view_amp, 3);  // color only
      }
    }
  }

  // render frames and per-node visibility masks with the scene's own shading
  data.frames.assign(F, Image{});
  data.masks.assign(N, std::vector<Image>(F));
  const T* params = g.params.values.data();
  for (int f = 0; f < F; ++f) {
    data.frames[f].resize(W, H, 3);
    for (int i = 0; i < N; ++i) data.masks[i][f].resize(W, H, 1, 0.0);
    T t = g.frame_time(f);
    PlanePose<T> cam = track_pose(g.camera.track, t, params);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        Ray<T> ray = generate_ray(g.camera.intrinsics, cam,
                                  Vec2<T>{T(x) + T(0.5), T(y) + T(0.5)});
        RaySample<T> s = shade_ray(g, ray, t);
        double* px = data.frames[f].at(x, y);
        px[0] = double(s.color.x);
        px[1] = double(s.color.y);
        px[2] = double(s.color.z);
        T trans = 1;
        for (const NodeSample<T>& ns : s.samples) {
          int track = g.nodes[ns.node].mask_track;
          if (track >= 0 && ns.opacity > T(0.5) && trans > T(0.5))
            *data.masks[track][f].at(x, y) = 1.0;
          trans *= (T(1) - ns.opacity);
        }
      }
    }
  }

  // box tracks mirror the ground-truth planes
  for (int i = 0; i < N; ++i) {
    const AtlasNode<T>& n = g.nodes[i];
    BoxTrack box;
    box.id = n.id;
    for (int f = 0; f < F; ++f) {
      box.center.push_back({double(n.track.base_t[f].x), double(n.track.base_t[f].y),
                            double(n.track.base_t[f].z)});
      box.rotation.push_back({double(n.track.base_r[f].w), double(n.track.base_r[f].x),
                              double(n.track.base_r[f].y), double(n.track.base_r[f].z)});
      box.size.push_back({double(n.extent.x), double(n.extent.y), 0.05});
    }
    data.boxes.push_back(std::move(box));
  }

  data.validate();
  g.validate();
  return out;
}

template SynthScene<float> synth_scene(uint64_t, const SynthSpec&);
template SynthScene<double> synth_scene(uint64_t, const SynthSpec&);

}  // namespace nag
