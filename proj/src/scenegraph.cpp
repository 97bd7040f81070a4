// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include "nag/scenegraph.h"

#include <algorithm>
#include <cmath>

#include "nag/rng.h"

namespace nag {

namespace {

// Pixel-space bounding box of a binary mask; returns false when empty.
bool mask_bbox(const Image& m, double& x0, double& y0, double& x1, double& y1, long& area) {
  long n = 0;
  int ix0 = m.w, iy0 = m.h, ix1 = -1, iy1 = -1;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(x, y)[0] > 0.5) {
        ++n;
        ix0 = std::min(ix0, x);
        iy0 = std::min(iy0, y);
        ix1 = std::max(ix1, x);
        iy1 = std::max(iy1, y);
      }
  if (n == 0) return false;
  area = n;
  x0 = ix0;
  y0 = iy0;
  x1 = ix1 + 1.0;  // outer pixel edges
  y1 = iy1 + 1.0;
  return true;
}

int largest_mask_frame(const std::vector<Image>& masks, long& best_area) {
  int best = -1;
  best_area = 0;
  for (size_t f = 0; f < masks.size(); ++f) {
    double x0, y0, x1, y1;
    long area = 0;
    if (mask_bbox(masks[f], x0, y0, x1, y1, area) && area > best_area) {
      best_area = area;
      best = int(f);
    }
  }
  return best;
}

// In-plane rectangle of the mask bbox back-projected onto the plane at the
// given poses. Throws when a corner ray misses the plane.
template <typename T>
void project_bbox(const Image& mask, const CameraIntrinsics<T>& intr,
                  const PlanePose<T>& cam, const PlanePose<T>& plane, T& u0, T& v0, T& u1,
                  T& v1) {
  double x0, y0, x1, y1;
  long area = 0;
  NAG_CHECK(mask_bbox(mask, x0, y0, x1, y1, area), "mask unexpectedly empty");
  Vec2<T> corners[4] = {{T(x0), T(y0)}, {T(x1), T(y0)}, {T(x0), T(y1)}, {T(x1), T(y1)}};
  u0 = v0 = std::numeric_limits<T>::max();
  u1 = v1 = std::numeric_limits<T>::lowest();
  for (Vec2<T> c : corners) {
    Ray<T> ray = generate_ray(intr, cam, c);
    auto hit = intersect_plane(ray, plane);
    NAG_CHECK(hit.has_value(), "mask corner ray misses the node plane");
    Vec3<T> local = rotate_inv(plane.q, hit->second - plane.p);
    u0 = std::min(u0, local.x);
    u1 = std::max(u1, local.x);
    v0 = std::min(v0, local.y);
    v1 = std::max(v1, local.y);
  }
}

template <typename T>
struct FaceChoice {
  Quat<T> rel;  // box-to-plane rotation offset
};

// Plane orientation candidates from the box frame: front, side, two
// horizontal diagonals, top. Picks the face whose normal is most aligned
// with the mean camera viewing direction; ties go to the front face.
template <typename T>
FaceChoice<T> select_face(const Quat<T>& box_q, const Vec3<T>& mean_view) {
  Vec3<T> bx = rotate(box_q, Vec3<T>{1, 0, 0});
  Vec3<T> by = rotate(box_q, Vec3<T>{0, 1, 0});
  Vec3<T> bz = rotate(box_q, Vec3<T>{0, 0, 1});
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  struct Cand {
    Vec3<T> n, v;
  };
  Cand cands[5] = {
      {bx, bz},                                              // front
      {by, bz},                                              // side
      {inv_sqrt2 * (bx + by), bz},                           // diagonal +
      {inv_sqrt2 * (bx - by), bz},                           // diagonal -
      {bz, by},                                              // top
  };
  int best = 0;
  T best_score = -1;
  for (int i = 0; i < 5; ++i) {
    T score = std::abs(dot(cands[i].n, mean_view));
    if (score > best_score + T(1e-12)) {
      best_score = score;
      best = i;
    }
  }
  Vec3<T> n = cands[best].n, v = cands[best].v;
  Vec3<T> u = cross(v, n);
  Quat<T> plane_q = quat_from_axes(u, v, n);
  return {normalized(qmul(conj(box_q), plane_q))};
}

template <typename T>
Vec3<T> mean_view_dir(const std::vector<PlanePose<T>>& extr) {
  Vec3<T> acc{0, 0, 0};
  for (const auto& e : extr) acc += rotate(e.q, Vec3<T>{0, 0, 1});
  return normalized(acc);
}

template <typename T>
std::vector<PlanePose<T>> camera_poses(const Dataset& data) {
  std::vector<PlanePose<T>> out(data.frame_count());
  for (int f = 0; f < data.frame_count(); ++f) {
    const auto& e = data.extrinsics[f];
    out[f] = {Quat<T>{T(e.q.w), T(e.q.x), T(e.q.y), T(e.q.z)},
              Vec3<T>{T(e.p.x), T(e.p.y), T(e.p.z)}};
  }
  return out;
}

template <typename T>
CameraIntrinsics<T> cast_intrinsics(const CameraIntrinsics<double>& in) {
  CameraIntrinsics<T> out;
  out.focal = T(in.focal);
  out.principal = {T(in.principal.x), T(in.principal.y)};
  out.width = in.width;
  out.height = in.height;
  return out;
}

// Project one atlas texel grid from a reference image. Texels that do not
// land in the image keep (0.5 gray, alpha 0).
template <typename T>
void project_base_grids(AtlasNode<T>& node, const PlanePose<T>& plane,
                        const CameraIntrinsics<T>& intr, const PlanePose<T>& cam,
                        const Image& frame, const Image* own_mask,
                        const std::vector<const Image*>& exclude_masks) {
  Grid2<T>& col = node.base_color;
  for (int j = 0; j < col.h; ++j) {
    for (int i = 0; i < col.w; ++i) {
      Vec2<T> uv{(T(i) + T(0.5)) / T(col.w), (T(j) + T(0.5)) / T(col.h)};
      Vec3<T> world = plane_to_world(uv, plane, node.extent);
      Vec3<T> local = rotate_inv(cam.q, world - cam.p);
      T* c = col.at(i, j);
      T* a = node.base_alpha.empty() ? nullptr : node.base_alpha.at(i, j);
      c[0] = c[1] = c[2] = T(0.5);
      if (a) *a = 0;
      if (local.z <= T(1e-6)) continue;
      T px = intr.focal * local.x / local.z + intr.principal.x;
      T py = intr.focal * local.y / local.z + intr.principal.y;
      if (px < 0 || px > T(intr.width) || py < 0 || py > T(intr.height)) continue;
      Vec2<T> iuv{px / T(intr.width), py / T(intr.height)};
      Vec2<double> duv{double(iuv.x), double(iuv.y)};
      bool excluded = false;
      for (const Image* m : exclude_masks) {
        double mv;
        sample_grid(*m, duv, &mv);
        if (mv > 0.5) {
          excluded = true;
          break;
        }
      }
      if (excluded) continue;
      double rgb[3];
      sample_grid(frame, duv, rgb);
      double alpha = 1.0;
      if (own_mask) sample_grid(*own_mask, duv, &alpha);
      if (own_mask && !(alpha > 0)) continue;  // keep the gray fill outside the mask
      c[0] = T(rgb[0]);
      c[1] = T(rgb[1]);
      c[2] = T(rgb[2]);
      if (a) *a = T(alpha < 0 ? 0 : (alpha > 1 ? 1 : alpha));
    }
  }
}

template <typename T>
void setup_field(Field<T>& f, int dim, int out, ParamRegistry<T>& reg, int node_idx,
                 const std::string& nid, GroupKind table_kind, GroupKind mlp_kind) {
  f.cfg.dim = dim;
  f.levels = build_hash_levels(f.cfg, f.table_scalars);
  f.mlp.in = f.cfg.out_dim();
  f.mlp.out = out;
  std::string base = nid + "/" + group_kind_name(table_kind);
  f.table_group = reg.add_group(base, table_kind, node_idx, f.table_scalars);
  f.table_offset = reg.groups[f.table_group].offset;
  f.mlp_group = reg.add_group(nid + "/" + group_kind_name(mlp_kind), mlp_kind, node_idx,
                              f.mlp.param_count());
  f.mlp_offset = reg.groups[f.mlp_group].offset;
}

template <typename T>
void init_field_params(const Field<T>& f, ParamRegistry<T>& reg, Rng rng) {
  T* tables = reg.values.data() + f.table_offset;
  for (size_t i = 0; i < f.table_scalars; ++i) tables[i] = T(rng.uniform(-1e-4, 1e-4));
  mlp_init(f.mlp, reg.values.data() + f.mlp_offset, rng);
}

}  // namespace

template <typename T>
Vec2<T> estimate_extent(const std::vector<Image>& node_masks, const RigidTrack<T>& track,
                        const CameraRig<T>& camera, double margin) {
  long area = 0;
  int ref = largest_mask_frame(node_masks, area);
  NAG_CHECK(ref >= 0, "node unobservable: all masks are empty");
  int F = int(node_masks.size());
  T t = F > 1 ? T(ref) / T(F - 1) : T(0);
  PlanePose<T> plane = track_pose(track, t, nullptr);
  PlanePose<T> cam = track_pose(camera.track, t, nullptr);
  T u0, v0, u1, v1;
  project_bbox(node_masks[ref], camera.intrinsics, cam, plane, u0, v0, u1, v1);
  return {(u1 - u0) * T(1 + margin), (v1 - v0) * T(1 + margin)};
}

template <typename T>
AtlasNode<T> init_node(const Dataset& data, int object_index, const GraphConfig& cfg) {
  const BoxTrack& box = data.boxes[object_index];
  const std::vector<Image>& masks = data.masks[object_index];
  int F = data.frame_count();

  long area = 0;
  int ref = largest_mask_frame(masks, area);
  NAG_CHECK(ref >= 0, "node unobservable: all masks are empty (" + box.id + ")");

  AtlasNode<T> node;
  node.id = box.id;
  node.mask_track = object_index;
  node.fields.pf = flow_control_points(F);

  auto cams = camera_poses<T>(data);
  CameraIntrinsics<T> intr = cast_intrinsics<T>(data.intrinsics);
  Vec3<T> view = mean_view_dir(cams);

  // Base rotation: box orientation composed with the selected face offset.
  Quat<T> box_ref{T(box.rotation[ref].w), T(box.rotation[ref].x), T(box.rotation[ref].y),
                  T(box.rotation[ref].z)};
  FaceChoice<T> face = select_face(box_ref, view);
  node.track.base_t.resize(F);
  node.track.base_r.resize(F);
  for (int f = 0; f < F; ++f) {
    Quat<T> bq{T(box.rotation[f].w), T(box.rotation[f].x), T(box.rotation[f].y),
               T(box.rotation[f].z)};
    node.track.base_r[f] = normalized(qmul(bq, face.rel));
    node.track.base_t[f] = {T(box.center[f].x), T(box.center[f].y), T(box.center[f].z)};
  }

  // Back-project the reference mask bbox, recenter the plane on it, and snap
  // the extent so the atlas grid matches the reference pixel density.
  T t_ref = F > 1 ? T(ref) / T(F - 1) : T(0);
  PlanePose<T> plane{node.track.base_r[ref], node.track.base_t[ref]};
  T u0, v0, u1, v1;
  project_bbox(masks[ref], intr, cams[ref], plane, u0, v0, u1, v1);
  (void)t_ref;

  double bx0, by0, bx1, by1;
  long unused = 0;
  mask_bbox(masks[ref], bx0, by0, bx1, by1, unused);
  double px_w = bx1 - bx0, px_h = by1 - by0;

  Vec3<T> recenter{(u0 + u1) / 2, (v0 + v1) / 2, 0};
  for (int f = 0; f < F; ++f)
    node.track.base_t[f] += rotate(node.track.base_r[f], recenter);

  double sx = cfg.atlas_scale;
  int core_w = std::max(2, int(std::lround(px_w * sx)));
  int core_h = std::max(2, int(std::lround(px_h * sx)));
  int pad_w = int(std::ceil(0.5 * cfg.margin * core_w));
  int pad_h = int(std::ceil(0.5 * cfg.margin * core_h));
  int res_w = core_w + 2 * pad_w, res_h = core_h + 2 * pad_h;
  T texel_u = (u1 - u0) / T(core_w);
  T texel_v = (v1 - v0) / T(core_h);
  node.extent = {texel_u * T(res_w), texel_v * T(res_h)};

  node.base_color.resize(res_w, res_h, 3, T(0.5));
  node.base_alpha.resize(res_w, res_h, 1, T(0));
  PlanePose<T> plane_ref{node.track.base_r[ref], node.track.base_t[ref]};
  project_base_grids(node, plane_ref, intr, cams[ref], data.frames[ref], &masks[ref], {});
  return node;
}

template <typename T>
void register_graph_params(SceneGraph<T>& g, const GraphConfig& cfg) {
  int F = g.frame_count;
  int P = cfg.control_points > 0 ? cfg.control_points : F;
  if (P < 2) P = 2;
  ParamRegistry<T>& reg = g.params;

  g.camera_group = reg.add_group("camera_offsets", GroupKind::kCameraOffsets, -1, size_t(P) * 6);
  g.camera.track.off_t = {reg.groups[g.camera_group].offset, P};
  g.camera.track.off_r = {reg.groups[g.camera_group].offset + size_t(P) * 3, P};

  for (size_t i = 0; i < g.nodes.size(); ++i) {
    AtlasNode<T>& n = g.nodes[i];
    std::string nid = "node" + std::to_string(i);
    if (!n.is_background) {
      n.offsets_group = reg.add_group(nid + "/node_offsets", GroupKind::kNodeOffsets, int(i),
                                      size_t(P) * 6);
      n.track.off_t = {reg.groups[n.offsets_group].offset, P};
      n.track.off_r = {reg.groups[n.offsets_group].offset + size_t(P) * 3, P};
    }
    setup_field(n.fields.color, 2, 3, reg, int(i), nid, GroupKind::kColorTables,
                GroupKind::kColorMlp);
    if (!n.is_background) {
      n.fields.has_alpha = true;
      setup_field(n.fields.alpha, 2, 1, reg, int(i), nid, GroupKind::kAlphaTables,
                  GroupKind::kAlphaMlp);
    } else {
      n.fields.has_alpha = false;
    }
    setup_field(n.fields.flow, 2, n.fields.pf * 2, reg, int(i), nid, GroupKind::kFlowTables,
                GroupKind::kFlowMlp);
    setup_field(n.fields.view, 4, 4, reg, int(i), nid, GroupKind::kViewTables,
                GroupKind::kViewMlp);
  }
  reg.finalize();

  Rng master(cfg.seed);
  uint64_t stream = 1;
  for (AtlasNode<T>& n : g.nodes) {
    init_field_params(n.fields.color, reg, master.fork(stream++));
    if (n.fields.has_alpha) init_field_params(n.fields.alpha, reg, master.fork(stream++));
    init_field_params(n.fields.flow, reg, master.fork(stream++));
    init_field_params(n.fields.view, reg, master.fork(stream++));
  }
}

template <typename T>
SceneGraph<T> build_graph(const Dataset& data, const GraphConfig& cfg) {
  data.validate();
  NAG_CHECK(data.frame_count() >= 2, "dataset needs at least two frames");

  SceneGraph<T> g;
  g.frame_count = data.frame_count();
  g.camera.intrinsics = cast_intrinsics<T>(data.intrinsics);
  g.camera.track.base_t.resize(g.frame_count);
  g.camera.track.base_r.resize(g.frame_count);
  auto cams = camera_poses<T>(data);
  for (int f = 0; f < g.frame_count; ++f) {
    g.camera.track.base_t[f] = cams[f].p;
    g.camera.track.base_r[f] = cams[f].q;
  }

  for (size_t i = 0; i < data.boxes.size(); ++i) {
    AtlasNode<T> node = init_node<T>(data, int(i), cfg);
    NAG_CHECK(node.id != "background", "object id 'background' is reserved");
    g.nodes.push_back(std::move(node));
  }

  // Background plane: behind the farthest box along the mean view direction,
  // facing the cameras, sized to cover every frame's frustum.
  {
    Vec3<T> view = mean_view_dir(cams);
    Vec3<T> pbar{0, 0, 0};
    for (const auto& c : cams) pbar += c.p;
    pbar = T(1.0 / double(cams.size())) * pbar;

    T far_d = 0;
    bool any = false;
    for (const BoxTrack& b : data.boxes)
      for (const auto& c : b.center) {
        Vec3<T> ctr{T(c.x), T(c.y), T(c.z)};
        far_d = std::max(far_d, dot(ctr - pbar, view));
        any = true;
      }
    T depth = any ? far_d * T(cfg.bg_depth_factor) : T(10);

    AtlasNode<T> bg;
    bg.id = "background";
    bg.is_background = true;
    bg.fields.pf = flow_control_points(g.frame_count);

    Vec3<T> n = -view;
    Vec3<T> up{0, 0, 0};
    for (const auto& c : cams) up += rotate(c.q, Vec3<T>{0, -1, 0});
    up = up - dot(up, n) * n;
    T un = norm(up);
    Vec3<T> v = un > T(1e-9) ? T(1 / un) * up : Vec3<T>{0, 1, 0};
    Vec3<T> u = cross(v, n);
    bg.bg_pose.q = quat_from_axes(u, v, n);
    bg.bg_pose.p = pbar + depth * view;

    // Footprints of all frames' image corners on the plane, in plane coords.
    const CameraIntrinsics<T>& intr = g.camera.intrinsics;
    T W = T(intr.width), H = T(intr.height);
    Vec2<T> corners[4] = {{0, 0}, {W, 0}, {0, H}, {W, H}};
    T ref_u0 = 0, ref_v0 = 0, ref_u1 = 0, ref_v1 = 0;
    T lo_u = std::numeric_limits<T>::max(), lo_v = lo_u;
    T hi_u = std::numeric_limits<T>::lowest(), hi_v = hi_u;
    for (int f = 0; f < g.frame_count; ++f) {
      T fu0 = std::numeric_limits<T>::max(), fv0 = fu0;
      T fu1 = std::numeric_limits<T>::lowest(), fv1 = fu1;
      for (Vec2<T> c : corners) {
        Ray<T> ray = generate_ray(intr, cams[f], c);
        auto hit = intersect_plane(ray, bg.bg_pose);
        NAG_CHECK(hit.has_value(), "frame frustum does not reach the background plane");
        Vec3<T> local = rotate_inv(bg.bg_pose.q, hit->second - bg.bg_pose.p);
        fu0 = std::min(fu0, local.x);
        fu1 = std::max(fu1, local.x);
        fv0 = std::min(fv0, local.y);
        fv1 = std::max(fv1, local.y);
      }
      if (f == 0) {
        ref_u0 = fu0;
        ref_v0 = fv0;
        ref_u1 = fu1;
        ref_v1 = fv1;
      }
      lo_u = std::min(lo_u, fu0);
      hi_u = std::max(hi_u, fu1);
      lo_v = std::min(lo_v, fv0);
      hi_v = std::max(hi_v, fv1);
    }

    // Texel size matches reference-frame pixels; the grid is snapped so
    // reference pixel centers land exactly on texel centers.
    T texel_u = (ref_u1 - ref_u0) / W;
    T texel_v = (ref_v1 - ref_v0) / H;
    int pad_w = int(std::ceil(0.5 * cfg.bg_margin * intr.width));
    int pad_h = int(std::ceil(0.5 * cfg.bg_margin * intr.height));
    auto snap = [](T lo, T hi, T ref_lo, T texel, int pad, int& lo_i, int& hi_i) {
      lo_i = int(std::floor(double((lo - ref_lo) / texel))) - pad;
      hi_i = int(std::ceil(double((hi - ref_lo) / texel))) + pad;
      if ((hi_i - lo_i) & 1) ++hi_i;       // even resolution
      if ((lo_i + hi_i) & 1) { ++hi_i; --lo_i; }  // integer-texel center
    };
    int lu, hu, lv, hv;
    snap(lo_u, hi_u, ref_u0, texel_u, pad_w, lu, hu);
    snap(lo_v, hi_v, ref_v0, texel_v, pad_h, lv, hv);
    int res_w = hu - lu, res_h = hv - lv;
    bg.extent = {texel_u * T(res_w), texel_v * T(res_h)};
    Vec3<T> recenter{ref_u0 + texel_u * T(lu + hu) / 2, ref_v0 + texel_v * T(lv + hv) / 2, 0};
    bg.bg_pose.p = bg.bg_pose.p + rotate(bg.bg_pose.q, recenter);

    bg.base_color.resize(res_w, res_h, 3, T(0.5));
    std::vector<const Image*> excludes;
    for (const auto& track : data.masks) excludes.push_back(&track[0]);
    project_base_grids(bg, bg.bg_pose, intr, cams[0], data.frames[0], nullptr, excludes);
    g.nodes.push_back(std::move(bg));
  }

  register_graph_params(g, cfg);
  g.validate();
  return g;
}

template Vec2<float> estimate_extent(const std::vector<Image>&, const RigidTrack<float>&,
                                     const CameraRig<float>&, double);
template Vec2<double> estimate_extent(const std::vector<Image>&, const RigidTrack<double>&,
                                      const CameraRig<double>&, double);
template AtlasNode<float> init_node(const Dataset&, int, const GraphConfig&);
template AtlasNode<double> init_node(const Dataset&, int, const GraphConfig&);
template void register_graph_params(SceneGraph<float>&, const GraphConfig&);
template void register_graph_params(SceneGraph<double>&, const GraphConfig&);
template SceneGraph<float> build_graph(const Dataset&, const GraphConfig&);
template SceneGraph<double> build_graph(const Dataset&, const GraphConfig&);

}  // namespace nag
