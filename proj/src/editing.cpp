// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include "nag/editing.h"

#include <sstream>

#include "detail_shade.h"
#include "nag/io.h"

namespace nag {

namespace {

Vec3<double> parse_vec3(const std::string& s) {
  Vec3<double> v;
  char c1, c2;
  std::istringstream is(s);
  NAG_CHECK(bool(is >> v.x >> c1 >> v.y >> c2 >> v.z) && c1 == ',' && c2 == ',',
            "expected x,y,z, got '" + s + "'");
  return v;
}

const std::string& require(const std::map<std::string, std::string>& kv, const char* key,
                           const std::string& line) {
  auto it = kv.find(key);
  NAG_CHECK(it != kv.end(), std::string("missing '") + key + "' in edit op: " + line);
  return it->second;
}

}  // namespace

EditScript parse_edit_script(const std::string& text) {
  EditScript script;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string op;
    if (!(ls >> op)) continue;
    std::map<std::string, std::string> kv;
    std::string tok;
    while (ls >> tok) {
      size_t eq = tok.find('=');
      NAG_CHECK(eq != std::string::npos, "expected key=value, got '" + tok + "'");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    EditOp e;
    e.node = require(kv, "node", line);
    if (op == "remove") {
      e.kind = EditOp::kRemove;
    } else if (op == "duplicate") {
      e.kind = EditOp::kDuplicate;
      e.translation = parse_vec3(require(kv, "translation", line));
      if (kv.count("dt")) e.dt_frames = std::stod(kv.at("dt"));
    } else if (op == "translate") {
      e.kind = EditOp::kTranslate;
      e.translation = parse_vec3(require(kv, "translation", line));
    } else if (op == "time_shift") {
      e.kind = EditOp::kTimeShift;
      e.dt_frames = std::stod(require(kv, "dt", line));
    } else if (op == "texture") {
      e.kind = EditOp::kTexture;
      e.image = require(kv, "image", line);
      e.reference_frame = int(std::stol(require(kv, "reference_frame", line)));
    } else {
      NAG_CHECK(false, "unknown edit op '" + op + "'");
    }
    script.ops.push_back(std::move(e));
  }
  return script;
}

template <typename T>
FlowInverse invert_flow(const AtlasNode<T>& node, const T* params, Vec2<T> x_target, T t,
                        double tau, int max_iter, double tol) {
  T tn = node.node_time(t);
  FlowInverse best;
  best.x = {double(x_target.x), double(x_target.y)};
  double best_err = std::numeric_limits<double>::max();
  Vec2<T> x = x_target;
  for (int it = 0; it < max_iter; ++it) {
    Vec2<T> f = query_flow(node.fields, params, x, tn, tau);
    Vec2<T> resid{x.x + f.x - x_target.x, x.y + f.y - x_target.y};
    double err = std::sqrt(double(resid.x) * double(resid.x) + double(resid.y) * double(resid.y));
    if (err < best_err) {
      best_err = err;
      best.x = {double(x.x), double(x.y)};
      best.iterations = it + 1;
    }
    if (err < tol) {
      best.converged = true;
      return best;
    }
    x = {x_target.x - f.x, x_target.y - f.y};
  }
  best.converged = best_err < tol;
  return best;
}

template <typename T>
EditTexture<T> project_texture(const SceneGraph<T>& g, const std::string& node_id,
                               const Image& rgba, int reference_frame, double tau) {
  int ni = g.node_index(node_id);
  NAG_CHECK(ni >= 0, "unknown node id: " + node_id);
  NAG_CHECK(rgba.c == 4 || rgba.c == 3, "texture must be RGB or RGBA");
  NAG_CHECK(reference_frame >= 0 && reference_frame < g.frame_count,
            "reference frame out of range");
  const AtlasNode<T>& node = g.nodes[ni];
  const T* params = g.params.values.data();
  T t = g.frame_time(reference_frame);
  PlanePose<T> plane = node.pose_at(t, params);
  PlanePose<T> cam = track_pose(g.camera.track, t, params);
  const CameraIntrinsics<T>& intr = g.camera.intrinsics;

  EditTexture<T> edit;
  int w = node.base_color.w, h = node.base_color.h;
  edit.color.resize(w, h, 3, T(0));
  edit.alpha.resize(w, h, 1, T(0));
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      Vec2<T> canonical{(T(i) + T(0.5)) / T(w), (T(j) + T(0.5)) / T(h)};
      FlowInverse inv = invert_flow(node, params, canonical, t, tau);
      if (!inv.converged) continue;  // texel left unedited
      Vec2<T> x{T(inv.x.x), T(inv.x.y)};
      Vec3<T> world = plane_to_world(x, plane, node.extent);
      Vec3<T> local = rotate_inv(cam.q, world - cam.p);
      if (local.z <= T(1e-6)) continue;
      T px = intr.focal * local.x / local.z + intr.principal.x;
      T py = intr.focal * local.y / local.z + intr.principal.y;
      if (px < 0 || px > T(intr.width) || py < 0 || py > T(intr.height)) continue;
      double uv[2] = {double(px) / intr.width, double(py) / intr.height};
      double sample[4] = {0, 0, 0, 1};
      sample_grid(rgba, Vec2<double>{uv[0], uv[1]}, sample);
      T* c = edit.color.at(i, j);
      c[0] = T(sample[0]);
      c[1] = T(sample[1]);
      c[2] = T(sample[2]);
      *edit.alpha.at(i, j) = rgba.c == 4 ? T(sample[3]) : T(1);
    }
  }
  return edit;
}

template <typename T>
Vec3<T> blend_color(Vec3<T> base, const EditTexture<T>& edit, Vec2<T> x) {
  T a;
  sample_grid(edit.alpha, x, &a);
  if (a <= 0) return base;
  T c[3];
  sample_grid(edit.color, x, c);
  return {(T(1) - a) * base.x + a * c[0], (T(1) - a) * base.y + a * c[1],
          (T(1) - a) * base.z + a * c[2]};
}

template <typename T>
SceneGraph<T> apply_script(const SceneGraph<T>& g, const EditScript& script,
                           const Dataset* /*data_for_textures*/) {
  SceneGraph<T> out = g;
  for (const EditOp& op : script.ops) {
    int ni = out.node_index(op.node);
    NAG_CHECK(ni >= 0, "edit references unknown node '" + op.node + "'");
    AtlasNode<T>& node = out.nodes[ni];
    switch (op.kind) {
      case EditOp::kRemove:
        NAG_CHECK(!node.is_background, "the background node cannot be removed");
        out.nodes.erase(out.nodes.begin() + ni);
        break;
      case EditOp::kDuplicate: {
        AtlasNode<T> copy = node;
        std::string id = op.node + "+copy";
        while (out.node_index(id) >= 0) id += "'";
        copy.id = id;
        Vec3<T> d{T(op.translation.x), T(op.translation.y), T(op.translation.z)};
        if (copy.is_background) {
          copy.bg_pose.p += d;
        } else {
          for (auto& p : copy.track.base_t) p += d;
        }
        if (out.frame_count > 1) copy.time_offset += T(op.dt_frames) / T(out.frame_count - 1);
        out.nodes.push_back(std::move(copy));
        break;
      }
      case EditOp::kTranslate: {
        Vec3<T> d{T(op.translation.x), T(op.translation.y), T(op.translation.z)};
        if (node.is_background)
          node.bg_pose.p += d;
        else
          for (auto& p : node.track.base_t) p += d;
        break;
      }
      case EditOp::kTimeShift:
        if (out.frame_count > 1) node.time_offset += T(op.dt_frames) / T(out.frame_count - 1);
        break;
      case EditOp::kTexture: {
        Image tex = op.texture.empty() ? read_png(op.image) : op.texture;
        EditTexture<T> e = project_texture(out, op.node, tex, op.reference_frame);
        out.edits.push_back(std::move(e));
        out.nodes[out.node_index(op.node)].edit = int(out.edits.size()) - 1;
        break;
      }
    }
  }
  return out;
}

template FlowInverse invert_flow(const AtlasNode<float>&, const float*, Vec2<float>, float,
                                 double, int, double);
template FlowInverse invert_flow(const AtlasNode<double>&, const double*, Vec2<double>, double,
                                 double, int, double);
template EditTexture<float> project_texture(const SceneGraph<float>&, const std::string&,
                                             const Image&, int, double);
template EditTexture<double> project_texture(const SceneGraph<double>&, const std::string&,
                                             const Image&, int, double);
template Vec3<float> blend_color(Vec3<float>, const EditTexture<float>&, Vec2<float>);
template Vec3<double> blend_color(Vec3<double>, const EditTexture<double>&, Vec2<double>);
template SceneGraph<float> apply_script(const SceneGraph<float>&, const EditScript&,
                                        const Dataset*);
template SceneGraph<double> apply_script(const SceneGraph<double>&, const EditScript&,
                                         const Dataset*);

}  // namespace nag
