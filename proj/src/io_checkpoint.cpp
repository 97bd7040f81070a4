// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// .nag container: one JSON header line (structure, config, rng state)
// followed by raw little-endian float blocks in declaration order. Values
// round-trip bitwise; loading into double widens f32 files losslessly.

#include <fstream>

#include "json.hpp"
#include "nag/io.h"

using nlohmann::json;

namespace nag {

namespace {

constexpr int kVersion = 1;

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
void write_block(std::ostream& os, const T* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(T)));
}

// Reads a block stored as S into memory of type T (T == S or widening).
template <typename T, typename S>
void read_block(std::istream& is, T* p, size_t n, const std::string& path) {
  std::vector<S> tmp(n);
  is.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(n * sizeof(S)));
  NAG_CHECK(size_t(is.gcount()) == n * sizeof(S), "truncated checkpoint: " + path);
  for (size_t i = 0; i < n; ++i) p[i] = T(tmp[i]);
}

json config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batches_per_epoch"] = c.batches_per_epoch;
  j["rays_per_batch"] = c.rays_per_batch;
  j["timestamps_per_batch"] = c.timestamps_per_batch;
  j["beta"] = c.beta;
  j["lr"] = c.lr;
  j["plateau_factor"] = c.plateau_factor;
  j["plateau_patience"] = c.plateau_patience;
  j["plateau_threshold"] = c.plateau_threshold;
  j["phase1"] = c.phase1;
  j["phase2"] = c.phase2;
  j["eta_t"] = c.eta_t;
  j["eta_r"] = c.eta_r;
  j["seed"] = c.seed;
  j["use_flow"] = c.use_flow;
  j["use_view"] = c.use_view;
  j["use_mask_loss"] = c.use_mask_loss;
  j["eval_rays"] = c.eval_rays;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs");
  c.batches_per_epoch = j.at("batches_per_epoch");
  c.rays_per_batch = j.at("rays_per_batch");
  c.timestamps_per_batch = j.at("timestamps_per_batch");
  c.beta = j.at("beta");
  c.lr = j.at("lr");
  c.plateau_factor = j.at("plateau_factor");
  c.plateau_patience = j.at("plateau_patience");
  c.plateau_threshold = j.at("plateau_threshold");
  c.phase1 = j.at("phase1");
  c.phase2 = j.at("phase2");
  c.eta_t = j.at("eta_t");
  c.eta_r = j.at("eta_r");
  c.seed = j.at("seed");
  c.use_flow = j.at("use_flow");
  c.use_view = j.at("use_view");
  c.use_mask_loss = j.at("use_mask_loss");
  c.eval_rays = j.at("eval_rays");
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const SceneGraph<T>& g, const TrainConfig& cfg,
                     const std::string& rng_state) {
  json h;
  h["magic"] = "NAGCKPT";
  h["version"] = kVersion;
  h["dtype"] = dtype_name<T>();
  h["frame_count"] = g.frame_count;
  h["width"] = g.camera.intrinsics.width;
  h["height"] = g.camera.intrinsics.height;
  h["control_points"] = g.camera.track.off_t.P;
  h["params"] = g.params.size();
  h["rng"] = rng_state;
  h["config"] = config_to_json(cfg);
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    json nj;
    nj["id"] = n.id;
    nj["background"] = n.is_background;
    nj["mask_track"] = n.mask_track;
    nj["pf"] = n.fields.pf;
    nj["grid_w"] = n.base_color.w;
    nj["grid_h"] = n.base_color.h;
    nodes.push_back(std::move(nj));
  }
  h["nodes"] = std::move(nodes);

  std::ofstream os(path, std::ios::binary);
  NAG_CHECK(os.good(), "cannot open checkpoint for writing: " + path);
  os << h.dump() << "\n";

  T intr[3] = {g.camera.intrinsics.focal, g.camera.intrinsics.principal.x,
               g.camera.intrinsics.principal.y};
  write_block(os, intr, 3);
  write_block(os, g.params.values.data(), g.params.values.size());
  write_block(os, &g.camera.track.base_t[0].x, size_t(g.frame_count) * 3);
  write_block(os, &g.camera.track.base_r[0].w, size_t(g.frame_count) * 4);
  for (const auto& n : g.nodes) {
    T misc[3] = {n.extent.x, n.extent.y, n.time_offset};
    write_block(os, misc, 3);
    if (n.is_background) {
      T pose[7] = {n.bg_pose.q.w, n.bg_pose.q.x, n.bg_pose.q.y, n.bg_pose.q.z,
                   n.bg_pose.p.x, n.bg_pose.p.y, n.bg_pose.p.z};
      write_block(os, pose, 7);
    } else {
      write_block(os, &n.track.base_t[0].x, size_t(g.frame_count) * 3);
      write_block(os, &n.track.base_r[0].w, size_t(g.frame_count) * 4);
    }
    write_block(os, n.base_color.v.data(), n.base_color.v.size());
    if (!n.is_background) write_block(os, n.base_alpha.v.data(), n.base_alpha.v.size());
  }
  NAG_CHECK(os.good(), "write failed: " + path);
}

template <typename T, typename S>
static LoadedCheckpoint<T> load_blocks(std::istream& is, const json& h,
                                       const std::string& path) {
  LoadedCheckpoint<T> out;
  out.config = config_from_json(h.at("config"));
  out.rng_state = h.at("rng");
  SceneGraph<T>& g = out.graph;
  g.frame_count = h.at("frame_count");
  g.camera.intrinsics.width = h.at("width");
  g.camera.intrinsics.height = h.at("height");
  int F = g.frame_count;

  T intr[3];
  read_block<T, S>(is, intr, 3, path);
  g.camera.intrinsics.focal = intr[0];
  g.camera.intrinsics.principal = {intr[1], intr[2]};

  // rebuild nodes, then the registry in the same declaration order
  const json& nodes = h.at("nodes");
  for (const json& nj : nodes) {
    AtlasNode<T> n;
    n.id = nj.at("id");
    n.is_background = nj.at("background");
    n.mask_track = nj.at("mask_track");
    n.fields.pf = nj.at("pf");
    int w = nj.at("grid_w"), hh = nj.at("grid_h");
    n.base_color.resize(w, hh, 3);
    if (!n.is_background) {
      n.base_alpha.resize(w, hh, 1);
      n.track.base_t.resize(F);
      n.track.base_r.resize(F);
    }
    g.nodes.push_back(std::move(n));
  }
  g.camera.track.base_t.resize(F);
  g.camera.track.base_r.resize(F);

  GraphConfig gc;
  gc.control_points = h.at("control_points");
  register_graph_params(g, gc);
  NAG_CHECK(g.params.size() == size_t(h.at("params")),
            "parameter layout mismatch in " + path);

  read_block<T, S>(is, g.params.values.data(), g.params.values.size(), path);
  read_block<T, S>(is, &g.camera.track.base_t[0].x, size_t(F) * 3, path);
  read_block<T, S>(is, &g.camera.track.base_r[0].w, size_t(F) * 4, path);
  for (auto& n : g.nodes) {
    T misc[3];
    read_block<T, S>(is, misc, 3, path);
    n.extent = {misc[0], misc[1]};
    n.time_offset = misc[2];
    if (n.is_background) {
      T pose[7];
      read_block<T, S>(is, pose, 7, path);
      n.bg_pose.q = {pose[0], pose[1], pose[2], pose[3]};
      n.bg_pose.p = {pose[4], pose[5], pose[6]};
    } else {
      read_block<T, S>(is, &n.track.base_t[0].x, size_t(F) * 3, path);
      read_block<T, S>(is, &n.track.base_r[0].w, size_t(F) * 4, path);
    }
    read_block<T, S>(is, n.base_color.v.data(), n.base_color.v.size(), path);
    if (!n.is_background) read_block<T, S>(is, n.base_alpha.v.data(), n.base_alpha.v.size(), path);
    n.track.eta_t = T(out.config.eta_t);
    n.track.eta_r = T(out.config.eta_r);
  }
  g.camera.track.eta_t = T(out.config.eta_t);
  g.camera.track.eta_r = T(out.config.eta_r);

  is.peek();
  NAG_CHECK(is.eof(), "trailing bytes in checkpoint: " + path);
  g.validate();
  return out;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  NAG_CHECK(is.good(), "cannot open checkpoint: " + path);
  std::string line;
  NAG_CHECK(bool(std::getline(is, line)), "empty checkpoint: " + path);
  json h;
  try {
    h = json::parse(line);
  } catch (const std::exception& e) {
    throw Error("corrupt checkpoint header in " + path + ": " + e.what());
  }
  NAG_CHECK(h.value("magic", "") == "NAGCKPT", "not a .nag checkpoint: " + path);
  NAG_CHECK(int(h.at("version")) == kVersion,
            "unsupported checkpoint version " + std::to_string(int(h.at("version"))) + " in " +
                path);
  std::string dtype = h.at("dtype");
  if (dtype == dtype_name<T>())
    return load_blocks<T, T>(is, h, path);
  if (dtype == "f32" && sizeof(T) == 8)
    return load_blocks<T, float>(is, h, path);  // lossless widening
  throw Error("checkpoint dtype " + dtype + " cannot be loaded at this precision: " + path);
}

std::string checkpoint_dtype(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  NAG_CHECK(is.good(), "cannot open checkpoint: " + path);
  std::string line;
  NAG_CHECK(bool(std::getline(is, line)), "empty checkpoint: " + path);
  json h;
  try {
    h = json::parse(line);
  } catch (const std::exception& e) {
    throw Error("corrupt checkpoint header in " + path + ": " + e.what());
  }
  return h.at("dtype");
}

template void save_checkpoint(const std::string&, const SceneGraph<float>&, const TrainConfig&,
                              const std::string&);
template void save_checkpoint(const std::string&, const SceneGraph<double>&, const TrainConfig&,
                              const std::string&);
template LoadedCheckpoint<float> load_checkpoint(const std::string&);
template LoadedCheckpoint<double> load_checkpoint(const std::string&);

}  // namespace nag
