// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "nag/io.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nag {

namespace {

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", i);
  return buf;
}

std::string node_dir(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "node_%03d", i);
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  NAG_CHECK(f.good(), "missing file: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw Error("cannot parse " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  fs::path root(dir);
  NAG_CHECK(fs::is_directory(root), "dataset directory not found: " + dir);

  json cam = read_json(root / "camera.json");
  Dataset data;
  double fx = cam.at("fx"), fy = cam.at("fy");
  NAG_CHECK(std::abs(fx - fy) <= 1e-9 * std::max(std::abs(fx), 1.0),
            "anisotropic focal lengths are not supported");
  data.intrinsics.focal = fx;
  data.intrinsics.principal = {cam.at("cx"), cam.at("cy")};
  data.intrinsics.width = cam.at("width");
  data.intrinsics.height = cam.at("height");
  const json& extr = cam.at("extrinsics");
  int F = int(extr.size());
  NAG_CHECK(F > 0, "camera.json lists no extrinsics");
  for (int f = 0; f < F; ++f) {
    const json& m = extr[f];
    NAG_CHECK(m.size() == 16, "extrinsics must be row-major 4x4 matrices");
    Vec3<double> u{m[0], m[4], m[8]};
    Vec3<double> v{m[1], m[5], m[9]};
    Vec3<double> n{m[2], m[6], m[10]};
    data.extrinsics.push_back({quat_from_axes(u, v, n), Vec3<double>{m[3], m[7], m[11]}});
  }

  for (int f = 0; f < F; ++f) {
    fs::path p = root / "frames" / frame_name(f);
    NAG_CHECK(fs::exists(p), "missing file: " + p.string());
    Image img = read_png(p.string());
    NAG_CHECK(img.c == 3, "frames must be RGB: " + p.string());
    data.frames.push_back(std::move(img));
  }

  json nodes = read_json(root / "nodes.json");
  bool warned = false;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const json& nj = nodes[i];
    BoxTrack box;
    box.id = nj.at("id");
    for (int f = 0; f < F; ++f) {
      const json& c = nj.at("center")[f];
      const json& r = nj.at("rotation")[f];
      const json& s = nj.at("size")[f];
      box.center.push_back({c[0], c[1], c[2]});
      box.rotation.push_back(normalized(Quat<double>{r[0], r[1], r[2], r[3]}));
      box.size.push_back({s[0], s[1], s[2]});
    }
    data.boxes.push_back(std::move(box));

    std::vector<Image> track;
    for (int f = 0; f < F; ++f) {
      fs::path p = root / "masks" / node_dir(int(i)) / frame_name(f);
      NAG_CHECK(fs::exists(p), "missing file: " + p.string());
      Image m = read_png(p.string());
      NAG_CHECK(m.c == 1, "masks must be grayscale: " + p.string());
      for (double& v : m.v) {
        if (v != 0.0 && v != 1.0) {
          if (!warned) {
            std::cerr << "warning: non-binary mask values in " << p.string()
                      << "; thresholding at 0.5\n";
            warned = true;
          }
          v = v > 0.5 ? 1.0 : 0.0;
        }
      }
      track.push_back(std::move(m));
    }
    data.masks.push_back(std::move(track));
  }

  data.validate();
  return data;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  data.validate();
  fs::path root(dir);
  fs::create_directories(root / "frames");

  json cam;
  cam["fx"] = data.intrinsics.focal;
  cam["fy"] = data.intrinsics.focal;
  cam["cx"] = data.intrinsics.principal.x;
  cam["cy"] = data.intrinsics.principal.y;
  cam["width"] = data.intrinsics.width;
  cam["height"] = data.intrinsics.height;
  json extr = json::array();
  for (const auto& e : data.extrinsics) {
    Vec3<double> u = rotate(e.q, Vec3<double>{1, 0, 0});
    Vec3<double> v = rotate(e.q, Vec3<double>{0, 1, 0});
    Vec3<double> n = rotate(e.q, Vec3<double>{0, 0, 1});
    extr.push_back({u.x, v.x, n.x, e.p.x, u.y, v.y, n.y, e.p.y, u.z, v.z, n.z, e.p.z, 0.0, 0.0,
                    0.0, 1.0});
  }
  cam["extrinsics"] = std::move(extr);
  std::ofstream(root / "camera.json") << cam.dump(1) << "\n";

  for (int f = 0; f < data.frame_count(); ++f)
    write_png((root / "frames" / frame_name(f)).string(), data.frames[f]);

  json nodes = json::array();
  for (size_t i = 0; i < data.boxes.size(); ++i) {
    const BoxTrack& b = data.boxes[i];
    json nj;
    nj["id"] = b.id;
    json centers = json::array(), rots = json::array(), sizes = json::array();
    for (int f = 0; f < data.frame_count(); ++f) {
      centers.push_back({b.center[f].x, b.center[f].y, b.center[f].z});
      rots.push_back({b.rotation[f].w, b.rotation[f].x, b.rotation[f].y, b.rotation[f].z});
      sizes.push_back({b.size[f].x, b.size[f].y, b.size[f].z});
    }
    nj["center"] = std::move(centers);
    nj["rotation"] = std::move(rots);
    nj["size"] = std::move(sizes);
    nodes.push_back(std::move(nj));

    fs::create_directories(root / "masks" / node_dir(int(i)));
    for (int f = 0; f < data.frame_count(); ++f)
      write_png((root / "masks" / node_dir(int(i)) / frame_name(f)).string(),
                data.masks[i][f]);
  }
  std::ofstream(root / "nodes.json") << nodes.dump(1) << "\n";
}

}  // namespace nag
