// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "nag/io.h"

namespace nag {

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    size_t eq = tok.find('=');
    NAG_CHECK(eq != std::string::npos && eq > 0, "expected key=value, got '" + line + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  NAG_CHECK(f.good(), "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_kv_text(ss.str());
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw Error("expected a boolean, got '" + v + "'");
}

}  // namespace

void apply_train_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "epochs") cfg.epochs = std::stoi(v);
    else if (k == "batches_per_epoch") cfg.batches_per_epoch = std::stoi(v);
    else if (k == "rays_per_batch") cfg.rays_per_batch = std::stoi(v);
    else if (k == "timestamps_per_batch") cfg.timestamps_per_batch = std::stoi(v);
    else if (k == "beta") cfg.beta = std::stod(v);
    else if (k == "lr") cfg.lr = std::stod(v);
    else if (k == "plateau_factor") cfg.plateau_factor = std::stod(v);
    else if (k == "plateau_patience") cfg.plateau_patience = std::stoi(v);
    else if (k == "plateau_threshold") cfg.plateau_threshold = std::stod(v);
    else if (k == "phase1") cfg.phase1 = std::stoi(v);
    else if (k == "phase2") cfg.phase2 = std::stoi(v);
    else if (k == "eta_t") cfg.eta_t = std::stod(v);
    else if (k == "eta_r") cfg.eta_r = std::stod(v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "use_flow") cfg.use_flow = parse_bool(v);
    else if (k == "use_view") cfg.use_view = parse_bool(v);
    else if (k == "use_mask_loss") cfg.use_mask_loss = parse_bool(v);
    else if (k == "eval_rays") cfg.eval_rays = std::stoi(v);
    else if (k == "threads") cfg.threads = std::stoi(v);
    else throw Error("unknown training config key '" + k + "'");
  }
}

SynthSpec parse_synth_spec(const std::map<std::string, std::string>& kv) {
  SynthSpec s;
  for (const auto& [k, v] : kv) {
    if (k == "frames") s.frames = std::stoi(v);
    else if (k == "width") s.width = std::stoi(v);
    else if (k == "height") s.height = std::stoi(v);
    else if (k == "nodes") s.nodes = std::stoi(v);
    else if (k == "motion") s.motion = std::stod(v);
    else if (k == "wobble") s.wobble = std::stod(v);
    else if (k == "camera_shake") s.camera_shake = std::stod(v);
    else if (k == "flow_amp") s.flow_amp = std::stod(v);
    else if (k == "view_amp") s.view_amp = std::stod(v);
    else if (k == "texture_detail") s.texture_detail = std::stod(v);
    else throw Error("unknown scene spec key '" + k + "'");
  }
  return s;
}

}  // namespace nag
