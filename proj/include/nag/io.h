// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout, PNG images, the .nag checkpoint container,
// PSNR/SSIM metrics, key=value config files, and the synthetic scene
// generator backing the test suites.

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nag/dataset.h"
#include "nag/image.h"
#include "nag/optimize.h"
#include "nag/scenegraph.h"

namespace nag {

// --- PNG ------------------------------------------------------------------

Image read_png(const std::string& path);                 // 1, 3 or 4 channels
void write_png(const std::string& path, const Image& img);

// --- Dataset directories ----------------------------------------------------
//
//   frames/%05d.png             8-bit RGB
//   masks/node_%03d/%05d.png    8-bit grayscale, 0 or 255
//   camera.json                 fx fy cx cy width height extrinsics[F][16]
//   nodes.json                  [{id, center[F][3], rotation[F][4], size[F][3]}]

Dataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Dataset& data);

// --- Checkpoints ------------------------------------------------------------
// Text JSON header (version, dtype, shapes, train config, rng state)
// terminated by '\n', then little-endian float blocks in declaration order.

template <typename T>
void save_checkpoint(const std::string& path, const SceneGraph<T>& g,
                     const TrainConfig& cfg, const std::string& rng_state = "");

template <typename T>
struct LoadedCheckpoint {
  SceneGraph<T> graph;
  TrainConfig config;
  std::string rng_state;
};

// Loading into double accepts f32 checkpoints (lossless widening); loading
// into float requires an f32 file.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

// Header-only peek, used to dispatch on a file's precision.
std::string checkpoint_dtype(const std::string& path);

// --- Metrics ----------------------------------------------------------------

// 10*log10(1/MSE) over all pixels and channels; +inf for identical images.
double psnr(const Image& a, const Image& b);

// Mean local SSIM on luminance, 11x11 Gaussian window sigma 1.5,
// K1=0.01 K2=0.03, dynamic range 1. Errors on images smaller than the window.
double ssim(const Image& a, const Image& b);

// --- Config files -----------------------------------------------------------
// One key=value per line; '#' starts a comment.

std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

// Applies recognized keys onto a TrainConfig; unknown keys are an error.
void apply_train_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);

// --- Synthetic scenes ---------------------------------------------------------

struct SynthSpec {
  int frames = 16;
  int width = 96, height = 64;
  int nodes = 3;
  double motion = 1.0;        // horizontal sweep scale (world units at z~6)
  double wobble = 0.15;       // vertical sine amplitude
  double camera_shake = 0.0;  // per-frame extrinsic noise
  double flow_amp = 0.0;      // nonzero rigs a ground-truth flow field
  double view_amp = 0.0;      // nonzero rigs ground-truth view-dependent color
  double texture_detail = 1.0;
};

SynthSpec parse_synth_spec(const std::map<std::string, std::string>& kv);

template <typename T>
struct SynthScene {
  Dataset dataset;       // float-precision frames (not yet 8-bit quantized)
  SceneGraph<T> graph;   // generator ground truth
};

// Textured planes on spline trajectories rendered with this repository's
// renderer; masks are per-node visibility thresholded at opacity 0.5.
// Deterministic under seed.
template <typename T>
SynthScene<T> synth_scene(uint64_t seed, const SynthSpec& spec);

}  // namespace nag
