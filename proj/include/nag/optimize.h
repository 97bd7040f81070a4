// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// The fitting loop: batch sampling, Adam with reduce-on-plateau, phase
// gating, the coarse-to-fine tau schedule, and fit() driving them.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nag/dataset.h"
#include "nag/renderer.h"
#include "nag/rng.h"
#include "nag/scenegraph.h"

namespace nag {

struct TrainConfig {
  int epochs = 80;
  int batches_per_epoch = 140;
  int rays_per_batch = 100000;     // spatial ray count; each cast at every batch timestamp
  int timestamps_per_batch = 20;
  double beta = 0.005;             // mask-loss weight
  double lr = 1e-3;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_threshold = 1e-4;  // relative improvement on epoch-mean loss
  int phase1 = 5;                   // epochs < phase1: pose offsets only
  int phase2 = 20;                  // epochs < phase2: + color/alpha fields
  double eta_t = 0.5, eta_r = 0.5;
  uint64_t seed = 0;
  bool use_flow = true;
  bool use_view = true;
  bool use_mask_loss = true;
  int eval_rays = 32768;  // per-epoch PSNR estimate; the final epoch is exact
  int threads = 0;        // 0 = all cores

  void validate() const;
};

// Adam with bias correction. Moments cover the whole registry; updates are
// gated per group and skip never-touched parameter blocks (their update is
// exactly zero).
template <typename T>
struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step_count = 0;
  std::vector<T> m, v;
  std::vector<uint8_t> block_dirty;  // sticky, 1024-parameter blocks

  void init(const ParamRegistry<T>& reg, double lr_);
  void mark_dirty(size_t index) { block_dirty[index >> 10] = 1; }
  void mark_dirty_range(size_t begin, size_t end);
};

// One Adam step over the trainable groups; clears the gradients it consumed.
template <typename T>
void step(OptimizerState<T>& state, ParamRegistry<T>& reg,
          const std::vector<char>& trainable_groups);

// Trainable groups per the three-phase schedule.
template <typename T>
std::vector<char> phase_gate(int epoch, const TrainConfig& cfg, const ParamRegistry<T>& reg);

// Coarse-to-fine progress in [0.05, 1], monotone nondecreasing. The raw
// sine argument is capped at pi/2 so the schedule never backs off.
double tau_schedule(int epoch, int max_epoch);

// n_spatial random pixels cast at n_time distinct random frames; batch rows
// are (pixel-major, time-minor). Deterministic under the rng state.
template <typename T>
Batch<T> sample_batch(const Dataset& data, int n_spatial, int n_time, Rng& rng);

struct EpochRow {
  int epoch = 0;
  double loss = 0, psnr = 0, lr = 0, tau = 0;
};

struct FitResult {
  std::vector<EpochRow> log;
  double final_psnr = 0, final_ssim = 0;
  double seconds = 0;
};

// Called after each epoch; epoch is the finished epoch index.
template <typename T>
using FitObserver = std::function<void(int epoch, const SceneGraph<T>&)>;

// Fits the graph to the dataset in place. Throws on non-finite loss.
template <typename T>
FitResult fit(SceneGraph<T>& g, const Dataset& data, const TrainConfig& cfg,
              const FitObserver<T>& observer = {});

// PSNR of full-frame renders against the dataset, quantized to the dataset's
// 8-bit domain. Also what fit() reports for its final epoch.
template <typename T>
void evaluate(const SceneGraph<T>& g, const Dataset& data, const RenderOptions& opt,
              std::vector<double>& psnr_per_frame, std::vector<double>& ssim_per_frame);

}  // namespace nag
