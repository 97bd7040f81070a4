// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include "nag/optimize.h"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "nag/io.h"

namespace nag {

void TrainConfig::validate() const {
  NAG_CHECK(epochs >= 0, "epochs must be nonnegative");
  NAG_CHECK(batches_per_epoch > 0 && rays_per_batch > 0 && timestamps_per_batch > 0,
            "batch shape must be positive");
  NAG_CHECK(lr > 0 && beta >= 0, "lr must be positive");
  NAG_CHECK(plateau_factor > 0 && plateau_factor <= 1 && plateau_patience >= 0,
            "bad plateau settings");
  NAG_CHECK(phase1 >= 0 && phase1 <= phase2, "phase boundaries must be ordered");
  NAG_CHECK(eta_t >= 0 && eta_r >= 0, "eta weights must be nonnegative");
}

double tau_schedule(int epoch, int max_epoch) {
  NAG_CHECK(max_epoch > 0 && epoch >= 0 && epoch <= max_epoch, "epoch outside [0, max_epoch]");
  constexpr double pi = 3.14159265358979323846;
  double ang = double(epoch) * pi / (1.6 * double(max_epoch));
  if (ang > pi / 2) ang = pi / 2;  // cap keeps the schedule monotone
  double tau = 0.05 + std::sin(ang);
  return tau < 0.05 ? 0.05 : (tau > 1.0 ? 1.0 : tau);
}

template <typename T>
std::vector<char> phase_gate(int epoch, const TrainConfig& cfg, const ParamRegistry<T>& reg) {
  std::vector<char> gate(reg.groups.size(), 0);
  for (size_t i = 0; i < reg.groups.size(); ++i) {
    GroupKind k = reg.groups[i].kind;
    bool pose = k == GroupKind::kCameraOffsets || k == GroupKind::kNodeOffsets;
    bool appearance = k == GroupKind::kColorMlp || k == GroupKind::kColorTables ||
                      k == GroupKind::kAlphaMlp || k == GroupKind::kAlphaTables;
    bool on;
    if (epoch < cfg.phase1)
      on = pose;
    else if (epoch < cfg.phase2)
      on = pose || appearance;
    else
      on = true;
    gate[i] = on ? 1 : 0;
  }
  return gate;
}

template <typename T>
void OptimizerState<T>::init(const ParamRegistry<T>& reg, double lr_) {
  lr = lr_;
  step_count = 0;
  m.assign(reg.size(), T(0));
  v.assign(reg.size(), T(0));
  block_dirty.assign((reg.size() + ParamRegistry<T>::kBlock - 1) / ParamRegistry<T>::kBlock, 0);
}

template <typename T>
void OptimizerState<T>::mark_dirty_range(size_t begin, size_t end) {
  if (end <= begin) return;
  for (size_t b = begin >> 10; b <= (end - 1) >> 10; ++b) block_dirty[b] = 1;
}

template <typename T>
void step(OptimizerState<T>& st, ParamRegistry<T>& reg, const std::vector<char>& gate) {
  NAG_CHECK(gate.size() == reg.groups.size(), "trainable-group mask size mismatch");
  NAG_CHECK(st.m.size() == reg.size(), "optimizer state size mismatch");
  st.step_count += 1;
  const T b1 = T(st.beta1), b2 = T(st.beta2);
  const T bc1 = T(1) - T(std::pow(st.beta1, double(st.step_count)));
  const T bc2 = T(1) - T(std::pow(st.beta2, double(st.step_count)));
  const T lr = T(st.lr), eps = T(st.eps);
  constexpr size_t kB = ParamRegistry<T>::kBlock;

  for (size_t gi = 0; gi < reg.groups.size(); ++gi) {
    if (!gate[gi]) continue;
    const ParamGroup& grp = reg.groups[gi];
    if (grp.size == 0) continue;
    size_t b_lo = grp.offset / kB, b_hi = (grp.offset + grp.size - 1) / kB;
#pragma omp parallel for schedule(static)
    for (long b = long(b_lo); b <= long(b_hi); ++b) {
      if (!st.block_dirty[b] && !reg.touched[b]) continue;  // exactly a no-op
      st.block_dirty[b] = 1;
      size_t lo = std::max(grp.offset, size_t(b) * kB);
      size_t hi = std::min(grp.offset + grp.size, (size_t(b) + 1) * kB);
      T* p = reg.values.data();
      T* g = reg.grads.data();
      T* m = st.m.data();
      T* v = st.v.data();
      for (size_t i = lo; i < hi; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        T mh = m[i] / bc1;
        T vh = v[i] / bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
        g[i] = 0;
      }
    }
  }
  // consumed gradients: clear the touch flags of gated ranges
  for (size_t gi = 0; gi < reg.groups.size(); ++gi) {
    if (!gate[gi] || reg.groups[gi].size == 0) continue;
    const ParamGroup& grp = reg.groups[gi];
    for (size_t b = grp.offset / kB; b <= (grp.offset + grp.size - 1) / kB; ++b)
      reg.touched[b] = 0;
  }
}

template <typename T>
Batch<T> sample_batch(const Dataset& data, int n_spatial, int n_time, Rng& rng) {
  NAG_CHECK(n_spatial >= 1 && n_time >= 1, "batch shape must be positive");
  int F = data.frame_count();
  NAG_CHECK(n_time <= F, "timestamps_per_batch exceeds the frame count");
  int W = data.width(), H = data.height();

  std::vector<int> ids(F);
  std::iota(ids.begin(), ids.end(), 0);
  for (int k = 0; k < n_time; ++k) {
    int j = k + int(rng.below(uint64_t(F - k)));
    std::swap(ids[k], ids[j]);
  }
  std::vector<std::pair<int, int>> px(n_spatial);
  for (int s = 0; s < n_spatial; ++s)
    px[s] = {int(rng.below(uint64_t(W))), int(rng.below(uint64_t(H)))};

  Batch<T> b;
  int n_tracks = int(data.masks.size());
  b.n_masks = n_tracks;
  b.pixels.reserve(size_t(n_spatial) * n_time);
  b.frames.reserve(size_t(n_spatial) * n_time);
  b.gt.reserve(size_t(n_spatial) * n_time);
  b.masks.reserve(size_t(n_spatial) * n_time * n_tracks);
  for (int s = 0; s < n_spatial; ++s) {
    for (int k = 0; k < n_time; ++k) {
      int f = ids[k];
      b.pixels.push_back({T(px[s].first) + T(0.5), T(px[s].second) + T(0.5)});
      b.frames.push_back(f);
      const double* c = data.frames[f].at(px[s].first, px[s].second);
      b.gt.push_back({T(c[0]), T(c[1]), T(c[2])});
      for (int tr = 0; tr < n_tracks; ++tr)
        b.masks.push_back(data.masks[tr][f].at(px[s].first, px[s].second)[0] > 0.5 ? 1.f : 0.f);
    }
  }
  return b;
}

template <typename T>
void evaluate(const SceneGraph<T>& g, const Dataset& data, const RenderOptions& opt,
              std::vector<double>& psnr_per_frame, std::vector<double>& ssim_per_frame) {
  psnr_per_frame.clear();
  ssim_per_frame.clear();
  for (int f = 0; f < data.frame_count(); ++f) {
    Image pred = quantize8(render_frame(g, f, opt));
    Image ref = quantize8(data.frames[f]);
    psnr_per_frame.push_back(psnr(pred, ref));
    ssim_per_frame.push_back(ssim(pred, ref));
  }
}

namespace {

template <typename T>
double psnr_estimate(const SceneGraph<T>& g, const Dataset& data, double tau, int budget,
                     Rng rng, BatchPipeline<T>& pipe) {
  int W = data.width(), H = data.height(), F = data.frame_count();
  long total = long(W) * H * F;
  int n = int(std::min<long>(budget, total));
  Batch<T> b;
  b.pixels.reserve(n);
  b.frames.reserve(n);
  b.gt.reserve(n);
  for (int i = 0; i < n; ++i) {
    int f = int(rng.below(uint64_t(F)));
    int x = int(rng.below(uint64_t(W)));
    int y = int(rng.below(uint64_t(H)));
    b.pixels.push_back({T(x) + T(0.5), T(y) + T(0.5)});
    b.frames.push_back(f);
    const double* c = data.frames[f].at(x, y);
    b.gt.push_back({T(c[0]), T(c[1]), T(c[2])});
  }
  ActivityMask act;
  RenderOptions opt;
  opt.tau = tau;
  pipe.run(g, b, 0.0, act, opt, nullptr);
  const auto& colors = pipe.colors();
  double mse = 0;
  for (int i = 0; i < n; ++i) {
    double dx = double(colors[i].x) - double(b.gt[i].x);
    double dy = double(colors[i].y) - double(b.gt[i].y);
    double dz = double(colors[i].z) - double(b.gt[i].z);
    mse += dx * dx + dy * dy + dz * dz;
  }
  mse /= 3.0 * n;
  return mse <= 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

}  // namespace

template <typename T>
FitResult fit(SceneGraph<T>& g, const Dataset& data, const TrainConfig& cfg,
              const FitObserver<T>& observer) {
  cfg.validate();
  data.validate();
  NAG_CHECK(cfg.timestamps_per_batch <= data.frame_count(),
            "timestamps_per_batch exceeds the frame count");
  auto t0 = std::chrono::steady_clock::now();

  int threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
  omp_set_num_threads(threads);

  g.camera.track.eta_t = T(cfg.eta_t);
  g.camera.track.eta_r = T(cfg.eta_r);
  for (auto& n : g.nodes) {
    n.track.eta_t = T(cfg.eta_t);
    n.track.eta_r = T(cfg.eta_r);
  }

  Rng master(cfg.seed);
  Rng batch_rng = master.fork(1);
  Rng eval_rng = master.fork(2);

  OptimizerState<T> opt_state;
  opt_state.init(g.params, cfg.lr);
  BatchPipeline<T> pipe;
  BatchPipeline<T> eval_pipe;
  Tape<T> tape;
  FitResult res;

  double best = std::numeric_limits<double>::infinity();
  int bad = 0;

  for (int e = 0; e < cfg.epochs; ++e) {
    double tau = tau_schedule(e, cfg.epochs);
    std::vector<char> gate = phase_gate(e, cfg, g.params);
    for (size_t gi = 0; gi < g.params.groups.size(); ++gi) {
      GroupKind k = g.params.groups[gi].kind;
      if (!cfg.use_flow && (k == GroupKind::kFlowMlp || k == GroupKind::kFlowTables)) gate[gi] = 0;
      if (!cfg.use_view && (k == GroupKind::kViewMlp || k == GroupKind::kViewTables)) gate[gi] = 0;
    }
    ActivityMask act;
    act.use_flow = cfg.use_flow;
    act.use_view = cfg.use_view;
    act.group_grad.assign(gate.begin(), gate.end());
    RenderOptions ropt;
    ropt.tau = tau;

    double esum = 0;
    for (int bi = 0; bi < cfg.batches_per_epoch; ++bi) {
      Batch<T> batch =
          sample_batch<T>(data, cfg.rays_per_batch, cfg.timestamps_per_batch, batch_rng);
      tape.clear();
      BatchStats<T> stats =
          pipe.run(g, batch, cfg.use_mask_loss ? cfg.beta : 0.0, act, ropt, &tape);
      NAG_CHECK(std::isfinite(double(stats.loss)),
                "non-finite loss at epoch " + std::to_string(e) + " batch " + std::to_string(bi));
      tape.backward();
      step(opt_state, g.params, gate);
      esum += double(stats.loss);
    }
    double emean = esum / cfg.batches_per_epoch;

    // reduce-on-plateau, active from the appearance-complete phase onward
    if (e >= cfg.phase2) {
      if (emean < best * (1.0 - cfg.plateau_threshold)) {
        best = emean;
        bad = 0;
      } else if (++bad > cfg.plateau_patience) {
        opt_state.lr *= cfg.plateau_factor;
        bad = 0;
      }
    }

    double p;
    if (e == cfg.epochs - 1) {
      std::vector<double> pf, sf;
      evaluate(g, data, ropt, pf, sf);
      double ps = 0, ss = 0;
      for (double x : pf) ps += x;
      for (double x : sf) ss += x;
      p = ps / pf.size();
      res.final_psnr = p;
      res.final_ssim = ss / sf.size();
    } else {
      p = psnr_estimate(g, data, tau, cfg.eval_rays, eval_rng.fork(uint64_t(e)), eval_pipe);
    }
    res.log.push_back(EpochRow{e, emean, p, opt_state.lr, tau});
    if (observer) observer(e, g);
  }

  if (cfg.epochs == 0) {
    std::vector<double> pf, sf;
    RenderOptions ropt;
    ropt.tau = tau_schedule(0, std::max(1, cfg.epochs));
    evaluate(g, data, ropt, pf, sf);
    double ps = 0, ss = 0;
    for (double x : pf) ps += x;
    for (double x : sf) ss += x;
    res.final_psnr = ps / pf.size();
    res.final_ssim = ss / sf.size();
  }

  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

template std::vector<char> phase_gate(int, const TrainConfig&, const ParamRegistry<float>&);
template std::vector<char> phase_gate(int, const TrainConfig&, const ParamRegistry<double>&);
template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void step(OptimizerState<float>&, ParamRegistry<float>&, const std::vector<char>&);
template void step(OptimizerState<double>&, ParamRegistry<double>&, const std::vector<char>&);
template Batch<float> sample_batch(const Dataset&, int, int, Rng&);
template Batch<double> sample_batch(const Dataset&, int, int, Rng&);
template void evaluate(const SceneGraph<float>&, const Dataset&, const RenderOptions&,
                       std::vector<double>&, std::vector<double>&);
template void evaluate(const SceneGraph<double>&, const Dataset&, const RenderOptions&,
                       std::vector<double>&, std::vector<double>&);
template FitResult fit(SceneGraph<float>&, const Dataset&, const TrainConfig&,
                       const FitObserver<float>&);
template FitResult fit(SceneGraph<double>&, const Dataset&, const TrainConfig&,
                       const FitObserver<double>&);

}  // namespace nag
