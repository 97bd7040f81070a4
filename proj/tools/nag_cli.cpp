// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line frontend for the pipeline: synth, fit, render, decompose,
// edit, eval, gradcheck.

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "nag/editing.h"
#include "nag/io.h"
#include "nag/optimize.h"
#include "nag/renderer.h"

namespace fs = std::filesystem;
using namespace nag;

namespace {

double final_tau(const TrainConfig& cfg) {
  if (cfg.epochs <= 0) return tau_schedule(0, 1);
  return tau_schedule(cfg.epochs - 1, cfg.epochs);
}

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

std::string frame_file(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", i);
  return buf;
}

TrainConfig make_config(const std::string& config_path,
                        const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) apply_train_config(cfg, parse_kv_file(config_path));
  std::map<std::string, std::string> kv;
  for (const std::string& kvs : overrides) {
    size_t eq = kvs.find('=');
    NAG_CHECK(eq != std::string::npos, "--set expects key=value, got '" + kvs + "'");
    kv[kvs.substr(0, eq)] = kvs.substr(eq + 1);
  }
  apply_train_config(cfg, kv);
  return cfg;
}

void parse_frame_range(const std::string& s, int frame_count, int& a, int& b) {
  a = 0;
  b = frame_count - 1;
  if (s.empty()) return;
  size_t dots = s.find("..");
  NAG_CHECK(dots != std::string::npos, "--frames expects a..b");
  a = std::stoi(s.substr(0, dots));
  b = std::stoi(s.substr(dots + 2));
  NAG_CHECK(a >= 0 && b < frame_count && a <= b, "frame range out of bounds");
}

int cmd_synth(uint64_t seed, const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = parse_synth_spec(parse_kv_file(spec_path));
  SynthScene<float> scene = synth_scene<float>(seed, spec);
  save_dataset(out_dir, scene.dataset);
  TrainConfig cfg;
  cfg.seed = seed;
  save_checkpoint((fs::path(out_dir) / "gt.nag").string(), scene.graph, cfg,
                  Rng(seed).state());
  std::cout << "wrote dataset (" << scene.dataset.frame_count() << " frames, "
            << scene.dataset.boxes.size() << " objects) and ground-truth checkpoint to "
            << out_dir << "\n";
  return 0;
}

template <typename T>
int run_fit(const Dataset& data, const TrainConfig& cfg, const std::string& out) {
  GraphConfig gc;
  gc.seed = cfg.seed;
  SceneGraph<T> g = build_graph<T>(data, gc);
  FitResult res = fit(g, data, cfg);
  save_checkpoint(out, g, cfg, res.rng_state);

  std::string log_path = out + ".csv";
  std::ofstream log(log_path);
  log << "epoch,loss,psnr,lr,tau\n";
  for (const EpochRow& r : res.log)
    log << r.epoch << "," << r.loss << "," << r.psnr << "," << r.lr << "," << r.tau << "\n";
  std::cout << "fit finished in " << res.seconds << " s; final PSNR " << res.final_psnr
            << " dB, SSIM " << res.final_ssim << "\n"
            << "checkpoint: " << out << "\nmetrics log: " << log_path << "\n";
  return 0;
}

template <typename T>
int run_render(const std::string& ckpt, const std::string& out_dir, const std::string& frames) {
  LoadedCheckpoint<T> lc = load_checkpoint<T>(ckpt);
  int a, b;
  parse_frame_range(frames, lc.graph.frame_count, a, b);
  fs::create_directories(out_dir);
  RenderOptions opt;
  opt.tau = final_tau(lc.config);
  for (int f = a; f <= b; ++f)
    write_png((fs::path(out_dir) / frame_file(f)).string(), render_frame(lc.graph, f, opt));
  std::cout << "rendered frames " << a << ".." << b << " to " << out_dir << "\n";
  return 0;
}

template <typename T>
int run_decompose(const std::string& ckpt, const std::string& node, const std::string& out_dir) {
  LoadedCheckpoint<T> lc = load_checkpoint<T>(ckpt);
  NAG_CHECK(lc.graph.node_index(node) >= 0, "unknown node id: " + node);
  fs::create_directories(out_dir);
  RenderOptions opt;
  opt.tau = final_tau(lc.config);
  for (int f = 0; f < lc.graph.frame_count; ++f)
    write_png((fs::path(out_dir) / frame_file(f)).string(),
              render_layer(lc.graph, node, f, opt));
  std::cout << "wrote RGBA layers for node '" << node << "' to " << out_dir << "\n";
  return 0;
}

template <typename T>
int run_edit(const std::string& ckpt, const std::string& script_path,
             const std::string& out_dir) {
  LoadedCheckpoint<T> lc = load_checkpoint<T>(ckpt);
  std::ifstream f(script_path);
  NAG_CHECK(f.good(), "cannot open edit script '" + script_path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  EditScript script = parse_edit_script(ss.str());
  SceneGraph<T> edited = apply_script(lc.graph, script);
  fs::create_directories(out_dir);
  RenderOptions opt;
  opt.tau = final_tau(lc.config);
  for (int fr = 0; fr < edited.frame_count; ++fr)
    write_png((fs::path(out_dir) / frame_file(fr)).string(), render_frame(edited, fr, opt));
  std::cout << "applied " << script.ops.size() << " edit ops and rendered to " << out_dir
            << "\n";
  return 0;
}

template <typename T>
int run_eval(const std::string& ckpt, const std::string& data_dir) {
  LoadedCheckpoint<T> lc = load_checkpoint<T>(ckpt);
  Dataset data = load_dataset(data_dir);
  NAG_CHECK(data.frame_count() == lc.graph.frame_count, "frame count mismatch");
  RenderOptions opt;
  opt.tau = final_tau(lc.config);
  std::vector<double> pf, sf;
  evaluate(lc.graph, data, opt, pf, sf);
  double ps = 0, ss = 0;
  for (int f = 0; f < int(pf.size()); ++f) {
    std::cout << "frame " << f << ": PSNR " << pf[f] << " dB, SSIM " << sf[f] << "\n";
    ps += pf[f];
    ss += sf[f];
  }
  std::cout << "mean: PSNR " << ps / pf.size() << " dB, SSIM " << ss / sf.size() << "\n";
  return 0;
}

int run_gradcheck(const std::string& ckpt, int samples, const std::string& data_dir,
                  uint64_t seed) {
  // gradients are verified at 64-bit precision
  LoadedCheckpoint<double> lc = load_checkpoint<double>(ckpt);
  SceneGraph<double>& g = lc.graph;

  Batch<double> batch;
  if (!data_dir.empty()) {
    Dataset data = load_dataset(data_dir);
    Rng rng(seed);
    batch = sample_batch<double>(data, 128, std::min(2, data.frame_count()), rng);
  } else {
    // constant targets exercise the same gradient paths
    Rng rng(seed);
    int W = g.camera.intrinsics.width, H = g.camera.intrinsics.height;
    for (int i = 0; i < 256; ++i) {
      batch.pixels.push_back({double(rng.below(W)) + 0.5, double(rng.below(H)) + 0.5});
      batch.frames.push_back(int(rng.below(uint64_t(g.frame_count))));
      batch.gt.push_back({0.5, 0.5, 0.5});
    }
  }

  BatchPipeline<double> pipe;
  Tape<double> tape;
  ActivityMask act;
  RenderOptions opt;
  opt.tau = final_tau(lc.config);
  auto f = [&](bool with_grad) -> double {
    if (with_grad) {
      tape.clear();
      BatchStats<double> st = pipe.run(g, batch, lc.config.beta, act, opt, &tape);
      tape.backward();
      return double(st.loss);
    }
    BatchStats<double> st = pipe.run(g, batch, lc.config.beta, act, opt, nullptr);
    return double(st.loss);
  };
  GradCheckReport rep = grad_check(f, g.params, 1e-5, samples, seed);
  std::cout << "gradcheck: " << rep.checked << " parameters, max relative error "
            << rep.max_rel_err << " (group " << rep.worst.group << ", ad " << rep.worst.ad
            << ", fd " << rep.worst.fd << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural atlas graph fitting, rendering and editing"};
  app.require_subcommand(1);

  int threads = 0;
  bool fp64 = false;
  app.add_option("--threads", threads, "worker threads (default: all cores)");
  app.add_flag("--fp64", fp64, "use 64-bit floats");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  uint64_t seed = 0;
  std::string spec_path, out_path, data_path, ckpt_path, config_path, node_id, script_path,
      frames;
  std::vector<std::string> sets;
  synth->add_option("--seed", seed, "rng seed");
  synth->add_option("--spec", spec_path, "scene spec file (key=value lines)");
  synth->add_option("--out", out_path, "output dataset directory")->required();

  auto* fitc = app.add_subcommand("fit", "fit a graph to a dataset");
  fitc->add_option("--data", data_path, "dataset directory")->required();
  fitc->add_option("--out", out_path, "output checkpoint (.nag)")->required();
  fitc->add_option("--config", config_path, "training config file");
  fitc->add_option("--set", sets, "override a config key (key=value)");

  auto* render = app.add_subcommand("render", "render frames from a checkpoint");
  render->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  render->add_option("--out", out_path, "output directory")->required();
  render->add_option("--frames", frames, "frame range a..b");

  auto* dec = app.add_subcommand("decompose", "render one node's RGBA layers");
  dec->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  dec->add_option("--node", node_id, "node id")->required();
  dec->add_option("--out", out_path, "output directory")->required();

  auto* edit = app.add_subcommand("edit", "apply an edit script and render");
  edit->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  edit->add_option("--script", script_path, "edit script")->required();
  edit->add_option("--out", out_path, "output directory")->required();

  auto* evalc = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint against a dataset");
  evalc->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  evalc->add_option("--data", data_path, "dataset directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  int samples = 200;
  gc->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  gc->add_option("--samples", samples, "parameters to check");
  gc->add_option("--data", data_path, "dataset directory (optional)");
  gc->add_option("--seed", seed, "rng seed");

  CLI11_PARSE(app, argc, argv);
  set_threads(threads);

  try {
    if (synth->parsed()) return cmd_synth(seed, spec_path, out_path);
    if (fitc->parsed()) {
      Dataset data = load_dataset(data_path);
      TrainConfig cfg = make_config(config_path, sets);
      if (threads > 0) cfg.threads = threads;
      return fp64 ? run_fit<double>(data, cfg, out_path) : run_fit<float>(data, cfg, out_path);
    }
    bool f64 = fp64;
    if (!ckpt_path.empty() && checkpoint_dtype(ckpt_path) == "f64") f64 = true;
    if (render->parsed())
      return f64 ? run_render<double>(ckpt_path, out_path, frames)
                 : run_render<float>(ckpt_path, out_path, frames);
    if (dec->parsed())
      return f64 ? run_decompose<double>(ckpt_path, node_id, out_path)
                 : run_decompose<float>(ckpt_path, node_id, out_path);
    if (edit->parsed())
      return f64 ? run_edit<double>(ckpt_path, script_path, out_path)
                 : run_edit<float>(ckpt_path, script_path, out_path);
    if (evalc->parsed())
      return f64 ? run_eval<double>(ckpt_path, data_path) : run_eval<float>(ckpt_path, data_path);
    if (gc->parsed()) return run_gradcheck(ckpt_path, samples, data_path, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
