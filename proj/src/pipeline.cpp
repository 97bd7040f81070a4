// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Batched forward/backward over rays. Stages parallelize over rays or hits
// with static schedules; every reduction either writes disjoint slots, sums
// fixed-size blocks in order, or merges per-thread partials in thread order,
// so results are reproducible for a given thread count (and exactly match
// the serial reference shading per ray).

#include <omp.h>

#include <algorithm>
#include <cstring>

#include "detail_grad.h"
#include "detail_shade.h"
#include "nag/renderer.h"

namespace nag {

namespace {
constexpr size_t kSumBlock = 1024;
}

template <typename T>
T block_sum(const T* v, size_t n) {
  size_t nb = (n + kSumBlock - 1) / kSumBlock;
  std::vector<T> partial(nb, T(0));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < long(nb); ++b) {
    size_t lo = size_t(b) * kSumBlock, hi = std::min(n, lo + kSumBlock);
    T s = 0;
    for (size_t i = lo; i < hi; ++i) s += v[i];
    partial[b] = s;
  }
  T total = 0;
  for (size_t b = 0; b < nb; ++b) total += partial[b];
  return total;
}

template <typename T>
T atlas_loss(const std::vector<Vec3<T>>& pred, const std::vector<Vec3<T>>& gt,
             const std::vector<std::vector<std::pair<int, T>>>& node_hits,
             const std::vector<float>& masks, int n_masks, double beta) {
  NAG_CHECK(!pred.empty(), "empty batch");
  NAG_CHECK(pred.size() == gt.size(), "prediction/target size mismatch");
  size_t B = pred.size();
  std::vector<T> part(B);
  for (size_t r = 0; r < B; ++r)
    part[r] = std::abs(pred[r].x - gt[r].x) + std::abs(pred[r].y - gt[r].y) +
              std::abs(pred[r].z - gt[r].z);
  T photo = block_sum(part.data(), B) / T(3 * B);
  T msum = 0;
  long pairs = 0;
  for (size_t track = 0; track < node_hits.size(); ++track) {
    std::vector<T> mp(node_hits[track].size());
    for (size_t h = 0; h < mp.size(); ++h) {
      int ray = node_hits[track][h].first;
      T m = T(masks[size_t(ray) * n_masks + track]);
      mp[h] = std::abs(node_hits[track][h].second - m);
    }
    msum += block_sum(mp.data(), mp.size());
    pairs += long(mp.size());
  }
  return photo + T(beta) * (pairs > 0 ? msum / T(pairs) : T(0));
}

// ---------------------------------------------------------------------------

template <typename T>
struct BatchPipeline<T>::Impl {
  struct NodeWs {
    std::vector<PlanePose<T>> pose;  // per unique frame
    std::vector<T> tnode;            // per unique frame
    // hit data
    std::vector<int> ray;
    std::vector<T> depth;
    std::vector<T> x, phi, xp, xin_v;  // 2H, 2H, 2H, 4H
    std::vector<T> enc_f, acts_f, enc_c, acts_c, enc_a, acts_a, enc_v, acts_v;
    std::vector<T> craw, alogit, alpha, color, edit_a;  // 3H, H, H, 3H, H
    // backward
    std::vector<T> d_color, d_alpha, d_xp, d_x, d_phi;
    std::vector<T> d_enc_f, d_enc_c, d_enc_a, d_enc_v;
    detail::NodeEval ev;
    bool grad_mlp[4] = {false, false, false, false};     // f, c, a, v
    bool grad_tables[4] = {false, false, false, false};  // f, c, a, v
    bool need_pose_grad = false;
    int kept_f = 64, kept_v = 64;
    size_t H() const { return ray.size(); }
  };

  const SceneGraph<T>* g = nullptr;
  const Batch<T>* batch = nullptr;
  double tau = 1, beta = 0;
  ActivityMask act;
  RenderOptions opt;
  bool has_loss = false;
  bool taped = false;

  int B = 0, U = 0, N = 0, nthreads = 1;
  std::vector<int> uframes;        // unique frame ids
  std::vector<T> utimes;           // per unique frame
  std::vector<int> uindex;         // per ray
  std::vector<PlanePose<T>> cam_pose;
  std::vector<Vec3<T>> ray_o, ray_d;
  std::vector<int> rank;
  std::vector<NodeWs> nodes;

  std::vector<int> hit_offset, hit_node, hit_index;
  std::vector<Vec3<T>> color;
  std::vector<T> trans;
  std::vector<T> photo_part;
  BatchStats<T> stats;
  long mask_pairs = 0;

  // backward scratch
  bool need_cam_grad = false, need_geom = false;
  std::vector<Vec3<T>> d_ray_o, d_ray_d;
  std::vector<std::vector<T>> mlp_grad;   // per thread, compact layout
  std::vector<size_t> mlp_goff;           // (node*4 + field) -> offset, SIZE_MAX if none
  size_t mlp_gtotal = 0;
  std::vector<std::vector<T>> pose_adj;   // per thread, (N+1)*U*7 (camera at slot N)

  void forward();
  void backward_seed();
  void backward_node(int i);
  void backward_rays();
  void backward_finalize();

  const Field<T>* field_of(const NodeWs&, int which, const AtlasNode<T>& n) const {
    switch (which) {
      case 0: return &n.fields.flow;
      case 1: return &n.fields.color;
      case 2: return n.fields.has_alpha ? &n.fields.alpha : nullptr;
      default: return &n.fields.view;
    }
  }
};

template <typename T>
static bool final_layer_zero(const Field<T>& f, const T* params) {
  const MlpSpec& m = f.mlp;
  size_t off = f.mlp_offset + m.layer_offset(m.depth - 1);
  size_t n = size_t(m.layer_in(m.depth - 1)) * m.layer_out(m.depth - 1) + m.layer_out(m.depth - 1);
  for (size_t i = 0; i < n; ++i)
    if (params[off + i] != 0) return false;
  return true;
}

template <typename T>
void BatchPipeline<T>::Impl::forward() {
  const SceneGraph<T>& gr = *g;
  const Batch<T>& b = *batch;
  const T* params = gr.params.values.data();
  B = b.size();
  N = int(gr.nodes.size());
  nthreads = omp_get_max_threads();
  has_loss = !b.gt.empty();
  NAG_CHECK(!has_loss || int(b.gt.size()) == B, "gt size mismatch");
  rank = detail::id_ranks(gr);

  // unique frames
  uframes.clear();
  uindex.assign(B, -1);
  for (int r = 0; r < B; ++r) {
    int f = b.frames[r];
    int u = -1;
    for (size_t k = 0; k < uframes.size(); ++k)
      if (uframes[k] == f) u = int(k);
    if (u < 0) {
      uframes.push_back(f);
      u = int(uframes.size()) - 1;
    }
    uindex[r] = u;
  }
  U = int(uframes.size());
  utimes.resize(U);
  cam_pose.resize(U);
  for (int u = 0; u < U; ++u) {
    utimes[u] = gr.frame_time(uframes[u]);
    cam_pose[u] = track_pose(gr.camera.track, utimes[u], params);
  }

  // rays
  ray_o.resize(B);
  ray_d.resize(B);
  const CameraIntrinsics<T>& intr = gr.camera.intrinsics;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < B; ++r) {
    Ray<T> ray = generate_ray(intr, cam_pose[uindex[r]], b.pixels[r]);
    ray_o[r] = ray.origin;
    ray_d[r] = ray.dir;
  }

  // per-node activity
  nodes.resize(N);
  for (int i = 0; i < N; ++i) {
    const AtlasNode<T>& n = gr.nodes[i];
    NodeWs& nd = nodes[i];
    bool gm[4] = {false, false, false, false}, gt_[4] = {false, false, false, false};
    if (taped) {
      const Field<T>* fs[4] = {&n.fields.flow, &n.fields.color,
                               n.fields.has_alpha ? &n.fields.alpha : nullptr, &n.fields.view};
      for (int k = 0; k < 4; ++k)
        if (fs[k]) {
          gm[k] = act.grad_for(fs[k]->mlp_group);
          gt_[k] = act.grad_for(fs[k]->table_group);
        }
    }
    bool live_f = !final_layer_zero(n.fields.flow, params);
    bool live_c = !final_layer_zero(n.fields.color, params);
    bool live_a = n.fields.has_alpha && !final_layer_zero(n.fields.alpha, params);
    bool live_v = !final_layer_zero(n.fields.view, params);
    nd.ev.flow = act.use_flow && (live_f || gm[0] || gt_[0]);
    nd.ev.color = live_c || gm[1] || gt_[1];
    nd.ev.alpha = n.fields.has_alpha && (live_a || gm[2] || gt_[2]);
    nd.ev.view = act.use_view && (live_v || gm[3] || gt_[3]);
    for (int k = 0; k < 4; ++k) {
      nd.grad_mlp[k] = gm[k];
      nd.grad_tables[k] = gt_[k];
    }
    nd.grad_mlp[0] = nd.grad_mlp[0] && nd.ev.flow;
    nd.grad_tables[0] = nd.grad_tables[0] && nd.ev.flow;
    nd.grad_mlp[3] = nd.grad_mlp[3] && nd.ev.view;
    nd.grad_tables[3] = nd.grad_tables[3] && nd.ev.view;
    nd.need_pose_grad =
        taped && !n.is_background && n.offsets_group != size_t(-1) && act.grad_for(n.offsets_group);
    nd.kept_f = active_features(tau, n.fields.flow.cfg);
    nd.kept_v = active_features(tau, n.fields.view.cfg);
  }

  // node poses and hit lists
  for (int i = 0; i < N; ++i) {
    const AtlasNode<T>& n = gr.nodes[i];
    NodeWs& nd = nodes[i];
    nd.pose.resize(U);
    nd.tnode.resize(U);
    for (int u = 0; u < U; ++u) {
      nd.tnode[u] = n.node_time(utimes[u]);
      nd.pose[u] = n.pose_at(utimes[u], params);
    }
    nd.ray.clear();
    nd.depth.clear();
    nd.x.clear();
    nd.phi.clear();
    if (act.solo_node >= 0 && act.solo_node != i) continue;
    for (int r = 0; r < B; ++r) {
      const PlanePose<T>& pose = nd.pose[uindex[r]];
      Ray<T> ray{ray_o[r], ray_d[r]};
      auto hit = intersect_plane(ray, pose);
      if (!hit) continue;
      auto [uv, inside] = plane_coords(hit->second, pose, n.extent);
      if (!inside) continue;
      Vec2<T> phi = view_angle(ray.dir, pose);
      nd.ray.push_back(r);
      nd.depth.push_back(hit->first);
      nd.x.push_back(uv.x);
      nd.x.push_back(uv.y);
      nd.phi.push_back(phi.x);
      nd.phi.push_back(phi.y);
    }
  }

  // shade hits
  for (int i = 0; i < N; ++i) {
    const AtlasNode<T>& n = gr.nodes[i];
    NodeWs& nd = nodes[i];
    size_t H = nd.H();
    const int hidden_acts = n.fields.color.mlp.acts_size();
    nd.xp.resize(2 * H);
    nd.xin_v.resize(4 * H);
    nd.craw.resize(3 * H);
    nd.alogit.resize(H);
    nd.alpha.resize(H);
    nd.color.resize(3 * H);
    nd.edit_a.resize(H);
    bool cap_f = nd.ev.flow && taped, cap_c = nd.ev.color && taped,
         cap_a = nd.ev.alpha && taped, cap_v = nd.ev.view && taped;
    nd.enc_f.resize(cap_f ? 64 * H : 0);
    nd.acts_f.resize(cap_f ? size_t(hidden_acts) * H : 0);
    nd.enc_c.resize(cap_c ? 64 * H : 0);
    nd.acts_c.resize(cap_c ? size_t(hidden_acts) * H : 0);
    nd.enc_a.resize(cap_a ? 64 * H : 0);
    nd.acts_a.resize(cap_a ? size_t(hidden_acts) * H : 0);
    nd.enc_v.resize(cap_v ? 64 * H : 0);
    nd.acts_v.resize(cap_v ? size_t(hidden_acts) * H : 0);
    const EditTexture<T>* edit = n.edit >= 0 ? &gr.edits[n.edit] : nullptr;
#pragma omp parallel for schedule(static)
    for (long h = 0; h < long(H); ++h) {
      detail::ShadeCapture<T> cap;
      T craw[3], alogit, fv_unused[4], edit_a;
      cap.craw = craw;
      cap.alogit = &alogit;
      cap.fv = fv_unused;
      cap.edit_a = &edit_a;
      if (cap_f) {
        cap.enc_f = nd.enc_f.data() + 64 * h;
        cap.acts_f = nd.acts_f.data() + size_t(hidden_acts) * h;
      }
      if (cap_c) {
        cap.enc_c = nd.enc_c.data() + 64 * h;
        cap.acts_c = nd.acts_c.data() + size_t(hidden_acts) * h;
      }
      if (cap_a) {
        cap.enc_a = nd.enc_a.data() + 64 * h;
        cap.acts_a = nd.acts_a.data() + size_t(hidden_acts) * h;
      }
      if (cap_v) {
        cap.enc_v = nd.enc_v.data() + 64 * h;
        cap.acts_v = nd.acts_v.data() + size_t(hidden_acts) * h;
      }
      int u = uindex[nd.ray[h]];
      Vec2<T> x{nd.x[2 * h], nd.x[2 * h + 1]};
      Vec2<T> phi{nd.phi[2 * h], nd.phi[2 * h + 1]};
      detail::NodePoint<T> np = detail::shade_node_point(n, edit, params, x, phi, nd.tnode[u],
                                                         tau, nd.ev, &cap);
      nd.xp[2 * h] = np.xp.x;
      nd.xp[2 * h + 1] = np.xp.y;
      nd.xin_v[4 * h] = np.xp.x;
      nd.xin_v[4 * h + 1] = np.xp.y;
      nd.xin_v[4 * h + 2] = phi.x;
      nd.xin_v[4 * h + 3] = phi.y;
      nd.craw[3 * h] = craw[0];
      nd.craw[3 * h + 1] = craw[1];
      nd.craw[3 * h + 2] = craw[2];
      nd.alogit[h] = alogit;
      nd.alpha[h] = np.opacity;
      nd.color[3 * h] = np.color.x;
      nd.color[3 * h + 1] = np.color.y;
      nd.color[3 * h + 2] = np.color.z;
      nd.edit_a[h] = edit_a;
    }
  }

  // per-ray assembly and compositing
  hit_offset.assign(B + 1, 0);
  for (int i = 0; i < N; ++i)
    for (int r : nodes[i].ray) ++hit_offset[r + 1];
  for (int r = 0; r < B; ++r) hit_offset[r + 1] += hit_offset[r];
  int total = hit_offset[B];
  hit_node.resize(total);
  hit_index.resize(total);
  {
    std::vector<int> cursor(hit_offset.begin(), hit_offset.end() - 1);
    for (int i = 0; i < N; ++i) {
      const NodeWs& nd = nodes[i];
      for (size_t h = 0; h < nd.H(); ++h) {
        int pos = cursor[nd.ray[h]]++;
        hit_node[pos] = i;
        hit_index[pos] = int(h);
      }
    }
  }
  color.resize(B);
  trans.resize(B);
  if (has_loss) photo_part.resize(B);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < B; ++r) {
    // sort this ray's hits by (depth, id rank); the sorted order is written
    // back so the backward pass walks the same sequence
    int lo = hit_offset[r];
    int n = hit_offset[r + 1] - lo;
    if (n > 64) n = 64;
    struct Ent {
      T depth;
      int node, idx;
    } ent[64];
    for (int a = 0; a < n; ++a) {
      const NodeWs& nd = nodes[hit_node[lo + a]];
      ent[a] = {nd.depth[hit_index[lo + a]], hit_node[lo + a], hit_index[lo + a]};
    }
    for (int a = 1; a < n; ++a) {
      Ent key = ent[a];
      int j = a - 1;
      while (j >= 0 && (ent[j].depth > key.depth ||
                        (ent[j].depth == key.depth && rank[ent[j].node] > rank[key.node]))) {
        ent[j + 1] = ent[j];
        --j;
      }
      ent[j + 1] = key;
    }
    NodeSample<T> samples[64];
    for (int a = 0; a < n; ++a) {
      hit_node[lo + a] = ent[a].node;
      hit_index[lo + a] = ent[a].idx;
      const NodeWs& nd = nodes[ent[a].node];
      int h = ent[a].idx;
      samples[a] = NodeSample<T>{ent[a].node,
                                 {nd.color[3 * h], nd.color[3 * h + 1], nd.color[3 * h + 2]},
                                 nd.alpha[h],
                                 nd.depth[h]};
    }
    composite_samples(samples, n, opt.early_out, color[r], trans[r]);
    if (has_loss) {
      const Vec3<T>& g = (*batch).gt[r];
      photo_part[r] = std::abs(color[r].x - g.x) + std::abs(color[r].y - g.y) +
                      std::abs(color[r].z - g.z);
    }
  }

  stats = BatchStats<T>{};
  if (has_loss) {
    T photo = block_sum(photo_part.data(), B) / T(3 * B);
    T msum = 0;
    mask_pairs = 0;
    std::vector<T> mp;
    for (int i = 0; i < N && b.n_masks > 0; ++i) {
      const AtlasNode<T>& n = gr.nodes[i];
      if (n.mask_track < 0 || n.is_background) continue;
      const NodeWs& nd = nodes[i];
      mp.resize(nd.H());
      for (size_t h = 0; h < nd.H(); ++h) {
        T m = T(b.masks[size_t(nd.ray[h]) * b.n_masks + n.mask_track]);
        mp[h] = std::abs(nd.alpha[h] - m);
      }
      msum += block_sum(mp.data(), mp.size());
      mask_pairs += long(nd.H());
    }
    stats.photo = photo;
    stats.mask = mask_pairs > 0 ? msum / T(mask_pairs) : T(0);
    stats.loss = photo + T(beta) * stats.mask;
    stats.mask_pairs = mask_pairs;
  }
}

// Seeds dL/d(color), dL/d(alpha) from the photometric and mask terms and
// runs the compositing adjoint.
template <typename T>
void BatchPipeline<T>::Impl::backward_seed() {
  const Batch<T>& b = *batch;
  for (int i = 0; i < N; ++i) {
    NodeWs& nd = nodes[i];
    size_t H = nd.H();
    nd.d_color.assign(3 * H, T(0));
    nd.d_alpha.assign(H, T(0));
    nd.d_xp.assign(2 * H, T(0));
    nd.d_x.assign(2 * H, T(0));
    nd.d_phi.assign(2 * H, T(0));
    nd.d_enc_f.assign(nd.enc_f.size(), T(0));
    nd.d_enc_c.assign(nd.enc_c.size(), T(0));
    nd.d_enc_a.assign(nd.enc_a.size(), T(0));
    nd.d_enc_v.assign(nd.enc_v.size(), T(0));
  }
  if (need_cam_grad) {
    d_ray_o.assign(B, Vec3<T>{});
    d_ray_d.assign(B, Vec3<T>{});
  }
  for (auto& v : mlp_grad) std::fill(v.begin(), v.end(), T(0));
  for (auto& v : pose_adj) std::fill(v.begin(), v.end(), T(0));

  T photo_scale = T(1) / T(3 * B);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < B; ++r) {
    int lo = hit_offset[r], hi = hit_offset[r + 1];
    int n = hi - lo;
    if (n == 0) continue;
    Vec3<T> dC{color[r].x > b.gt[r].x   ? photo_scale
               : color[r].x < b.gt[r].x ? -photo_scale
                                        : T(0),
               color[r].y > b.gt[r].y   ? photo_scale
               : color[r].y < b.gt[r].y ? -photo_scale
                                        : T(0),
               color[r].z > b.gt[r].z   ? photo_scale
               : color[r].z < b.gt[r].z ? -photo_scale
                                        : T(0)};
    // prefix transmittance and suffix partial composite
    T Tpre[64];
    Vec3<T> U[64];
    T tr = 1;
    for (int a = 0; a < n; ++a) {
      const NodeWs& nd = nodes[hit_node[lo + a]];
      int h = hit_index[lo + a];
      Tpre[a] = tr;
      tr *= (T(1) - nd.alpha[h]);
    }
    Vec3<T> suffix{0, 0, 0};
    for (int a = n - 1; a >= 0; --a) {
      U[a] = suffix;
      const NodeWs& nd = nodes[hit_node[lo + a]];
      int h = hit_index[lo + a];
      Vec3<T> c{nd.color[3 * h], nd.color[3 * h + 1], nd.color[3 * h + 2]};
      suffix = nd.alpha[h] * c + (T(1) - nd.alpha[h]) * suffix;
    }
    for (int a = 0; a < n; ++a) {
      NodeWs& nd = nodes[hit_node[lo + a]];
      int h = hit_index[lo + a];
      T w = nd.alpha[h] * Tpre[a];
      nd.d_color[3 * h] += dC.x * w;
      nd.d_color[3 * h + 1] += dC.y * w;
      nd.d_color[3 * h + 2] += dC.z * w;
      Vec3<T> c{nd.color[3 * h], nd.color[3 * h + 1], nd.color[3 * h + 2]};
      nd.d_alpha[h] += Tpre[a] * (dC.x * (c.x - U[a].x) + dC.y * (c.y - U[a].y) +
                                  dC.z * (c.z - U[a].z));
    }
  }

  // mask-loss seeds
  if (beta != 0 && mask_pairs > 0) {
    T scale = T(beta) / T(mask_pairs);
    for (int i = 0; i < N; ++i) {
      const AtlasNode<T>& n = g->nodes[i];
      if (n.mask_track < 0 || n.is_background) continue;
      NodeWs& nd = nodes[i];
#pragma omp parallel for schedule(static)
      for (long h = 0; h < long(nd.H()); ++h) {
        T m = T(b.masks[size_t(nd.ray[h]) * b.n_masks + n.mask_track]);
        T d = nd.alpha[h] > m ? scale : (nd.alpha[h] < m ? -scale : T(0));
        nd.d_alpha[h] += d;
      }
    }
  }
}

template <typename T>
void BatchPipeline<T>::Impl::backward_node(int i) {
  const AtlasNode<T>& n = g->nodes[i];
  NodeWs& nd = nodes[i];
  const T* params = g->params.values.data();
  size_t H = nd.H();
  if (H == 0) return;
  const int hidden_acts = n.fields.color.mlp.acts_size();
  const EditTexture<T>* edit = n.edit >= 0 ? &g->edits[n.edit] : nullptr;
  bool any_pose = nd.need_pose_grad || need_cam_grad;

#pragma omp parallel for schedule(static)
  for (long h = 0; h < long(H); ++h) {
    int thr = omp_get_thread_num();
    Vec2<T> xp{nd.xp[2 * h], nd.xp[2 * h + 1]};
    Vec3<T> dcol{nd.d_color[3 * h], nd.d_color[3 * h + 1], nd.d_color[3 * h + 2]};
    Vec2<T> dxp{0, 0};

    if (edit && nd.edit_a[h] > 0) {
      T ea = nd.edit_a[h];
      Vec3<T> base{nd.craw[3 * h], nd.craw[3 * h + 1], nd.craw[3 * h + 2]};
      Vec3<T> c{clamp01(base.x), clamp01(base.y), clamp01(base.z)};
      T ec[3];
      sample_grid(edit->color, xp, ec);
      // c* = (1-ea) c + ea ec
      T dc_arr[3] = {dcol.x * ea, dcol.y * ea, dcol.z * ea};
      sample_grid_backward(edit->color, xp, dc_arr, dxp);
      T dea = dcol.x * (ec[0] - c.x) + dcol.y * (ec[1] - c.y) + dcol.z * (ec[2] - c.z);
      sample_grid_backward(edit->alpha, xp, &dea, dxp);
      dcol = (T(1) - ea) * dcol;
    }

    // clamped color head
    T dfv[4] = {0, 0, 0, 0};
    T dbase_c[3], dfc[3];
    for (int ch = 0; ch < 3; ++ch) {
      T raw = nd.craw[3 * h + ch];
      T gch = (raw > 0 && raw < 1) ? (&dcol.x)[ch] : T(0);
      dbase_c[ch] = gch;
      dfc[ch] = T(kLambdaColor) * gch;
      dfv[ch] = T(kLambdaView) * gch;
    }
    sample_grid_backward(n.base_color, xp, dbase_c, dxp);

    // opacity head
    if (n.fields.has_alpha) {
      T a = nd.alpha[h];
      T dz = nd.d_alpha[h] * a * (T(1) - a);
      if (dz != 0) {
        T base_a;
        sample_grid(n.base_alpha, xp, &base_a);
        T lo = T(kEpsAlpha), hi = T(1) - T(kEpsAlpha);
        if (base_a > lo && base_a < hi) {
          T dba = dz / (base_a * (T(1) - base_a));
          sample_grid_backward(n.base_alpha, xp, &dba, dxp);
        }
        T dfa = T(kLambdaAlpha) * dz;
        dfv[3] = T(kLambdaView) * dz;
        if (nd.ev.alpha) {
          T* dw = nd.grad_mlp[2] ? mlp_grad[thr].data() + mlp_goff[size_t(i) * 4 + 2] : nullptr;
          mlp_backward(n.fields.alpha.mlp, params + n.fields.alpha.mlp_offset,
                       nd.enc_a.data() + 64 * h, nd.acts_a.data() + size_t(hidden_acts) * h,
                       &dfa, nd.d_enc_a.data() + 64 * h, dw);
          encode_backward_input(n.fields.alpha.cfg, n.fields.alpha.levels,
                                params + n.fields.alpha.table_offset, nd.xp.data() + 2 * h,
                                n.fields.alpha.cfg.out_dim(), nd.d_enc_a.data() + 64 * h,
                                &dxp.x);
        }
      }
    }

    if (nd.ev.color) {
      T* dw = nd.grad_mlp[1] ? mlp_grad[thr].data() + mlp_goff[size_t(i) * 4 + 1] : nullptr;
      mlp_backward(n.fields.color.mlp, params + n.fields.color.mlp_offset,
                   nd.enc_c.data() + 64 * h, nd.acts_c.data() + size_t(hidden_acts) * h, dfc,
                   nd.d_enc_c.data() + 64 * h, dw);
      encode_backward_input(n.fields.color.cfg, n.fields.color.levels,
                            params + n.fields.color.table_offset, nd.xp.data() + 2 * h,
                            n.fields.color.cfg.out_dim(), nd.d_enc_c.data() + 64 * h, &dxp.x);
    }

    if (nd.ev.view) {
      T* dw = nd.grad_mlp[3] ? mlp_grad[thr].data() + mlp_goff[size_t(i) * 4 + 3] : nullptr;
      mlp_backward(n.fields.view.mlp, params + n.fields.view.mlp_offset,
                   nd.enc_v.data() + 64 * h, nd.acts_v.data() + size_t(hidden_acts) * h, dfv,
                   nd.d_enc_v.data() + 64 * h, dw);
      T dx4[4] = {0, 0, 0, 0};
      encode_backward_input(n.fields.view.cfg, n.fields.view.levels,
                            params + n.fields.view.table_offset, nd.xin_v.data() + 4 * h,
                            nd.kept_v, nd.d_enc_v.data() + 64 * h, dx4);
      dxp.x += dx4[0];
      dxp.y += dx4[1];
      nd.d_phi[2 * h] += dx4[2];
      nd.d_phi[2 * h + 1] += dx4[3];
    }

    nd.d_xp[2 * h] = dxp.x;
    nd.d_xp[2 * h + 1] = dxp.y;

    // flow: xp = x + lambda_f S(t, cp(x))
    Vec2<T> dx = dxp;
    if (nd.ev.flow) {
      int u = uindex[nd.ray[h]];
      HermiteWeights<T> hw = hermite_weights(n.fields.pf, nd.tnode[u]);
      T dcp[64] = {0};
      for (int j = 0; j < 4; ++j) {
        int cpi = hw.base + j;
        if (cpi < 0 || cpi >= n.fields.pf || hw.w[j] == 0) continue;
        dcp[2 * cpi] = T(kLambdaFlow) * hw.w[j] * dxp.x;
        dcp[2 * cpi + 1] = T(kLambdaFlow) * hw.w[j] * dxp.y;
      }
      T* dw = nd.grad_mlp[0] ? mlp_grad[thr].data() + mlp_goff[size_t(i) * 4 + 0] : nullptr;
      mlp_backward(n.fields.flow.mlp, params + n.fields.flow.mlp_offset,
                   nd.enc_f.data() + 64 * h, nd.acts_f.data() + size_t(hidden_acts) * h, dcp,
                   nd.d_enc_f.data() + 64 * h, dw);
      encode_backward_input(n.fields.flow.cfg, n.fields.flow.levels,
                            params + n.fields.flow.table_offset, nd.x.data() + 2 * h, nd.kept_f,
                            nd.d_enc_f.data() + 64 * h, &dx.x);
    }
    nd.d_x[2 * h] = dx.x;
    nd.d_x[2 * h + 1] = dx.y;

    // geometry chain
    if (any_pose) {
      int r = nd.ray[h];
      int u = uindex[r];
      const PlanePose<T>& pose = nd.pose[u];
      Ray<T> ray{ray_o[r], ray_d[r]};
      T dq[4] = {0, 0, 0, 0};
      Vec3<T> dp{0, 0, 0}, dorigin{0, 0, 0}, ddir{0, 0, 0};
      Vec2<T> dphi{nd.d_phi[2 * h], nd.d_phi[2 * h + 1]};
      if (dphi.x != 0 || dphi.y != 0)
        detail::view_angle_backward(ray.dir, pose.q, dphi, need_cam_grad ? &ddir : nullptr, dq);
      detail::hit_backward(ray, pose, n.extent, nd.depth[h], dx, dq, dp,
                           need_cam_grad ? &dorigin : nullptr,
                           need_cam_grad ? &ddir : nullptr);
      if (nd.need_pose_grad) {
        T* adj = pose_adj[thr].data() + (size_t(i) * U + u) * 7;
        for (int k = 0; k < 4; ++k) adj[k] += dq[k];
        adj[4] += dp.x;
        adj[5] += dp.y;
        adj[6] += dp.z;
      }
      if (need_cam_grad) {
        d_ray_o[r] += dorigin;
        d_ray_d[r] += ddir;
      }
    }
  }

  // hash-table gradients: levels are disjoint table slices, each filled in
  // hit order
  struct TaskRef {
    int field;
    int level;
  };
  std::vector<TaskRef> tasks;
  for (int k = 0; k < 4; ++k) {
    if (!nd.grad_tables[k]) continue;
    const Field<T>* f = field_of(nd, k, n);
    if (!f) continue;
    int kept = k == 0 ? nd.kept_f : (k == 3 ? nd.kept_v : f->cfg.out_dim());
    int nlv = (kept + f->cfg.feats - 1) / f->cfg.feats;
    for (int l = 0; l < nlv; ++l) tasks.push_back({k, l});
  }
  T* grads = g->params.grads.data();
#pragma omp parallel for schedule(dynamic)
  for (long ti = 0; ti < long(tasks.size()); ++ti) {
    int k = tasks[ti].field, l = tasks[ti].level;
    const Field<T>* f = field_of(nd, k, n);
    const T* xs = k == 0 ? nd.x.data() : (k == 3 ? nd.xin_v.data() : nd.xp.data());
    size_t xstride = k == 3 ? 4 : 2;
    const T* denc = k == 0   ? nd.d_enc_f.data()
                    : k == 1 ? nd.d_enc_c.data()
                    : k == 2 ? nd.d_enc_a.data()
                             : nd.d_enc_v.data();
    int kept = k == 0 ? nd.kept_f : (k == 3 ? nd.kept_v : f->cfg.out_dim());
    encode_scatter_level(f->cfg, f->levels[l], l, xs, xstride, denc, size_t(64), H, kept,
                         grads + f->table_offset, g->params, f->table_offset);
  }
}

template <typename T>
void BatchPipeline<T>::Impl::backward_rays() {
  if (!need_cam_grad) return;
  const CameraIntrinsics<T>& intr = g->camera.intrinsics;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < B; ++r) {
    int thr = omp_get_thread_num();
    int u = uindex[r];
    const PlanePose<T>& cam = cam_pose[u];
    Vec2<T> px = (*batch).pixels[r];
    Vec3<T> d_cam{(px.x - intr.principal.x) / intr.focal,
                  (px.y - intr.principal.y) / intr.focal, T(1)};
    T dq[4] = {0, 0, 0, 0};
    detail::rotate_backward(cam.q, d_cam, d_ray_d[r], dq, static_cast<Vec3<T>*>(nullptr));
    T* adj = pose_adj[thr].data() + (size_t(N) * U + u) * 7;
    for (int k = 0; k < 4; ++k) adj[k] += dq[k];
    adj[4] += d_ray_o[r].x;
    adj[5] += d_ray_o[r].y;
    adj[6] += d_ray_o[r].z;
  }
}

// Pose adjoints -> spline offset gradients, and per-thread MLP gradient
// merge. Serial over (entity, frame); sizes are tiny.
template <typename T>
void BatchPipeline<T>::Impl::backward_finalize() {
  const T* params = g->params.values.data();
  T* grads = g->params.grads.data();

  // merge MLP gradients in thread order
  if (mlp_gtotal > 0) {
#pragma omp parallel for schedule(static)
    for (long k = 0; k < long(mlp_gtotal); ++k) {
      T s = 0;
      for (int t = 0; t < nthreads; ++t) s += mlp_grad[t][k];
      mlp_grad[0][k] = s;
    }
    for (int i = 0; i < N; ++i) {
      const AtlasNode<T>& n = g->nodes[i];
      NodeWs& nd = nodes[i];
      const Field<T>* fs[4] = {&n.fields.flow, &n.fields.color,
                               n.fields.has_alpha ? &n.fields.alpha : nullptr, &n.fields.view};
      for (int k = 0; k < 4; ++k) {
        if (!nd.grad_mlp[k] || !fs[k]) continue;
        size_t off = mlp_goff[size_t(i) * 4 + k];
        size_t cnt = fs[k]->mlp.param_count();
        const T* src = mlp_grad[0].data() + off;
        T* dst = grads + fs[k]->mlp_offset;
#pragma omp parallel for schedule(static)
        for (long j = 0; j < long(cnt); ++j) dst[j] += src[j];
        g->params.mark_touched_range(fs[k]->mlp_offset, fs[k]->mlp_offset + cnt);
      }
    }
  }

  // pose adjoints -> offsets
  auto track_backward = [&](const RigidTrack<T>& track, size_t entity, size_t group) {
    for (int u = 0; u < U; ++u) {
      T adj[7] = {0, 0, 0, 0, 0, 0, 0};
      for (int t = 0; t < nthreads; ++t) {
        const T* a = pose_adj[t].data() + (entity * U + u) * 7;
        for (int k = 0; k < 7; ++k) adj[k] += a[k];
      }
      bool any = false;
      for (int k = 0; k < 7; ++k) any = any || adj[k] != 0;
      if (!any) continue;
      T tn = entity == size_t(N) ? utimes[u] : nodes[entity].tnode[u];

      // translation: p = base + eta_t * S
      HermiteWeights<T> hw = hermite_weights(track.off_t.P, tn);
      for (int j = 0; j < 4; ++j) {
        int cpi = hw.base + j;
        if (cpi < 0 || cpi >= track.off_t.P || hw.w[j] == 0) continue;
        size_t o = track.off_t.offset + size_t(cpi) * 3;
        grads[o] += track.eta_t * hw.w[j] * adj[4];
        grads[o + 1] += track.eta_t * hw.w[j] * adj[5];
        grads[o + 2] += track.eta_t * hw.w[j] * adj[6];
      }

      // rotation: q = normalize(base_q * q(eta_r * S))
      Vec3<T> pb;
      Quat<T> qb;
      base_pose_at(track, tn, pb, qb);
      T sr[3];
      hermite_eval(params + track.off_r.offset, track.off_r.P, 3, tn, sr);
      Vec3<T> v{track.eta_r * sr[0], track.eta_r * sr[1], track.eta_r * sr[2]};
      Quat<T> qoff = rotvec_to_quat(v);
      Quat<T> z = qmul(qb, qoff);
      T zn = norm(z);
      Quat<T> y = {z.w / zn, z.x / zn, z.y / zn, z.z / zn};
      T ydotg = y.w * adj[0] + y.x * adj[1] + y.y * adj[2] + y.z * adj[3];
      Quat<T> dz{(adj[0] - y.w * ydotg) / zn, (adj[1] - y.x * ydotg) / zn,
                 (adj[2] - y.y * ydotg) / zn, (adj[3] - y.z * ydotg) / zn};
      Quat<T> dqoff = qmul(conj(qb), dz);
      T dq_arr[4] = {dqoff.w, dqoff.x, dqoff.y, dqoff.z};
      Vec3<T> dv{0, 0, 0};
      rotvec_to_quat_grad(v, dq_arr, dv);
      HermiteWeights<T> hr = hermite_weights(track.off_r.P, tn);
      for (int j = 0; j < 4; ++j) {
        int cpi = hr.base + j;
        if (cpi < 0 || cpi >= track.off_r.P || hr.w[j] == 0) continue;
        size_t o = track.off_r.offset + size_t(cpi) * 3;
        grads[o] += track.eta_r * hr.w[j] * dv.x;
        grads[o + 1] += track.eta_r * hr.w[j] * dv.y;
        grads[o + 2] += track.eta_r * hr.w[j] * dv.z;
      }
    }
    const ParamGroup& pg = g->params.groups[group];
    g->params.mark_touched_range(pg.offset, pg.offset + pg.size);
  };

  for (int i = 0; i < N; ++i)
    if (nodes[i].need_pose_grad) track_backward(g->nodes[i].track, size_t(i),
                                                g->nodes[i].offsets_group);
  if (need_cam_grad) track_backward(g->camera.track, size_t(N), g->camera_group);
}

// ---------------------------------------------------------------------------

template <typename T>
BatchPipeline<T>::BatchPipeline() : impl_(new Impl) {}
template <typename T>
BatchPipeline<T>::~BatchPipeline() = default;
template <typename T>
BatchPipeline<T>::BatchPipeline(BatchPipeline&&) noexcept = default;

template <typename T>
const std::vector<Vec3<T>>& BatchPipeline<T>::colors() const {
  return impl_->color;
}
template <typename T>
const std::vector<T>& BatchPipeline<T>::transmittance() const {
  return impl_->trans;
}

template <typename T>
BatchStats<T> BatchPipeline<T>::run(const SceneGraph<T>& g, const Batch<T>& batch, double beta,
                                    const ActivityMask& act, const RenderOptions& opt,
                                    Tape<T>* tape) {
  Impl& im = *impl_;
  im.g = &g;
  im.batch = &batch;
  im.tau = opt.tau;
  im.beta = beta;
  im.act = act;
  im.opt = opt;
  im.N = int(g.nodes.size());

  bool taped = tape != nullptr;
  im.need_cam_grad = taped && g.camera_group != size_t(-1) && act.grad_for(g.camera_group);
  im.need_geom = im.need_cam_grad;
  if (taped) {
    NAG_CHECK(act.solo_node < 0, "gradients are not supported for solo-node renders");
    NAG_CHECK(opt.early_out == 0, "early-out is inference-only");
    NAG_CHECK(!batch.gt.empty(), "taped runs need ground-truth targets");
    for (const auto& n : g.nodes)
      if (!n.is_background && n.offsets_group != size_t(-1) && act.grad_for(n.offsets_group))
        im.need_geom = true;
  }

  // mlp gradient scratch layout
  im.mlp_goff.assign(size_t(im.N) * 4, size_t(-1));
  im.mlp_gtotal = 0;
  if (taped) {
    for (int i = 0; i < im.N; ++i) {
      const AtlasNode<T>& n = g.nodes[i];
      const Field<T>* fs[4] = {&n.fields.flow, &n.fields.color,
                               n.fields.has_alpha ? &n.fields.alpha : nullptr, &n.fields.view};
      for (int k = 0; k < 4; ++k) {
        if (!fs[k]) continue;
        if (!act.grad_for(fs[k]->mlp_group)) continue;
        im.mlp_goff[size_t(i) * 4 + k] = im.mlp_gtotal;
        im.mlp_gtotal += fs[k]->mlp.param_count();
      }
    }
  }

  im.taped = taped;
  if (taped && im.act.group_grad.empty())
    im.act.group_grad.assign(g.params.groups.size(), 1);
  else if (!taped)
    im.act.group_grad.assign(g.params.groups.size(), 0);

  int nt = omp_get_max_threads();
  im.nthreads = nt;
  if (taped) {
    im.mlp_grad.resize(nt);
    for (auto& v : im.mlp_grad) v.resize(im.mlp_gtotal);
    im.pose_adj.resize(nt);
    for (auto& v : im.pose_adj) v.resize(0);
  }

  im.forward();

  if (taped) {
    for (auto& v : im.pose_adj) v.assign(size_t(im.N + 1) * im.U * 7, T(0));
    Impl* pim = &im;
    tape->on_backward([pim] { pim->backward_finalize(); });
    tape->on_backward([pim] { pim->backward_rays(); });
    for (int i = 0; i < im.N; ++i)
      tape->on_backward([pim, i] { pim->backward_node(i); });
    tape->on_backward([pim] { pim->backward_seed(); });
  }
  return im.stats;
}

// explicit instantiations
template class BatchPipeline<float>;
template class BatchPipeline<double>;
template float block_sum(const float*, size_t);
template double block_sum(const double*, size_t);
template float atlas_loss(const std::vector<Vec3<float>>&, const std::vector<Vec3<float>>&,
                          const std::vector<std::vector<std::pair<int, float>>>&,
                          const std::vector<float>&, int, double);
template double atlas_loss(const std::vector<Vec3<double>>&, const std::vector<Vec3<double>>&,
                           const std::vector<std::vector<std::pair<int, double>>>&,
                           const std::vector<float>&, int, double);

}  // namespace nag
