// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Per-node appearance machinery: bilinear base grids, multiresolution hash
// encodings, small MLPs, coarse-to-fine feature masking, and the color /
// opacity / flow queries built from them. The per-sample routines here are
// shared by the serial reference renderer and the batched kernels, so both
// produce bit-identical arithmetic.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nag/check.h"
#include "nag/motion.h"
#include "nag/params.h"
#include "nag/rng.h"
#include "nag/vec.h"

namespace nag {

// Fixed field weights and the logit clamp; none of these are learnable.
inline constexpr double kLambdaColor = 0.1;
inline constexpr double kLambdaAlpha = 0.1;
inline constexpr double kLambdaView = 0.1;
inline constexpr double kLambdaFlow = 0.1;
inline constexpr double kEpsAlpha = 1e-4;

// ---------------------------------------------------------------------------
// Base grids

template <typename T>
struct Grid2 {
  int w = 0, h = 0, c = 1;
  std::vector<T> v;  // row-major, channel-interleaved

  void resize(int w_, int h_, int c_, T fill = 0) {
    w = w_; h = h_; c = c_;
    v.assign(size_t(w) * h * c, fill);
  }
  T* at(int x, int y) { return v.data() + (size_t(y) * w + x) * c; }
  const T* at(int x, int y) const { return v.data() + (size_t(y) * w + x) * c; }
  bool empty() const { return v.empty(); }
};

// Bilinear sample with edge clamping; texel (i, j) is centered at
// ((i+0.5)/w, (j+0.5)/h).
template <typename T>
inline void sample_grid(const Grid2<T>& g, Vec2<T> uv, T* out) {
  T px = (uv.x < 0 ? T(0) : uv.x > 1 ? T(1) : uv.x) * T(g.w) - T(0.5);
  T py = (uv.y < 0 ? T(0) : uv.y > 1 ? T(1) : uv.y) * T(g.h) - T(0.5);
  T fx = px - std::floor(px), fy = py - std::floor(py);
  int ix = int(std::floor(px)), iy = int(std::floor(py));
  int x0 = ix < 0 ? 0 : (ix > g.w - 1 ? g.w - 1 : ix);
  int x1 = ix + 1 < 0 ? 0 : (ix + 1 > g.w - 1 ? g.w - 1 : ix + 1);
  int y0 = iy < 0 ? 0 : (iy > g.h - 1 ? g.h - 1 : iy);
  int y1 = iy + 1 < 0 ? 0 : (iy + 1 > g.h - 1 ? g.h - 1 : iy + 1);
  const T* v00 = g.at(x0, y0);
  const T* v10 = g.at(x1, y0);
  const T* v01 = g.at(x0, y1);
  const T* v11 = g.at(x1, y1);
  for (int ch = 0; ch < g.c; ++ch) {
    T a = v00[ch] + fx * (v10[ch] - v00[ch]);
    T b = v01[ch] + fx * (v11[ch] - v01[ch]);
    out[ch] = a + fy * (b - a);
  }
}

// d(sample)/d(uv), accumulated into duv. Zero outside [0,1] (clamped).
template <typename T>
inline void sample_grid_backward(const Grid2<T>& g, Vec2<T> uv, const T* dout, Vec2<T>& duv) {
  bool cx = uv.x < 0 || uv.x > 1, cy = uv.y < 0 || uv.y > 1;
  T px = (cx ? (uv.x < 0 ? T(0) : T(1)) : uv.x) * T(g.w) - T(0.5);
  T py = (cy ? (uv.y < 0 ? T(0) : T(1)) : uv.y) * T(g.h) - T(0.5);
  T fx = px - std::floor(px), fy = py - std::floor(py);
  int ix = int(std::floor(px)), iy = int(std::floor(py));
  int x0 = ix < 0 ? 0 : (ix > g.w - 1 ? g.w - 1 : ix);
  int x1 = ix + 1 < 0 ? 0 : (ix + 1 > g.w - 1 ? g.w - 1 : ix + 1);
  int y0 = iy < 0 ? 0 : (iy > g.h - 1 ? g.h - 1 : iy);
  int y1 = iy + 1 < 0 ? 0 : (iy + 1 > g.h - 1 ? g.h - 1 : iy + 1);
  const T* v00 = g.at(x0, y0);
  const T* v10 = g.at(x1, y0);
  const T* v01 = g.at(x0, y1);
  const T* v11 = g.at(x1, y1);
  T dfx = 0, dfy = 0;
  for (int ch = 0; ch < g.c; ++ch) {
    T top = v10[ch] - v00[ch], bot = v11[ch] - v01[ch];
    dfx += dout[ch] * ((1 - fy) * top + fy * bot);
    dfy += dout[ch] * ((v01[ch] + fx * (v11[ch] - v01[ch])) - (v00[ch] + fx * (v10[ch] - v00[ch])));
  }
  if (!cx) duv.x += dfx * T(g.w);
  if (!cy) duv.y += dfy * T(g.h);
}

// ---------------------------------------------------------------------------
// Multiresolution hash encoding

struct HashConfig {
  int levels = 16;
  int feats = 4;           // features per level
  double scale = 1.61;     // per-level growth
  int log2_size = 17;      // max table entries per level
  int base_res = 4;
  int dim = 2;             // 2 for (x), 4 for (x, phi)

  int out_dim() const { return levels * feats; }
};

struct HashLevel {
  int res = 0;          // cells per axis; res+1 vertices
  bool dense = false;   // direct indexing when the grid fits the table
  size_t entries = 0;   // feature vectors in this level's table
  size_t offset = 0;    // scalar offset of this level within the field table
};

inline std::vector<HashLevel> build_hash_levels(const HashConfig& cfg, size_t& total_scalars) {
  std::vector<HashLevel> lv(cfg.levels);
  size_t cap = size_t(1) << cfg.log2_size;
  size_t off = 0;
  for (int l = 0; l < cfg.levels; ++l) {
    lv[l].res = int(std::floor(cfg.base_res * std::pow(cfg.scale, l)));
    double verts = std::pow(double(lv[l].res) + 1.0, cfg.dim);
    lv[l].dense = verts <= double(cap);
    lv[l].entries = lv[l].dense ? size_t(verts + 0.5) : cap;
    lv[l].offset = off;
    off += lv[l].entries * cfg.feats;
  }
  total_scalars = off;
  return lv;
}

// Number of leading features kept by the coarse-to-fine mask. At least one
// level group stays active.
inline int active_features(double tau, const HashConfig& cfg) {
  int kept = int(std::ceil(tau * cfg.out_dim()));
  return kept < cfg.feats ? cfg.feats : (kept > cfg.out_dim() ? cfg.out_dim() : kept);
}

// Coarse-first masking of an encoded feature vector.
template <typename T>
inline void apply_sparsity(T* feats, int n, double tau, const HashConfig& cfg) {
  int kept = active_features(tau, cfg);
  for (int i = kept; i < n; ++i) feats[i] = 0;
}

inline uint32_t corner_index(const int c[4], const HashConfig& cfg, const HashLevel& lv) {
  if (lv.dense) {
    uint32_t stride = uint32_t(lv.res) + 1;
    uint32_t idx = uint32_t(c[cfg.dim - 1]);
    for (int d = cfg.dim - 2; d >= 0; --d) idx = idx * stride + uint32_t(c[d]);
    return idx;
  }
  static constexpr uint32_t kPrimes[4] = {1u, 2654435761u, 805459861u, 3674653429u};
  uint32_t h = 0;
  for (int d = 0; d < cfg.dim; ++d) h ^= uint32_t(c[d]) * kPrimes[d];
  return h & uint32_t(lv.entries - 1);
}

// Interpolated features of all active levels, concatenated coarse-first.
// Inactive features (beyond `kept`) are zeroed.
template <typename T>
inline void encode_point(const HashConfig& cfg, const std::vector<HashLevel>& levels,
                         const T* table, const T* x, int kept, T* out) {
  int E = cfg.out_dim();
  for (int i = kept; i < E; ++i) out[i] = 0;
  int nlv = (kept + cfg.feats - 1) / cfg.feats;
  int corners = 1 << cfg.dim;
  for (int l = 0; l < nlv; ++l) {
    const HashLevel& lv = levels[l];
    int c0[4];
    T fr[4];
    for (int d = 0; d < cfg.dim; ++d) {
      T xd = x[d] < 0 ? T(0) : (x[d] > 1 ? T(1) : x[d]);
      T pos = xd * T(lv.res);
      int ci = int(pos);
      if (ci > lv.res - 1) ci = lv.res - 1;
      c0[d] = ci;
      fr[d] = pos - T(ci);
    }
    T* o = out + l * cfg.feats;
    for (int f = 0; f < cfg.feats; ++f) o[f] = 0;
    for (int cn = 0; cn < corners; ++cn) {
      int cc[4];
      T w = 1;
      for (int d = 0; d < cfg.dim; ++d) {
        int bit = (cn >> d) & 1;
        cc[d] = c0[d] + bit;
        w *= bit ? fr[d] : T(1) - fr[d];
      }
      const T* e = table + lv.offset + size_t(corner_index(cc, cfg, lv)) * cfg.feats;
      for (int f = 0; f < cfg.feats; ++f) o[f] += w * e[f];
    }
    // partially masked tail level
    int lim = kept - l * cfg.feats;
    if (lim < cfg.feats)
      for (int f = lim; f < cfg.feats; ++f) o[f] = 0;
  }
}

// Gradient of encode_point w.r.t. its input point, accumulated into dx.
// Corner geometry is recomputed rather than saved. Clamped dimensions get
// zero gradient.
template <typename T>
inline void encode_backward_input(const HashConfig& cfg, const std::vector<HashLevel>& levels,
                                  const T* table, const T* x, int kept, const T* dout, T* dx) {
  int nlv = (kept + cfg.feats - 1) / cfg.feats;
  int corners = 1 << cfg.dim;
  for (int l = 0; l < nlv; ++l) {
    const HashLevel& lv = levels[l];
    int c0[4];
    T fr[4];
    bool clamped[4];
    for (int d = 0; d < cfg.dim; ++d) {
      clamped[d] = x[d] < 0 || x[d] > 1;
      T xd = clamped[d] ? (x[d] < 0 ? T(0) : T(1)) : x[d];
      T pos = xd * T(lv.res);
      int ci = int(pos);
      if (ci > lv.res - 1) ci = lv.res - 1;
      c0[d] = ci;
      fr[d] = pos - T(ci);
    }
    const T* g = dout + l * cfg.feats;
    int lim = kept - l * cfg.feats;
    int nf = lim < cfg.feats ? lim : cfg.feats;
    for (int cn = 0; cn < corners; ++cn) {
      int cc[4];
      for (int d = 0; d < cfg.dim; ++d) cc[d] = c0[d] + ((cn >> d) & 1);
      const T* e = table + lv.offset + size_t(corner_index(cc, cfg, lv)) * cfg.feats;
      T ge = 0;
      for (int f = 0; f < nf; ++f) ge += g[f] * e[f];
      if (ge == 0) continue;
      for (int d = 0; d < cfg.dim; ++d) {
        if (clamped[d]) continue;
        T dw = 1;
        for (int d2 = 0; d2 < cfg.dim; ++d2) {
          if (d2 == d) continue;
          int bit = (cn >> d2) & 1;
          dw *= bit ? fr[d2] : T(1) - fr[d2];
        }
        int bit = (cn >> d) & 1;
        dx[d] += ge * (bit ? dw : -dw) * T(lv.res);
      }
    }
  }
}

// Table gradients for one level, scattered over a list of samples in order.
// Levels have disjoint table ranges, so calls for different levels can run
// in parallel while every entry still accumulates in sample order.
template <typename T>
inline void encode_scatter_level(const HashConfig& cfg, const HashLevel& lv, int level,
                                 const T* xs, size_t x_stride, const T* denc,
                                 size_t denc_stride, size_t count, int kept, T* grad_base,
                                 const ParamRegistry<T>& reg, size_t table_offset) {
  int lim = kept - level * cfg.feats;
  if (lim <= 0) return;
  int nf = lim < cfg.feats ? lim : cfg.feats;
  int corners = 1 << cfg.dim;
  for (size_t h = 0; h < count; ++h) {
    const T* x = xs + h * x_stride;
    const T* g = denc + h * denc_stride + level * cfg.feats;
    bool any = false;
    for (int f = 0; f < nf; ++f) any = any || g[f] != 0;
    if (!any) continue;
    int c0[4];
    T fr[4];
    for (int d = 0; d < cfg.dim; ++d) {
      T xd = x[d] < 0 ? T(0) : (x[d] > 1 ? T(1) : x[d]);
      T pos = xd * T(lv.res);
      int ci = int(pos);
      if (ci > lv.res - 1) ci = lv.res - 1;
      c0[d] = ci;
      fr[d] = pos - T(ci);
    }
    for (int cn = 0; cn < corners; ++cn) {
      int cc[4];
      T w = 1;
      for (int d = 0; d < cfg.dim; ++d) {
        int bit = (cn >> d) & 1;
        cc[d] = c0[d] + bit;
        w *= bit ? fr[d] : T(1) - fr[d];
      }
      size_t base = lv.offset + size_t(corner_index(cc, cfg, lv)) * cfg.feats;
      T* dst = grad_base + base;
      for (int f = 0; f < nf; ++f) dst[f] += w * g[f];
      reg.mark_touched(table_offset + base);
    }
  }
}

// ---------------------------------------------------------------------------
// MLP: `depth` linear layers, ReLU between, linear head.

struct MlpSpec {
  int in = 64, hidden = 64, depth = 5, out = 1;

  int layer_in(int l) const { return l == 0 ? in : hidden; }
  int layer_out(int l) const { return l == depth - 1 ? out : hidden; }
  size_t layer_offset(int l) const {
    size_t off = 0;
    for (int i = 0; i < l; ++i) off += size_t(layer_in(i)) * layer_out(i) + layer_out(i);
    return off;
  }
  size_t param_count() const { return layer_offset(depth); }
  int acts_size() const { return hidden * (depth - 1); }
};

// Dot product with eight independent accumulators and a fixed reduction
// tree; vectorizes under strict FP semantics and stays deterministic.
template <typename T>
inline T dot_n(const T* a, const T* b, int n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  for (; i < n; ++i) acc[i & 7] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Hidden layers He-uniform, final layer zero so a fresh field contributes
// exactly nothing.
template <typename T>
inline void mlp_init(const MlpSpec& spec, T* w, Rng& rng) {
  for (int l = 0; l < spec.depth; ++l) {
    T* lw = w + spec.layer_offset(l);
    int ni = spec.layer_in(l), no = spec.layer_out(l);
    if (l == spec.depth - 1) {
      for (size_t i = 0; i < size_t(ni) * no + no; ++i) lw[i] = 0;
      continue;
    }
    double lim = std::sqrt(6.0 / ni);
    for (size_t i = 0; i < size_t(ni) * no; ++i) lw[i] = T(rng.uniform(-lim, lim));
    for (int i = 0; i < no; ++i) lw[size_t(ni) * no + i] = 0;
  }
}

// acts (optional) receives the post-ReLU hidden activations, layer-major.
template <typename T>
inline void mlp_forward(const MlpSpec& spec, const T* w, const T* in, T* out, T* acts) {
  T buf0[64], buf1[64];
  const T* cur = in;
  T* nxt = buf0;
  for (int l = 0; l < spec.depth; ++l) {
    const T* lw = w + spec.layer_offset(l);
    int ni = spec.layer_in(l), no = spec.layer_out(l);
    const T* b = lw + size_t(ni) * no;
    T* dst = (l == spec.depth - 1) ? out : nxt;
    for (int r = 0; r < no; ++r) dst[r] = dot_n(lw + size_t(r) * ni, cur, ni) + b[r];
    if (l < spec.depth - 1) {
      for (int r = 0; r < no; ++r)
        if (dst[r] < 0) dst[r] = 0;
      if (acts)
        for (int r = 0; r < no; ++r) acts[l * spec.hidden + r] = dst[r];
      cur = dst;
      nxt = (dst == buf0) ? buf1 : buf0;
    }
  }
}

// Reverse pass. dw (nullable) accumulates layer gradients in the same layout
// as w; din (nullable) accumulates the gradient w.r.t. the input vector.
template <typename T>
inline void mlp_backward(const MlpSpec& spec, const T* w, const T* in, const T* acts,
                         const T* dout, T* din, T* dw) {
  T gbuf0[64], gbuf1[64];
  const T* g = dout;
  for (int l = spec.depth - 1; l >= 0; --l) {
    const T* lw = w + spec.layer_offset(l);
    int ni = spec.layer_in(l), no = spec.layer_out(l);
    const T* input = (l == 0) ? in : acts + (l - 1) * spec.hidden;
    if (dw) {
      T* ldw = dw + spec.layer_offset(l);
      for (int r = 0; r < no; ++r) {
        T gr = g[r];
        if (gr != 0) {
          T* row = ldw + size_t(r) * ni;
          for (int c = 0; c < ni; ++c) row[c] += gr * input[c];
        }
        ldw[size_t(ni) * no + r] += gr;
      }
    }
    if (l == 0) {
      if (din)
        for (int c = 0; c < ni; ++c) {
          T s = 0;
          for (int r = 0; r < no; ++r) s += w[spec.layer_offset(0) + size_t(r) * ni + c] * g[r];
          din[c] += s;
        }
      break;
    }
    // gradient through the previous ReLU layer
    T* gprev = (g == gbuf0) ? gbuf1 : gbuf0;
    const T* a = acts + (l - 1) * spec.hidden;
    for (int c = 0; c < ni; ++c) {
      if (a[c] <= 0) {
        gprev[c] = 0;
        continue;
      }
      T s = 0;
      for (int r = 0; r < no; ++r) s += lw[size_t(r) * ni + c] * g[r];
      gprev[c] = s;
    }
    g = gprev;
  }
}

// ---------------------------------------------------------------------------
// Field stack

// One neural field: hash encoding feeding an MLP. Table and MLP parameters
// live in the registry at the recorded offsets.
template <typename T>
struct Field {
  HashConfig cfg;
  std::vector<HashLevel> levels;
  size_t table_offset = 0, table_scalars = 0;
  MlpSpec mlp;
  size_t mlp_offset = 0;
  size_t table_group = 0, mlp_group = 0;  // registry group indices

  void eval(const T* params, const T* x, int kept, T* out, T* enc_buf, T* acts) const {
    encode_point(cfg, levels, params + table_offset, x, kept, enc_buf);
    mlp_forward(mlp, params + mlp_offset, enc_buf, out, acts);
  }
};

// The four neural fields of a node. The background omits the alpha field;
// color and alpha offsets of the view field share one network.
template <typename T>
struct FieldStack {
  Field<T> color;  // 2D -> 3
  Field<T> alpha;  // 2D -> 1 (absent when !has_alpha)
  Field<T> flow;   // 2D -> pf*2 spline control points
  Field<T> view;   // 4D -> 3 color + 1 alpha offsets
  bool has_alpha = true;
  int pf = 4;  // flow control points
};

// Flow control points default: quarter-rate in time, at least a full cubic.
inline int flow_control_points(int frames) {
  int p = (frames + 3) / 4;
  return p < 4 ? 4 : p;
}

// f(x, t) = lambda_f * S(t, F_f(x)), with the flow encoding masked by tau.
template <typename T>
inline Vec2<T> query_flow(const FieldStack<T>& fs, const T* params, Vec2<T> x, T t, double tau) {
  int kept = active_features(tau, fs.flow.cfg);
  T enc[64], cp[64];
  T xin[2] = {x.x, x.y};
  fs.flow.eval(params, xin, kept, cp, enc, nullptr);
  T f[2];
  hermite_eval(cp, fs.pf, 2, t, f);
  return {T(kLambdaFlow) * f[0], T(kLambdaFlow) * f[1]};
}

template <typename T>
inline T clamp01(T v) {
  return v < 0 ? T(0) : (v > 1 ? T(1) : v);
}

template <typename T>
inline T logit_clamped(T a) {
  T lo = T(kEpsAlpha), hi = T(1) - T(kEpsAlpha);
  a = a < lo ? lo : (a > hi ? hi : a);
  return -std::log(T(1) / a - T(1));
}

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Color and opacity of one node at plane point x and view angle phi,
// reference (serial) path. The flow warp is applied to x first; the view
// encoding is masked by tau. Background nodes (no alpha field) report
// opacity 1.
template <typename T>
inline void query_node_fields(const FieldStack<T>& fs, const Grid2<T>& base_color,
                              const Grid2<T>& base_alpha, const T* params, Vec2<T> x,
                              Vec2<T> phi, T t, double tau, Vec3<T>& color, T& opacity) {
  Vec2<T> xp = x + query_flow(fs, params, x, t, tau);
  T enc[64], acts_unused;
  (void)acts_unused;
  T base_c[3];
  sample_grid(base_color, xp, base_c);
  T fc[3];
  {
    T xin[2] = {xp.x, xp.y};
    fs.color.eval(params, xin, fs.color.cfg.out_dim(), fc, enc, nullptr);
  }
  T fv[4];
  {
    int kept = active_features(tau, fs.view.cfg);
    T xin[4] = {xp.x, xp.y, phi.x, phi.y};
    fs.view.eval(params, xin, kept, fv, enc, nullptr);
  }
  color.x = clamp01(base_c[0] + T(kLambdaColor) * fc[0] + T(kLambdaView) * fv[0]);
  color.y = clamp01(base_c[1] + T(kLambdaColor) * fc[1] + T(kLambdaView) * fv[1]);
  color.z = clamp01(base_c[2] + T(kLambdaColor) * fc[2] + T(kLambdaView) * fv[2]);
  if (!fs.has_alpha) {
    opacity = 1;
    return;
  }
  T base_a;
  sample_grid(base_alpha, xp, &base_a);
  T fa;
  {
    T xin[2] = {xp.x, xp.y};
    fs.alpha.eval(params, xin, fs.alpha.cfg.out_dim(), &fa, enc, nullptr);
  }
  opacity = sigmoid(logit_clamped(base_a) + T(kLambdaAlpha) * fa + T(kLambdaView) * fv[3]);
}

}  // namespace nag
