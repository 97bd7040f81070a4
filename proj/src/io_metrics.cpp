// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <vector>

#include "nag/io.h"

namespace nag {

double psnr(const Image& a, const Image& b) {
  NAG_CHECK(a.w == b.w && a.h == b.h && a.c == b.c, "psnr: image shapes differ");
  NAG_CHECK(!a.v.empty(), "psnr: empty images");
  double mse = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    double d = a.v[i] - b.v[i];
    mse += d * d;
  }
  mse /= double(a.v.size());
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> luminance(const Image& img) {
  std::vector<double> y(size_t(img.w) * img.h);
  if (img.c == 1) {
    y.assign(img.v.begin(), img.v.end());
  } else {
    for (size_t i = 0; i < y.size(); ++i) {
      const double* p = img.v.data() + i * img.c;
      y[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return y;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  NAG_CHECK(a.w == b.w && a.h == b.h && a.c == b.c, "ssim: image shapes differ");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  NAG_CHECK(a.w >= kWin && a.h >= kWin, "ssim: image smaller than the 11x11 window");

  double kernel[kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  std::vector<double> xa = luminance(a), xb = luminance(b);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // K1, K2 at dynamic range 1

  // separable Gaussian moments over the valid region
  int W = a.w, H = a.h;
  int ow = W - kWin + 1, oh = H - kWin + 1;
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> tmp(size_t(ow) * H), out(size_t(ow) * oh);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * src[size_t(y) * W + x + k];
        tmp[size_t(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * tmp[size_t(y + k) * ow + x];
        out[size_t(y) * ow + x] = s;
      }
    return out;
  };

  std::vector<double> aa(xa.size()), bb(xa.size()), ab(xa.size());
  for (size_t i = 0; i < xa.size(); ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  std::vector<double> mu_a = blur(xa), mu_b = blur(xb);
  std::vector<double> m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);

  double total = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    double ma = mu_a[i], mb = mu_b[i];
    double va = m_aa[i] - ma * ma;
    double vb = m_bb[i] - mb * mb;
    double cov = m_ab[i] - ma * mb;
    double v = ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    total += v;
  }
  return total / double(mu_a.size());
}

}  // namespace nag
