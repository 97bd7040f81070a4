// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode machinery. A Tape owns an arena for values saved during the
// forward pass and a LIFO list of backward hooks; recorded forwards are
// bit-identical to unrecorded ones because recording only saves data.
// grad_check verifies any recorded scalar function against central
// differences on registry parameters.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "nag/check.h"
#include "nag/params.h"
#include "nag/rng.h"

namespace nag {

template <typename T>
class Tape {
 public:
  // Arena storage valid until clear(); pointer-stable.
  T* alloc(size_t n) {
    if (used_ + n > cap_) {
      size_t want = n > kChunk ? n : kChunk;
      chunks_.push_back(std::make_unique<T[]>(want));
      cur_ = chunks_.back().get();
      cap_ = want;
      used_ = 0;
    }
    T* p = cur_ + used_;
    used_ += n;
    return p;
  }

  template <typename F>
  void on_backward(F&& fn) {
    hooks_.emplace_back(std::forward<F>(fn));
  }

  size_t num_ops() const { return hooks_.size(); }

  // Runs hooks in reverse recording order, once each.
  void backward() {
    for (size_t i = hooks_.size(); i-- > 0;) hooks_[i]();
  }

  void clear() {
    hooks_.clear();
    // keep only the largest chunk to bound steady-state allocation
    if (chunks_.size() > 1) {
      std::unique_ptr<T[]> keep = std::move(chunks_.back());
      chunks_.clear();
      chunks_.push_back(std::move(keep));
    }
    if (!chunks_.empty()) {
      cur_ = chunks_.back().get();
      used_ = 0;
    }
  }

 private:
  static constexpr size_t kChunk = size_t(1) << 22;  // 4M scalars
  std::vector<std::unique_ptr<T[]>> chunks_;
  T* cur_ = nullptr;
  size_t cap_ = 0, used_ = 0;
  std::vector<std::function<void()>> hooks_;
};

struct GradCheckItem {
  size_t index = 0;
  std::string group;
  double ad = 0, fd = 0, rel = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  int checked = 0;
  GradCheckItem worst;
};

// Central differences on `samples` parameters drawn round-robin across
// groups (uniform within each group). f(true) must return the loss and
// leave gradients in reg.grads; f(false) must only return the loss.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, ParamRegistry<T>& reg, double step, int samples,
                           uint64_t seed) {
  std::fill(reg.grads.begin(), reg.grads.end(), T(0));
  (void)f(true);
  std::vector<T> ad(reg.grads);

  Rng rng(seed);
  GradCheckReport rep;
  size_t ngroups = reg.groups.size();
  NAG_CHECK(ngroups > 0, "registry has no groups");
  for (int s = 0; s < samples; ++s) {
    const ParamGroup& g = reg.groups[s % ngroups];
    if (g.size == 0) continue;
    size_t idx = g.offset + rng.below(g.size);
    T saved = reg.values[idx];
    reg.values[idx] = saved + T(step);
    double fp = double(f(false));
    reg.values[idx] = saved - T(step);
    double fm = double(f(false));
    reg.values[idx] = saved;
    double fd = (fp - fm) / (2 * step);
    double adv = double(ad[idx]);
    double rel = std::abs(adv - fd) / std::max(1e-8, std::abs(adv) + std::abs(fd));
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = {idx, g.name, adv, fd, rel};
    }
  }
  return rep;
}

}  // namespace nag
