#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccrl/autodiff.hpp"

namespace ccrl {

struct ScheduleConfig {
  double base_lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 2;
};

/// Linear warmup from 0 to base_lr over the warmup steps, then half-cosine
/// decay to 0 at the last step.
double lr_at(std::uint64_t step, const ScheduleConfig& cfg, std::size_t steps_per_epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// false: decay is added to the gradient (L2). true: AdamW-style decay of θ.
  bool decoupled = false;
};

/// Moment estimates aligned index-for-index with a fixed parameter list.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<Parameter<T>* const> params);
};

/// One bias-corrected Adam update. Throws NonFiniteError (before touching any
/// parameter) if a gradient is not finite.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg);

}  // namespace ccrl
