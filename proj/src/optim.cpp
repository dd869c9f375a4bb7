#include "ccrl/optim.hpp"

#include <cmath>
#include <numbers>

namespace ccrl {

double lr_at(std::uint64_t step, const ScheduleConfig& cfg, std::size_t steps_per_epoch) {
  const double warmup = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(cfg.epochs * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.base_lr * s / warmup;
  if (total <= warmup) return cfg.base_lr;
  const double progress = std::min(1.0, (s - warmup) / (total - warmup));
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
AdamState<T> AdamState<T>::zeros_like(std::span<Parameter<T>* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

template <class T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw InvariantError("adam_step: parameter/gradient/state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->value.shape() || state.m[i].shape() != params[i]->value.shape())
      throw InvariantError("adam_step: shape mismatch at " + params[i]->name);
    if (!grads[i].all_finite()) throw NonFiniteError("non-finite gradient for " + params[i]->name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double gj = static_cast<double>(g[j]);
      const double th = static_cast<double>(theta[j]);
      if (!cfg.decoupled) gj += cfg.weight_decay * th;
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double next = th - lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      if (cfg.decoupled) next -= lr * cfg.weight_decay * th;
      theta[j] = static_cast<T>(next);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Parameter<float>* const>, std::span<const Tensor<float>>, AdamState<float>&,
                        double, const AdamConfig&);
template void adam_step(std::span<Parameter<double>* const>, std::span<const Tensor<double>>, AdamState<double>&,
                        double, const AdamConfig&);

}  // namespace ccrl
