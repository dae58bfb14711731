#include "cape/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace cape::nn {

double cosine_lr(int64_t t, int64_t total_steps, double eta0) {
  require(total_steps >= 1, "schedule: total_steps must be >= 1");
  require(t >= 0, "schedule: step must be non-negative");
  require(t <= total_steps, "schedule: step " + std::to_string(t) + " exceeds total " + std::to_string(total_steps));
  return eta0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total_steps)));
}

template <class S>
void adam_step(AdamState<S>& state, const std::vector<Param<S>*>& params, double lr) {
  require(state.m.size() == params.size(), "adam: state not attached to these parameters");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const S one_minus_b1 = static_cast<S>(1.0 - state.beta1), one_minus_b2 = static_cast<S>(1.0 - state.beta2);
  const S inv_bc1 = static_cast<S>(1.0 / bc1), inv_bc2 = static_cast<S>(1.0 / bc2);
  const S eps = static_cast<S>(state.eps), step_size = static_cast<S>(lr);

  for (size_t k = 0; k < params.size(); ++k) {
    Param<S>& p = *params[k];
    if (!p.grad.allFinite()) fail("non-finite gradient in parameter " + p.name);
    auto g = p.grad.array();
    state.m[k] = (b1 * state.m[k].array() + one_minus_b1 * g).matrix();
    state.v[k] = (b2 * state.v[k].array() + one_minus_b2 * g.square()).matrix();
    auto m_hat = state.m[k].array() * inv_bc1;
    auto v_hat = state.v[k].array() * inv_bc2;
    p.value.array() -= step_size * m_hat / (v_hat.sqrt() + eps);
  }
}

template void adam_step<float>(AdamState<float>&, const std::vector<Param<float>*>&, double);
template void adam_step<double>(AdamState<double>&, const std::vector<Param<double>*>&, double);

} // namespace cape::nn
