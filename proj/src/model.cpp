#include "swarmplan/model.hpp"

#include <cmath>
#include <stdexcept>

namespace swarmplan {

void AgentParams::validate() const {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(R) || R <= 0.0) throw std::invalid_argument("params.R must be finite and > 0");
  if (bad(w) || w <= 0.0) throw std::invalid_argument("params.w must be finite and > 0");
  if (bad(eps) || eps < 0.0) throw std::invalid_argument("params.eps must be finite and >= 0");
  if (bad(v_max) || v_max <= 0.0) throw std::invalid_argument("params.v_max must be finite and > 0");
  if (bad(a_max) || a_max <= 0.0) throw std::invalid_argument("params.a_max must be finite and > 0");
  if (bad(a_peak) || a_peak < a_max)
    throw std::invalid_argument("params.a_peak must be finite and >= params.a_max");
}

DiscreteDynamics discretize(double dt) {
  if (!std::isfinite(dt) || dt < 0.0) throw std::invalid_argument("dt must be finite and >= 0");
  DiscreteDynamics d;
  d.dt = dt;
  d.Ad.setIdentity();
  d.Ad(0, 2) = dt;
  d.Ad(1, 3) = dt;
  d.Bd.setZero();
  d.Bd(0, 0) = 0.5 * dt * dt;
  d.Bd(1, 1) = 0.5 * dt * dt;
  d.Bd(2, 0) = dt;
  d.Bd(3, 1) = dt;
  return d;
}

AgentState step(const AgentState& x, const ControlInput& u, const DiscreteDynamics& dyn) {
  return AgentState::from_vec(dyn.Ad * x.vec() + dyn.Bd * u.vec());
}

}  // namespace swarmplan
