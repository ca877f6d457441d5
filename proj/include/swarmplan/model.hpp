#pragma once

#include <Eigen/Dense>

namespace swarmplan {

// Planar double integrator. State is (px, py, vx, vy), input is the
// commanded acceleration (ax, ay).
struct AgentState {
  double px = 0.0;
  double py = 0.0;
  double vx = 0.0;
  double vy = 0.0;

  Eigen::Vector4d vec() const { return {px, py, vx, vy}; }
  Eigen::Vector2d pos() const { return {px, py}; }
  Eigen::Vector2d vel() const { return {vx, vy}; }

  static AgentState from_vec(const Eigen::Vector4d& v) {
    return {v(0), v(1), v(2), v(3)};
  }
};

struct ControlInput {
  double ax = 0.0;
  double ay = 0.0;

  Eigen::Vector2d vec() const { return {ax, ay}; }

  static ControlInput from_vec(const Eigen::Vector2d& u) { return {u(0), u(1)}; }
};

// Shared physical parameters. Movers are discs of radius R mounted on a
// square base of side w; eps is the extra safety buffer added on top of
// the physical 2R contact distance.
struct AgentParams {
  double R = 0.08;
  double w = 0.115;
  double eps = 0.005;
  double v_max = 1.0;
  double a_max = 5.0;
  double a_peak = 8.0;

  double min_separation() const { return 2.0 * R + eps; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Zero-order-hold discretisation of the double integrator; exact for
// piecewise-constant inputs.
struct DiscreteDynamics {
  double dt = 0.0;
  Eigen::Matrix4d Ad;
  Eigen::Matrix<double, 4, 2> Bd;
};

// dt must be finite and >= 0.
DiscreteDynamics discretize(double dt);

AgentState step(const AgentState& x, const ControlInput& u, const DiscreteDynamics& dyn);

}  // namespace swarmplan
