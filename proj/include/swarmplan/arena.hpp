#pragma once

#include <Eigen/Dense>
#include <vector>

#include "swarmplan/model.hpp"

namespace swarmplan {

// Axis-aligned rectangle, outer walls. Agents are squares of side w, so
// the centre must keep w/2 + eps clear of every wall.
struct Rect {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  Eigen::Vector2d center() const { return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax)}; }
  bool contains(const Eigen::Vector2d& p, double tol = 0.0) const {
    return p.x() >= xmin - tol && p.x() <= xmax + tol && p.y() >= ymin - tol &&
           p.y() <= ymax + tol;
  }
};

// Inset a wall rectangle to the admissible set of agent centres.
// Throws std::invalid_argument when the interior would be empty.
Rect shrink_rect(const Rect& r, const AgentParams& params);

// One-step box on the acceleration that keeps the next position inside
// the given centre bounds under the constant-acceleration step law. The
// box is nonempty for any valid rectangle (inputs are unbounded at this
// layer); `clamped` only guards degenerate bounds and collapses the box
// onto its midpoint.
struct InputBounds {
  Eigen::Vector2d lo{0.0, 0.0};
  Eigen::Vector2d hi{0.0, 0.0};
  bool clamped = false;
};

InputBounds input_space_bounds(const AgentState& x, const Rect& shrunk,
                               const AgentParams& params, double dt);

struct Overlap {
  int a = 0, b = 0;  // corridor ids, a < b
  Rect zone;
  Eigen::Vector2d sub_target{0.0, 0.0};  // centroid of the zone
};

struct CorridorMap {
  std::vector<Rect> corridors;
  std::vector<Overlap> overlaps;
  std::vector<std::vector<int>> adjacency;  // corridor id -> neighbour ids, ascending

  int overlap_between(int a, int b) const;
  // ids of corridors whose shrunk bounds contain p, ascending
  std::vector<int> corridors_containing(const Eigen::Vector2d& p, const AgentParams& params,
                                        double tol = 1e-9) const;
};

// Validates the corridors, computes pairwise overlap zones with their
// sub-targets and checks that the corridor graph is connected. Overlap
// zones too thin for an agent to pass are scenario errors; zero-area
// contact (shared edge only) simply yields no adjacency.
CorridorMap build_corridor_map(std::vector<Rect> rects, const AgentParams& params);

// Route of one agent through the corridor graph: sub-targets at the
// overlap centroids along the way, then the true target. points[i] is
// tracked while corridor_seq[i] is the active corridor.
struct SubTargetPlan {
  std::vector<Eigen::Vector2d> points;
  std::vector<int> corridor_seq;
  int index = 0;

  const Eigen::Vector2d& current_target() const { return points[index]; }
  int active_corridor() const { return corridor_seq[index]; }
  bool on_final_leg() const { return index + 1 == static_cast<int>(points.size()); }
};

SubTargetPlan plan_subtargets(const CorridorMap& map, const Eigen::Vector2d& start_pos,
                              const Eigen::Vector2d& target_pos, const AgentParams& params);

// Advance to the next leg once the agent sits inside the overlap zone
// and its whole body already fits in the next corridor. At most one
// switch per call; returns whether a switch happened.
bool advance_plan(SubTargetPlan& plan, const Eigen::Vector2d& current_pos,
                  const CorridorMap& map, const AgentParams& params);

}  // namespace swarmplan
