#include "swarmplan/arena.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace swarmplan {

namespace {

double body_margin(const AgentParams& params) { return 0.5 * params.w + params.eps; }

// positive-area intersection or a degenerate rect with non-positive sides
Rect intersect(const Rect& a, const Rect& b) {
  Rect r;
  r.xmin = std::max(a.xmin, b.xmin);
  r.xmax = std::min(a.xmax, b.xmax);
  r.ymin = std::max(a.ymin, b.ymin);
  r.ymax = std::min(a.ymax, b.ymax);
  return r;
}

}  // namespace

Rect shrink_rect(const Rect& r, const AgentParams& params) {
  params.validate();
  const double m = body_margin(params);
  Rect s{r.xmin + m, r.xmax - m, r.ymin + m, r.ymax - m};
  if (!(s.width() > 0.0) || !(s.height() > 0.0)) {
    std::ostringstream msg;
    msg << "arena: rectangle [" << r.xmin << "," << r.xmax << "]x[" << r.ymin << "," << r.ymax
        << "] leaves no room for an agent of footprint " << 2.0 * m;
    throw std::invalid_argument(msg.str());
  }
  return s;
}

InputBounds input_space_bounds(const AgentState& x, const Rect& shrunk,
                               const AgentParams& params, double dt) {
  (void)params;
  if (!(dt > 0.0)) throw std::invalid_argument("arena: dt must be > 0");
  const double h = 0.5 * dt * dt;
  InputBounds out;
  const double drift_x = x.px + x.vx * dt;
  const double drift_y = x.py + x.vy * dt;
  out.lo.x() = (shrunk.xmin - drift_x) / h;
  out.hi.x() = (shrunk.xmax - drift_x) / h;
  out.lo.y() = (shrunk.ymin - drift_y) / h;
  out.hi.y() = (shrunk.ymax - drift_y) / h;
  for (int axis = 0; axis < 2; ++axis) {
    if (out.lo(axis) > out.hi(axis)) {
      // only reachable from a state outside the bounds; aim at the box
      const double mid = 0.5 * (out.lo(axis) + out.hi(axis));
      out.lo(axis) = mid;
      out.hi(axis) = mid;
      out.clamped = true;
    }
  }
  return out;
}

int CorridorMap::overlap_between(int a, int b) const {
  if (a > b) std::swap(a, b);
  for (size_t i = 0; i < overlaps.size(); ++i)
    if (overlaps[i].a == a && overlaps[i].b == b) return static_cast<int>(i);
  return -1;
}

std::vector<int> CorridorMap::corridors_containing(const Eigen::Vector2d& p,
                                                   const AgentParams& params, double tol) const {
  std::vector<int> out;
  for (size_t c = 0; c < corridors.size(); ++c)
    if (shrink_rect(corridors[c], params).contains(p, tol)) out.push_back(static_cast<int>(c));
  return out;
}

CorridorMap build_corridor_map(std::vector<Rect> rects, const AgentParams& params) {
  if (rects.empty()) throw std::invalid_argument("arena: at least one rectangle required");
  const double pass = params.w + 2.0 * params.eps;  // agent footprint incl. margin
  CorridorMap map;
  for (const Rect& r : rects) shrink_rect(r, params);  // validates mover fit
  map.corridors = std::move(rects);

  const int nc = static_cast<int>(map.corridors.size());
  map.adjacency.assign(nc, {});
  for (int a = 0; a < nc; ++a) {
    for (int b = a + 1; b < nc; ++b) {
      const Rect zone = intersect(map.corridors[a], map.corridors[b]);
      // shared edges or corners are not passages
      if (zone.width() <= 1e-9 || zone.height() <= 1e-9) continue;
      if (zone.width() < pass || zone.height() < pass) {
        std::ostringstream msg;
        msg << "arena: overlap of rectangles " << a << " and " << b << " is " << zone.width()
            << " x " << zone.height() << ", too thin for an agent needing " << pass;
        throw std::invalid_argument(msg.str());
      }
      Overlap ov;
      ov.a = a;
      ov.b = b;
      ov.zone = zone;
      ov.sub_target = zone.center();
      map.overlaps.push_back(ov);
      map.adjacency[a].push_back(b);
      map.adjacency[b].push_back(a);
    }
  }
  for (auto& nbrs : map.adjacency) std::sort(nbrs.begin(), nbrs.end());

  // connectivity sweep; report the partition if it fails
  std::vector<int> comp(nc, -1);
  int ncomp = 0;
  for (int s = 0; s < nc; ++s) {
    if (comp[s] >= 0) continue;
    std::deque<int> queue{s};
    comp[s] = ncomp;
    while (!queue.empty()) {
      const int c = queue.front();
      queue.pop_front();
      for (int nb : map.adjacency[c])
        if (comp[nb] < 0) {
          comp[nb] = ncomp;
          queue.push_back(nb);
        }
    }
    ++ncomp;
  }
  if (ncomp > 1) {
    std::ostringstream msg;
    msg << "arena: corridor graph is disconnected:";
    for (int g = 0; g < ncomp; ++g) {
      msg << (g == 0 ? " {" : " | {");
      bool first = true;
      for (int c = 0; c < nc; ++c)
        if (comp[c] == g) {
          msg << (first ? "" : ",") << c;
          first = false;
        }
      msg << "}";
    }
    throw std::invalid_argument(msg.str());
  }
  return map;
}

SubTargetPlan plan_subtargets(const CorridorMap& map, const Eigen::Vector2d& start_pos,
                              const Eigen::Vector2d& target_pos, const AgentParams& params) {
  const std::vector<int> starts = map.corridors_containing(start_pos, params);
  const std::vector<int> goals = map.corridors_containing(target_pos, params);
  if (starts.empty()) throw std::invalid_argument("arena: start position lies in no corridor");
  if (goals.empty()) throw std::invalid_argument("arena: target position lies in no corridor");

  // breadth-first from the lowest-id start corridor; visiting neighbours
  // in ascending order makes the found path deterministic
  const int s = starts.front();
  const int nc = static_cast<int>(map.corridors.size());
  std::vector<int> parent(nc, -1), dist(nc, -1);
  std::deque<int> queue{s};
  dist[s] = 0;
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    for (int nb : map.adjacency[c])
      if (dist[nb] < 0) {
        dist[nb] = dist[c] + 1;
        parent[nb] = c;
        queue.push_back(nb);
      }
  }
  int goal = -1;
  for (int g : goals)
    if (dist[g] >= 0 && (goal < 0 || dist[g] < dist[goal])) goal = g;
  if (goal < 0) throw std::invalid_argument("arena: no corridor path from start to target");

  std::vector<int> path;
  for (int c = goal; c >= 0; c = parent[c]) path.push_back(c);
  std::reverse(path.begin(), path.end());

  SubTargetPlan plan;
  plan.corridor_seq = path;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    const int ov = map.overlap_between(path[i], path[i + 1]);
    plan.points.push_back(map.overlaps[ov].sub_target);
  }
  plan.points.push_back(target_pos);
  return plan;
}

bool advance_plan(SubTargetPlan& plan, const Eigen::Vector2d& current_pos,
                  const CorridorMap& map, const AgentParams& params) {
  if (plan.on_final_leg()) return false;
  const int cur = plan.corridor_seq[plan.index];
  const int next = plan.corridor_seq[plan.index + 1];
  const int ov = map.overlap_between(cur, next);
  if (ov < 0) return false;
  if (!map.overlaps[ov].zone.contains(current_pos)) return false;
  if (!shrink_rect(map.corridors[next], params).contains(current_pos, 1e-12)) return false;
  ++plan.index;
  return true;
}

}  // namespace swarmplan
