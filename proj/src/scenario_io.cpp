#include "swarmplan/scenario_io.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace swarmplan {

namespace {

using njson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument(path + " " + what);
}

void check_keys(const njson& o, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : o.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known)
      throw std::invalid_argument("unknown key " +
                                  (path.empty() ? item.key() : path + "." + item.key()));
  }
}

double num(const njson& o, const std::string& path) {
  if (!o.is_number()) fail(path, "must be a number");
  return o.get<double>();
}

int integer(const njson& o, const std::string& path) {
  if (!o.is_number_integer()) fail(path, "must be an integer");
  return o.get<int>();
}

// fixed-length numeric array, the building block of states and rectangles
template <int n>
Eigen::Matrix<double, n, 1> tuple_of(const njson& o, const std::string& path) {
  if (!o.is_array() || o.size() != n)
    fail(path, "must be an array of " + std::to_string(n) + " numbers");
  Eigen::Matrix<double, n, 1> v;
  for (int i = 0; i < n; ++i) v(i) = num(o[static_cast<size_t>(i)], path);
  return v;
}

double field_num(const njson& o, const std::string& path, const char* key, double fallback) {
  return o.contains(key) ? num(o[key], path + "." + key) : fallback;
}

void parse_params(const njson& o, AgentParams& p) {
  check_keys(o, "params", {"R", "w", "eps", "v_max", "a_max", "a_peak"});
  p.R = field_num(o, "params", "R", p.R);
  p.w = field_num(o, "params", "w", p.w);
  p.eps = field_num(o, "params", "eps", p.eps);
  p.v_max = field_num(o, "params", "v_max", p.v_max);
  p.a_max = field_num(o, "params", "a_max", p.a_max);
  p.a_peak = field_num(o, "params", "a_peak", p.a_peak);
}

void parse_horizon(const njson& o, AdmmConfig& cfg) {
  check_keys(o, "horizon", {"Tf", "dt"});
  cfg.dt = field_num(o, "horizon", "dt", cfg.dt);
  const double tf = field_num(o, "horizon", "Tf", cfg.K * cfg.dt);
  if (!(cfg.dt > 0.0)) fail("horizon.dt", "must be > 0");
  const int K = static_cast<int>(std::lround(tf / cfg.dt));
  if (K < 1 || std::abs(K * cfg.dt - tf) > 1e-9 * std::max(1.0, tf))
    fail("horizon.Tf", "must be a positive integer multiple of horizon.dt");
  cfg.K = K;
}

void parse_admm(const njson& o, AdmmConfig& cfg) {
  check_keys(o, "admm", {"m", "m_pre", "mu", "Q", "Rw"});
  if (o.contains("m")) cfg.m = integer(o["m"], "admm.m");
  if (o.contains("m_pre")) cfg.m_pre = integer(o["m_pre"], "admm.m_pre");
  if (o.contains("mu")) cfg.mu = num(o["mu"], "admm.mu");
  if (o.contains("Q")) cfg.Q = tuple_of<4>(o["Q"], "admm.Q").asDiagonal();
  if (o.contains("Rw")) cfg.Rw = tuple_of<2>(o["Rw"], "admm.Rw").asDiagonal();
}

void parse_filter(const njson& o, FilterConfig& f) {
  check_keys(o, "filter", {"K1", "K2", "soft_penalty"});
  f.K1 = field_num(o, "filter", "K1", f.K1);
  f.K2 = field_num(o, "filter", "K2", f.K2);
  f.soft_penalty = field_num(o, "filter", "soft_penalty", f.soft_penalty);
}

AgentState state_of(const njson& o, const std::string& path) {
  return AgentState::from_vec(tuple_of<4>(o, path));
}

char const* kCsvHeader =
    "step,agent,t,px,py,vx,vy,ux_star,uy_star,ux,uy,corridor,filter_active,correction\n";

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Scenario parse_scenario_json(const std::string& text) {
  njson doc;
  try {
    doc = njson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("json: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("scenario document must be an object");
  check_keys(doc, "", {"version", "agents", "params", "arena", "method", "admm", "filter",
                       "horizon", "seed", "max_sim_time"});

  if (!doc.contains("version")) fail("version", "is required");
  if (integer(doc["version"], "version") != 1) fail("version", "must be 1");

  Scenario s;
  s.admm = admm_preset_m20();
  if (doc.contains("params")) parse_params(doc["params"], s.params);
  if (doc.contains("horizon")) parse_horizon(doc["horizon"], s.admm);
  if (doc.contains("admm")) parse_admm(doc["admm"], s.admm);
  if (doc.contains("filter")) parse_filter(doc["filter"], s.filter);
  s.filter.dt = s.admm.dt;
  s.filter.a_peak = s.params.a_peak;

  if (doc.contains("method")) {
    const njson& m = doc["method"];
    if (!m.is_string()) fail("method", "must be a string");
    const std::string name = m.get<std::string>();
    if (name == "admm_hocbf")
      s.method = Method::admm_hocbf;
    else if (name == "centralized")
      s.method = Method::centralized;
    else
      fail("method", "must be \"admm_hocbf\" or \"centralized\"");
  }

  if (doc.contains("seed")) {
    const njson& o = doc["seed"];
    if (!o.is_number_unsigned()) fail("seed", "must be a nonnegative integer");
    s.seed = o.get<std::uint64_t>();
  }
  if (doc.contains("max_sim_time"))
    s.max_sim_time = num(doc["max_sim_time"], "max_sim_time");

  if (doc.contains("arena")) {
    check_keys(doc["arena"], "arena", {"rects"});
    if (doc["arena"].contains("rects")) {
      const njson& rects = doc["arena"]["rects"];
      if (!rects.is_array()) fail("arena.rects", "must be an array");
      for (size_t i = 0; i < rects.size(); ++i) {
        const Eigen::Vector4d r =
            tuple_of<4>(rects[i], "arena.rects[" + std::to_string(i) + "]");
        s.arena.push_back(Rect{r(0), r(1), r(2), r(3)});
      }
    }
  }

  if (!doc.contains("agents")) fail("agents", "is required");
  const njson& agents = doc["agents"];
  if (!agents.is_array() || agents.empty()) fail("agents", "must be a nonempty array");
  for (size_t i = 0; i < agents.size(); ++i) {
    const std::string path = "agents[" + std::to_string(i) + "]";
    check_keys(agents[i], path, {"start", "target"});
    if (!agents[i].contains("start")) fail(path + ".start", "is required");
    if (!agents[i].contains("target")) fail(path + ".target", "is required");
    s.agents.push_back({state_of(agents[i]["start"], path + ".start"),
                        state_of(agents[i]["target"], path + ".target")});
  }

  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  try {
    return parse_scenario_json(read_text_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string scenario_to_json(const Scenario& s) {
  const auto diag4 = [](const Eigen::Matrix4d& M, const char* key) {
    if (!M.isDiagonal(0.0)) throw std::invalid_argument(std::string(key) + " only diagonal weights serialise");
    return njson{M(0, 0), M(1, 1), M(2, 2), M(3, 3)};
  };
  njson doc;
  doc["version"] = 1;
  doc["method"] = to_string(s.method);
  doc["seed"] = s.seed;
  doc["max_sim_time"] = s.max_sim_time;
  doc["params"] = {{"R", s.params.R},         {"w", s.params.w},
                   {"eps", s.params.eps},     {"v_max", s.params.v_max},
                   {"a_max", s.params.a_max}, {"a_peak", s.params.a_peak}};
  doc["horizon"] = {{"Tf", s.admm.K * s.admm.dt}, {"dt", s.admm.dt}};
  if (!s.admm.Rw.isDiagonal(0.0))
    throw std::invalid_argument("admm.Rw only diagonal weights serialise");
  doc["admm"] = {{"m", s.admm.m},
                 {"m_pre", s.admm.m_pre},
                 {"mu", s.admm.mu},
                 {"Q", diag4(s.admm.Q, "admm.Q")},
                 {"Rw", njson{s.admm.Rw(0, 0), s.admm.Rw(1, 1)}}};
  doc["filter"] = {{"K1", s.filter.K1},
                   {"K2", s.filter.K2},
                   {"soft_penalty", s.filter.soft_penalty}};
  njson rects = njson::array();
  for (const Rect& r : s.arena) rects.push_back({r.xmin, r.xmax, r.ymin, r.ymax});
  doc["arena"] = {{"rects", rects}};
  njson agents = njson::array();
  for (const ScenarioAgent& a : s.agents) {
    agents.push_back({{"start", {a.x0.px, a.x0.py, a.x0.vx, a.x0.vy}},
                      {"target", {a.target.px, a.target.py, a.target.vx, a.target.vy}}});
  }
  doc["agents"] = agents;
  return doc.dump(2) + "\n";
}

Scenario random_scenario(int n_agents, std::uint64_t seed, const Rect& bounds,
                         const AgentParams& params) {
  if (n_agents < 1) throw std::invalid_argument("random_scenario: n_agents must be >= 1");
  const Rect shrunk = shrink_rect(bounds, params);
  const double sep = params.min_separation();

  std::mt19937_64 rng(seed);
  const auto uniform = [&rng](double lo, double hi) {
    return lo + (static_cast<double>(rng() >> 11) * 0x1.0p-53) * (hi - lo);
  };

  int budget = 100000;
  const auto sample_set = [&]() {
    std::vector<Eigen::Vector2d> pts;
    while (static_cast<int>(pts.size()) < n_agents) {
      if (--budget < 0)
        throw std::runtime_error(
            "random_scenario: could not place agents in 100000 draws (bounds too crowded)");
      const Eigen::Vector2d q(uniform(shrunk.xmin, shrunk.xmax),
                              uniform(shrunk.ymin, shrunk.ymax));
      bool clear = true;
      for (const Eigen::Vector2d& p : pts) clear = clear && (p - q).norm() >= sep;
      if (clear) pts.push_back(q);
    }
    return pts;
  };
  const std::vector<Eigen::Vector2d> starts = sample_set();
  const std::vector<Eigen::Vector2d> targets = sample_set();

  Scenario s;
  s.params = params;
  s.admm = admm_preset_m20();
  s.arena = {bounds};
  s.seed = seed;
  for (int i = 0; i < n_agents; ++i) {
    const size_t u = static_cast<size_t>(i);
    s.agents.push_back({{starts[u].x(), starts[u].y(), 0.0, 0.0},
                        {targets[u].x(), targets[u].y(), 0.0, 0.0}});
  }
  s.validate();
  return s;
}

std::string episode_csv(const EpisodeLog& log) {
  std::string out = kCsvHeader;
  const double dt = log.scenario.admm.dt;
  const auto state_cols = [&](int step, int agent, const AgentState& x) {
    return std::to_string(step) + "," + std::to_string(agent) + "," + fmt17(step * dt) +
           "," + fmt17(x.px) + "," + fmt17(x.py) + "," + fmt17(x.vx) + "," + fmt17(x.vy);
  };
  for (const StepRecord& rec : log.steps) {
    for (size_t i = 0; i < rec.states.size(); ++i) {
      out += state_cols(rec.step, static_cast<int>(i), rec.states[i]);
      out += "," + fmt17(rec.u_star[i].ax) + "," + fmt17(rec.u_star[i].ay);
      out += "," + fmt17(rec.u[i].ax) + "," + fmt17(rec.u[i].ay);
      out += ",";
      if (!rec.corridor.empty()) out += std::to_string(rec.corridor[i]);
      out += rec.filter_active ? ",1," : ",0,";
      out += fmt17(rec.correction);
      out += "\n";
    }
  }
  for (size_t i = 0; i < log.final_states.size(); ++i) {
    out += state_cols(static_cast<int>(log.steps.size()), static_cast<int>(i),
                      log.final_states[i]);
    out += ",,,,,,,\n";
  }
  return out;
}

std::vector<std::vector<AgentState>> parse_episode_csv(const std::string& text) {
  std::vector<std::vector<AgentState>> knots;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<double, 7> cols{};
    const char* p = line.c_str();
    for (int c = 0; c < 7; ++c) {
      char* end = nullptr;
      cols[static_cast<size_t>(c)] = std::strtod(p, &end);
      if (end == p || (*end != ',' && c < 6))
        throw std::invalid_argument("csv row has too few numeric columns: " + line);
      p = end + 1;
    }
    const size_t step = static_cast<size_t>(cols[0]);
    if (knots.size() <= step) knots.resize(step + 1);
    knots[step].push_back(AgentState{cols[3], cols[4], cols[5], cols[6]});
  }
  return knots;
}

std::string episode_summary_json(const EpisodeLog& log) {
  const EpisodeSummary& m = log.summary;
  njson doc;
  doc["method"] = to_string(log.scenario.method);
  doc["agents"] = log.scenario.agents.size();
  doc["seed"] = log.scenario.seed;
  doc["steps"] = m.steps;
  doc["arrived"] = m.arrived;
  doc["timeout"] = m.timeout;
  doc["transit_time"] = m.transit_time;
  doc["avg_compute_seconds"] = m.avg_compute_seconds;
  doc["collision_count"] = m.collision_count;
  if (std::isfinite(m.min_distance))
    doc["min_distance"] = m.min_distance;
  else
    doc["min_distance"] = nullptr;
  doc["activity_percent"] = m.activity_percent;
  doc["avg_correction"] = m.avg_correction;
  doc["residual_trend_fraction"] = m.residual_trend_fraction;
  njson seconds = njson::array();
  njson residuals = njson::array();
  for (const StepRecord& rec : log.steps) {
    seconds.push_back(rec.step_seconds);
    residuals.push_back(rec.residuals);
  }
  doc["step_seconds"] = seconds;
  doc["residuals"] = residuals;
  return doc.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace swarmplan
