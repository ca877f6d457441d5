#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swarmplan/sim.hpp"

namespace swarmplan {

// Parses the versioned JSON scenario document. Unknown keys anywhere in the
// document are rejected; every failure throws std::invalid_argument whose
// message names the offending key path (for example "params.R" or
// "agents[2].start"). The parsed scenario is validated before it is
// returned.
Scenario parse_scenario_json(const std::string& text);

// parse_scenario_json on the file's contents; the message carries the path.
Scenario load_scenario(const std::string& path);

// Canonical serialisation: fixed key order and two-space indentation, so
// identical scenarios serialise to identical bytes. Round-trips through
// parse_scenario_json.
std::string scenario_to_json(const Scenario& s);

// Deterministic scenario sampler: starts and targets drawn uniformly over
// the shrunk bounds, each set rejection-sampled to pairwise separation of
// at least 2R + eps. The rectangle becomes the scenario's arena. Throws
// std::runtime_error when 1e5 draws cannot place the agents (too crowded).
Scenario random_scenario(int n_agents, std::uint64_t seed, const Rect& bounds,
                         const AgentParams& params = AgentParams{});

// Trajectory table: one row per step per agent plus one terminal row per
// agent. Doubles carry 17 significant digits, so parsing the emitted text
// reproduces the logged states bit for bit.
std::string episode_csv(const EpisodeLog& log);

// State columns of an emitted table, indexed [knot][agent]; the last knot
// holds the terminal states.
std::vector<std::vector<AgentState>> parse_episode_csv(const std::string& text);

// Episode summary plus the per-step compute times and residual curves.
std::string episode_summary_json(const EpisodeLog& log);

// Throws std::runtime_error naming the path on failure.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace swarmplan
