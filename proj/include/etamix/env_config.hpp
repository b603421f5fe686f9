#pragma once

#include <istream>
#include <map>
#include <string>

#include "etamix/env.hpp"

namespace etamix {

/// Plain-text environment description, one `key=value` per line:
///
///     env=random-walk
///     n=19
///
/// Recognised keys: env (det-chain | random-walk | gridworld), n, width,
/// height, goal_x, goal_y, start_x, start_y, step_reward, goal_reward.
/// Blank lines and lines starting with '#' are ignored.
struct EnvConfig {
  std::string kind = "random-walk";
  Eigen::Index n = 19;
  Eigen::Index width = 5;
  Eigen::Index height = 5;
  GridCell goal{4, 4};
  GridCell start{0, 0};
  double step_reward = 0.0;
  double goal_reward = 1.0;
};

/// Raw key=value pairs, later lines overriding earlier ones. Throws
/// InvalidSpecError on a line without '='.
std::map<std::string, std::string> read_config_entries(std::istream& in);

/// Throws InvalidSpecError on unknown keys or malformed values.
EnvConfig parse_env_config(std::istream& in);
EnvConfig parse_env_config(const std::map<std::string, std::string>& entries);

Environment build_environment(const EnvConfig& config);

}  // namespace etamix
