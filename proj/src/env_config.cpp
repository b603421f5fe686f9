#include "etamix/env_config.hpp"

#include <charconv>

#include <fmt/format.h>

#include "etamix/errors.hpp"

namespace etamix {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidSpecError(fmt::format("config: bad value '{}' for key '{}'", value, key));
  }
  return out;
}

}  // namespace

EnvConfig parse_env_config(const std::map<std::string, std::string>& entries) {
  EnvConfig config;
  for (const auto& [key, value] : entries) {
    if (key == "env") {
      config.kind = value;
    } else if (key == "n") {
      config.n = parse_number<Eigen::Index>(key, value);
    } else if (key == "width") {
      config.width = parse_number<Eigen::Index>(key, value);
    } else if (key == "height") {
      config.height = parse_number<Eigen::Index>(key, value);
    } else if (key == "goal_x") {
      config.goal.x = parse_number<Eigen::Index>(key, value);
    } else if (key == "goal_y") {
      config.goal.y = parse_number<Eigen::Index>(key, value);
    } else if (key == "start_x") {
      config.start.x = parse_number<Eigen::Index>(key, value);
    } else if (key == "start_y") {
      config.start.y = parse_number<Eigen::Index>(key, value);
    } else if (key == "step_reward") {
      config.step_reward = parse_number<double>(key, value);
    } else if (key == "goal_reward") {
      config.goal_reward = parse_number<double>(key, value);
    } else {
      throw InvalidSpecError(fmt::format("config: unknown key '{}'", key));
    }
  }
  // The chain builders have different defaults for n.
  if (config.kind == "det-chain" && !entries.contains("n")) config.n = 16;
  return config;
}

std::map<std::string, std::string> read_config_entries(std::istream& in) {
  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw InvalidSpecError(fmt::format("config line {}: expected key=value", line_no));
    }
    entries[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
  }
  return entries;
}

EnvConfig parse_env_config(std::istream& in) { return parse_env_config(read_config_entries(in)); }

Environment build_environment(const EnvConfig& config) {
  if (config.kind == "det-chain") return build_deterministic_chain(config.n);
  if (config.kind == "random-walk") return build_random_walk(config.n);
  if (config.kind == "gridworld") {
    return build_gridworld(config.width, config.height, config.goal, config.step_reward,
                           config.goal_reward, config.start);
  }
  throw InvalidSpecError(fmt::format("config: unknown env '{}'", config.kind));
}

}  // namespace etamix
