#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "etamix/control.hpp"
#include "etamix/env_config.hpp"
#include "etamix/errors.hpp"
#include "etamix/harness.hpp"
#include "etamix/learners.hpp"
#include "etamix/oracle.hpp"

namespace {

using namespace etamix;

enum Exit : int { ok = 0, invalid_arguments = 1, numeric_failure = 2, io_failure = 3 };

struct EnvOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App& cmd, const std::string& default_kind) {
    overrides["env"] = default_kind;
    cmd.add_option("--config", config_path, "key=value environment file");
    add(cmd, "--env", "env", "det-chain | random-walk | gridworld");
    add(cmd, "--n", "n", "chain length");
    add(cmd, "--width", "width", "gridworld width");
    add(cmd, "--height", "height", "gridworld height");
    add(cmd, "--goal-x", "goal_x", "goal column");
    add(cmd, "--goal-y", "goal_y", "goal row");
    add(cmd, "--start-x", "start_x", "start column");
    add(cmd, "--start-y", "start_y", "start row");
    add(cmd, "--step-reward", "step_reward", "reward per gridworld step");
    add(cmd, "--goal-reward", "goal_reward", "reward on reaching the goal");
  }

  // File values first, command-line flags win. The default kind only fills a gap.
  EnvConfig resolve() const {
    std::map<std::string, std::string> entries;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError(fmt::format("cannot open config file '{}'", config_path));
      entries = read_config_entries(in);
    }
    for (const auto& [key, value] : overrides) {
      if (key == "env" && !explicit_kind && entries.contains("env")) continue;
      entries[key] = value;
    }
    return parse_env_config(entries);
  }

  bool explicit_kind = false;

 private:
  void add(CLI::App& cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd.add_option_function<std::string>(
        flag,
        [this, key](const std::string& value) {
          overrides[key] = value;
          if (key == "env") explicit_kind = true;
        },
        help);
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  auto number = [&](std::string_view token) {
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
      throw InvalidSpecError(fmt::format("invalid seed '{}'", token));
    }
    return value;
  };
  std::vector<std::uint64_t> seeds;
  if (text.find(',') == std::string::npos) {
    const std::uint64_t count = number(text);
    if (count == 0) throw InvalidSpecError("--seeds needs at least one seed");
    for (std::uint64_t i = 1; i <= count; ++i) seeds.push_back(2 * i);
    return seeds;
  }
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    seeds.push_back(number(rest.substr(0, comma)));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  return seeds;
}

void ensure_parent(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(fmt::format("cannot create directory '{}': {}", path.parent_path().string(), ec.message()));
}

struct PredictOptions {
  EnvOptions env;
  double eta = 0.5;
  double gamma = 1.0;
  double alpha = 0.1;
  std::optional<double> alpha_sf;
  std::optional<double> alpha_r;
  std::size_t episodes = 400;
  std::uint64_t seed = 2;
  std::string out;
};

int run_predict(const PredictOptions& o) {
  SweepGrid grid;
  grid.env = o.env.resolve();
  grid.etas = {o.eta};
  grid.alphas = {o.alpha};
  grid.seeds = {o.seed};
  grid.episodes = o.episodes;
  grid.gamma = o.gamma;
  grid.alpha_sf = o.alpha_sf;
  grid.alpha_r = o.alpha_r;
  grid.validate();
  const RunRecord record = run_cell(grid, Task::prediction, o.eta, o.alpha, o.seed);
  const auto rows = flatten({record}, grid.episodes);
  if (o.out.empty()) {
    write_raw_csv(rows, std::cout);
  } else {
    ensure_parent(o.out);
    write_raw_csv(rows, std::filesystem::path(o.out));
  }
  if (record.failed) {
    fmt::print(stderr, "run failed: {}\n", record.error);
    return numeric_failure;
  }
  double mean = 0.0;
  for (double m : record.metric) mean += m;
  mean /= static_cast<double>(record.metric.size());
  fmt::print(stderr, "final rmse {:.6g}, mean over {} episodes {:.6g}\n", record.metric.back(),
             record.metric.size(), mean);
  return ok;
}

struct SweepOptions {
  EnvOptions env;
  std::string task = "prediction";
  std::vector<double> etas = SweepGrid{}.etas;
  std::vector<double> alphas = SweepGrid{}.alphas;
  std::string seeds = "10";
  std::size_t episodes = 400;
  double gamma = 1.0;
  double control_gamma = 0.99;
  std::optional<double> alpha_sf;
  std::optional<double> alpha_r;
  unsigned threads = 0;
  std::string out = "sweep-out";
};

int run_sweep_command(const SweepOptions& o) {
  const Task task = parse_task(o.task);
  SweepGrid grid;
  grid.env = o.env.resolve();
  grid.etas = o.etas;
  grid.alphas = o.alphas;
  grid.seeds = parse_seeds(o.seeds);
  grid.episodes = o.episodes;
  grid.gamma = o.gamma;
  grid.control.gamma = o.control_gamma;
  grid.alpha_sf = o.alpha_sf;
  grid.alpha_r = o.alpha_r;
  grid.threads = o.threads;
  grid.validate();

  const auto records = run_sweep(grid, task);
  const auto rows = aggregate(records, Reduce::mean_over_episodes);
  const bool minimize = task == Task::prediction;
  const auto best = best_per_eta(rows, minimize);

  const std::filesystem::path dir(o.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));
  write_raw_csv(flatten(records, grid.episodes), dir / "raw.csv");
  write_aggregate_csv(rows, dir / "aggregate.csv");
  write_aggregate_csv(best, dir / "best.csv");
  PlotSpec plot;
  plot.title = fmt::format("{} on {}", task == Task::prediction ? "RMSE" : "return", grid.env.kind);
  plot.y_label = task == Task::prediction ? "mean RMSE" : "mean return";
  render_svg(rows, dir / "plot.svg", plot);

  std::size_t failed = 0;
  for (const RunRecord& r : records) failed += r.failed ? 1 : 0;
  fmt::print("{:>6} {:>6} {:>12} {:>10} {:>6}\n", "eta", "alpha", "mean", "ci95", "seeds");
  for (const AggregateRow& row : best) {
    fmt::print("{:>6} {:>6} {:>12.6f} {:>10.6f} {:>6}\n", row.eta, row.alpha, row.metric_mean,
               row.ci95_half, row.n_seeds);
  }
  fmt::print("{} cells, {} failed, output in {}\n", records.size(), failed, dir.string());
  return failed == records.size() ? numeric_failure : ok;
}

struct ControlOptions {
  EnvOptions env;
  double eta = 0.5;
  double gamma = 0.99;
  double alpha = 0.1;
  std::optional<double> alpha_sf;
  std::optional<double> alpha_r;
  std::size_t steps = 50'000;
  double epsilon_initial = 1.0;
  double epsilon_final = 0.1;
  std::size_t epsilon_anneal = 10'000;
  bool fitted_q = false;
  std::size_t buffer = 10'000;
  std::size_t batch = 32;
  std::uint64_t seed = 2;
  std::string out;
};

int run_control_command(const ControlOptions& o) {
  const EnvConfig env_config = o.env.resolve();
  const Environment env = build_environment(env_config);
  const auto* mdp = std::get_if<MdpSpec>(&env);
  if (mdp == nullptr) throw InvalidSpecError("control needs an environment with actions (gridworld)");
  const FeatureMatrix features = FeatureMatrix::tabular(mdp->terminal());

  ControlConfig config;
  config.eta = o.eta;
  config.gamma = o.gamma;
  config.alpha = {o.alpha, o.alpha_sf.value_or(o.alpha), o.alpha_r.value_or(o.alpha)};
  config.steps = o.steps;
  config.epsilon = {o.epsilon_initial, o.epsilon_final, o.epsilon_anneal};
  config.mode = o.fitted_q ? ControlConfig::Mode::fitted_q : ControlConfig::Mode::online;
  config.buffer_capacity = o.buffer;
  config.batch_size = o.batch;

  Rng rng(o.seed);
  const ControlResult result = run_control(*mdp, features, config, rng);
  const double greedy = greedy_return(*mdp, result.state, features, rng);

  const OptimalValues optimal = value_iteration(*mdp, o.gamma);
  const auto policy = greedy_policy(result.state, features);
  std::size_t matches = 0;
  std::size_t decisions = 0;
  for (StateIndex s = 0; s < mdp->n_states(); ++s) {
    if (mdp->is_terminal(s)) continue;
    ++decisions;
    const auto best = greedy_actions(optimal.q.row(s).transpose());
    if (std::find(best.begin(), best.end(), policy[static_cast<std::size_t>(s)]) != best.end()) ++matches;
  }

  if (!o.out.empty()) {
    const std::filesystem::path path(o.out);
    ensure_parent(path);
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    file << "episode,return\n";
    for (std::size_t i = 0; i < result.episode_returns.size(); ++i) {
      fmt::print(file, "{},{:.17g}\n", i + 1, result.episode_returns[i]);
    }
    if (!file) throw IoError(fmt::format("write to '{}' failed", path.string()));
  }
  fmt::print("episodes          {}\n", result.episode_returns.size());
  fmt::print("greedy return     {:.6g}\n", greedy);
  fmt::print("optimal actions   {}/{} states\n", matches, decisions);
  return ok;
}

struct OracleOptions {
  EnvOptions env;
  double eta = 0.5;
  double gamma = 1.0;
  std::size_t iterations = 10'000;
  bool csv = false;
};

int run_oracle_command(const OracleOptions& o) {
  const EnvConfig env_config = o.env.resolve();
  const Environment env = build_environment(env_config);
  std::vector<bool> terminal;
  MatrixForm form;
  OnPolicyDistribution dist;
  if (const auto* mrp = std::get_if<MrpSpec>(&env)) {
    terminal = mrp->terminal();
    form = matrix_form(*mrp);
    dist = on_policy_distribution(*mrp);
  } else {
    const auto& mdp = std::get<MdpSpec>(env);
    const Policy policy = uniform_policy(mdp);
    terminal = mdp.terminal();
    form = matrix_form(mdp, policy);
    dist = on_policy_distribution(mdp, policy);
  }
  const FeatureMatrix features = FeatureMatrix::tabular(terminal);
  const LinearProblem problem = make_problem(features, dist, form);
  const FixedPointReport report = proposition_check(
      problem, o.gamma, o.eta, Eigen::VectorXd::Zero(features.dim()), o.iterations);
  const double final_distance = report.iteration_trace.back();

  if (o.csv) {
    fmt::print("env,eta,gamma,index,theta_td,theta_td_eta,w_hat,lemma_residual,final_distance\n");
    for (Eigen::Index i = 0; i < report.theta_td.size(); ++i) {
      fmt::print("{},{:.17g},{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", env_config.kind,
                 o.eta, o.gamma, i, report.theta_td(i), report.theta_td_eta(i), report.w_hat(i),
                 report.lemma_residual, final_distance);
    }
    return ok;
  }
  fmt::print("env               {}\n", env_config.kind);
  fmt::print("eta               {}\n", o.eta);
  fmt::print("gamma             {}\n", o.gamma);
  fmt::print("lemma residual    {:.3e}\n", report.lemma_residual);
  fmt::print("iterations        {}\n", report.iteration_trace.size() - 1);
  fmt::print("final distance    {:.3e}\n\n", final_distance);
  fmt::print("{:>6} {:>14} {:>14} {:>14} {:>14}\n", "index", "theta_td", "theta_td_eta", "w_hat",
             "theta_final");
  for (Eigen::Index i = 0; i < report.theta_td.size(); ++i) {
    fmt::print("{:>6} {:>14.8f} {:>14.8f} {:>14.8f} {:>14.8f}\n", i, report.theta_td(i),
               report.theta_td_eta(i), report.w_hat(i), report.theta_final(i));
  }
  return ok;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    fmt::print(stderr, "I/O error: {}\n", e.what());
    return io_failure;
  } catch (const SingularityError& e) {
    fmt::print(stderr, "numeric failure: {} (condition number {:.3e})\n", e.what(), e.condition_number());
    return numeric_failure;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return numeric_failure;
  } catch (const NumericOverflowError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return numeric_failure;
  } catch (const NoSolutionError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return numeric_failure;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return invalid_arguments;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eta-return mixture toolkit"};
  app.require_subcommand(1);

  PredictOptions predict;
  auto* predict_cmd = app.add_subcommand("predict", "learn values on a chain and record RMSE per episode");
  predict.env.attach(*predict_cmd, "random-walk");
  predict_cmd->add_option("--eta", predict.eta, "mixture weight in [0, 1]");
  predict_cmd->add_option("--gamma", predict.gamma, "discount");
  predict_cmd->add_option("--alpha", predict.alpha, "value learning rate");
  predict_cmd->add_option("--alpha-sf", predict.alpha_sf, "successor-feature learning rate");
  predict_cmd->add_option("--alpha-r", predict.alpha_r, "reward learning rate");
  predict_cmd->add_option("--episodes", predict.episodes, "number of episodes");
  predict_cmd->add_option("--seed", predict.seed, "seed");
  predict_cmd->add_option("--out", predict.out, "raw CSV path (stdout when omitted)");

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over eta, alpha and seeds");
  sweep.env.attach(*sweep_cmd, "random-walk");
  sweep_cmd->add_option("--task", sweep.task, "prediction | control");
  sweep_cmd->add_option("--etas", sweep.etas, "comma-separated eta values")->delimiter(',');
  sweep_cmd->add_option("--alphas", sweep.alphas, "comma-separated learning rates")->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep.seeds, "count N (seeds 2, 4, ..., 2N) or a comma list");
  sweep_cmd->add_option("--episodes", sweep.episodes, "episodes per cell");
  sweep_cmd->add_option("--gamma", sweep.gamma, "discount for prediction cells");
  sweep_cmd->add_option("--control-gamma", sweep.control_gamma, "discount for control cells");
  sweep_cmd->add_option("--alpha-sf", sweep.alpha_sf, "fixed successor-feature learning rate");
  sweep_cmd->add_option("--alpha-r", sweep.alpha_r, "fixed reward learning rate");
  sweep_cmd->add_option("--threads", sweep.threads, "worker threads, 0 for all cores");
  sweep_cmd->add_option("--out", sweep.out, "output directory");

  ControlOptions control;
  auto* control_cmd = app.add_subcommand("control", "eta-Q-learning on a gridworld");
  control.env.attach(*control_cmd, "gridworld");
  control_cmd->add_option("--eta", control.eta, "mixture weight in [0, 1]");
  control_cmd->add_option("--gamma", control.gamma, "discount");
  control_cmd->add_option("--alpha", control.alpha, "Q learning rate");
  control_cmd->add_option("--alpha-sf", control.alpha_sf, "successor-feature learning rate");
  control_cmd->add_option("--alpha-r", control.alpha_r, "reward learning rate");
  control_cmd->add_option("--steps", control.steps, "environment steps");
  control_cmd->add_option("--epsilon-start", control.epsilon_initial, "initial exploration rate");
  control_cmd->add_option("--epsilon-final", control.epsilon_final, "final exploration rate");
  control_cmd->add_option("--epsilon-anneal", control.epsilon_anneal, "steps of linear annealing");
  control_cmd->add_flag("--fitted-q", control.fitted_q, "minibatch updates from a replay buffer");
  control_cmd->add_option("--buffer", control.buffer, "replay capacity");
  control_cmd->add_option("--batch", control.batch, "minibatch size");
  control_cmd->add_option("--seed", control.seed, "seed");
  control_cmd->add_option("--out", control.out, "CSV of per-episode returns");

  OracleOptions oracle;
  auto* oracle_cmd = app.add_subcommand("oracle", "closed-form fixed points and the expected-update check");
  oracle.env.attach(*oracle_cmd, "random-walk");
  oracle_cmd->add_option("--eta", oracle.eta, "mixture weight in [0, 1]");
  oracle_cmd->add_option("--gamma", oracle.gamma, "discount");
  oracle_cmd->add_option("--iterations", oracle.iterations, "expected-update iterations");
  oracle_cmd->add_flag("--csv", oracle.csv, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : invalid_arguments;
  }

  if (*predict_cmd) return guarded([&] { return run_predict(predict); });
  if (*sweep_cmd) return guarded([&] { return run_sweep_command(sweep); });
  if (*control_cmd) return guarded([&] { return run_control_command(control); });
  return guarded([&] { return run_oracle_command(oracle); });
}
