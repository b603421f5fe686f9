#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace etamix {

/// Every stochastic operation takes its generator explicitly.
using Rng = std::mt19937_64;

using StateIndex = Eigen::Index;
using ActionIndex = Eigen::Index;

/// Finite Markov reward process. Rewards are deterministic given (s, s').
///
/// Terminal states are absorbing (self-loop with probability 1, zero reward)
/// so the matrix form stays well defined with gamma = 1 on episodic chains.
class MrpSpec {
 public:
  /// Throws InvalidSpecError if any invariant is violated.
  MrpSpec(std::string name, Eigen::MatrixXd transition, Eigen::MatrixXd reward,
          std::vector<bool> terminal, Eigen::VectorXd start);

  const std::string& name() const noexcept { return name_; }
  Eigen::Index n_states() const noexcept { return transition_.rows(); }
  const Eigen::MatrixXd& transition() const noexcept { return transition_; }
  /// reward()(s, s') is the reward for the transition s -> s'.
  const Eigen::MatrixXd& reward() const noexcept { return reward_; }
  const std::vector<bool>& terminal() const noexcept { return terminal_; }
  bool is_terminal(StateIndex s) const { return terminal_.at(static_cast<std::size_t>(s)); }
  const Eigen::VectorXd& start() const noexcept { return start_; }

 private:
  std::string name_;
  Eigen::MatrixXd transition_;
  Eigen::MatrixXd reward_;
  std::vector<bool> terminal_;
  Eigen::VectorXd start_;
};

/// Finite MDP with per-action transition and (s, s') reward matrices.
class MdpSpec {
 public:
  MdpSpec(std::string name, std::vector<Eigen::MatrixXd> transition,
          std::vector<Eigen::MatrixXd> reward, std::vector<bool> terminal, Eigen::VectorXd start);

  const std::string& name() const noexcept { return name_; }
  Eigen::Index n_states() const noexcept { return transition_.front().rows(); }
  Eigen::Index n_actions() const noexcept { return static_cast<Eigen::Index>(transition_.size()); }
  const Eigen::MatrixXd& transition(ActionIndex a) const {
    return transition_.at(static_cast<std::size_t>(a));
  }
  const Eigen::MatrixXd& reward(ActionIndex a) const {
    return reward_.at(static_cast<std::size_t>(a));
  }
  /// E[R_{t+1} | S_t = s, A_t = a].
  double expected_reward(StateIndex s, ActionIndex a) const;
  const std::vector<bool>& terminal() const noexcept { return terminal_; }
  bool is_terminal(StateIndex s) const { return terminal_.at(static_cast<std::size_t>(s)); }
  const Eigen::VectorXd& start() const noexcept { return start_; }

 private:
  std::string name_;
  std::vector<Eigen::MatrixXd> transition_;
  std::vector<Eigen::MatrixXd> reward_;
  std::vector<bool> terminal_;
  Eigen::VectorXd start_;
};

using Environment = std::variant<MrpSpec, MdpSpec>;

struct Transition {
  StateIndex s = 0;
  std::optional<ActionIndex> a;
  double r = 0.0;
  StateIndex s_next = 0;
  bool done = false;
};

struct Episode {
  std::vector<Transition> steps;

  std::size_t length() const noexcept { return steps.size(); }
  /// Consecutive steps chain and the last step is terminal.
  bool is_complete() const;
};

struct GridCell {
  Eigen::Index x = 0;  // column
  Eigen::Index y = 0;  // row
};

/// Gridworld actions, in index order.
enum class GridAction : ActionIndex { up = 0, down = 1, left = 2, right = 3 };

/// States 0..n-1 are the chain (index 0 is the left-most start state),
/// index n is the absorbing terminal. Reward +1 only on n-1 -> n.
MrpSpec build_deterministic_chain(Eigen::Index n);

/// States 1..n are the walk, 0 and n+1 are the left/right terminals.
/// Starts at the centre (n+1)/2; +1 only on entering n+1.
MrpSpec build_random_walk(Eigen::Index n);

/// Deterministic 4-action grid; state index is y * width + x. The goal is
/// terminal; entering it pays goal_reward, every other transition step_reward.
MdpSpec build_gridworld(Eigen::Index width, Eigen::Index height, GridCell goal,
                        double step_reward, double goal_reward, GridCell start = {0, 0});

StateIndex grid_state(Eigen::Index width, GridCell cell);

StateIndex sample_start(const MrpSpec& spec, Rng& rng);
StateIndex sample_start(const MdpSpec& spec, Rng& rng);

Transition step(const MrpSpec& spec, StateIndex s, Rng& rng);
Transition step(const MdpSpec& spec, StateIndex s, ActionIndex a, Rng& rng);
/// `a` must be present iff `env` holds an MDP.
Transition step(const Environment& env, StateIndex s, std::optional<ActionIndex> a, Rng& rng);

/// Samples a complete episode of an MRP; throws ContractError past max_steps.
Episode sample_episode(const MrpSpec& spec, Rng& rng, std::size_t max_steps = 1'000'000);

/// Per-state action distribution, |S| x |A|. Terminal rows are ignored.
using Policy = Eigen::MatrixXd;

Policy uniform_policy(const MdpSpec& spec);

struct MatrixForm {
  Eigen::MatrixXd transition;  // P_pi, absorbing terminal rows
  Eigen::VectorXd reward;      // R_bar, zero on terminal states
  std::vector<bool> nonterminal;

  std::vector<Eigen::Index> nonterminal_index() const;
};

MatrixForm matrix_form(const MrpSpec& spec);
MatrixForm matrix_form(const MdpSpec& spec, const Policy& policy);

/// Solves (I - gamma P_NN) v = R_bar_N; terminal entries are 0.
/// Throws NoSolutionError if the system is singular.
Eigen::VectorXd true_values(const MatrixForm& form, double gamma);
Eigen::VectorXd true_values(const MrpSpec& spec, double gamma);
Eigen::VectorXd true_values(const MdpSpec& spec, const Policy& policy, double gamma);

struct OptimalValues {
  Eigen::MatrixXd q;  // |S| x |A|, zero on terminal rows
  Eigen::VectorXd v;
  std::size_t iterations = 0;
};

/// Value iteration until the sup-norm change drops below tol.
OptimalValues value_iteration(const MdpSpec& spec, double gamma, double tol = 1e-12,
                              std::size_t max_iterations = 1'000'000);

/// Actions within tol of the row maximum.
std::vector<ActionIndex> greedy_actions(const Eigen::VectorXd& q_row, double tol = 1e-9);

}  // namespace etamix
