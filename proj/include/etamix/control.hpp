#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "etamix/env.hpp"
#include "etamix/learners.hpp"
#include "etamix/oracle.hpp"

namespace etamix {

/// Linear anneal from `initial` to `final` over `anneal_steps`, then constant.
struct EpsilonSchedule {
  double initial = 1.0;
  double final = 0.1;
  std::size_t anneal_steps = 10'000;

  double value(std::size_t step) const;
};

/// eta-mixture Q-learner: q(s, a) = phi(s)^T theta_a with a state-based
/// successor-feature head xi and reward head w sharing the same features.
struct QLearnerState {
  Eigen::MatrixXd theta;  // d x |A|
  Eigen::MatrixXd xi;     // d x d
  Eigen::VectorXd w;
  double eta = 0.5;
  double gamma = 0.99;
  LearningRates alpha;
  EpsilonSchedule epsilon;

  /// theta = 0, w = 0, xi = I.
  static QLearnerState initial(Eigen::Index dim, Eigen::Index n_actions, double eta, double gamma,
                               LearningRates alpha, EpsilonSchedule epsilon = {});

  Eigen::Index dim() const noexcept { return theta.rows(); }
  Eigen::Index n_actions() const noexcept { return theta.cols(); }
  Eigen::VectorXd q_values(VectorRef phi) const { return theta.transpose() * phi; }
  /// Requires eta in [0, 1], gamma in [0, 1) and consistent shapes.
  void validate() const;
};

/// max_a' [(1 - eta) psi^T theta_a' + eta psi^T w], psi = xi^T phi_next.
double eta_q_target(VectorRef phi_next, const QLearnerState& state);

/// (1 - eta) max_a' psi^T theta_a' + eta psi^T w. Equal to eta_q_target since
/// the reward term does not depend on a'.
double eta_q_target_factored(VectorRef phi_next, const QLearnerState& state);

/// SF and reward updates (unless `learn_model` is false), then
/// theta_a += alpha (r + gamma eta_q_target - phi^T theta_a) phi for the taken action.
void q_learning_step(QLearnerState& state, const Transition& t, const FeatureMatrix& features,
                     bool learn_model = true);

/// Lowest index among the maximal entries.
ActionIndex argmax_action(VectorRef q_row);

/// Uniform action with probability epsilon, otherwise argmax_action.
ActionIndex epsilon_greedy(VectorRef q_row, double epsilon, Rng& rng);

/// FIFO ring buffer of transitions with uniform sampling with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  /// Throws ContractError when empty.
  std::vector<Transition> sample(std::size_t n, Rng& rng) const;

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return items_.empty(); }
  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const { return items_.at(i); }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct LossBreakdown {
  double l_sf = 0.0;
  double l_r = 0.0;
  double l_q = 0.0;
  double total = 0.0;
};

struct QGradients {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd xi;
  Eigen::VectorXd w;
};

struct FittedQLoss {
  LossBreakdown loss;
  QGradients grad;
};

/// Minibatch losses of fitted Q iteration with an eta-mixture target:
///
///   L_S = 1/2 || sg(phi + eta gamma psi') - xi^T phi ||^2
///   L_R = 1/2 (r - phi^T w)^2
///   L_Q = 1/2 (sg(r + gamma max_a' q^eta(s', a')) - phi^T theta_a)^2
///
/// averaged over the batch (or weighted by `weights`, which must sum to 1).
/// Gradients are taken with respect to `live`; every stop-gradient quantity
/// is evaluated at `detached`.
FittedQLoss fitted_q_losses(const QLearnerState& live, const QLearnerState& detached,
                            std::span<const Transition> batch, const FeatureMatrix& features,
                            std::span<const double> weights = {});

inline FittedQLoss fitted_q_losses(const QLearnerState& state, std::span<const Transition> batch,
                                   const FeatureMatrix& features,
                                   std::span<const double> weights = {}) {
  return fitted_q_losses(state, state, batch, features, weights);
}

/// One plain gradient step on the fitted-Q losses. Returns the pre-step losses.
LossBreakdown fitted_q_update(QLearnerState& state, std::span<const Transition> batch,
                              const FeatureMatrix& features, bool learn_model = true);

struct ControlConfig {
  enum class Mode { online, fitted_q };

  double eta = 0.5;
  double gamma = 0.99;
  LearningRates alpha{0.1, 0.1, 0.1};
  /// alpha_t = alpha / (1 + t / alpha_decay_steps); 0 keeps alpha constant.
  double alpha_decay_steps = 0.0;
  EpsilonSchedule epsilon{1.0, 0.1, 10'000};
  std::size_t steps = 50'000;
  /// Stop once this many episodes have been recorded; 0 means no limit.
  std::size_t max_episodes = 0;
  /// Episodes longer than this are cut off (the last step still bootstraps).
  std::size_t max_episode_steps = 200;
  Mode mode = Mode::online;
  std::size_t buffer_capacity = 10'000;
  std::size_t batch_size = 32;
  /// When false the SF and reward heads are frozen at their initial values.
  bool learn_model = true;
};

struct ControlResult {
  QLearnerState state;
  /// Undiscounted return of every finished or cut-off episode.
  std::vector<double> episode_returns;
};

ControlResult run_control(const MdpSpec& env, const FeatureMatrix& features,
                          const ControlConfig& config, Rng& rng);

/// Greedy action per state; -1 on terminal states.
std::vector<ActionIndex> greedy_policy(const QLearnerState& state, const FeatureMatrix& features);

/// Undiscounted return of one greedy (epsilon = 0) rollout from the start
/// distribution, cut off after max_steps.
double greedy_return(const MdpSpec& env, const QLearnerState& state,
                     const FeatureMatrix& features, Rng& rng, std::size_t max_steps = 200);

}  // namespace etamix
