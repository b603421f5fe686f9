#include "etamix/control.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "etamix/errors.hpp"

namespace etamix {

namespace {

void check_features(const FeatureMatrix& features, const QLearnerState& state) {
  if (features.dim() != state.dim()) {
    throw DimensionError(
        fmt::format("features have dimension {}, learner {}", features.dim(), state.dim()));
  }
}

void check_transition(const Transition& t, const FeatureMatrix& features,
                      const QLearnerState& state) {
  if (!t.a || *t.a < 0 || *t.a >= state.n_actions()) {
    throw ContractError("control transitions must carry a valid action");
  }
  if (t.s < 0 || t.s >= features.n_states() || t.s_next < 0 || t.s_next >= features.n_states()) {
    throw ContractError(fmt::format("transition {} -> {} outside the feature matrix", t.s, t.s_next));
  }
  if (features.is_terminal(t.s)) {
    throw ContractError(fmt::format("cannot learn from a transition out of terminal state {}", t.s));
  }
}

// (1 - eta) psi^T theta_a + eta psi^T w for every a.
Eigen::VectorXd mixture_values(VectorRef phi_next, const QLearnerState& state) {
  if (phi_next.size() != state.dim()) {
    throw DimensionError(
        fmt::format("phi_next has dimension {}, expected {}", phi_next.size(), state.dim()));
  }
  Eigen::VectorXd psi;
  kernels::successor_features(state.xi, phi_next, psi);
  const double reward_term = state.eta * kernels::dot(psi, state.w);
  Eigen::VectorXd values(state.n_actions());
  for (ActionIndex a = 0; a < state.n_actions(); ++a) {
    values(a) = (1.0 - state.eta) * kernels::dot(psi, state.theta.col(a)) + reward_term;
  }
  return values;
}

}  // namespace

double EpsilonSchedule::value(std::size_t step) const {
  if (anneal_steps == 0 || step >= anneal_steps) return final;
  const double frac = static_cast<double>(step) / static_cast<double>(anneal_steps);
  return initial + frac * (final - initial);
}

QLearnerState QLearnerState::initial(Eigen::Index dim, Eigen::Index n_actions, double eta,
                                     double gamma, LearningRates alpha, EpsilonSchedule epsilon) {
  QLearnerState state{Eigen::MatrixXd::Zero(dim, n_actions),
                      Eigen::MatrixXd::Identity(dim, dim),
                      Eigen::VectorXd::Zero(dim),
                      eta,
                      gamma,
                      alpha,
                      epsilon};
  state.validate();
  return state;
}

void QLearnerState::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError(fmt::format("eta {} outside [0, 1]", eta));
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ContractError(fmt::format("control needs gamma in [0, 1), got {}", gamma));
  }
  if (!(alpha.theta >= 0.0 && alpha.xi >= 0.0 && alpha.w >= 0.0)) {
    throw ContractError("learning rates must be non-negative");
  }
  const auto in_unit = [](double e) { return e >= 0.0 && e <= 1.0; };
  if (!in_unit(epsilon.initial) || !in_unit(epsilon.final)) {
    throw ContractError("epsilon schedule must stay within [0, 1]");
  }
  const Eigen::Index d = theta.rows();
  if (d == 0 || theta.cols() == 0) throw DimensionError("empty action-value weights");
  if (xi.rows() != d || xi.cols() != d || w.size() != d) {
    throw DimensionError("xi and w must match the feature dimension of theta");
  }
}

double eta_q_target(VectorRef phi_next, const QLearnerState& state) {
  return mixture_values(phi_next, state).maxCoeff();
}

double eta_q_target_factored(VectorRef phi_next, const QLearnerState& state) {
  if (phi_next.size() != state.dim()) throw DimensionError("phi_next has the wrong dimension");
  Eigen::VectorXd psi;
  kernels::successor_features(state.xi, phi_next, psi);
  const Eigen::VectorXd value_heads = state.theta.transpose() * psi;
  return (1.0 - state.eta) * value_heads.maxCoeff() + state.eta * kernels::dot(psi, state.w);
}

void q_learning_step(QLearnerState& state, const Transition& t, const FeatureMatrix& features,
                     bool learn_model) {
  check_features(features, state);
  check_transition(t, features, state);
  const auto phi = features.row(t.s);
  const auto phi_next = features.row(t.s_next);
  if (learn_model) {
    kernels::sf_td_step(state.xi, phi, phi_next, state.eta * state.gamma, state.alpha.xi);
    kernels::reward_step(state.w, phi, t.r, state.alpha.w);
  }
  const double target = t.r + state.gamma * eta_q_target(phi_next, state);
  kernels::regress_step(state.theta.col(*t.a), phi, target, state.alpha.theta);
}

ActionIndex argmax_action(VectorRef q_row) {
  if (q_row.size() == 0) throw ContractError("argmax over an empty action set");
  ActionIndex best = 0;
  for (ActionIndex a = 1; a < q_row.size(); ++a) {
    if (q_row(a) > q_row(best)) best = a;
  }
  return best;
}

ActionIndex epsilon_greedy(VectorRef q_row, double epsilon, Rng& rng) {
  if (q_row.size() == 0) throw ContractError("epsilon_greedy over an empty action set");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ContractError(fmt::format("epsilon {} outside [0, 1]", epsilon));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < epsilon) {
    std::uniform_int_distribution<ActionIndex> pick(0, q_row.size() - 1);
    return pick(rng);
  }
  return argmax_action(q_row);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(t);
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw ContractError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Transition> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) batch.push_back(items_[pick(rng)]);
  return batch;
}

FittedQLoss fitted_q_losses(const QLearnerState& live, const QLearnerState& detached,
                            std::span<const Transition> batch, const FeatureMatrix& features,
                            std::span<const double> weights) {
  if (batch.empty()) throw ContractError("fitted_q_losses: empty minibatch");
  check_features(features, live);
  check_features(features, detached);
  if (!weights.empty() && weights.size() != batch.size()) {
    throw ContractError("fitted_q_losses: one weight per transition required");
  }
  const Eigen::Index d = live.dim();
  FittedQLoss out{{},
                  {Eigen::MatrixXd::Zero(d, live.n_actions()), Eigen::MatrixXd::Zero(d, d),
                   Eigen::VectorXd::Zero(d)}};
  const double uniform = 1.0 / static_cast<double>(batch.size());
  const double sf_discount = detached.eta * detached.gamma;

  Eigen::VectorXd psi;
  Eigen::VectorXd psi_next;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = batch[i];
    check_transition(t, features, live);
    const double weight = weights.empty() ? uniform : weights[i];
    const auto phi = features.row(t.s);
    const auto phi_next = features.row(t.s_next);

    // Successor features: target sg(phi + eta gamma psi') uses the detached xi.
    kernels::successor_features(detached.xi, phi_next, psi_next);
    kernels::successor_features(live.xi, phi, psi);
    const Eigen::VectorXd sf_error = psi - (phi + sf_discount * psi_next);
    out.loss.l_sf += weight * 0.5 * sf_error.squaredNorm();
    for (Eigen::Index j = 0; j < d; ++j) {
      if (phi(j) != 0.0) out.grad.xi.row(j) += (weight * phi(j)) * sf_error.transpose();
    }

    const double reward_error = kernels::dot(phi, live.w) - t.r;
    out.loss.l_r += weight * 0.5 * reward_error * reward_error;
    out.grad.w += (weight * reward_error) * phi;

    const double target = t.r + detached.gamma * eta_q_target(phi_next, detached);
    const double q_error = kernels::dot(phi, live.theta.col(*t.a)) - target;
    out.loss.l_q += weight * 0.5 * q_error * q_error;
    out.grad.theta.col(*t.a) += (weight * q_error) * phi;
  }
  out.loss.total = out.loss.l_sf + out.loss.l_r + out.loss.l_q;
  return out;
}

LossBreakdown fitted_q_update(QLearnerState& state, std::span<const Transition> batch,
                              const FeatureMatrix& features, bool learn_model) {
  const FittedQLoss result = fitted_q_losses(state, batch, features);
  state.theta -= state.alpha.theta * result.grad.theta;
  if (learn_model) {
    state.xi -= state.alpha.xi * result.grad.xi;
    state.w -= state.alpha.w * result.grad.w;
  }
  if (!state.theta.allFinite() || !state.xi.allFinite() || !state.w.allFinite()) {
    throw NumericOverflowError("fitted-Q parameters became non-finite");
  }
  return result.loss;
}

ControlResult run_control(const MdpSpec& env, const FeatureMatrix& features,
                          const ControlConfig& config, Rng& rng) {
  if (features.n_states() != env.n_states()) {
    throw DimensionError("feature matrix does not match the environment");
  }
  ControlResult result{QLearnerState::initial(features.dim(), env.n_actions(), config.eta,
                                              config.gamma, config.alpha, config.epsilon),
                       {}};
  QLearnerState& state = result.state;
  std::optional<ReplayBuffer> buffer;
  if (config.mode == ControlConfig::Mode::fitted_q) {
    buffer.emplace(config.buffer_capacity);
    if (config.batch_size == 0) throw ContractError("fitted-Q batch size must be positive");
  }

  StateIndex s = sample_start(env, rng);
  double episode_return = 0.0;
  std::size_t episode_length = 0;
  for (std::size_t t = 0; t < config.steps; ++t) {
    const double decay =
        config.alpha_decay_steps > 0.0
            ? 1.0 / (1.0 + static_cast<double>(t) / config.alpha_decay_steps)
            : 1.0;
    state.alpha = {config.alpha.theta * decay, config.alpha.xi * decay, config.alpha.w * decay};

    const ActionIndex a =
        epsilon_greedy(state.q_values(features.row(s)), config.epsilon.value(t), rng);
    const Transition tr = step(env, s, a, rng);
    if (buffer) {
      buffer->push(tr);
      const std::vector<Transition> batch = buffer->sample(config.batch_size, rng);
      fitted_q_update(state, batch, features, config.learn_model);
    } else {
      q_learning_step(state, tr, features, config.learn_model);
    }

    episode_return += tr.r;
    ++episode_length;
    if (tr.done || episode_length >= config.max_episode_steps) {
      result.episode_returns.push_back(episode_return);
      if (config.max_episodes != 0 && result.episode_returns.size() >= config.max_episodes) break;
      episode_return = 0.0;
      episode_length = 0;
      s = sample_start(env, rng);
    } else {
      s = tr.s_next;
    }
  }
  state.alpha = config.alpha;
  return result;
}

std::vector<ActionIndex> greedy_policy(const QLearnerState& state, const FeatureMatrix& features) {
  check_features(features, state);
  std::vector<ActionIndex> policy(static_cast<std::size_t>(features.n_states()), -1);
  for (StateIndex s = 0; s < features.n_states(); ++s) {
    if (!features.is_terminal(s)) {
      policy[static_cast<std::size_t>(s)] = argmax_action(state.q_values(features.row(s)));
    }
  }
  return policy;
}

double greedy_return(const MdpSpec& env, const QLearnerState& state,
                     const FeatureMatrix& features, Rng& rng, std::size_t max_steps) {
  check_features(features, state);
  StateIndex s = sample_start(env, rng);
  double total = 0.0;
  for (std::size_t k = 0; k < max_steps; ++k) {
    const Transition t = step(env, s, argmax_action(state.q_values(features.row(s))), rng);
    total += t.r;
    if (t.done) break;
    s = t.s_next;
  }
  return total;
}

}  // namespace etamix
