#include "etamix/learners.hpp"

#include <cmath>

#include <fmt/format.h>

#include "etamix/errors.hpp"

namespace etamix {

namespace kernels {

double dot(VectorRef a, VectorRef b) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) sum += a(i) * b(i);
  return sum;
}

void successor_features(const Eigen::MatrixXd& xi, VectorRef phi, Eigen::VectorXd& out) {
  out.setZero(xi.cols());
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (phi(i) != 0.0) out.noalias() += phi(i) * xi.row(i).transpose();
  }
}

void sf_td_step(Eigen::MatrixXd& xi, VectorRef phi, VectorRef phi_next, double discount,
                double alpha) {
  Eigen::VectorXd psi;
  Eigen::VectorXd psi_next;
  successor_features(xi, phi, psi);
  successor_features(xi, phi_next, psi_next);
  const Eigen::VectorXd delta = phi + discount * psi_next - psi;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (phi(i) == 0.0) continue;
    xi.row(i) += (alpha * phi(i)) * delta.transpose();
    if (!xi.row(i).allFinite()) {
      throw NumericOverflowError("successor-feature weights became non-finite");
    }
  }
}

void regress_step(Eigen::Ref<Eigen::VectorXd> weights, VectorRef phi, double target,
                  double alpha) {
  const double error = target - dot(phi, weights);
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (phi(i) == 0.0) continue;
    weights(i) += alpha * error * phi(i);
    if (!std::isfinite(weights(i))) throw NumericOverflowError("weights became non-finite");
  }
}

void reward_step(Eigen::VectorXd& w, VectorRef phi, double r, double alpha) {
  regress_step(w, phi, r, alpha);
}

}  // namespace kernels

namespace {

void check_from_nonterminal(const Transition& t, const FeatureMatrix& features) {
  if (t.s < 0 || t.s >= features.n_states() || t.s_next < 0 || t.s_next >= features.n_states()) {
    throw ContractError(fmt::format("transition {} -> {} outside the feature matrix of {} states",
                                    t.s, t.s_next, features.n_states()));
  }
  if (features.is_terminal(t.s)) {
    throw ContractError(fmt::format("cannot learn from a transition out of terminal state {}", t.s));
  }
}

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(fmt::format("{} has dimension {}, expected {}", what, got, want));
  }
}

double eta_target_value(const LearnerState& state, double r, VectorRef phi_next,
                        Eigen::VectorXd& psi, Eigen::VectorXd& mixture) {
  kernels::successor_features(state.xi, phi_next, psi);
  mixture = (1.0 - state.eta) * state.theta + state.eta * state.w;
  return r + state.gamma * kernels::dot(psi, mixture);
}

}  // namespace

LearnerState LearnerState::initial(Eigen::Index dim, double eta, double gamma,
                                   LearningRates alpha) {
  LearnerState state{Eigen::VectorXd::Zero(dim),
                     Eigen::MatrixXd::Identity(dim, dim),
                     Eigen::VectorXd::Zero(dim),
                     eta,
                     gamma,
                     alpha};
  state.validate();
  return state;
}

void LearnerState::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError(fmt::format("eta {} outside [0, 1]", eta));
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ContractError(fmt::format("gamma {} outside [0, 1]", gamma));
  }
  if (!(alpha.theta >= 0.0 && alpha.xi >= 0.0 && alpha.w >= 0.0)) {
    throw ContractError("learning rates must be non-negative");
  }
  const Eigen::Index d = theta.size();
  if (d == 0) throw DimensionError("learner has zero-dimensional parameters");
  check_dim(w.size(), d, "w");
  if (xi.rows() != d || xi.cols() != d) {
    throw DimensionError(fmt::format("xi is {}x{}, expected {}x{}", xi.rows(), xi.cols(), d, d));
  }
}

double td0_target(double r, VectorRef phi_next, VectorRef theta, double gamma) {
  check_dim(phi_next.size(), theta.size(), "phi_next");
  return r + gamma * kernels::dot(phi_next, theta);
}

EtaTarget eta_return_target(const LearnerState& state, double r, VectorRef phi_next) {
  check_dim(phi_next.size(), state.dim(), "phi_next");
  EtaTarget target;
  target.r = r;
  target.value = eta_target_value(state, r, phi_next, target.sf_vector, target.mixture_weights);
  return target;
}

void td0_value_update(LearnerState& state, const Transition& t, const FeatureMatrix& features,
                      TargetKind target) {
  check_from_nonterminal(t, features);
  check_dim(features.dim(), state.dim(), "features");
  const auto phi = features.row(t.s);
  const auto phi_next = features.row(t.s_next);
  double u = 0.0;
  if (target == TargetKind::td0) {
    u = td0_target(t.r, phi_next, state.theta, state.gamma);
  } else {
    Eigen::VectorXd psi;
    Eigen::VectorXd mixture;
    u = eta_target_value(state, t.r, phi_next, psi, mixture);
  }
  kernels::regress_step(state.theta, phi, u, state.alpha.theta);
}

void sf_td_update(LearnerState& state, const Transition& t, const FeatureMatrix& features) {
  check_from_nonterminal(t, features);
  check_dim(features.dim(), state.dim(), "features");
  kernels::sf_td_step(state.xi, features.row(t.s), features.row(t.s_next),
                      state.eta * state.gamma, state.alpha.xi);
}

void reward_update(LearnerState& state, const Transition& t, const FeatureMatrix& features) {
  check_from_nonterminal(t, features);
  check_dim(features.dim(), state.dim(), "features");
  kernels::reward_step(state.w, features.row(t.s), t.r, state.alpha.w);
}

void mixture_step(LearnerState& state, const Transition& t, const FeatureMatrix& features) {
  sf_td_update(state, t, features);
  reward_update(state, t, features);
  td0_value_update(state, t, features, TargetKind::eta_mixture);
}

namespace {

template <typename StepFn>
Episode run_episode(const MrpSpec& spec, Rng& rng, std::size_t max_steps, StepFn&& on_step) {
  Episode episode;
  StateIndex s = sample_start(spec, rng);
  while (true) {
    if (episode.steps.size() >= max_steps) {
      throw ContractError(fmt::format("{}: episode exceeded {} steps", spec.name(), max_steps));
    }
    const Transition t = step(spec, s, rng);
    on_step(t);
    episode.steps.push_back(t);
    if (t.done) return episode;
    s = t.s_next;
  }
}

}  // namespace

Episode mixture_episode(LearnerState& state, const MrpSpec& spec,
                           const FeatureMatrix& features, Rng& rng, std::size_t max_steps) {
  state.validate();
  return run_episode(spec, rng, max_steps,
                     [&](const Transition& t) { mixture_step(state, t, features); });
}

Episode td0_episode(LearnerState& state, const MrpSpec& spec, const FeatureMatrix& features,
                    Rng& rng, std::size_t max_steps) {
  state.validate();
  return run_episode(spec, rng, max_steps, [&](const Transition& t) {
    td0_value_update(state, t, features, TargetKind::td0);
  });
}

LambdaReturns lambda_return_two_forms(const Episode& episode, const Eigen::VectorXd& values,
                                      double lambda, double gamma) {
  if (!episode.is_complete()) {
    throw ContractError("lambda-return needs a complete, terminated episode");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0) || !(gamma >= 0.0 && gamma <= 1.0)) {
    throw ContractError("lambda and gamma must lie in [0, 1]");
  }
  const std::size_t horizon = episode.length();
  // rewards[k] = R_{k+1}; state_value[k] = V(S_k), with V(S_T) = 0.
  std::vector<double> rewards(horizon);
  std::vector<double> state_value(horizon + 1);
  for (std::size_t k = 0; k < horizon; ++k) {
    const Transition& t = episode.steps[k];
    if (t.s < 0 || t.s >= values.size()) throw ContractError("state outside the value vector");
    rewards[k] = t.r;
    state_value[k] = values(t.s);
  }
  const StateIndex last = episode.steps.back().s_next;
  if (last < 0 || last >= values.size() || values(last) != 0.0) {
    throw ContractError("terminal state must carry value 0");
  }
  state_value[horizon] = 0.0;

  LambdaReturns out{std::vector<double>(horizon), std::vector<double>(horizon)};
  for (std::size_t t = 0; t < horizon; ++t) {
    const std::size_t remaining = horizon - t;

    // Form a: (1 - lambda) sum_n lambda^{n-1} G^{(n)}, the tail weight
    // lambda^{remaining-1} going to the full return G^{(remaining)}.
    double discounted_rewards = 0.0;
    double discount = 1.0;
    double lambda_power = 1.0;
    double form_a = 0.0;
    for (std::size_t n = 1; n <= remaining; ++n) {
      discounted_rewards += discount * rewards[t + n - 1];
      discount *= gamma;
      const double n_step = discounted_rewards + discount * state_value[t + n];
      form_a += (n < remaining ? (1.0 - lambda) : 1.0) * lambda_power * n_step;
      lambda_power *= lambda;
    }
    out.form_a[t] = form_a;

    // Form b: R_{t+1} + gamma sum_n (lambda gamma)^{n-1} [(1 - lambda) V_{t+n} + lambda R_{t+n+1}].
    double form_b = 0.0;
    double weight = 1.0;
    for (std::size_t n = 1; n < remaining; ++n) {
      form_b += weight * ((1.0 - lambda) * state_value[t + n] + lambda * rewards[t + n]);
      weight *= lambda * gamma;
    }
    out.form_b[t] = rewards[t] + gamma * form_b;
  }
  return out;
}

}  // namespace etamix
