#include "etamix/env.hpp"

#include <array>
#include <cmath>

#include <fmt/format.h>

#include "etamix/errors.hpp"
#include "etamix/linalg.hpp"

namespace etamix {

namespace {

constexpr double kStochasticTol = 1e-12;

void check_stochastic(const std::string& name, const Eigen::MatrixXd& p,
                      const std::vector<bool>& terminal, std::string_view label) {
  const Eigen::Index n = p.rows();
  if (p.cols() != n) {
    throw InvalidSpecError(fmt::format("{}: {} matrix must be square", name, label));
  }
  if ((p.array() < 0.0).any() || !p.allFinite()) {
    throw InvalidSpecError(fmt::format("{}: {} has negative or non-finite entries", name, label));
  }
  for (Eigen::Index s = 0; s < n; ++s) {
    if (terminal[static_cast<std::size_t>(s)]) {
      if (std::abs(p(s, s) - 1.0) > kStochasticTol) {
        throw InvalidSpecError(
            fmt::format("{}: terminal state {} must be absorbing in {}", name, s, label));
      }
      continue;
    }
    const double sum = p.row(s).sum();
    if (std::abs(sum - 1.0) > kStochasticTol) {
      throw InvalidSpecError(
          fmt::format("{}: row {} of {} sums to {:.17g}, expected 1", name, s, label, sum));
    }
  }
}

void check_start(const std::string& name, const Eigen::VectorXd& start,
                 const std::vector<bool>& terminal) {
  if (static_cast<std::size_t>(start.size()) != terminal.size()) {
    throw InvalidSpecError(fmt::format("{}: start vector has wrong size", name));
  }
  if ((start.array() < 0.0).any() || std::abs(start.sum() - 1.0) > kStochasticTol) {
    throw InvalidSpecError(fmt::format("{}: start must be a probability vector", name));
  }
  for (std::size_t s = 0; s < terminal.size(); ++s) {
    if (terminal[s] && start(static_cast<Eigen::Index>(s)) > 0.0) {
      throw InvalidSpecError(fmt::format("{}: start state {} is terminal", name, s));
    }
  }
}

Eigen::Index sample_index(const auto& weights, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) <= 0.0) continue;
    last_positive = i;
    acc += weights(i);
    if (u < acc) return i;
  }
  // Rounding can leave u just above the accumulated mass.
  return last_positive;
}

}  // namespace

MrpSpec::MrpSpec(std::string name, Eigen::MatrixXd transition, Eigen::MatrixXd reward,
                 std::vector<bool> terminal, Eigen::VectorXd start)
    : name_(std::move(name)),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      terminal_(std::move(terminal)),
      start_(std::move(start)) {
  if (transition_.rows() == 0) throw InvalidSpecError(name_ + ": no states");
  if (static_cast<std::size_t>(transition_.rows()) != terminal_.size()) {
    throw InvalidSpecError(name_ + ": terminal mask has wrong size");
  }
  if (reward_.rows() != transition_.rows() || reward_.cols() != transition_.cols() ||
      !reward_.allFinite()) {
    throw InvalidSpecError(name_ + ": reward matrix must be finite and match the transition");
  }
  check_stochastic(name_, transition_, terminal_, "transition");
  check_start(name_, start_, terminal_);
}

MdpSpec::MdpSpec(std::string name, std::vector<Eigen::MatrixXd> transition,
                 std::vector<Eigen::MatrixXd> reward, std::vector<bool> terminal,
                 Eigen::VectorXd start)
    : name_(std::move(name)),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      terminal_(std::move(terminal)),
      start_(std::move(start)) {
  if (transition_.empty() || transition_.size() != reward_.size()) {
    throw InvalidSpecError(name_ + ": need one transition and reward matrix per action");
  }
  const Eigen::Index n = transition_.front().rows();
  if (n == 0 || static_cast<std::size_t>(n) != terminal_.size()) {
    throw InvalidSpecError(name_ + ": terminal mask has wrong size");
  }
  for (std::size_t a = 0; a < transition_.size(); ++a) {
    if (transition_[a].rows() != n || reward_[a].rows() != n || reward_[a].cols() != n ||
        !reward_[a].allFinite()) {
      throw InvalidSpecError(fmt::format("{}: action {} matrices have wrong shape", name_, a));
    }
    check_stochastic(name_, transition_[a], terminal_, fmt::format("transition[{}]", a));
  }
  check_start(name_, start_, terminal_);
}

double MdpSpec::expected_reward(StateIndex s, ActionIndex a) const {
  if (is_terminal(s)) return 0.0;
  return transition(a).row(s).dot(reward(a).row(s));
}

bool Episode::is_complete() const {
  if (steps.empty() || !steps.back().done) return false;
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    if (steps[k].done || steps[k].s_next != steps[k + 1].s) return false;
  }
  return true;
}

MrpSpec build_deterministic_chain(Eigen::Index n) {
  if (n < 2) throw InvalidSpecError(fmt::format("det-chain: need n >= 2, got {}", n));
  const Eigen::Index size = n + 1;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(size, size);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(size, size);
  for (Eigen::Index s = 0; s < n; ++s) p(s, s + 1) = 1.0;
  p(n, n) = 1.0;
  r(n - 1, n) = 1.0;
  std::vector<bool> terminal(static_cast<std::size_t>(size), false);
  terminal.back() = true;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(size);
  start(0) = 1.0;
  return MrpSpec("det-chain", std::move(p), std::move(r), std::move(terminal), std::move(start));
}

MrpSpec build_random_walk(Eigen::Index n) {
  if (n < 3 || n % 2 == 0) {
    throw InvalidSpecError(fmt::format("random-walk: need odd n >= 3, got {}", n));
  }
  const Eigen::Index size = n + 2;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(size, size);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(size, size);
  for (Eigen::Index s = 1; s <= n; ++s) {
    p(s, s - 1) = 0.5;
    p(s, s + 1) = 0.5;
  }
  p(0, 0) = 1.0;
  p(n + 1, n + 1) = 1.0;
  r(n, n + 1) = 1.0;
  std::vector<bool> terminal(static_cast<std::size_t>(size), false);
  terminal.front() = true;
  terminal.back() = true;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(size);
  start((n + 1) / 2) = 1.0;
  return MrpSpec("random-walk", std::move(p), std::move(r), std::move(terminal),
                 std::move(start));
}

StateIndex grid_state(Eigen::Index width, GridCell cell) { return cell.y * width + cell.x; }

MdpSpec build_gridworld(Eigen::Index width, Eigen::Index height, GridCell goal,
                        double step_reward, double goal_reward, GridCell start) {
  if (width < 1 || height < 1) throw InvalidSpecError("gridworld: empty grid");
  const auto inside = [&](GridCell c) {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  };
  if (!inside(goal)) {
    throw InvalidSpecError(
        fmt::format("gridworld: goal ({}, {}) outside {}x{} grid", goal.x, goal.y, width, height));
  }
  if (!inside(start)) throw InvalidSpecError("gridworld: start outside grid");
  if (start.x == goal.x && start.y == goal.y) {
    throw InvalidSpecError("gridworld: start coincides with the goal");
  }

  const Eigen::Index size = width * height;
  const StateIndex goal_state = grid_state(width, goal);
  constexpr std::array<std::array<Eigen::Index, 2>, 4> kMoves{{{0, -1}, {0, 1}, {-1, 0}, {1, 0}}};

  std::vector<Eigen::MatrixXd> p(4, Eigen::MatrixXd::Zero(size, size));
  std::vector<Eigen::MatrixXd> r(4, Eigen::MatrixXd::Zero(size, size));
  for (std::size_t a = 0; a < kMoves.size(); ++a) {
    for (Eigen::Index y = 0; y < height; ++y) {
      for (Eigen::Index x = 0; x < width; ++x) {
        const StateIndex s = grid_state(width, {x, y});
        if (s == goal_state) {
          p[a](s, s) = 1.0;
          continue;
        }
        GridCell next{x + kMoves[a][0], y + kMoves[a][1]};
        if (!inside(next)) next = {x, y};
        const StateIndex s_next = grid_state(width, next);
        p[a](s, s_next) = 1.0;
        r[a](s, s_next) = s_next == goal_state ? goal_reward : step_reward;
      }
    }
  }
  std::vector<bool> terminal(static_cast<std::size_t>(size), false);
  terminal[static_cast<std::size_t>(goal_state)] = true;
  Eigen::VectorXd start_dist = Eigen::VectorXd::Zero(size);
  start_dist(grid_state(width, start)) = 1.0;
  return MdpSpec("gridworld", std::move(p), std::move(r), std::move(terminal),
                 std::move(start_dist));
}

StateIndex sample_start(const MrpSpec& spec, Rng& rng) { return sample_index(spec.start(), rng); }

StateIndex sample_start(const MdpSpec& spec, Rng& rng) { return sample_index(spec.start(), rng); }

Transition step(const MrpSpec& spec, StateIndex s, Rng& rng) {
  if (s < 0 || s >= spec.n_states()) throw ContractError(fmt::format("state {} out of range", s));
  if (spec.is_terminal(s)) {
    throw ContractError(fmt::format("{}: cannot step from terminal state {}", spec.name(), s));
  }
  const StateIndex s_next = sample_index(spec.transition().row(s), rng);
  return {s, std::nullopt, spec.reward()(s, s_next), s_next, spec.is_terminal(s_next)};
}

Transition step(const MdpSpec& spec, StateIndex s, ActionIndex a, Rng& rng) {
  if (s < 0 || s >= spec.n_states()) throw ContractError(fmt::format("state {} out of range", s));
  if (a < 0 || a >= spec.n_actions()) {
    throw ContractError(fmt::format("action {} out of range", a));
  }
  if (spec.is_terminal(s)) {
    throw ContractError(fmt::format("{}: cannot step from terminal state {}", spec.name(), s));
  }
  const StateIndex s_next = sample_index(spec.transition(a).row(s), rng);
  return {s, a, spec.reward(a)(s, s_next), s_next, spec.is_terminal(s_next)};
}

Transition step(const Environment& env, StateIndex s, std::optional<ActionIndex> a, Rng& rng) {
  if (const auto* mrp = std::get_if<MrpSpec>(&env)) {
    if (a) throw ContractError("an MRP step takes no action");
    return step(*mrp, s, rng);
  }
  if (!a) throw ContractError("an MDP step requires an action");
  return step(std::get<MdpSpec>(env), s, *a, rng);
}

Episode sample_episode(const MrpSpec& spec, Rng& rng, std::size_t max_steps) {
  Episode episode;
  StateIndex s = sample_start(spec, rng);
  while (true) {
    if (episode.steps.size() >= max_steps) {
      throw ContractError(fmt::format("{}: episode exceeded {} steps", spec.name(), max_steps));
    }
    const Transition t = step(spec, s, rng);
    episode.steps.push_back(t);
    if (t.done) return episode;
    s = t.s_next;
  }
}

Policy uniform_policy(const MdpSpec& spec) {
  return Policy::Constant(spec.n_states(), spec.n_actions(),
                          1.0 / static_cast<double>(spec.n_actions()));
}

std::vector<Eigen::Index> MatrixForm::nonterminal_index() const {
  std::vector<Eigen::Index> index;
  for (std::size_t s = 0; s < nonterminal.size(); ++s) {
    if (nonterminal[s]) index.push_back(static_cast<Eigen::Index>(s));
  }
  return index;
}

namespace {

std::vector<bool> negate(const std::vector<bool>& mask) {
  std::vector<bool> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = !mask[i];
  return out;
}

}  // namespace

MatrixForm matrix_form(const MrpSpec& spec) {
  MatrixForm form{spec.transition(), Eigen::VectorXd::Zero(spec.n_states()),
                  negate(spec.terminal())};
  for (Eigen::Index s = 0; s < spec.n_states(); ++s) {
    if (!spec.is_terminal(s)) form.reward(s) = spec.transition().row(s).dot(spec.reward().row(s));
  }
  return form;
}

MatrixForm matrix_form(const MdpSpec& spec, const Policy& policy) {
  const Eigen::Index n = spec.n_states();
  if (policy.rows() != n || policy.cols() != spec.n_actions()) {
    throw InvalidPolicyError(fmt::format("policy must be {}x{}", n, spec.n_actions()));
  }
  MatrixForm form{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n), negate(spec.terminal())};
  for (Eigen::Index s = 0; s < n; ++s) {
    if (spec.is_terminal(s)) {
      form.transition(s, s) = 1.0;
      continue;
    }
    if ((policy.row(s).array() < 0.0).any() ||
        std::abs(policy.row(s).sum() - 1.0) > kStochasticTol) {
      throw InvalidPolicyError(fmt::format("policy row {} is not a distribution", s));
    }
    for (ActionIndex a = 0; a < spec.n_actions(); ++a) {
      const double pi = policy(s, a);
      if (pi == 0.0) continue;
      form.transition.row(s) += pi * spec.transition(a).row(s);
      form.reward(s) += pi * spec.expected_reward(s, a);
    }
  }
  return form;
}

Eigen::VectorXd true_values(const MatrixForm& form, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ContractError(fmt::format("gamma must lie in [0, 1], got {}", gamma));
  }
  const auto index = form.nonterminal_index();
  const auto k = static_cast<Eigen::Index>(index.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(form.transition.rows());
  if (k == 0) return v;
  const Eigen::MatrixXd a =
      Eigen::MatrixXd::Identity(k, k) - gamma * linalg::submatrix(form.transition, index);
  Eigen::VectorXd v_n;
  try {
    v_n = linalg::solve(a, linalg::subvector(form.reward, index), "true_values");
  } catch (const SingularityError& e) {
    throw NoSolutionError(
        fmt::format("true_values: no unique solution at gamma={} ({})", gamma, e.what()));
  }
  for (Eigen::Index i = 0; i < k; ++i) v(index[static_cast<std::size_t>(i)]) = v_n(i);
  return v;
}

Eigen::VectorXd true_values(const MrpSpec& spec, double gamma) {
  return true_values(matrix_form(spec), gamma);
}

Eigen::VectorXd true_values(const MdpSpec& spec, const Policy& policy, double gamma) {
  return true_values(matrix_form(spec, policy), gamma);
}

OptimalValues value_iteration(const MdpSpec& spec, double gamma, double tol,
                              std::size_t max_iterations) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ContractError(fmt::format("value iteration needs gamma in [0, 1), got {}", gamma));
  }
  const Eigen::Index n = spec.n_states();
  const Eigen::Index n_actions = spec.n_actions();
  Eigen::MatrixXd expected_r(n, n_actions);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (ActionIndex a = 0; a < n_actions; ++a) expected_r(s, a) = spec.expected_reward(s, a);
  }
  OptimalValues out{Eigen::MatrixXd::Zero(n, n_actions), Eigen::VectorXd::Zero(n), 0};
  Eigen::VectorXd next_v(n);
  while (out.iterations < max_iterations) {
    ++out.iterations;
    for (ActionIndex a = 0; a < n_actions; ++a) {
      out.q.col(a) = expected_r.col(a) + gamma * spec.transition(a) * out.v;
    }
    for (Eigen::Index s = 0; s < n; ++s) {
      if (spec.is_terminal(s)) out.q.row(s).setZero();
    }
    next_v = out.q.rowwise().maxCoeff();
    const double change = (next_v - out.v).lpNorm<Eigen::Infinity>();
    out.v = next_v;
    if (change < tol) return out;
  }
  throw NoSolutionError(
      fmt::format("value iteration did not reach tol {} in {} iterations", tol, max_iterations));
}

std::vector<ActionIndex> greedy_actions(const Eigen::VectorXd& q_row, double tol) {
  if (q_row.size() == 0) throw ContractError("greedy_actions: empty action set");
  const double best = q_row.maxCoeff();
  std::vector<ActionIndex> out;
  for (Eigen::Index a = 0; a < q_row.size(); ++a) {
    if (q_row(a) >= best - tol) out.push_back(a);
  }
  return out;
}

}  // namespace etamix
