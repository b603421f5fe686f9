#include "etamix/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "etamix/errors.hpp"
#include "etamix/linalg.hpp"

namespace etamix {

namespace {

constexpr double kRankTol = 1e-10;
constexpr double kDivergenceBound = 1e6;

// Phi'D Phi, Phi'D P Phi and Phi'D R.
struct ProjectedTerms {
  Eigen::MatrixXd gram;
  Eigen::MatrixXd cross;
  Eigen::VectorXd reward;
};

ProjectedTerms projected_terms(const LinearProblem& p) {
  p.validate();
  const Eigen::MatrixXd phi_t_d = p.phi.transpose() * p.d_pi.asDiagonal();
  return {phi_t_d * p.phi, phi_t_d * p.transition * p.phi, phi_t_d * p.reward};
}

void check_unit_interval(double value, const char* name) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ContractError(fmt::format("{} must lie in [0, 1], got {}", name, value));
  }
}

}  // namespace

FeatureMatrix::FeatureMatrix(Eigen::MatrixXd phi, const std::vector<bool>& terminal)
    : phi_(std::move(phi)), terminal_(terminal) {
  if (static_cast<std::size_t>(phi_.rows()) != terminal.size()) {
    throw InvalidSpecError(
        fmt::format("features: {} rows for {} states", phi_.rows(), terminal.size()));
  }
  if (phi_.cols() == 0 || !phi_.allFinite()) {
    throw InvalidSpecError("features: need at least one finite column");
  }
  for (std::size_t s = 0; s < terminal.size(); ++s) {
    if (terminal[s] && !phi_.row(static_cast<Eigen::Index>(s)).isZero(0.0)) {
      throw InvalidSpecError(fmt::format("features: terminal state {} has a non-zero row", s));
    }
  }
  const Eigen::VectorXd sigma = linalg::singular_values(phi_);
  if (sigma.size() < phi_.cols() || sigma(phi_.cols() - 1) <= kRankTol * sigma(0)) {
    throw InvalidSpecError("features: columns are not linearly independent");
  }
  phi_t_ = phi_.transpose();
}

FeatureMatrix FeatureMatrix::tabular(const std::vector<bool>& terminal) {
  const auto n = static_cast<Eigen::Index>(terminal.size());
  const auto d = static_cast<Eigen::Index>(std::count(terminal.begin(), terminal.end(), false));
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, d);
  Eigen::Index column = 0;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (!terminal[static_cast<std::size_t>(s)]) phi(s, column++) = 1.0;
  }
  return FeatureMatrix(std::move(phi), terminal);
}

OnPolicyDistribution on_policy_distribution(const MatrixForm& form, const Eigen::VectorXd& start) {
  const Eigen::Index n = form.transition.rows();
  const auto index = form.nonterminal_index();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);

  if (static_cast<Eigen::Index>(index.size()) == n) {
    // No terminal states: left eigenvector for eigenvalue 1, normalised.
    Eigen::MatrixXd a = form.transition.transpose() - Eigen::MatrixXd::Identity(n, n);
    a.row(n - 1).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    b(n - 1) = 1.0;
    try {
      d = linalg::solve(a, b, "stationary distribution");
    } catch (const SingularityError& e) {
      throw NoSolutionError(fmt::format("no unique stationary distribution ({})", e.what()));
    }
  } else {
    const auto k = static_cast<Eigen::Index>(index.size());
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(k, k) -
                              linalg::submatrix(form.transition, index).transpose();
    Eigen::VectorXd visits;
    try {
      visits = linalg::solve(a, linalg::subvector(start, index), "expected visit counts");
    } catch (const SingularityError& e) {
      throw NoSolutionError(fmt::format("episodes do not terminate ({})", e.what()));
    }
    for (Eigen::Index i = 0; i < k; ++i) d(index[static_cast<std::size_t>(i)]) = visits(i);
  }
  if ((d.array() < -1e-12).any() || !(d.sum() > 0.0)) {
    throw NoSolutionError("on-policy distribution is not a probability vector");
  }
  d = d.cwiseMax(0.0);
  d /= d.sum();
  return {d};
}

OnPolicyDistribution on_policy_distribution(const MrpSpec& spec) {
  return on_policy_distribution(matrix_form(spec), spec.start());
}

OnPolicyDistribution on_policy_distribution(const MdpSpec& spec, const Policy& policy) {
  return on_policy_distribution(matrix_form(spec, policy), spec.start());
}

void LinearProblem::validate() const {
  const Eigen::Index n = phi.rows();
  if (d_pi.size() != n || transition.rows() != n || transition.cols() != n ||
      reward.size() != n) {
    throw DimensionError(fmt::format(
        "linear problem: Phi is {}x{}, D has {}, P is {}x{}, R has {}", phi.rows(), phi.cols(),
        d_pi.size(), transition.rows(), transition.cols(), reward.size()));
  }
}

LinearProblem make_problem(const FeatureMatrix& features, const OnPolicyDistribution& dist,
                           const MatrixForm& form) {
  LinearProblem problem{features.matrix(), dist.d_pi, form.transition, form.reward};
  problem.validate();
  return problem;
}

Eigen::VectorXd td_fixed_point(const LinearProblem& problem, double gamma) {
  check_unit_interval(gamma, "gamma");
  const ProjectedTerms t = projected_terms(problem);
  return linalg::solve(t.gram - gamma * t.cross, t.reward, "td_fixed_point");
}

Eigen::MatrixXd sf_fixed_point(const LinearProblem& problem, double gamma, double eta) {
  check_unit_interval(gamma, "gamma");
  check_unit_interval(eta, "eta");
  const ProjectedTerms t = projected_terms(problem);
  return linalg::solve(t.gram - eta * gamma * t.cross, t.gram, "sf_fixed_point");
}

Eigen::VectorXd reward_regression_solution(const LinearProblem& problem) {
  const ProjectedTerms t = projected_terms(problem);
  return linalg::solve(t.gram, t.reward, "reward_regression_solution");
}

double projected_bellman_residual(const LinearProblem& problem, const Eigen::VectorXd& theta,
                                  double gamma) {
  problem.validate();
  const Eigen::VectorXd v = problem.phi * theta;
  const Eigen::VectorXd bellman = problem.reward + gamma * problem.transition * v - v;
  return (problem.phi.transpose() * problem.d_pi.asDiagonal() * bellman)
      .lpNorm<Eigen::Infinity>();
}

double lemma_identity_residual(const LinearProblem& problem, double gamma, double eta) {
  const Eigen::VectorXd theta_td = td_fixed_point(problem, gamma);
  const Eigen::VectorXd theta_td_eta = td_fixed_point(problem, eta * gamma);
  const linalg::CheckedLu xi(sf_fixed_point(problem, gamma, eta), "Xi^eta");
  const Eigen::VectorXd lhs = xi.solve(theta_td);
  const Eigen::VectorXd rhs = (1.0 - eta) * theta_td + eta * xi.solve(theta_td_eta);
  return (lhs - rhs).lpNorm<Eigen::Infinity>();
}

FixedPointReport proposition_check(const LinearProblem& problem, double gamma, double eta,
                                   const Eigen::VectorXd& theta0, std::size_t n_iters) {
  const ProjectedTerms t = projected_terms(problem);
  if (theta0.size() != t.gram.rows()) {
    throw DimensionError(
        fmt::format("theta0 has {} entries, expected {}", theta0.size(), t.gram.rows()));
  }
  FixedPointReport report;
  report.theta_td = td_fixed_point(problem, gamma);
  report.xi_eta = sf_fixed_point(problem, gamma, eta);
  report.w_hat = reward_regression_solution(problem);
  report.theta_td_eta = td_fixed_point(problem, eta * gamma);
  report.lemma_residual = lemma_identity_residual(problem, gamma, eta);

  // theta_{k+1} = G^{-1} (b + gamma C Xi [(1-eta) theta_k + eta w_hat]); C = Phi'D P Phi.
  const linalg::CheckedLu gram(t.gram, "Phi'D Phi");
  const Eigen::MatrixXd propagate = gram.solve(Eigen::MatrixXd(gamma * t.cross * report.xi_eta));
  const Eigen::VectorXd offset = gram.solve(t.reward);

  Eigen::VectorXd theta = theta0;
  report.iteration_trace.reserve(n_iters + 1);
  report.iteration_trace.push_back((theta - report.theta_td).lpNorm<Eigen::Infinity>());
  for (std::size_t k = 0; k < n_iters; ++k) {
    theta = offset + propagate * ((1.0 - eta) * theta + eta * report.w_hat);
    const double distance = (theta - report.theta_td).lpNorm<Eigen::Infinity>();
    report.iteration_trace.push_back(distance);
    if (!(distance <= kDivergenceBound)) {
      throw DivergenceError(
          fmt::format("expected eta-mixture iteration diverged at step {} (distance {:.3e})",
                      k + 1, distance),
          std::move(report.iteration_trace));
    }
  }
  report.theta_final = theta;
  return report;
}

Eigen::Index effective_rank(const Eigen::MatrixXd& matrix, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ContractError(fmt::format("effective_rank: delta must lie in (0, 1), got {}", delta));
  }
  if (matrix.size() == 0 || matrix.isZero(0.0)) {
    throw UndefinedRankError("effective_rank: matrix is all zero");
  }
  if (!matrix.allFinite()) throw UndefinedRankError("effective_rank: non-finite entries");
  const Eigen::VectorXd sigma = linalg::singular_values(matrix);
  const double total = sigma.sum();
  double cumulative = 0.0;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    cumulative += sigma(k);
    if (cumulative / total >= 1.0 - delta) return k + 1;
  }
  return sigma.size();
}

}  // namespace etamix
