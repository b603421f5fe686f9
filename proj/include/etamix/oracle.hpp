#pragma once

#include <vector>

#include <Eigen/Dense>

#include "etamix/env.hpp"

namespace etamix {

/// |S| x d feature matrix; row s is phi(s). Columns are linearly independent
/// and terminal rows are zero, so bootstraps vanish at episode end.
class FeatureMatrix {
 public:
  /// Throws InvalidSpecError on rank deficiency or a non-zero terminal row.
  FeatureMatrix(Eigen::MatrixXd phi, const std::vector<bool>& terminal);

  /// One-hot features over the non-terminal states, in state order.
  static FeatureMatrix tabular(const std::vector<bool>& terminal);

  Eigen::Index n_states() const noexcept { return phi_.rows(); }
  Eigen::Index dim() const noexcept { return phi_.cols(); }
  const Eigen::MatrixXd& matrix() const noexcept { return phi_; }
  /// phi(s) as a contiguous column view.
  auto row(StateIndex s) const { return phi_t_.col(s); }
  bool is_terminal(StateIndex s) const { return terminal_.at(static_cast<std::size_t>(s)); }

 private:
  Eigen::MatrixXd phi_;
  Eigen::MatrixXd phi_t_;
  std::vector<bool> terminal_;
};

/// State weighting d_pi used by the projected fixed points.
struct OnPolicyDistribution {
  Eigen::VectorXd d_pi;

  Eigen::MatrixXd as_diagonal() const { return d_pi.asDiagonal(); }
};

/// Episodic specs: normalised expected visit counts per episode.
/// Specs without terminal states: stationary distribution of P.
/// Throws NoSolutionError when episodes do not terminate with probability 1.
OnPolicyDistribution on_policy_distribution(const MatrixForm& form, const Eigen::VectorXd& start);
OnPolicyDistribution on_policy_distribution(const MrpSpec& spec);
OnPolicyDistribution on_policy_distribution(const MdpSpec& spec, const Policy& policy);

/// Everything the linear fixed points depend on: Phi, D, P_pi and R_bar.
struct LinearProblem {
  Eigen::MatrixXd phi;
  Eigen::VectorXd d_pi;
  Eigen::MatrixXd transition;
  Eigen::VectorXd reward;

  /// Throws DimensionError if shapes disagree.
  void validate() const;
};

LinearProblem make_problem(const FeatureMatrix& features, const OnPolicyDistribution& dist,
                           const MatrixForm& form);

/// theta_TD = (Phi'D Phi - gamma Phi'D P Phi)^{-1} Phi'D R.
Eigen::VectorXd td_fixed_point(const LinearProblem& problem, double gamma);

/// Xi^eta = (Phi'D Phi - eta gamma Phi'D P Phi)^{-1} Phi'D Phi.
Eigen::MatrixXd sf_fixed_point(const LinearProblem& problem, double gamma, double eta);

/// w_hat = (Phi'D Phi)^{-1} Phi'D R.
Eigen::VectorXd reward_regression_solution(const LinearProblem& problem);

/// Infinity norm of Phi'D (R + gamma P Phi theta - Phi theta).
double projected_bellman_residual(const LinearProblem& problem, const Eigen::VectorXd& theta,
                                  double gamma);

/// || Xi^{-1} theta_TD - (1 - eta) theta_TD - eta Xi^{-1} theta^eta_TD ||_inf,
/// with Xi = Xi^eta and theta^eta_TD the (eta gamma)-discounted TD fixed point.
double lemma_identity_residual(const LinearProblem& problem, double gamma, double eta);

struct FixedPointReport {
  Eigen::VectorXd theta_td;
  Eigen::MatrixXd xi_eta;
  Eigen::VectorXd w_hat;
  Eigen::VectorXd theta_td_eta;
  double lemma_residual = 0.0;
  /// ||theta_k - theta_TD||_inf for k = 0..n_iters.
  std::vector<double> iteration_trace;
  Eigen::VectorXd theta_final;
};

/// Iterates the expected eta-mixture update with Xi and w held at their
/// oracle solutions:
///
///   theta <- (Phi'D Phi)^{-1} Phi'D (R + gamma P Phi [(1-eta) Xi theta + eta Xi w_hat])
///
/// Throws DivergenceError (carrying the trace) once the distance exceeds 1e6.
FixedPointReport proposition_check(const LinearProblem& problem, double gamma, double eta,
                                   const Eigen::VectorXd& theta0, std::size_t n_iters);

/// Smallest k whose leading k singular values hold a (1 - delta) share of
/// the total. Throws UndefinedRankError for an all-zero matrix.
Eigen::Index effective_rank(const Eigen::MatrixXd& matrix, double delta = 0.01);

}  // namespace etamix
