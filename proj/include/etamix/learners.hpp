#pragma once

#include <vector>

#include <Eigen/Dense>

#include "etamix/env.hpp"
#include "etamix/oracle.hpp"

namespace etamix {

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

struct LearningRates {
  double theta = 0.1;
  double xi = 0.1;
  double w = 0.1;

  static LearningRates shared(double alpha) { return {alpha, alpha, alpha}; }
};

/// Learnable parameters of the linear eta-return mixture plus its
/// hyper-parameters. psi(s) = xi^T phi(s), v(s) = phi(s)^T theta,
/// r(s) = phi(s)^T w.
struct LearnerState {
  Eigen::VectorXd theta;
  Eigen::MatrixXd xi;
  Eigen::VectorXd w;
  double eta = 0.0;
  double gamma = 1.0;
  LearningRates alpha;

  /// theta = 0, w = 0, xi = I. With xi = I the eta = 0 target is exactly TD(0).
  static LearnerState initial(Eigen::Index dim, double eta, double gamma, LearningRates alpha);

  Eigen::Index dim() const noexcept { return theta.size(); }
  /// Throws ContractError/DimensionError on out-of-range hyper-parameters.
  void validate() const;
};

struct EtaTarget {
  double value = 0.0;
  double r = 0.0;
  Eigen::VectorXd sf_vector;        // psi^eta(S_{t+1}) = xi^T phi_next
  Eigen::VectorXd mixture_weights;  // (1 - eta) theta + eta w
};

/// Which bootstrap target the value update regresses towards.
enum class TargetKind { td0, eta_mixture };

/// r + gamma phi_next^T theta.
double td0_target(double r, VectorRef phi_next, VectorRef theta, double gamma);

/// r + gamma psi^T [(1 - eta) theta + eta w], psi = xi^T phi_next.
EtaTarget eta_return_target(const LearnerState& state, double r, VectorRef phi_next);

// Parameter updates. Each throws ContractError for transitions out of a
// terminal state and NumericOverflowError if a parameter leaves the finite range.

/// theta += alpha_theta (U - phi^T theta) phi with U chosen by `target`.
void td0_value_update(LearnerState& state, const Transition& t, const FeatureMatrix& features,
                      TargetKind target = TargetKind::td0);

/// xi += alpha_xi phi (phi + eta gamma psi(s') - psi(s))^T.
void sf_td_update(LearnerState& state, const Transition& t, const FeatureMatrix& features);

/// w += alpha_w (r - phi^T w) phi.
void reward_update(LearnerState& state, const Transition& t, const FeatureMatrix& features);

/// One online step in the fixed order: SF update, reward update, then the
/// value update whose target uses the freshly updated xi and w.
void mixture_step(LearnerState& state, const Transition& t, const FeatureMatrix& features);

/// Runs one episode of `spec`, applying mixture_step after every transition.
Episode mixture_episode(LearnerState& state, const MrpSpec& spec,
                           const FeatureMatrix& features, Rng& rng,
                           std::size_t max_steps = 1'000'000);

/// Plain TD(0) episode (value update only), for baseline comparisons.
Episode td0_episode(LearnerState& state, const MrpSpec& spec, const FeatureMatrix& features,
                    Rng& rng, std::size_t max_steps = 1'000'000);

struct LambdaReturns {
  std::vector<double> form_a;  // geometric average of n-step returns
  std::vector<double> form_b;  // value + reward summation form
};

/// Offline lambda-returns for every step of a finished episode, computed two
/// algebraically equivalent ways. Weight beyond termination collapses onto
/// the full return. `values` is indexed by state and must be 0 on terminals.
LambdaReturns lambda_return_two_forms(const Episode& episode, const Eigen::VectorXd& values,
                                      double lambda, double gamma);

namespace kernels {

// Low-level kernels shared with the control learners. They skip zero
// feature entries, so one-hot features cost O(d) rather than O(d^2).

double dot(VectorRef a, VectorRef b);

/// out = xi^T phi.
void successor_features(const Eigen::MatrixXd& xi, VectorRef phi, Eigen::VectorXd& out);

/// xi += alpha phi (phi + discount xi^T phi_next - xi^T phi)^T.
void sf_td_step(Eigen::MatrixXd& xi, VectorRef phi, VectorRef phi_next, double discount,
                double alpha);

/// w += alpha (r - phi^T w) phi.
void reward_step(Eigen::VectorXd& w, VectorRef phi, double r, double alpha);

/// weights += alpha (target - phi^T weights) phi.
void regress_step(Eigen::Ref<Eigen::VectorXd> weights, VectorRef phi, double target,
                  double alpha);

}  // namespace kernels

}  // namespace etamix
