#include <cmath>

#include <gtest/gtest.h>

#include "etamix/errors.hpp"
#include "etamix/linalg.hpp"
#include "etamix/oracle.hpp"
#include "test_support.hpp"

using namespace etamix;
using etamix::testing::random_instance;
using etamix::testing::random_matrix;

namespace {

LinearProblem tabular_problem(const MrpSpec& spec) {
  return make_problem(FeatureMatrix::tabular(spec.terminal()), on_policy_distribution(spec),
                      matrix_form(spec));
}

// Tabular quantities live on the non-terminal states in index order.
Eigen::VectorXd nonterminal_part(const Eigen::VectorXd& v, const std::vector<bool>& terminal) {
  std::vector<Eigen::Index> keep;
  for (std::size_t s = 0; s < terminal.size(); ++s) {
    if (!terminal[s]) keep.push_back(static_cast<Eigen::Index>(s));
  }
  return linalg::subvector(v, keep);
}

constexpr double kEtaGrid[] = {0.0, 0.25, 0.5, 0.75, 1.0};

}  // namespace

TEST(FeatureMatrix, TabularIsOneHotOverNonTerminals) {
  const FeatureMatrix f = FeatureMatrix::tabular({true, false, false, true});
  ASSERT_EQ(f.dim(), 2);
  EXPECT_EQ(f.row(0).sum(), 0.0);
  EXPECT_EQ(f.row(1)(0), 1.0);
  EXPECT_EQ(f.row(2)(1), 1.0);
  EXPECT_EQ(f.row(3).sum(), 0.0);
}

TEST(FeatureMatrix, RejectsRankDeficiencyAndNonZeroTerminalRows) {
  Eigen::MatrixXd phi(3, 2);
  phi << 1, 2, 2, 4, 3, 6;
  EXPECT_THROW(FeatureMatrix(phi, {false, false, false}), InvalidSpecError);
  phi << 1, 0, 0, 1, 1, 1;
  EXPECT_THROW(FeatureMatrix(phi, {false, false, true}), InvalidSpecError);
  EXPECT_THROW(FeatureMatrix(phi, {false, false}), InvalidSpecError);
}

TEST(OnPolicyDistribution, DeterministicChainIsUniform) {
  const OnPolicyDistribution d = on_policy_distribution(build_deterministic_chain(16));
  for (int s = 0; s < 16; ++s) EXPECT_NEAR(d.d_pi(s), 1.0 / 16.0, 1e-15);
  EXPECT_EQ(d.d_pi(16), 0.0);
  const OnPolicyDistribution two = on_policy_distribution(build_deterministic_chain(2));
  EXPECT_NEAR(two.d_pi(0), 0.5, 1e-15);
  EXPECT_NEAR(two.d_pi(1), 0.5, 1e-15);
}

TEST(OnPolicyDistribution, RandomWalkIsSymmetricPeakedAndNormalised) {
  const OnPolicyDistribution d = on_policy_distribution(build_random_walk(19));
  EXPECT_NEAR(d.d_pi.sum(), 1.0, 1e-12);
  EXPECT_EQ(d.d_pi(0), 0.0);
  EXPECT_EQ(d.d_pi(20), 0.0);
  for (int i = 1; i <= 9; ++i) {
    EXPECT_NEAR(d.d_pi(i), d.d_pi(20 - i), 1e-12);
    EXPECT_LT(d.d_pi(i), d.d_pi(i + 1));
  }
  EXPECT_EQ(d.as_diagonal().rows(), 21);
}

TEST(OnPolicyDistribution, MatchesEmpiricalVisitCounts) {
  // Gambler's ruin: an episode from the centre of the 19-walk lasts 10 * 10 steps on average,
  // so the expected visit count of state s is 100 d(s).
  const MrpSpec walk = build_random_walk(19);
  const Eigen::VectorXd d = on_policy_distribution(walk).d_pi;
  Rng rng(17);
  const int episodes = 100'000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(21);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(21);
  Eigen::VectorXd counts(21);
  for (int e = 0; e < episodes; ++e) {
    counts.setZero();
    StateIndex s = sample_start(walk, rng);
    while (!walk.is_terminal(s)) {
      counts(s) += 1.0;
      s = step(walk, s, rng).s_next;
    }
    sum += counts;
    sum_sq += counts.cwiseProduct(counts);
  }
  for (int s = 1; s <= 19; ++s) {
    const double mean = sum(s) / episodes;
    const double se = std::sqrt((sum_sq(s) / episodes - mean * mean) / episodes);
    EXPECT_LE(std::abs(mean - 100.0 * d(s)), 3.0 * se) << "state " << s;
  }
}

TEST(OnPolicyDistribution, NonTerminatingEpisodesHaveNoSolution) {
  Eigen::MatrixXd p(3, 3);
  p << 0, 1, 0, 1, 0, 0, 0, 0, 1;
  const MrpSpec spec("trap", p, Eigen::MatrixXd::Zero(3, 3), {false, false, true},
                     Eigen::Vector3d(1, 0, 0));
  EXPECT_THROW(on_policy_distribution(spec), NoSolutionError);
}

TEST(OnPolicyDistribution, ErgodicUsesStationaryDistribution) {
  Rng rng(4);
  const MatrixForm form = etamix::testing::random_ergodic_form(5, rng);
  const Eigen::VectorXd d = on_policy_distribution(form, Eigen::VectorXd::Zero(5)).d_pi;
  EXPECT_NEAR((form.transition.transpose() * d - d).lpNorm<Eigen::Infinity>(), 0.0, 1e-12);
  EXPECT_NEAR(d.sum(), 1.0, 1e-12);
}

TEST(TdFixedPoint, TabularWalkEqualsTrueValues) {
  const MrpSpec walk = build_random_walk(19);
  const Eigen::VectorXd theta = td_fixed_point(tabular_problem(walk), 1.0);
  for (int i = 0; i < 19; ++i) EXPECT_NEAR(theta(i), (i + 1) / 20.0, 1e-12);
}

TEST(TdFixedPoint, ZeroDiscountIsRewardRegression) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const auto inst = random_instance(rng);
    EXPECT_LT((td_fixed_point(inst.problem, 0.0) - reward_regression_solution(inst.problem))
                  .lpNorm<Eigen::Infinity>(),
              1e-12);
  }
}

TEST(TdFixedPoint, ProjectedBellmanResidualVanishes) {
  Rng rng(1234);
  for (int k = 0; k < 100; ++k) {
    const auto inst = random_instance(rng);
    const Eigen::VectorXd theta = td_fixed_point(inst.problem, inst.gamma);
    EXPECT_LT(projected_bellman_residual(inst.problem, theta, inst.gamma), 1e-10);
  }
}

TEST(TdFixedPoint, SingularSystemReportsConditionNumber) {
  LinearProblem problem = tabular_problem(build_random_walk(5));
  problem.d_pi(3) = 0.0;
  try {
    td_fixed_point(problem, 1.0);
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_GT(e.condition_number(), linalg::kMaxConditionNumber);
  }
}

TEST(SfFixedPoint, ZeroEtaIsIdentity) {
  Rng rng(2);
  const auto inst = random_instance(rng);
  const Eigen::MatrixXd xi = sf_fixed_point(inst.problem, inst.gamma, 0.0);
  EXPECT_LT((xi - Eigen::MatrixXd::Identity(xi.rows(), xi.cols())).lpNorm<Eigen::Infinity>(),
            1e-12);
}

TEST(SfFixedPoint, TabularIsDiscountedOccupancy) {
  const MrpSpec walk = build_random_walk(7);
  const LinearProblem problem = tabular_problem(walk);
  const double gamma = 0.9;
  const double eta = 0.6;
  std::vector<Eigen::Index> keep{1, 2, 3, 4, 5, 6, 7};
  const Eigen::MatrixXd p_nn = linalg::submatrix(matrix_form(walk).transition, keep);
  const Eigen::MatrixXd expected =
      (Eigen::MatrixXd::Identity(7, 7) - eta * gamma * p_nn).inverse();
  EXPECT_LT((sf_fixed_point(problem, gamma, eta) - expected).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(SfFixedPoint, SfValueRecoversDiscountedTdFixedPoint) {
  Rng rng(99);
  for (int k = 0; k < 50; ++k) {
    const auto inst = random_instance(rng);
    const Eigen::VectorXd w_hat = reward_regression_solution(inst.problem);
    for (double eta : kEtaGrid) {
      const Eigen::VectorXd lhs = sf_fixed_point(inst.problem, inst.gamma, eta) * w_hat;
      const Eigen::VectorXd rhs = td_fixed_point(inst.problem, eta * inst.gamma);
      EXPECT_LT((lhs - rhs).lpNorm<Eigen::Infinity>(), 1e-10);
    }
  }
}

TEST(RewardRegression, TabularInterpolatesRewards) {
  const MrpSpec chain = build_deterministic_chain(16);
  const Eigen::VectorXd w = reward_regression_solution(tabular_problem(chain));
  Eigen::VectorXd e16 = Eigen::VectorXd::Zero(16);
  e16(15) = 1.0;
  EXPECT_LT((w - e16).lpNorm<Eigen::Infinity>(), 1e-15);

  const MrpSpec walk = build_random_walk(9);
  const Eigen::VectorXd expected = nonterminal_part(matrix_form(walk).reward, walk.terminal());
  EXPECT_LT((reward_regression_solution(tabular_problem(walk)) - expected)
                .lpNorm<Eigen::Infinity>(),
            1e-14);
}

TEST(RewardRegression, NormalEquationResidualVanishes) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto inst = random_instance(rng);
    const LinearProblem& p = inst.problem;
    const Eigen::VectorXd w = reward_regression_solution(p);
    const Eigen::VectorXd residual =
        p.phi.transpose() * p.d_pi.asDiagonal() * (p.reward - p.phi * w);
    EXPECT_LT(residual.lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(LemmaIdentity, HoldsOnRandomInstances) {
  Rng rng(77);
  for (int k = 0; k < 100; ++k) {
    const auto inst = random_instance(rng);
    for (double eta : kEtaGrid) {
      EXPECT_LT(lemma_identity_residual(inst.problem, inst.gamma, eta), 1e-10);
    }
  }
}

TEST(LemmaIdentity, EndpointsAreExactlyTrivial) {
  Rng rng(5);
  const auto inst = random_instance(rng);
  EXPECT_LT(lemma_identity_residual(inst.problem, inst.gamma, 0.0), 1e-13);
  EXPECT_LT(lemma_identity_residual(inst.problem, inst.gamma, 1.0), 1e-13);
}

TEST(PropositionCheck, StartingAtFixedPointStaysThere) {
  Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    const auto inst = random_instance(rng);
    const Eigen::VectorXd theta_td = td_fixed_point(inst.problem, inst.gamma);
    for (double eta : kEtaGrid) {
      const FixedPointReport report = proposition_check(inst.problem, inst.gamma, eta, theta_td, 50);
      for (double distance : report.iteration_trace) EXPECT_LE(distance, 1e-12);
    }
  }
}

TEST(PropositionCheck, RandomWalkConvergesFromZero) {
  const LinearProblem problem = tabular_problem(build_random_walk(19));
  const FixedPointReport report =
      proposition_check(problem, 1.0, 0.7, Eigen::VectorXd::Zero(19), 10'000);
  EXPECT_LT(report.iteration_trace.back(), 1e-8);
  EXPECT_EQ(report.iteration_trace.size(), 10'001u);
  EXPECT_LT((report.theta_final - report.theta_td).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(PropositionCheck, ZeroEtaIsExpectedTdIteration) {
  Rng rng(12);
  const auto inst = random_instance(rng);
  const LinearProblem& p = inst.problem;
  const Eigen::MatrixXd phi_t_d = p.phi.transpose() * p.d_pi.asDiagonal();
  const Eigen::MatrixXd a = phi_t_d * p.phi;
  const Eigen::MatrixXd c = phi_t_d * p.transition * p.phi;
  const Eigen::VectorXd b = phi_t_d * p.reward;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p.phi.cols());
  const FixedPointReport report = proposition_check(p, inst.gamma, 0.0, theta, 40);
  for (int k = 0; k < 40; ++k) theta = a.fullPivLu().solve(b + inst.gamma * c * theta);
  EXPECT_LT((theta - report.theta_final).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(PropositionCheck, DivergenceCarriesTrace) {
  // Two states with features 1 and 2 feeding into the second state; weighting
  // the first state heavily makes the expected iteration expand by ~1.68 per step.
  LinearProblem p;
  p.phi = Eigen::Vector2d(1.0, 2.0);
  p.d_pi = Eigen::Vector2d(0.9, 0.1);
  p.transition.resize(2, 2);
  p.transition << 0, 1, 0, 1;
  p.reward = Eigen::Vector2d::Zero();
  try {
    proposition_check(p, 0.99, 0.0, Eigen::VectorXd::Ones(1), 1000);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    ASSERT_GE(e.trace().size(), 2u);
    EXPECT_GT(e.trace().back(), 1e6);
    EXPECT_GT(e.trace()[1], e.trace()[0]);
  }
}

TEST(EffectiveRank, ExactExamples) {
  EXPECT_EQ(effective_rank(Eigen::MatrixXd::Identity(128, 128), 0.01), 127);
  Rng rng(1);
  const Eigen::MatrixXd rank_one = random_matrix(6, 1, rng) * random_matrix(1, 9, rng);
  EXPECT_EQ(effective_rank(rank_one, 0.01), 1);
  Eigen::Vector4d diag(10, 1, 0.01, 0.001);
  EXPECT_EQ(effective_rank(diag.asDiagonal().toDenseMatrix(), 0.01), 2);
}

TEST(EffectiveRank, ScaleInvariantAndMonotoneInDelta) {
  Rng rng(31);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  std::uniform_int_distribution<Eigen::Index> size(1, 12);
  for (int k = 0; k < 100; ++k) {
    Eigen::MatrixXd m = random_matrix(size(rng), size(rng), rng);
    // Spread the spectrum so thresholds are not all hit at the same k.
    for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j) *= std::pow(0.5, static_cast<double>(j));
    const double c = scale(rng);
    EXPECT_EQ(effective_rank(m, 0.01), effective_rank(c * m, 0.01));
    Eigen::Index previous = effective_rank(m, 0.001);
    for (double delta : {0.01, 0.05, 0.1, 0.3, 0.6, 0.9}) {
      const Eigen::Index current = effective_rank(m, delta);
      EXPECT_LE(current, previous);
      previous = current;
    }
  }
}

TEST(EffectiveRank, Errors) {
  EXPECT_THROW(effective_rank(Eigen::MatrixXd::Zero(3, 3), 0.01), UndefinedRankError);
  EXPECT_THROW(effective_rank(Eigen::MatrixXd::Identity(3, 3), 0.0), ContractError);
  EXPECT_THROW(effective_rank(Eigen::MatrixXd::Identity(3, 3), 1.0), ContractError);
}
