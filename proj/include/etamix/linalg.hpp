#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace etamix::linalg {

/// Condition numbers above this are treated as singular.
inline constexpr double kMaxConditionNumber = 1e12;

/// Partial-pivot LU factorization that refuses ill-conditioned matrices.
class CheckedLu {
 public:
  /// Throws SingularityError (message prefixed by `what`) when the
  /// estimated condition number exceeds kMaxConditionNumber.
  CheckedLu(const Eigen::MatrixXd& a, std::string_view what);

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

  double condition_number() const noexcept { return condition_; }

 private:
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double condition_;
};

inline Eigen::MatrixXd solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs,
                             std::string_view what) {
  return CheckedLu(a, what).solve(rhs);
}

inline Eigen::VectorXd solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                             std::string_view what) {
  return CheckedLu(a, what).solve(rhs);
}

/// Singular values in decreasing order.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& m);

/// Rows/columns of `m` restricted to `index`.
Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& index);
Eigen::VectorXd subvector(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& index);

}  // namespace etamix::linalg
