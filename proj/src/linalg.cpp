#include "etamix/linalg.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "etamix/errors.hpp"

namespace etamix::linalg {

CheckedLu::CheckedLu(const Eigen::MatrixXd& a, std::string_view what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionError(fmt::format("{}: expected a non-empty square matrix, got {}x{}", what,
                                     a.rows(), a.cols()));
  }
  if (!a.allFinite()) {
    throw SingularityError(fmt::format("{}: matrix has non-finite entries", what),
                           std::numeric_limits<double>::infinity());
  }
  lu_.compute(a);
  // rcond() can miss exact zero pivots, and the pivot spread bounds the condition number from below.
  const double rcond = lu_.rcond();
  const Eigen::VectorXd pivots = lu_.matrixLU().diagonal().cwiseAbs();
  const double spread = pivots.minCoeff() > 0.0 ? pivots.maxCoeff() / pivots.minCoeff()
                                                : std::numeric_limits<double>::infinity();
  condition_ = rcond > 0.0 ? std::max(1.0 / rcond, spread) : std::numeric_limits<double>::infinity();
  if (!(condition_ <= kMaxConditionNumber)) {
    throw SingularityError(
        fmt::format("{}: matrix is singular or ill-conditioned (condition number {:.3e})", what,
                    condition_),
        condition_);
  }
}

Eigen::MatrixXd CheckedLu::solve(const Eigen::MatrixXd& rhs) const { return lu_.solve(rhs); }

Eigen::VectorXd CheckedLu::solve(const Eigen::VectorXd& rhs) const { return lu_.solve(rhs); }

Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
  // BDCSVD falls back to Jacobi for small matrices; both sort decreasingly.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues();
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& index) {
  const auto k = static_cast<Eigen::Index>(index.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = m(index[i], index[j]);
  }
  return out;
}

Eigen::VectorXd subvector(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& index) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(index[i]);
  return out;
}

}  // namespace etamix::linalg
