#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace peermarket {

/// Convex quadratic program
///
///   minimize    ½ xᵀ P x + rᵀ x + constant
///   subject to  A_ineq x ≤ b_ineq
///               A_eq   x = b_eq
///
/// P must be symmetric positive semidefinite. Empty constraint blocks are
/// allowed (zero rows, matching column count).
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd r;
  double constant = 0.0;
  Eigen::MatrixXd A_ineq;
  Eigen::VectorXd b_ineq;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  std::vector<std::string> var_names;

  [[nodiscard]] Eigen::Index num_vars() const { return r.size(); }
  [[nodiscard]] Eigen::Index num_ineq() const { return b_ineq.size(); }
  [[nodiscard]] Eigen::Index num_eq() const { return b_eq.size(); }

  [[nodiscard]] double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(P * x) + r.dot(x) + constant;
  }

  /// Empty problem with n variables and no constraints.
  static QpProblem with_vars(Eigen::Index n);
};

enum class QpStatus { optimal, infeasible, unbounded, max_iter };

[[nodiscard]] const char* to_string(QpStatus status);

/// Max-norms of the four KKT residual blocks.
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;

  [[nodiscard]] double max() const;
};

/// Evidence that no feasible point exists: a nonnegative combination y of the
/// inequality rows plus a free combination w of the equality rows with
/// A_ineqᵀ y + A_eqᵀ w ≈ 0 and b_ineqᵀ y + b_eqᵀ w < 0.
struct InfeasibilityCertificate {
  Eigen::VectorXd y_ineq;
  Eigen::VectorXd w_eq;
  double combination_residual = 0.0;  // ‖A_ineqᵀ y + A_eqᵀ w‖∞
  double rhs_value = 0.0;             // b_ineqᵀ y + b_eqᵀ w
};

struct QpSolution {
  QpStatus status = QpStatus::max_iter;
  Eigen::VectorXd x;
  Eigen::VectorXd mult_ineq;
  Eigen::VectorXd mult_eq;
  double objective = 0.0;
  KktResiduals residuals;
  int iterations = 0;
  bool polished = false;
  std::optional<InfeasibilityCertificate> certificate;

  [[nodiscard]] bool optimal() const { return status == QpStatus::optimal; }
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 100;
  /// After interior-point convergence, re-solve the KKT system on the
  /// identified active set and keep the result when it is strictly better.
  bool polish = true;
};

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws QpError on inconsistent dimensions, asymmetric P or P with an
/// eigenvalue below -1e-10·‖P‖.
void check_problem(const QpProblem& problem);

/// Residuals of (x, mult_ineq, mult_eq) with respect to the KKT system of
/// `problem`. Stationarity uses P x + r + A_ineqᵀ μ + A_eqᵀ ν.
[[nodiscard]] KktResiduals kkt_residuals(const QpProblem& problem,
                                         const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& mult_ineq,
                                         const Eigen::VectorXd& mult_eq);

/// Primal-dual interior point method (Mehrotra predictor-corrector) on the
/// dense KKT system. Deterministic: identical input gives identical output.
[[nodiscard]] QpSolution solve(const QpProblem& problem,
                               const QpOptions& options = {});

/// Same as solve() but skips check_problem(); for hot loops that rebuild the
/// linear term of an already validated problem.
[[nodiscard]] QpSolution solve_unchecked(const QpProblem& problem,
                                         const QpOptions& options = {});

struct OracleResult {
  Eigen::VectorXd x;
  double value = 0.0;
  long evaluated_points = 0;
  long feasible_points = 0;
};

struct OracleOptions {
  int grid = 21;           // points per free dimension per pass
  int passes = 40;         // refinement passes after the first
  double zoom = 2.0;       // box shrink factor between passes
  double feas_tol = 1e-9;  // slack allowed on inequality rows
  unsigned long seed = 1;  // uniform draws added to each pass
};

/// Exhaustive search used to cross-check solve() on tiny instances.
/// Equality constraints are eliminated through a null-space basis; a grid
/// plus seeded uniform draws covers the remaining free dimensions (at most 4)
/// inside the box lo ≤ x ≤ hi, refined around the best point. Throws QpError
/// when the dimension is too large or when no sampled point is feasible.
[[nodiscard]] OracleResult brute_force_oracle(const QpProblem& problem,
                                              const Eigen::VectorXd& lo,
                                              const Eigen::VectorXd& hi,
                                              const OracleOptions& options = {});

}  // namespace peermarket
