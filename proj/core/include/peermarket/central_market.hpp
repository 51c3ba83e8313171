#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peermarket/qp.hpp"
#include "peermarket/scenario.hpp"

namespace peermarket {

/// Index bookkeeping for the assembled market QP. Variables are all D, all G,
/// then one q per arc in the Topology's (seller, buyer) order.
struct MarketLayout {
  int nodes = 0;
  int arcs = 0;
  std::vector<Topology::Arc> arc_list;
  // Row indices; -1 when the constraint is absent or stored elsewhere.
  std::vector<int> d_hi, d_lo, d_fix;  // ineq, ineq, eq
  std::vector<int> g_hi, g_lo, g_fix;
  std::vector<int> capacity;     // ineq row per arc
  std::vector<int> reciprocity;  // ineq row per link
  std::vector<int> balance;      // eq row per node
  std::vector<std::string> ineq_names;
  std::vector<std::string> eq_names;

  [[nodiscard]] int d_var(int i) const { return i; }
  [[nodiscard]] int g_var(int i) const { return nodes + i; }
  [[nodiscard]] int q_var(int arc) const { return 2 * nodes + arc; }
  [[nodiscard]] int vars() const { return 2 * nodes + arcs; }
};

/// Extra terms for the assembled problem: a Tikhonov term reg·‖q‖² and a
/// per-arc linear weight added to the minimization objective.
struct MarketTerms {
  double regularization = 0.0;
  Eigen::VectorXd arc_weight;  // empty or one entry per arc
};

struct MarketQp {
  QpProblem qp;
  MarketLayout layout;
  MarketTerms terms;
};

/// Minimization form of the welfare problem; objective value equals −SW.
/// Throws MarketError for scenarios with validation errors.
[[nodiscard]] MarketQp build_centralized_qp(const Scenario& scenario, const MarketTerms& terms = {});

struct MarketOptions {
  QpOptions qp;
  double regularization = 0.0;
};

enum class SolutionKind { centralized, variational, parameterized };
[[nodiscard]] const char* to_string(SolutionKind kind);

struct WastePair {
  int u = 0;  // dense node indices, u < v
  int v = 0;
  double waste = 0.0;
  double lambda_u = 0.0;
  double lambda_v = 0.0;
  double c_uv = 0.0;
  double c_vu = 0.0;
};

/// Decisions and prices at a solution of the market problem. Node-indexed
/// vectors use dense indices (positions in Scenario::prosumers). Pair
/// matrices are N×N: q(m, n) is the quantity m sells to n, xi(n, m) prices
/// q(m, n) ≤ κ, zeta(n, m) is n's valuation of its trade with m. Entries for
/// unlinked pairs are zero.
struct MarketSolution {
  SolutionKind kind = SolutionKind::centralized;
  QpStatus status = QpStatus::optimal;
  Eigen::VectorXd D, G, Q, lambda;
  Eigen::VectorXd mu_lo, mu_hi, nu_lo, nu_hi;
  Eigen::MatrixXd q, zeta, xi;
  std::vector<std::pair<int, int>> pairs;  // linked (u, v), u < v
  double sw = 0.0;
  double total_waste = 0.0;
  std::vector<WastePair> waste;  // pairs with waste above the report threshold
  KktResiduals residuals;
  double identity_residual = 0.0;  // max deviation of stationarity/price identities
  double regularization = 0.0;
  int iterations = 0;

  [[nodiscard]] int nodes() const { return static_cast<int>(D.size()); }
  [[nodiscard]] bool linked(int u, int v) const;
  /// Σ over linked pairs of |q(u, v)|, i.e. traded volume with waste counted once.
  [[nodiscard]] double traded_volume() const;
};

class MarketError : public std::runtime_error {
 public:
  MarketError(const std::string& what, std::vector<std::string> blamed = {})
      : std::runtime_error(what), blamed_constraints(std::move(blamed)) {}
  std::vector<std::string> blamed_constraints;
};

/// The constraints admit no point; blamed_constraints lists the rows carrying
/// the Farkas certificate.
class MarketInfeasible : public MarketError {
 public:
  using MarketError::MarketError;
};

inline constexpr double kWasteReportThreshold = 1e-6;

/// Maps a solved market QP back onto a MarketSolution. Throws MarketError on
/// infeasible or unsolved problems.
[[nodiscard]] MarketSolution extract_solution(const Scenario& scenario, const MarketQp& mqp,
                                              const QpSolution& sol, SolutionKind kind);

[[nodiscard]] MarketSolution solve_centralized(const Scenario& scenario, const MarketOptions& options = {});

/// Σₙ [−ãₙ(Dₙ−Dₙ*)² + b̃ₙ − ½aₙGₙ² − bₙGₙ − dₙ − Σₘ cₙₘ q(m, n)].
/// Throws std::invalid_argument on shape mismatch.
[[nodiscard]] double social_welfare(const Scenario& scenario, const Eigen::VectorXd& D, const Eigen::VectorXd& G,
                                    const Eigen::MatrixXd& q);

struct ClosedFormPrices {
  Eigen::VectorXd lambda;  // closed-form nodal prices
  double root = 0.0;
  double deviation = 0.0;  // ‖λ̂ − λ‖∞ against the solution
};

/// Root price from the no-waste aggregate balance and the remaining prices
/// propagated along a BFS tree from the root by the pairwise price identity.
/// Throws MarketError("waste present") when the solution wastes energy.
[[nodiscard]] ClosedFormPrices nodal_price_closed_form(const Scenario& scenario, const MarketSolution& solution,
                                                       double waste_tol = 1e-6);

}  // namespace peermarket
