#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "peermarket/central_market.hpp"

namespace peermarket {

/// Agent-side KKT check of a candidate point. Multipliers are recovered by
/// nonnegative least squares on the stationarity rows, with constraints whose
/// slack exceeds the activity tolerance pinned to zero multipliers. When the
/// split between a congestion price and a trade price is not determined, the
/// congestion price is taken as small as possible.
struct AgentKktReport {
  int node = 0;
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double lambda = 0.0;
  double mu_lo = 0.0, mu_hi = 0.0, nu_lo = 0.0, nu_hi = 0.0;
  std::vector<int> neighbors;  // dense indices
  std::vector<double> zeta;    // agent's valuation of the trade with each neighbor
  std::vector<double> xi;      // congestion price on the import from each neighbor

  [[nodiscard]] double max() const;
  [[nodiscard]] double zeta_with(int m) const;
};

[[nodiscard]] AgentKktReport check_agent_kkt(const Scenario& scenario, const MarketSolution& candidate, int node);

/// Builds a MarketSolution-shaped candidate from raw decisions so that
/// published points can be checked. Prices are left at zero.
[[nodiscard]] MarketSolution candidate_from_decisions(const Scenario& scenario, const Eigen::VectorXd& D,
                                                      const Eigen::VectorXd& G, const Eigen::MatrixXd& q);

/// Solves the agents' joint KKT system with one shared price per reciprocity
/// constraint as a complementarity problem (semismooth Newton on the
/// Fischer-Burmeister form). Does not go through the welfare QP, so agreement
/// with solve_centralized is a real check. Throws MarketInfeasible or
/// MarketError when the system cannot be solved.
[[nodiscard]] MarketSolution solve_ve(const Scenario& scenario, const MarketOptions& options = {});

/// ω(n, m) ≥ 0 is the extra value agent n puts on its trade constraint with m,
/// i.e. a weight on its import q(m, n). N×N, zero off links.
using OmegaMatrix = Eigen::MatrixXd;

struct GneSample {
  OmegaMatrix omega;
  MarketSolution solution;
  Eigen::MatrixXd recovered_zeta;  // ζ̂(n, m) = ζ(n, m) + ω(n, m)
  bool is_gne = false;
  double violation = 0.0;  // max over pairs of ω·|q(n, m) + q(m, n)|
  Eigen::VectorXd r;       // ζ̂(root, n)·r(n) = ζ̂(n, root); NaN where undefined
  bool face_extreme = false;  // produced by ParameterizedMarket::worst_on_face
};

[[nodiscard]] double complementarity_tolerance(const Scenario& scenario);

/// Solves the ω-parameterized welfare problem repeatedly with one assembled
/// QP; only the linear term changes between calls.
class ParameterizedMarket {
 public:
  explicit ParameterizedMarket(const Scenario& scenario, const MarketOptions& options = {});

  [[nodiscard]] GneSample solve(const OmegaMatrix& omega) const;

  /// D and G are unique at a solution but trades need not be: circulations
  /// whose weighted cost is zero leave the objective flat. Every point of that
  /// optimal face that keeps the complementarity filter is again a GNE with
  /// the same prices. Returns the lowest-welfare one (an LP in the trades)
  /// when it is below the given sample's welfare by more than 1e-6, else
  /// nullopt. Not defined with a Tikhonov term, which makes the face a point.
  [[nodiscard]] std::optional<GneSample> worst_on_face(const GneSample& sample) const;
  [[nodiscard]] const Scenario& scenario() const { return scenario_; }
  [[nodiscard]] const MarketQp& base() const { return base_; }

 private:
  Scenario scenario_;
  MarketOptions options_;
  MarketQp base_;
  Eigen::MatrixXi linked_;
  int root_ = 0;
  std::vector<int> root_neighbors_;
  double eps_comp_ = 0.0;
};

/// Throws MarketError for negative ω or ω on unlinked pairs.
[[nodiscard]] GneSample solve_parameterized(const Scenario& scenario, const OmegaMatrix& omega,
                                            const MarketOptions& options = {});

/// Which directed pairs carry a free ω. `lower` keeps directions where the
/// deciding agent has the larger node id, `upper` the smaller one.
enum class OmegaSupport { lower, upper, full };
[[nodiscard]] const char* to_string(OmegaSupport support);
[[nodiscard]] std::optional<OmegaSupport> parse_support(const std::string& name);

/// Directed pairs (n, m) in the support, sorted lexicographically.
[[nodiscard]] std::vector<std::pair<int, int>> support_directions(const Scenario& scenario, OmegaSupport support);

struct SweepStrategy {
  enum class Kind { grid, random, axis } kind = Kind::grid;
  OmegaSupport support = OmegaSupport::lower;
  double lo = 0.0;
  double hi = 100.0;
  double step = 1.0;
  long count = 100;
  unsigned long seed = 1;
  std::vector<double> axis;  // values shared by every direction (axis kind)
};

/// Light per-evaluation record for streaming dumps.
struct SampleRecord {
  long index = 0;
  std::vector<double> omega;  // in support_directions order
  double sw = 0.0;
  bool is_gne = false;
  double violation = 0.0;
  bool solved = false;
  std::vector<double> trades;  // q per arc in Topology order
};

struct SweepOptions {
  MarketOptions market;
  long max_evaluations = 1'000'000;
  bool keep_all = false;
  double dedup_resolution = 1e-4;
  int threads = 0;  // 0: hardware concurrency
  bool explore_faces = false;  // also keep worst_on_face of each new valid sample
  std::function<void(const SampleRecord&)> on_sample;  // called in enumeration order
};

struct SweepResult {
  std::vector<std::pair<int, int>> directions;
  std::vector<GneSample> samples;  // deduplicated, in enumeration order
  long evaluated = 0;
  long valid = 0;
  long failed = 0;  // solves that did not reach optimality
  long duplicates = 0;
  long face_extremes = 0;
};

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of ω points the strategy enumerates.
[[nodiscard]] long sweep_size(const Scenario& scenario, const SweepStrategy& strategy);

[[nodiscard]] SweepResult sweep_gne(const Scenario& scenario, const SweepStrategy& strategy,
                                    const SweepOptions& options = {});

struct PoaResult {
  bool defined = false;
  double poa_lower_bound = 0.0;
  double worst_sw = 0.0;
  std::size_t worst_sample = 0;
  std::string diagnostic;
};

/// ve_sw divided by the smallest SW among valid samples. Throws
/// std::invalid_argument when no valid GNE sample is given.
[[nodiscard]] PoaResult poa_bound(const std::vector<GneSample>& samples, double ve_sw);

}  // namespace peermarket
