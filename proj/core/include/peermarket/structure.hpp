#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peermarket/central_market.hpp"
#include "peermarket/scenario.hpp"

namespace peermarket {

// All node references below are dense indices (positions in
// Scenario::prosumers).

/// C̃(n, m) = c_nm − c_mn on linked pairs, zero elsewhere.
[[nodiscard]] Eigen::MatrixXd preference_differences(const Scenario& scenario);

struct PreferenceCycle {
  enum class Sign { negative, positive };
  std::vector<int> nodes;  // n₁…n_k, smallest index first, k > 2
  double weight = 0.0;     // Σ C̃(nᵢ, nᵢ₊₁) with wraparound
  Sign sign = Sign::negative;
  bool game_cycle = false;  // local condition holds at every node
};

[[nodiscard]] const char* to_string(PreferenceCycle::Sign sign);

class AnalysisBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CycleOptions {
  int max_len = 0;  // 0: node count
  long max_cycles = 100'000;
};

/// Bellman-Ford on C̃. Antisymmetry makes two-cycles weightless, so a negative
/// closed walk implies a strictly negative simple cycle of length > 2.
[[nodiscard]] bool has_negative_cycle(const Scenario& scenario);

/// Simple directed cycles of length 3..max_len with |weight| > 1e-9, both
/// orientations, sorted by weight then node sequence. Throws
/// AnalysisBudgetExceeded past max_cycles and std::invalid_argument when
/// max_len exceeds the node count.
[[nodiscard]] std::vector<PreferenceCycle> detect_preference_cycles(const Scenario& scenario,
                                                                    const CycleOptions& options = {});

/// Cycles (any weight) with C̃(nᵢ, nᵢ₊₁) − C̃(nᵢ, nᵢ₋₁) < 0 at every node.
[[nodiscard]] std::vector<PreferenceCycle> detect_game_cycles(const Scenario& scenario,
                                                              const CycleOptions& options = {});

struct CycleVerdict {
  bool applicable = false;
  bool holds = false;
  std::pair<int, int> saturated{-1, -1};  // (seller, buyer) of the trade at capacity
  std::string detail;
};

/// Negative cycles need a trade opposed to the cycle at capacity, positive ones
/// a trade along it. Only centralized and variational solutions are in scope;
/// other inputs are reported as not applicable.
[[nodiscard]] CycleVerdict verify_cycle_congestion(const Scenario& scenario, const PreferenceCycle& cycle,
                                                   const MarketSolution& solution, double tol = 1e-6);

/// Opposed trade at capacity for a game cycle; applies to any equilibrium.
[[nodiscard]] CycleVerdict verify_game_cycle_congestion(const Scenario& scenario, const PreferenceCycle& cycle,
                                                        const MarketSolution& solution, double tol = 1e-6);

struct CongestionPrediction {
  enum class Reason { negative_cycle, positive_cycle, asymmetry, game_cycle };
  Reason reason = Reason::asymmetry;
  // (seller, buyer) trades of which at least one is predicted at capacity.
  std::vector<std::pair<int, int>> candidates;
  std::vector<std::string> premises;
  bool premise_failed = false;
  std::string detail;
};

[[nodiscard]] const char* to_string(CongestionPrediction::Reason reason);

/// For every pair of root neighbors with asymmetric preferences, predicts the
/// trade into the node with the smaller preference price saturated. Premises
/// on root preferences are checked here; uncongested root lines can only be
/// checked against a solution and are listed as a premise.
[[nodiscard]] std::vector<CongestionPrediction> predict_asymmetry_congestion(const Scenario& scenario);

/// One prediction per detected cycle (preference and game cycles).
[[nodiscard]] std::vector<CongestionPrediction> predict_cycle_congestion(const Scenario& scenario,
                                                                         const CycleOptions& options = {});

struct PredictionVerdict {
  bool applicable = false;
  bool holds = false;
  std::string detail;
};

[[nodiscard]] PredictionVerdict verify_prediction(const Scenario& scenario, const CongestionPrediction& prediction,
                                                  const MarketSolution& solution, double tol = 1e-6);

struct NoWasteCheck {
  bool possible = false;  // some node has D̄ − G̲ ≥ ΔG
  std::optional<int> witness;
};

[[nodiscard]] NoWasteCheck no_waste_necessary(const Scenario& scenario);

struct WasteCertificate {
  int n0 = 0;  // node whose import from m0 is examined
  int m0 = 0;
  bool certified = false;
  double margin = 0.0;    // best SW rate found; certified when > threshold
  std::vector<int> path;  // n0 … m, empty when no usable path
  double waste = 0.0;     // −(q(n0, m0) + q(m0, n0)) in the solution
  bool consistent = true;  // certified ⇒ waste ≤ tolerance
};

struct CertificateOptions {
  int max_path_len = 0;  // edges; 0: node count
  long max_paths = 1'000'000;
  double threshold = 1e-6;
  double tol = 1e-6;
};

/// For each directed linked pair, the largest welfare rate of shifting one unit
/// of rejected energy along an uncongested path n0 → … → m and absorbing it at
/// m by lowering G or raising D:
///   v(m) − c(n0, m0) + Σ (c(nᵢ, nᵢ₊₁) − c(nᵢ₊₁, nᵢ))
/// where v(m) is the marginal welfare of the absorbing move computed from the
/// solution. A positive rate rules out waste on the pair at an optimum.
[[nodiscard]] std::vector<WasteCertificate> waste_certificates(const Scenario& scenario, const MarketSolution& solution,
                                                               const CertificateOptions& options = {});

struct UnilateralViolation {
  int u = 0;
  int v = 0;
};

/// Pairs where both directions sit at capacity.
[[nodiscard]] std::vector<UnilateralViolation> congestion_unilateral_violations(const Scenario& scenario,
                                                                                const MarketSolution& solution,
                                                                                double tol = 1e-6);

/// Directed trades (seller, buyer) with q at capacity or a positive congestion
/// price.
[[nodiscard]] std::vector<std::pair<int, int>> congested_trades(const Scenario& scenario,
                                                                const MarketSolution& solution, double tol = 1e-6);

struct StructureReport {
  std::vector<PreferenceCycle> cycles;
  std::vector<PreferenceCycle> game_cycles;
  std::vector<CongestionPrediction> predictions;
  std::vector<PredictionVerdict> verdicts;  // parallel to predictions
  NoWasteCheck no_waste;
  std::vector<WasteCertificate> certificates;
  std::vector<UnilateralViolation> unilateral_violations;
  std::vector<std::pair<int, int>> congested;
};

[[nodiscard]] StructureReport analyze_structure(const Scenario& scenario, const MarketSolution& solution,
                                                const CycleOptions& cycles = {},
                                                const CertificateOptions& certificates = {});

}  // namespace peermarket
