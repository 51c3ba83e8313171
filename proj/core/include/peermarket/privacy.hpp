#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "peermarket/scenario.hpp"

namespace peermarket {

/// Forecast errors agent n makes on neighbor m's target demand (D) and RES
/// output (G). N×N in dense indices; entry (n, n) is n's error on its own
/// data and is included in every sum over the neighborhood. Entries for
/// unlinked pairs are ignored.
struct ErrorModel {
  Eigen::MatrixXd sigma_d;
  Eigen::MatrixXd sigma_g;
  Eigen::MatrixXd cov;
};

class PrivacyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ClampNote {
  int n = 0;
  int m = 0;
  double original = 0.0;
  double clamped = 0.0;
};

/// Throws PrivacyError on shape mismatch, negative σ or |cov| > σᴰσᴳ (with
/// 1e-12 slack).
void check_error_model(const Scenario& scenario, const ErrorModel& errors);

/// Moves covariances outside the Cauchy-Schwarz bound onto it.
[[nodiscard]] ErrorModel clamp_covariance(const ErrorModel& errors, std::vector<ClampNote>* notes = nullptr);

/// The three-node error matrices as published, before clamping.
[[nodiscard]] ErrorModel three_node_error_model();

/// Random valid model: σ uniform in [0, sigma_max], correlation uniform in
/// [−1, 1].
[[nodiscard]] ErrorModel random_error_model(const Scenario& scenario, unsigned long seed, double sigma_max = 1.0);

/// αₙ = 1/(2ãₙ) + 1/aₙ.
[[nodiscard]] Eigen::VectorXd alpha(const Scenario& scenario);

/// ρₙ(r) = rₙ / (α_root + Σ_{m linked to root} αₘ rₘ). The root's own entry of
/// r is only used in its numerator. Throws PrivacyError for negative r or a
/// nonpositive denominator.
[[nodiscard]] Eigen::VectorXd compute_rho(const Scenario& scenario, const Eigen::VectorXd& r);

/// βₙ = −(1/ãₙ − 1/aₙ) Σₘ (σᴰₙₘ² + σᴳₙₘ² + 2 covₙₘ).
[[nodiscard]] Eigen::VectorXd beta(const Scenario& scenario, const ErrorModel& errors);

/// Published closed form ½ βₙ ρₙ(r)². Zero exactly when ãₙ = aₙ.
[[nodiscard]] Eigen::VectorXd expected_bias(const Scenario& scenario, const ErrorModel& errors,
                                            const Eigen::VectorXd& r);

/// Expectation of the exact utility change under the forecast deviation
/// model: −½ (1/(2ãₙ) + 1/aₙ) ρₙ(r)² Σₘ (σᴰₙₘ² + σᴳₙₘ² − 2 covₙₘ). This is
/// what monte_carlo_bias estimates.
[[nodiscard]] Eigen::VectorXd exact_expected_bias(const Scenario& scenario, const ErrorModel& errors,
                                                  const Eigen::VectorXd& r);

/// Φₙ = ½|βₙ| ρₙ(r̄ₙ, (r̲ₘ)ₘ≠ₙ)². Throws PrivacyError unless 0 ≤ r_lo ≤ r_hi.
[[nodiscard]] Eigen::VectorXd phi_bound(const Scenario& scenario, const ErrorModel& errors,
                                        const Eigen::VectorXd& r_lo, const Eigen::VectorXd& r_hi);

struct McEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_error;
  long samples = 0;
};

/// Chunks of this many draws use seeds derived from (seed, chunk index), so
/// results depend only on seed and sample count.
inline constexpr long kMcChunk = 4096;

/// Draws (εᴰ, εᴳ) per pair, shifts each agent's decisions by
///   D → D − s/(2ã),  G → G + s/a,  s = ρₙ Σₘ (εᴰₙₘ − εᴳₙₘ)
/// around the given operating point, prices the change in net import at the
/// agent's cheapest neighbor, and averages the exact utility change. With
/// `controlled`, the first-order part of each draw (known mean zero) is
/// subtracted as a control variate; the estimate stays unbiased and its
/// spread drops to that of the second-order part. Throws PrivacyError for
/// invalid models or fewer than 1000 samples.
[[nodiscard]] McEstimate monte_carlo_bias(const Scenario& scenario, const ErrorModel& errors,
                                          const Eigen::VectorXd& r, const Eigen::VectorXd& D,
                                          const Eigen::VectorXd& G, long samples, unsigned long seed,
                                          int threads = 0, bool controlled = true);

/// As above around the variational equilibrium.
[[nodiscard]] McEstimate monte_carlo_bias(const Scenario& scenario, const ErrorModel& errors,
                                          const Eigen::VectorXd& r, long samples, unsigned long seed,
                                          int threads = 0, bool controlled = true);

struct BiasReport {
  Eigen::VectorXd r, r_lo, r_hi;
  Eigen::VectorXd rho;
  Eigen::VectorXd beta;
  Eigen::VectorXd expected_bias;
  Eigen::VectorXd exact_bias;
  Eigen::VectorXd phi;
  Eigen::VectorXd mc_mean;
  Eigen::VectorXd mc_stderr;      // control-variate estimate
  Eigen::VectorXd mc_raw_mean;    // plain average of the same draws
  Eigen::VectorXd mc_raw_stderr;
  long samples = 0;
  double ve_sw = 0.0;
  double phi_percent = 0.0;  // 100 Σ Φ / ve_sw
  std::vector<ClampNote> clamped;
};

inline constexpr const char* kBiasNormalization = "percent = 100 * sum(phi) / social welfare at the variational equilibrium";

/// Clamps the model, then evaluates every quantity above. samples = 0 skips
/// the Monte Carlo run.
[[nodiscard]] BiasReport bias_report(const Scenario& scenario, const ErrorModel& errors, const Eigen::VectorXd& r,
                                     const Eigen::VectorXd& r_lo, const Eigen::VectorXd& r_hi, long samples,
                                     unsigned long seed, int threads = 0);

struct SurfacePoint {
  double a_tilde_1 = 0.0;
  double a_tilde_2 = 0.0;
  double phi_sum = 0.0;
  double ve_sw = 0.0;
  double percent = 0.0;
};

struct BiasSurface {
  std::vector<SurfacePoint> points;
  std::size_t argmin = 0;
  std::size_t argmax = 0;
  int node_1 = 1;  // prosumer ids varied
  int node_2 = 2;
};

/// Grid over (ã of node_1, ã of node_2) with b̃ shared by both and D* = √(b̃/ã).
/// Φ₁ + Φ₂ is evaluated on the clamped model with the given r box.
[[nodiscard]] BiasSurface bias_vs_utility_params(const Scenario& scenario, const ErrorModel& errors,
                                                 const std::vector<double>& a_tilde_1,
                                                 const std::vector<double>& a_tilde_2, double b_tilde_shared,
                                                 const Eigen::VectorXd& r_lo, const Eigen::VectorXd& r_hi,
                                                 int node_1 = 1, int node_2 = 2);

}  // namespace peermarket
