#include "peermarket/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "peermarket/equilibrium.hpp"

namespace peermarket {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Agent n's own entry first, then its neighbors.
std::vector<std::vector<int>> neighborhoods(const Topology& topo) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(topo.nodes()));
  for (int n = 0; n < topo.nodes(); ++n) {
    out[n].push_back(n);
    for (int m : topo.neighbors(n)) out[n].push_back(m);
  }
  return out;
}

void check_shape(const Scenario& s, const MatrixXd& m, const char* what) {
  const auto n = static_cast<Eigen::Index>(s.size());
  if (m.rows() != n || m.cols() != n) throw PrivacyError(std::string(what) + " must be N×N");
}

void check_box(const Scenario& s, const VectorXd& lo, const VectorXd& hi) {
  const auto n = static_cast<Eigen::Index>(s.size());
  if (lo.size() != n || hi.size() != n) throw PrivacyError("r box must have one entry per node");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lo[i] >= 0.0) || !(hi[i] >= lo[i])) throw PrivacyError("r box needs 0 ≤ r_lo ≤ r_hi");
  }
}

// Σₘ (σᴰ² + σᴳ² + sign·2cov) over agent n's neighborhood.
VectorXd spread(const Scenario& s, const ErrorModel& e, double sign) {
  const Topology topo(s);
  const auto hoods = neighborhoods(topo);
  VectorXd out = VectorXd::Zero(topo.nodes());
  for (int n = 0; n < topo.nodes(); ++n) {
    for (int m : hoods[n]) {
      out[n] += e.sigma_d(n, m) * e.sigma_d(n, m) + e.sigma_g(n, m) * e.sigma_g(n, m) + sign * 2.0 * e.cov(n, m);
    }
  }
  return out;
}

struct Moments {
  long count = 0;
  VectorXd mean;
  VectorXd m2;

  void merge(const Moments& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(count + o.count);
    const VectorXd delta = o.mean - mean;
    mean += delta * (static_cast<double>(o.count) / total);
    m2 += o.m2 + delta.cwiseProduct(delta) * (static_cast<double>(count) * static_cast<double>(o.count) / total);
    count += o.count;
  }
};

}  // namespace

void check_error_model(const Scenario& s, const ErrorModel& e) {
  check_shape(s, e.sigma_d, "sigma_d");
  check_shape(s, e.sigma_g, "sigma_g");
  check_shape(s, e.cov, "cov");
  for (Eigen::Index i = 0; i < e.cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < e.cov.cols(); ++j) {
      const double sd = e.sigma_d(i, j);
      const double sg = e.sigma_g(i, j);
      if (!(sd >= 0.0) || !(sg >= 0.0)) throw PrivacyError("standard deviations must be nonnegative");
      if (!std::isfinite(e.cov(i, j)) || std::abs(e.cov(i, j)) > sd * sg + 1e-12) {
        throw PrivacyError("covariance (" + std::to_string(i) + "," + std::to_string(j) +
                           ") exceeds the product of standard deviations");
      }
    }
  }
}

ErrorModel clamp_covariance(const ErrorModel& e, std::vector<ClampNote>* notes) {
  ErrorModel out = e;
  for (Eigen::Index i = 0; i < e.cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < e.cov.cols(); ++j) {
      const double bound = e.sigma_d(i, j) * e.sigma_g(i, j);
      const double c = e.cov(i, j);
      if (std::abs(c) > bound + 1e-12) {
        out.cov(i, j) = std::copysign(bound, c);
        if (notes) notes->push_back({static_cast<int>(i), static_cast<int>(j), c, out.cov(i, j)});
      }
    }
  }
  return out;
}

ErrorModel three_node_error_model() {
  ErrorModel e;
  e.sigma_d = MatrixXd(3, 3);
  e.sigma_g = MatrixXd(3, 3);
  e.cov = MatrixXd(3, 3);
  e.sigma_d << 0.8, 0.2, 0.2, 0.3, 0.8, 0.8, 0.8, 0.1, 0.3;
  e.sigma_g << 0.0, 0.2, 0.5, 0.0, 0.3, 0.5, 0.0, 0.8, 0.10;
  e.cov << 0.4, -0.2, -0.3, -0.8, -1.0, 0.5, 1.0, 0.0, 1.0;
  return e;
}

ErrorModel random_error_model(const Scenario& s, unsigned long seed, double sigma_max) {
  const auto n = static_cast<Eigen::Index>(s.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sig(0.0, sigma_max);
  std::uniform_real_distribution<double> corr(-1.0, 1.0);
  ErrorModel e{MatrixXd(n, n), MatrixXd(n, n), MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      e.sigma_d(i, j) = sig(rng);
      e.sigma_g(i, j) = sig(rng);
      e.cov(i, j) = corr(rng) * e.sigma_d(i, j) * e.sigma_g(i, j);
    }
  }
  return e;
}

VectorXd alpha(const Scenario& s) {
  VectorXd out(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& p = s.prosumers[i];
    out[static_cast<Eigen::Index>(i)] = 1.0 / (2.0 * p.a_tilde) + 1.0 / p.a;
  }
  return out;
}

VectorXd compute_rho(const Scenario& s, const VectorXd& r) {
  const Topology topo(s);
  if (r.size() != topo.nodes()) throw PrivacyError("r must have one entry per node");
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (!(r[i] >= 0.0)) throw PrivacyError("r entries must be nonnegative");
  }
  const VectorXd a = alpha(s);
  const int root = topo.root();
  double denom = a[root];
  for (int m : topo.neighbors(root)) denom += a[m] * r[m];
  if (!(denom > 0.0)) throw PrivacyError("nonpositive denominator in rho");
  return r / denom;
}

VectorXd beta(const Scenario& s, const ErrorModel& e) {
  check_shape(s, e.sigma_d, "sigma_d");
  check_shape(s, e.sigma_g, "sigma_g");
  check_shape(s, e.cov, "cov");
  const VectorXd sums = spread(s, e, 1.0);
  VectorXd out(sums.size());
  for (Eigen::Index i = 0; i < sums.size(); ++i) {
    const auto& p = s.prosumers[static_cast<std::size_t>(i)];
    out[i] = -(1.0 / p.a_tilde - 1.0 / p.a) * sums[i];
  }
  return out;
}

VectorXd expected_bias(const Scenario& s, const ErrorModel& e, const VectorXd& r) {
  const VectorXd rho = compute_rho(s, r);
  return 0.5 * beta(s, e).cwiseProduct(rho.cwiseProduct(rho));
}

VectorXd exact_expected_bias(const Scenario& s, const ErrorModel& e, const VectorXd& r) {
  check_shape(s, e.sigma_d, "sigma_d");
  check_shape(s, e.sigma_g, "sigma_g");
  check_shape(s, e.cov, "cov");
  const VectorXd rho = compute_rho(s, r);
  const VectorXd var = spread(s, e, -1.0);
  const VectorXd a = alpha(s);
  return (-0.5 * a.array() * rho.array().square() * var.array()).matrix();
}

VectorXd phi_bound(const Scenario& s, const ErrorModel& e, const VectorXd& r_lo, const VectorXd& r_hi) {
  check_box(s, r_lo, r_hi);
  const VectorXd b = beta(s, e);
  VectorXd out(b.size());
  for (Eigen::Index n = 0; n < b.size(); ++n) {
    VectorXd corner = r_lo;
    corner[n] = r_hi[n];
    const double rho = compute_rho(s, corner)[n];
    out[n] = 0.5 * std::abs(b[n]) * rho * rho;
  }
  return out;
}

McEstimate monte_carlo_bias(const Scenario& s, const ErrorModel& e, const VectorXd& r, const VectorXd& D,
                            const VectorXd& G, long samples, unsigned long seed, int threads, bool controlled) {
  check_error_model(s, e);
  if (samples < 1000) throw PrivacyError("monte_carlo_bias needs at least 1000 samples");
  const Topology topo(s);
  const int n = topo.nodes();
  if (D.size() != n || G.size() != n) throw PrivacyError("operating point must have one entry per node");
  const VectorXd rho = compute_rho(s, r);
  const auto hoods = neighborhoods(topo);

  // Linear map from the Gaussian pair (z1, z2) to (εᴰ, εᴳ) per pair.
  struct Pair {
    int n, m;
    double d1, g1, g2;
  };
  std::vector<Pair> pairs;
  for (int a = 0; a < n; ++a) {
    for (int m : hoods[a]) {
      const double sd = e.sigma_d(a, m);
      const double sg = e.sigma_g(a, m);
      const double c = e.cov(a, m);
      Pair p{a, m, sd, 0.0, sg};
      if (sd > 0.0) {
        p.g1 = c / sd;
        p.g2 = std::sqrt(std::max(0.0, sg * sg - p.g1 * p.g1));
      }
      pairs.push_back(p);
    }
  }
  std::vector<double> cheapest(static_cast<std::size_t>(n), 0.0);
  for (int a = 0; a < n; ++a) {
    double best = std::numeric_limits<double>::infinity();
    for (int m : topo.neighbors(a)) best = std::min(best, topo.pref(a, m));
    cheapest[a] = std::isfinite(best) ? best : 0.0;
  }

  const long chunks = (samples + kMcChunk - 1) / kMcChunk;
  std::vector<Moments> parts(static_cast<std::size_t>(chunks));
  auto run_chunk = [&](long c) {
    std::seed_seq seq{static_cast<unsigned long>(seed & 0xffffffffUL), static_cast<unsigned long>(seed >> 32),
                      static_cast<unsigned long>(c)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> z;
    const long len = std::min(kMcChunk, samples - c * kMcChunk);
    Moments mo;
    mo.mean = VectorXd::Zero(n);
    mo.m2 = VectorXd::Zero(n);
    VectorXd sum(n);
    for (long k = 0; k < len; ++k) {
      sum.setZero();
      for (const auto& p : pairs) {
        const double z1 = z(rng);
        const double z2 = z(rng);
        sum[p.n] += p.d1 * z1 - (p.g1 * z1 + p.g2 * z2);
      }
      ++mo.count;
      for (int a = 0; a < n; ++a) {
        const auto& pr = s.prosumers[a];
        const double shift = rho[a] * sum[a];
        const double d_new = D[a] - shift / (2.0 * pr.a_tilde);
        const double g_new = G[a] + shift / pr.a;
        const double dq = -(1.0 / (2.0 * pr.a_tilde) + 1.0 / pr.a) * shift;
        const double du = -pr.a_tilde * ((d_new - pr.d_star) * (d_new - pr.d_star) - (D[a] - pr.d_star) * (D[a] - pr.d_star)) -
                          0.5 * pr.a * (g_new * g_new - G[a] * G[a]) - pr.b * (g_new - G[a]) - cheapest[a] * dq;
        // First-order part of du; its mean is exactly zero.
        const double linear = (D[a] - pr.d_star) * shift - (pr.a * G[a] + pr.b) * shift / pr.a - cheapest[a] * dq;
        const double x = controlled ? du - linear : du;
        const double delta = x - mo.mean[a];
        mo.mean[a] += delta / static_cast<double>(mo.count);
        mo.m2[a] += delta * (x - mo.mean[a]);
      }
    }
    parts[static_cast<std::size_t>(c)] = std::move(mo);
  };

  const int workers = std::max(1, threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency()));
  if (workers == 1 || chunks == 1) {
    for (long c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (long c = t; c < chunks; c += workers) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  Moments total;
  for (const auto& p : parts) total.merge(p);

  McEstimate out;
  out.samples = total.count;
  out.mean = total.mean;
  const double cnt = static_cast<double>(total.count);
  out.std_error = (total.m2 / (cnt - 1.0) / cnt).cwiseSqrt();
  return out;
}

McEstimate monte_carlo_bias(const Scenario& s, const ErrorModel& e, const VectorXd& r, long samples,
                            unsigned long seed, int threads, bool controlled) {
  const MarketSolution ve = solve_ve(s);
  return monte_carlo_bias(s, e, r, ve.D, ve.G, samples, seed, threads, controlled);
}

BiasReport bias_report(const Scenario& s, const ErrorModel& raw, const VectorXd& r, const VectorXd& r_lo,
                       const VectorXd& r_hi, long samples, unsigned long seed, int threads) {
  BiasReport rep;
  const ErrorModel e = clamp_covariance(raw, &rep.clamped);
  check_error_model(s, e);
  rep.r = r;
  rep.r_lo = r_lo;
  rep.r_hi = r_hi;
  rep.rho = compute_rho(s, r);
  rep.beta = beta(s, e);
  rep.expected_bias = expected_bias(s, e, r);
  rep.exact_bias = exact_expected_bias(s, e, r);
  rep.phi = phi_bound(s, e, r_lo, r_hi);
  const MarketSolution ve = solve_ve(s);
  rep.ve_sw = ve.sw;
  rep.phi_percent = 100.0 * rep.phi.sum() / ve.sw;
  if (samples > 0) {
    const McEstimate mc = monte_carlo_bias(s, e, r, ve.D, ve.G, samples, seed, threads, true);
    const McEstimate raw_mc = monte_carlo_bias(s, e, r, ve.D, ve.G, samples, seed, threads, false);
    rep.mc_mean = mc.mean;
    rep.mc_stderr = mc.std_error;
    rep.mc_raw_mean = raw_mc.mean;
    rep.mc_raw_stderr = raw_mc.std_error;
    rep.samples = mc.samples;
  }
  return rep;
}

BiasSurface bias_vs_utility_params(const Scenario& s, const ErrorModel& raw, const std::vector<double>& grid_1,
                                   const std::vector<double>& grid_2, double b_shared, const VectorXd& r_lo,
                                   const VectorXd& r_hi, int node_1, int node_2) {
  const auto i1 = s.index_of(node_1);
  const auto i2 = s.index_of(node_2);
  if (!i1 || !i2 || node_1 == node_2) throw PrivacyError("surface needs two distinct existing prosumers");
  if (!(b_shared > 0.0)) throw PrivacyError("shared benefit level must be positive");
  const ErrorModel e = clamp_covariance(raw);
  check_error_model(s, e);
  BiasSurface out;
  out.node_1 = node_1;
  out.node_2 = node_2;
  for (double a1 : grid_1) {
    for (double a2 : grid_2) {
      if (!(a1 > 0.0) || !(a2 > 0.0)) throw PrivacyError("surface grid values must be positive");
      Scenario v = s;
      auto set = [&](std::size_t idx, double at) {
        auto& p = v.prosumers[idx];
        p.a_tilde = at;
        p.b_tilde = b_shared;
        p.d_star = std::sqrt(b_shared / at);
      };
      set(*i1, a1);
      set(*i2, a2);
      const VectorXd phi = phi_bound(v, e, r_lo, r_hi);
      SurfacePoint pt;
      pt.a_tilde_1 = a1;
      pt.a_tilde_2 = a2;
      pt.phi_sum = phi[static_cast<Eigen::Index>(*i1)] + phi[static_cast<Eigen::Index>(*i2)];
      pt.ve_sw = solve_ve(v).sw;
      pt.percent = 100.0 * pt.phi_sum / pt.ve_sw;
      out.points.push_back(pt);
    }
  }
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    if (out.points[k].percent < out.points[out.argmin].percent) out.argmin = k;
    if (out.points[k].percent > out.points[out.argmax].percent) out.argmax = k;
  }
  return out;
}

}  // namespace peermarket
