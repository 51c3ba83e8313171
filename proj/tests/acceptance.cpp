// Acceptance gate. Prints one line per criterion and exits nonzero only when
// the outcome differs from the expectation given with --expect-fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "peermarket/central_market.hpp"
#include "peermarket/equilibrium.hpp"
#include "peermarket/privacy.hpp"
#include "peermarket/qp.hpp"
#include "peermarket/structure.hpp"
#include "support.hpp"

using namespace peermarket;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string summary;
  std::vector<std::string> notes;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double trade_gap(const MarketSolution& a, const MarketSolution& b) { return (a.q - b.q).cwiseAbs().maxCoeff(); }

Outcome ve_matches_centralized() {
  Outcome o;
  std::vector<Scenario> cases{builtin("three_node")};
  for (unsigned long seed = 0; seed < 25; ++seed) cases.push_back(random_scenario(5000 + seed));
  double worst_sw = 0, worst_q = 0, slowest = 0;
  for (const auto& s : cases) {
    const auto t0 = Clock::now();
    const MarketSolution ve = solve_ve(s);
    const MarketSolution cm = solve_centralized(s);
    slowest = std::max(slowest, seconds_since(t0));
    const double rel = std::abs(ve.sw - cm.sw) / std::max(1.0, std::abs(cm.sw));
    worst_sw = std::max(worst_sw, rel);
    worst_q = std::max(worst_q, trade_gap(ve, cm));
  }
  o.pass = worst_sw <= 1e-7 && worst_q <= 1e-5 && slowest < 1.0;
  o.summary = fmt("%zu instances, max rel SW gap %.2e (tol 1e-7), max trade gap %.2e (tol 1e-5), slowest %.3f s (limit 1 s)",
                  cases.size(), worst_sw, worst_q, slowest);
  return o;
}

Outcome three_node_prices() {
  const MarketSolution m = solve_centralized(builtin("three_node"));
  const double d1 = m.lambda[1] - m.lambda[0];
  const double d2 = m.lambda[2] - m.lambda[0];
  Outcome o;
  o.pass = std::abs(d1 - 2.0) <= 1e-5 && std::abs(d2 - 1.0) <= 1e-5 && std::abs(m.q(2, 1) - 5.0) <= 1e-5 &&
           m.xi(1, 2) > 0;
  o.summary = fmt("lambda1-lambda0 = %.8f (2 +- 1e-5), lambda2-lambda0 = %.8f (1 +- 1e-5), q(2,1) = %.8f (5 +- 1e-5), "
                  "xi(1,2) = %.6f (> 0)",
                  d1, d2, m.q(2, 1), m.xi(1, 2));
  return o;
}

Outcome gne_reproduction() {
  const Scenario s = builtin("three_node");
  const MarketSolution ve = solve_ve(s);
  SweepStrategy st;
  st.support = OmegaSupport::lower;
  st.lo = 0;
  st.hi = 100;
  st.step = 1;
  SweepOptions opt;
  opt.max_evaluations = sweep_size(s, st);
  opt.explore_faces = true;
  const auto t0 = Clock::now();
  const SweepResult r = sweep_gne(s, st, opt);
  const double elapsed = seconds_since(t0);

  const Eigen::Vector3d lam_target(1, 90, 18);
  auto matches = [&](const GneSample& g) {
    const MarketSolution& m = g.solution;
    return g.is_gne && m.sw <= 256 && (m.lambda - lam_target).cwiseAbs().maxCoeff() <= 0.5 &&
           std::abs(m.q(0, 1) - 2) <= 0.1 && std::abs(m.q(1, 2) - 5) <= 0.1 && std::abs(m.q(2, 0) - 7.9) <= 0.1;
  };
  long found = 0;
  for (const auto& g : r.samples) found += matches(g) ? 1 : 0;
  const PoaResult poa = poa_bound(r.samples, ve.sw);

  Outcome o;
  o.pass = found > 0 && poa.defined && poa.poa_lower_bound >= 1.48 && elapsed <= 600;
  o.summary = fmt("%ld evaluations, %ld valid, %ld face points, %ld matching GNE (need >= 1), worst SW %.4f, "
                  "PoA bound %.4f (need >= 1.48), %.0f s (limit 600 s)",
                  r.evaluated, r.valid, r.face_extremes, found, poa.worst_sw, poa.poa_lower_bound, elapsed);

  // Same point reached with weights on both sides of each trade.
  OmegaMatrix w = OmegaMatrix::Zero(3, 3);
  w(1, 0) = 87;
  w(2, 0) = 16;
  w(1, 2) = 72;
  const ParameterizedMarket pm(s);
  const GneSample g = pm.solve(w);
  const auto face = pm.worst_on_face(g);
  const GneSample& probe = face ? *face : g;
  o.notes.push_back(fmt("probe with weights on both trade sides: GNE %s, SW %.4f, lambda (%.3f, %.3f, %.3f), "
                        "matches target %s, PoA with it %.4f",
                        probe.is_gne ? "yes" : "no", probe.solution.sw, probe.solution.lambda[0],
                        probe.solution.lambda[1], probe.solution.lambda[2], matches(probe) ? "yes" : "no",
                        ve.sw / probe.solution.sw));
  return o;
}

Outcome balance_identities() {
  const Scenario s = builtin("three_node");
  const MarketSolution m = solve_centralized(s);
  const double q0 = m.q(1, 0) - m.q(0, 2);
  const auto p = oracle::published_low_equilibrium();
  const double low = social_welfare(s, p.D, p.G, p.q);
  Outcome o;
  o.pass = std::abs(m.Q[0] - q0) <= 1e-6 && std::abs(m.Q.sum()) <= 1e-6 && m.identity_residual <= 1e-6 &&
           std::abs(low - 255.5) <= 1.0;
  o.summary = fmt("Q0 = %.6f vs q(1,0) - q(0,2) = %.6f, sum Q = %.1e (tol 1e-6), price identity residual %.1e "
                  "(tol 1e-6), SW of the low equilibrium %.3f (255.5 +- 1)",
                  m.Q[0], q0, m.Q.sum(), m.identity_residual, low);
  o.notes.push_back(fmt("computed optimum SW %.4f, G0 %.4f (published root cost (4, 30))", m.sw, m.G[0]));
  return o;
}

Outcome ieee14_properties() {
  MarketOptions opt;
  opt.regularization = 1e-7;
  const MarketSolution uni = solve_ve(builtin("ieee14_uniform"), opt);
  const MarketSolution het = solve_ve(builtin("ieee14"), opt);
  const MarketSolution sym = solve_ve(builtin("ieee14_symmetric"), opt);
  const MarketSolution loc = solve_ve(builtin("ieee14_local"), opt);
  double zmin = INFINITY, zmax = -INFINITY;
  for (auto [u, v] : uni.pairs) {
    for (double z : {uni.zeta(u, v), uni.zeta(v, u)}) {
      zmin = std::min(zmin, z);
      zmax = std::max(zmax, z);
    }
  }
  const std::size_t uni_cong = congested_trades(builtin("ieee14_uniform"), uni).size();
  const std::size_t het_cong = congested_trades(builtin("ieee14"), het).size();
  const double dc = trade_gap(sym, uni), dd = trade_gap(loc, uni);
  Outcome o;
  o.pass = zmax - zmin <= 1e-5 && uni_cong == 0 && het.traded_volume() > uni.traded_volume() && het_cong >= 1 &&
           dc <= 1e-4 && dd <= 1e-4;
  o.summary = fmt("uniform: zeta spread %.1e (tol 1e-5), %zu congested (need 0); heterogeneous: volume %.3f vs %.3f, "
                  "%zu congested (need >= 1); symmetric and local trade gaps %.1e, %.1e (tol 1e-4)",
                  zmax - zmin, uni_cong, het.traded_volume(), uni.traded_volume(), het_cong, dc, dd);
  o.notes.push_back("all four cases solved with trade regularization 1e-7 so the trade vector is unique");
  return o;
}

// Stationarity and complementarity recomputed from the reported fields.
double kkt_violation(const Scenario& s, const MarketSolution& m) {
  const Topology t(s);
  double worst = 0;
  auto see = [&](double v) { worst = std::max(worst, std::abs(v)); };
  for (int i = 0; i < m.nodes(); ++i) {
    const auto& p = s.prosumers[static_cast<std::size_t>(i)];
    see(2 * p.a_tilde * (m.D[i] - p.d_star) - m.mu_lo[i] + m.mu_hi[i] + m.lambda[i]);
    see(p.a * m.G[i] + p.b - m.nu_lo[i] + m.nu_hi[i] - m.lambda[i]);
    see(m.D[i] - m.G[i] - p.delta_g - m.Q[i]);
    see(std::min({m.mu_lo[i], m.mu_hi[i], m.nu_lo[i], m.nu_hi[i], 0.0}));
    see(m.mu_lo[i] * (m.D[i] - p.d_min));
    see(m.mu_hi[i] * (p.d_max - m.D[i]));
    see(m.nu_lo[i] * (m.G[i] - p.g_min));
    see(m.nu_hi[i] * (p.g_max - m.G[i]));
  }
  for (const auto& a : t.arcs()) {
    const int n = a.to, k = a.from;
    see(t.pref(n, k) + m.xi(n, k) + m.zeta(n, k) - m.lambda[n]);
    see(std::min(m.xi(n, k), 0.0));
    see(m.xi(n, k) * (t.capacity(k, n) - m.q(k, n)));
    see(m.zeta(n, k) * (m.q(k, n) + m.q(n, k)));
    see(std::max(m.q(k, n) - t.capacity(k, n), 0.0));
  }
  return worst;
}

Outcome kkt_suite() {
  double worst = 0, worst_agent = 0;
  long unilateral = 0, solutions = 0;
  for (unsigned long seed = 0; seed < 200; ++seed) {
    const Scenario s = random_scenario(9000 + seed);
    for (const MarketSolution& m : {solve_centralized(s), solve_ve(s)}) {
      ++solutions;
      worst = std::max(worst, kkt_violation(s, m));
      for (int n = 0; n < m.nodes(); ++n) worst_agent = std::max(worst_agent, check_agent_kkt(s, m, n).max());
      unilateral += static_cast<long>(congestion_unilateral_violations(s, m).size());
    }
  }
  Outcome o;
  o.pass = worst <= 1e-6 && worst_agent <= 1e-6 && unilateral == 0;
  o.summary = fmt("200 scenarios, %ld solutions: worst stationarity/complementarity %.1e (tol 1e-6), worst agent KKT "
                  "%.1e (tol 1e-6), unilateral violations %ld (need 0)",
                  solutions, worst, worst_agent, unilateral);
  return o;
}

// Random scenario with a cycle of strictly negative weight planted on a
// random subset of at least three nodes.
Scenario planted_cycle(unsigned long seed, std::vector<int>& cycle) {
  Scenario s = random_scenario(seed);
  std::mt19937_64 rng(seed * 31 + 7);
  std::vector<int> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  const int len = 3 + static_cast<int>(rng() % (order.size() - 2));
  cycle.assign(order.begin(), order.begin() + len);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int i = 0; i < len; ++i) {
    const int a = s.prosumers[static_cast<std::size_t>(cycle[static_cast<std::size_t>(i)])].id;
    const int b = s.prosumers[static_cast<std::size_t>(cycle[static_cast<std::size_t>((i + 1) % len)])].id;
    TradeLink* l = s.find_link(a, b);
    if (!l) {
      TradeLink fresh;
      fresh.n = a;
      fresh.m = b;
      fresh.kappa = 4.0;
      s.links.push_back(fresh);
      l = &s.links.back();
    }
    // Buying from the next node is cheaper than selling to it.
    const double cheap = u(rng), dear = cheap + 0.2 + u(rng);
    if (l->n == a) {
      l->c_nm = cheap;
      l->c_mn = dear;
    } else {
      l->c_mn = cheap;
      l->c_nm = dear;
    }
  }
  return s;
}

Outcome cycle_congestion() {
  long holds = 0, detected = 0;
  for (unsigned long seed = 0; seed < 50; ++seed) {
    std::vector<int> planted;
    const Scenario s = planted_cycle(700 + seed, planted);
    const MarketSolution m = solve_centralized(s);
    PreferenceCycle c;
    c.nodes = planted;
    const MatrixXd diff = preference_differences(s);
    for (std::size_t i = 0; i < planted.size(); ++i) c.weight += diff(planted[i], planted[(i + 1) % planted.size()]);
    c.sign = PreferenceCycle::Sign::negative;
    detected += has_negative_cycle(s) && c.weight < 0 ? 1 : 0;
    const CycleVerdict v = verify_cycle_congestion(s, c, m);
    holds += v.applicable && v.holds ? 1 : 0;
  }
  const auto cycles = detect_preference_cycles(builtin("three_node"));
  const double w = cycles.empty() ? NAN : cycles.front().weight;
  Outcome o;
  o.pass = holds == 50 && detected == 50 && w == -1.0;
  o.summary = fmt("planted negative cycles: %ld/50 detected, %ld/50 with an opposed trade at capacity (need 50); "
                  "three_node cycle weight %.17g (need -1 exactly)",
                  detected, holds, w);
  return o;
}

struct ModelCase {
  Scenario scenario;
  ErrorModel errors;
  std::string label;
};

Outcome privacy_bias() {
  const long samples = 100000;
  std::vector<ModelCase> cases;
  cases.push_back({builtin("three_node"), clamp_covariance(three_node_error_model()), "three_node"});
  for (unsigned long seed = 0; seed < 20; ++seed) {
    Scenario s = random_scenario(3000 + seed);
    ErrorModel e = random_error_model(s, seed);
    cases.push_back({std::move(s), std::move(e), "random"});
  }
  long closed_ok = 0, exact_ok = 0, dominance_ok = 0;
  double worst_z = 0, worst_exact_z = 0;
  std::mt19937_64 rng(42);
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& [s, e, label] = cases[k];
    const auto n = static_cast<Eigen::Index>(s.size());
    const VectorXd r = VectorXd::Ones(n);
    const McEstimate mc = monte_carlo_bias(s, e, r, samples, 100 + k);
    const VectorXd pub = expected_bias(s, e, r);
    const VectorXd exact = exact_expected_bias(s, e, r);
    double z = 0, ze = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double se = std::max(mc.std_error[i], 1e-300);
      z = std::max(z, std::abs(pub[i] - mc.mean[i]) / se);
      ze = std::max(ze, std::abs(exact[i] - mc.mean[i]) / se);
    }
    worst_z = std::max(worst_z, z);
    worst_exact_z = std::max(worst_exact_z, ze);
    closed_ok += z <= 3 ? 1 : 0;
    exact_ok += ze <= 3 ? 1 : 0;

    const VectorXd lo = VectorXd::Constant(n, 0.5), hi = VectorXd::Constant(n, 2.0);
    const VectorXd phi = phi_bound(s, e, lo, hi);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    bool dominated = true;
    for (int t = 0; t < 100; ++t) {
      VectorXd rr(n);
      for (auto& v : rr) v = u(rng);
      dominated = dominated && (expected_bias(s, e, rr).cwiseAbs().array() <= phi.array() + 1e-15).all();
    }
    dominance_ok += dominated ? 1 : 0;
  }
  Scenario same = builtin("three_node");
  for (auto& p : same.prosumers) p.a = p.a_tilde;
  const double zero = expected_bias(same, cases[0].errors, VectorXd::Ones(3)).cwiseAbs().maxCoeff();

  const VectorXd one = VectorXd::Ones(3);
  std::vector<double> grid;
  for (int v = 1; v <= 20; ++v) grid.push_back(v);
  const BiasSurface surf =
      bias_vs_utility_params(builtin("three_node"), three_node_error_model(), grid, grid, 60.0, 0.5 * one, 2.0 * one);

  const auto total = static_cast<long>(cases.size());
  Outcome o;
  o.pass = closed_ok == total && dominance_ok == total && zero == 0.0;
  o.summary = fmt("closed form within 3 SE of Monte Carlo (1e5 draws) on %ld/%ld models, worst %.1f SE; "
                  "Phi dominance on %ld/%ld models x 100 r draws; equal curvatures give bias %.1e (need 0 exactly)",
                  closed_ok, total, worst_z, dominance_ok, total, zero);
  o.notes.push_back(fmt("exact expectation of the simulated utility change within 3 SE on %ld/%ld models, worst %.1f SE",
                        exact_ok, total, worst_exact_z));
  o.notes.push_back(fmt("soft target: bias surface over usage curvature 1..20 spans %.4f%% to %.4f%% of welfare "
                        "(reference range 1.2%% to 3.6%%, not gated)",
                        surf.points[surf.argmin].percent, surf.points[surf.argmax].percent));
  return o;
}

Outcome qp_oracle() {
  std::mt19937_64 rng(2024);
  double worst_gap = 0;
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + t % 3;
    const QpProblem qp = oracle::random_small_qp(rng, n, t % 4 == 1);
    const QpSolution s = solve(qp);
    const OracleResult b = brute_force_oracle(qp, VectorXd::Constant(n, -5.0), VectorXd::Constant(n, 5.0));
    worst_gap = std::max(worst_gap, s.optimal() ? std::abs(s.objective - b.value) : INFINITY);
  }

  double worst_fd = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Scenario> scenarios{builtin("three_node"), builtin("ieee14")};
  for (unsigned long seed = 0; seed < 10; ++seed) scenarios.push_back(random_scenario(seed));
  for (const auto& s : scenarios) {
    const MarketQp mqp = build_centralized_qp(s);
    const MarketLayout& L = mqp.layout;
    VectorXd x(L.vars());
    for (int i = 0; i < L.nodes; ++i) {
      const auto& p = s.prosumers[static_cast<std::size_t>(i)];
      x[L.d_var(i)] = p.d_min + u(rng) * (p.d_max - p.d_min);
      x[L.g_var(i)] = p.g_min + u(rng) * (p.g_max - p.g_min);
    }
    for (int k = 0; k < L.arcs; ++k) x[L.q_var(k)] = 2.0 * (u(rng) - 0.5);
    auto welfare = [&](const VectorXd& v) {
      MatrixXd q = MatrixXd::Zero(L.nodes, L.nodes);
      for (int k = 0; k < L.arcs; ++k) q(L.arc_list[k].from, L.arc_list[k].to) = v[L.q_var(k)];
      return social_welfare(s, v.head(L.nodes), v.segment(L.nodes, L.nodes), q);
    };
    const VectorXd grad = mqp.qp.P * x + mqp.qp.r;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      VectorXd up = x, dn = x;
      up[j] += 1e-5;
      dn[j] -= 1e-5;
      const double fd = -(welfare(up) - welfare(dn)) / 2e-5;
      worst_fd = std::max(worst_fd, std::abs(fd - grad[j]) / std::max(1.0, std::abs(grad[j])));
    }
  }
  Outcome o;
  o.pass = worst_gap <= 1e-3 && worst_fd <= 1e-4;
  o.summary = fmt("50 QPs, worst objective gap to grid oracle %.1e (tol 1e-3); worst relative gradient error %.1e "
                  "(tol 1e-4) over %zu market problems",
                  worst_gap, worst_fd, scenarios.size());
  return o;
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expect_fail;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--expect-fail" && i + 1 < argc) {
      expect_fail = parse_list(argv[++i]);
    } else if (arg == "--only" && i + 1 < argc) {
      only = parse_list(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--expect-fail 3,8] [--only 1,2]\n";
      return 2;
    }
  }

  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "variational equilibrium equals centralized optimum", ve_matches_centralized},
      {2, "three_node price identities", three_node_prices},
      {3, "GNE sweep reproduces the low equilibrium", gne_reproduction},
      {4, "balance identities and low equilibrium welfare", balance_identities},
      {5, "ieee14 qualitative properties", ieee14_properties},
      {6, "KKT and complementarity suite", kkt_suite},
      {7, "negative cycles force congestion", cycle_congestion},
      {8, "forecast bias closed form vs Monte Carlo", privacy_bias},
      {9, "QP oracle and gradient checks", qp_oracle},
  };

  int unexpected = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.summary << '\n';
    for (const auto& note : o.notes) std::cout << "     note: " << note << '\n';
    std::cout.flush();
    if (o.pass == static_cast<bool>(expect_fail.count(c.id))) ++unexpected;
  }
  if (unexpected) std::cout << unexpected << " criteria differ from the expected outcome\n";
  return unexpected ? 1 : 0;
}
