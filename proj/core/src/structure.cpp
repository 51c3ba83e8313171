#include "peermarket/structure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace peermarket {

using Eigen::MatrixXd;

namespace {

constexpr double kWeightEps = 1e-9;
constexpr double kPriceEps = 1e-8;

int resolve_len(const Scenario& s, int max_len) {
  const int n = static_cast<int>(s.size());
  if (max_len == 0) return n;
  if (max_len < 0 || max_len > n) throw std::invalid_argument("max_len must lie in 0..node count");
  return max_len;
}

// Enumerates every simple directed cycle of length 3..max_len once per
// orientation, starting from its smallest node.
template <class Visit>
void for_each_cycle(const Topology& topo, int max_len, long max_cycles, Visit&& visit) {
  const int n = topo.nodes();
  long count = 0;
  std::vector<int> path;
  std::vector<bool> on_path(static_cast<std::size_t>(n), false);
  auto dfs = [&](auto&& self, int start, int node) -> void {
    for (int next : topo.neighbors(node)) {
      if (next == start && path.size() >= 3) {
        if (++count > max_cycles) {
          throw AnalysisBudgetExceeded("cycle enumeration exceeded " + std::to_string(max_cycles) + " cycles");
        }
        visit(path);
        continue;
      }
      if (next <= start || on_path[static_cast<std::size_t>(next)]) continue;
      if (static_cast<int>(path.size()) >= max_len) continue;
      path.push_back(next);
      on_path[static_cast<std::size_t>(next)] = true;
      self(self, start, next);
      on_path[static_cast<std::size_t>(next)] = false;
      path.pop_back();
    }
  };
  for (int s = 0; s < n; ++s) {
    path.assign(1, s);
    on_path[static_cast<std::size_t>(s)] = true;
    dfs(dfs, s, s);
    on_path[static_cast<std::size_t>(s)] = false;
  }
}

double cycle_weight(const MatrixXd& ct, const std::vector<int>& nodes) {
  double w = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) w += ct(nodes[i], nodes[(i + 1) % nodes.size()]);
  return w;
}

bool local_condition(const MatrixXd& ct, const std::vector<int>& nodes) {
  const std::size_t k = nodes.size();
  for (std::size_t i = 0; i < k; ++i) {
    const int cur = nodes[i];
    const int next = nodes[(i + 1) % k];
    const int prev = nodes[(i + k - 1) % k];
    if (!(ct(cur, next) - ct(cur, prev) < -kWeightEps)) return false;
  }
  return true;
}

void sort_cycles(std::vector<PreferenceCycle>& cycles) {
  std::sort(cycles.begin(), cycles.end(), [](const PreferenceCycle& a, const PreferenceCycle& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    return a.nodes < b.nodes;
  });
}

bool in_scope_for_optimum(const MarketSolution& sol) {
  return sol.kind == SolutionKind::centralized || sol.kind == SolutionKind::variational;
}

bool at_capacity(const Topology& topo, const MarketSolution& sol, int seller, int buyer, double tol) {
  const double kappa = topo.capacity(seller, buyer);
  return sol.q(seller, buyer) >= kappa - tol;
}

std::string describe_trade(const Scenario& s, int seller, int buyer) {
  return "q(" + std::to_string(s.prosumers[seller].id) + "," + std::to_string(s.prosumers[buyer].id) + ")";
}

CycleVerdict check_opposed(const Scenario& s, const std::vector<int>& nodes, bool opposed,
                           const MarketSolution& sol, double tol) {
  const Topology topo(s);
  CycleVerdict v;
  v.applicable = true;
  const std::size_t k = nodes.size();
  for (std::size_t i = 0; i < k; ++i) {
    const int a = nodes[i];
    const int b = nodes[(i + 1) % k];
    const int seller = opposed ? b : a;
    const int buyer = opposed ? a : b;
    if (at_capacity(topo, sol, seller, buyer, tol)) {
      v.holds = true;
      v.saturated = {seller, buyer};
      v.detail = describe_trade(s, seller, buyer) + " at capacity";
      return v;
    }
  }
  v.detail = opposed ? "no opposed trade at capacity" : "no trade along the cycle at capacity";
  return v;
}

}  // namespace

const char* to_string(PreferenceCycle::Sign sign) {
  return sign == PreferenceCycle::Sign::negative ? "negative" : "positive";
}

const char* to_string(CongestionPrediction::Reason reason) {
  switch (reason) {
    case CongestionPrediction::Reason::negative_cycle: return "negative_cycle";
    case CongestionPrediction::Reason::positive_cycle: return "positive_cycle";
    case CongestionPrediction::Reason::asymmetry: return "asymmetry";
    case CongestionPrediction::Reason::game_cycle: return "game_cycle";
  }
  return "unknown";
}

MatrixXd preference_differences(const Scenario& s) {
  const Topology topo(s);
  const int n = topo.nodes();
  MatrixXd ct = MatrixXd::Zero(n, n);
  for (const auto& a : topo.arcs()) ct(a.from, a.to) = topo.pref(a.from, a.to) - topo.pref(a.to, a.from);
  return ct;
}

bool has_negative_cycle(const Scenario& s) {
  const Topology topo(s);
  const MatrixXd ct = preference_differences(s);
  const int n = topo.nodes();
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (int round = 0; round < n; ++round) {
    bool changed = false;
    for (const auto& a : topo.arcs()) {
      const double cand = dist[static_cast<std::size_t>(a.from)] + ct(a.from, a.to);
      if (cand < dist[static_cast<std::size_t>(a.to)] - kWeightEps) {
        dist[static_cast<std::size_t>(a.to)] = cand;
        changed = true;
      }
    }
    if (!changed) return false;
  }
  return true;
}

std::vector<PreferenceCycle> detect_preference_cycles(const Scenario& s, const CycleOptions& options) {
  const int max_len = resolve_len(s, options.max_len);
  std::vector<PreferenceCycle> out;
  if (max_len < 3 || !has_negative_cycle(s)) return out;
  const Topology topo(s);
  const MatrixXd ct = preference_differences(s);
  for_each_cycle(topo, max_len, options.max_cycles, [&](const std::vector<int>& nodes) {
    const double w = cycle_weight(ct, nodes);
    if (std::abs(w) <= kWeightEps) return;
    PreferenceCycle c;
    c.nodes = nodes;
    c.weight = w;
    c.sign = w < 0 ? PreferenceCycle::Sign::negative : PreferenceCycle::Sign::positive;
    c.game_cycle = local_condition(ct, nodes);
    out.push_back(std::move(c));
  });
  sort_cycles(out);
  return out;
}

std::vector<PreferenceCycle> detect_game_cycles(const Scenario& s, const CycleOptions& options) {
  const int max_len = resolve_len(s, options.max_len);
  std::vector<PreferenceCycle> out;
  if (max_len < 3) return out;
  const Topology topo(s);
  const MatrixXd ct = preference_differences(s);
  for_each_cycle(topo, max_len, options.max_cycles, [&](const std::vector<int>& nodes) {
    if (!local_condition(ct, nodes)) return;
    PreferenceCycle c;
    c.nodes = nodes;
    c.weight = cycle_weight(ct, nodes);
    c.sign = c.weight < 0 ? PreferenceCycle::Sign::negative : PreferenceCycle::Sign::positive;
    c.game_cycle = true;
    out.push_back(std::move(c));
  });
  sort_cycles(out);
  return out;
}

CycleVerdict verify_cycle_congestion(const Scenario& s, const PreferenceCycle& cycle, const MarketSolution& sol,
                                     double tol) {
  if (!in_scope_for_optimum(sol)) {
    CycleVerdict v;
    v.detail = std::string("not applicable to ") + to_string(sol.kind) + " solutions";
    return v;
  }
  return check_opposed(s, cycle.nodes, cycle.sign == PreferenceCycle::Sign::negative, sol, tol);
}

CycleVerdict verify_game_cycle_congestion(const Scenario& s, const PreferenceCycle& cycle, const MarketSolution& sol,
                                          double tol) {
  if (!cycle.game_cycle) {
    CycleVerdict v;
    v.detail = "local condition does not hold on this cycle";
    return v;
  }
  return check_opposed(s, cycle.nodes, true, sol, tol);
}

std::vector<CongestionPrediction> predict_asymmetry_congestion(const Scenario& s) {
  const Topology topo(s);
  const int root = topo.root();
  std::vector<CongestionPrediction> out;
  const auto& around = topo.neighbors(root);
  auto linked_to_root = [&](int v) { return std::find(around.begin(), around.end(), v) != around.end(); };
  for (std::size_t li = 0; li < s.links.size(); ++li) {
    int n = static_cast<int>(*s.index_of(s.links[li].n));
    int m = static_cast<int>(*s.index_of(s.links[li].m));
    if (n > m) std::swap(n, m);
    if (n == root || m == root) continue;
    const double c_nm = topo.pref(n, m);
    const double c_mn = topo.pref(m, n);
    if (std::abs(c_nm - c_mn) <= kWeightEps) continue;
    CongestionPrediction p;
    p.reason = CongestionPrediction::Reason::asymmetry;
    // The buyer with the smaller price gets the positive congestion price.
    p.candidates.push_back(c_mn > c_nm ? std::pair{m, n} : std::pair{n, m});
    const std::string ni = std::to_string(s.prosumers[n].id);
    const std::string mi = std::to_string(s.prosumers[m].id);
    p.premises.push_back("lines " + ni + "-0 and " + mi + "-0 uncongested");
    p.premises.push_back("c(" + ni + ",0) = c(" + mi + ",0)");
    p.premises.push_back("c(0," + ni + ") = c(0," + mi + ")");
    std::ostringstream why;
    if (!linked_to_root(n) || !linked_to_root(m)) {
      p.premise_failed = true;
      why << "not both linked to the root";
    } else {
      if (std::abs(topo.pref(n, root) - topo.pref(m, root)) > kWeightEps) {
        p.premise_failed = true;
        why << "preferences for the root differ; ";
      }
      if (std::abs(topo.pref(root, n) - topo.pref(root, m)) > kWeightEps) {
        p.premise_failed = true;
        why << "root preferences differ; ";
      }
    }
    p.detail = p.premise_failed ? why.str() : "c(" + ni + "," + mi + ") ≠ c(" + mi + "," + ni + ")";
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<CongestionPrediction> predict_cycle_congestion(const Scenario& s, const CycleOptions& options) {
  std::vector<CongestionPrediction> out;
  auto add = [&](const PreferenceCycle& c, CongestionPrediction::Reason reason) {
    CongestionPrediction p;
    p.reason = reason;
    const bool opposed = reason != CongestionPrediction::Reason::positive_cycle;
    const std::size_t k = c.nodes.size();
    std::ostringstream d;
    d << "cycle";
    for (int v : c.nodes) d << ' ' << s.prosumers[v].id;
    d << " weight " << c.weight;
    for (std::size_t i = 0; i < k; ++i) {
      const int a = c.nodes[i];
      const int b = c.nodes[(i + 1) % k];
      p.candidates.push_back(opposed ? std::pair{b, a} : std::pair{a, b});
    }
    if (reason == CongestionPrediction::Reason::game_cycle) {
      p.premises.push_back("solution is an equilibrium");
    } else {
      p.premises.push_back("solution is a welfare optimum");
    }
    p.detail = d.str();
    out.push_back(std::move(p));
  };
  for (const auto& c : detect_preference_cycles(s, options)) {
    add(c, c.sign == PreferenceCycle::Sign::negative ? CongestionPrediction::Reason::negative_cycle
                                                     : CongestionPrediction::Reason::positive_cycle);
  }
  for (const auto& c : detect_game_cycles(s, options)) add(c, CongestionPrediction::Reason::game_cycle);
  return out;
}

PredictionVerdict verify_prediction(const Scenario& s, const CongestionPrediction& p, const MarketSolution& sol,
                                    double tol) {
  const Topology topo(s);
  PredictionVerdict v;
  if (p.premise_failed) {
    v.detail = "premise failed: " + p.detail;
    return v;
  }
  if (p.reason != CongestionPrediction::Reason::game_cycle && !in_scope_for_optimum(sol)) {
    v.detail = std::string("not applicable to ") + to_string(sol.kind) + " solutions";
    return v;
  }
  if (p.reason == CongestionPrediction::Reason::asymmetry) {
    const int root = topo.root();
    const auto [seller, buyer] = p.candidates.front();
    for (int x : {seller, buyer}) {
      if (sol.xi(x, root) > kPriceEps || sol.xi(root, x) > kPriceEps) {
        v.detail = "premise failed in solution: line " + std::to_string(s.prosumers[x].id) + "-0 congested";
        return v;
      }
    }
  }
  v.applicable = true;
  for (auto [seller, buyer] : p.candidates) {
    if (at_capacity(topo, sol, seller, buyer, tol)) {
      v.holds = true;
      v.detail = describe_trade(s, seller, buyer) + " at capacity";
      return v;
    }
  }
  v.detail = "no candidate trade at capacity";
  return v;
}

NoWasteCheck no_waste_necessary(const Scenario& s) {
  NoWasteCheck out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& p = s.prosumers[i];
    if (p.d_max - p.g_min >= p.delta_g) {
      out.possible = true;
      out.witness = static_cast<int>(i);
      break;
    }
  }
  return out;
}

std::vector<WasteCertificate> waste_certificates(const Scenario& s, const MarketSolution& sol,
                                                 const CertificateOptions& options) {
  const Topology topo(s);
  const int n = topo.nodes();
  const int max_edges = options.max_path_len == 0 ? n : options.max_path_len;
  if (max_edges < 0) throw std::invalid_argument("max_path_len must be nonnegative");

  // Marginal welfare of absorbing one more unit at m.
  std::vector<double> absorb(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());
  for (int m = 0; m < n; ++m) {
    const auto& p = s.prosumers[m];
    if (sol.G[m] > p.g_min + options.tol) absorb[m] = std::max(absorb[m], p.a * sol.G[m] + p.b);
    if (sol.D[m] < p.d_max - options.tol) absorb[m] = std::max(absorb[m], -2.0 * p.a_tilde * (sol.D[m] - p.d_star));
  }
  auto usable = [&](int from, int to) {
    return sol.q(from, to) < topo.capacity(from, to) - options.tol && sol.xi(to, from) < kPriceEps;
  };

  // Best accumulated path term and path to every reachable endpoint.
  long paths = 0;
  std::vector<WasteCertificate> out;
  for (int n0 = 0; n0 < n; ++n0) {
    std::vector<double> best(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());
    std::vector<std::vector<int>> best_path(static_cast<std::size_t>(n));
    std::vector<int> path{n0};
    std::vector<bool> on_path(static_cast<std::size_t>(n), false);
    on_path[n0] = true;
    auto dfs = [&](auto&& self, int node, double acc) -> void {
      if (++paths > options.max_paths) {
        throw AnalysisBudgetExceeded("path enumeration exceeded " + std::to_string(options.max_paths) + " paths");
      }
      if (acc > best[node]) {
        best[node] = acc;
        best_path[node] = path;
      }
      if (static_cast<int>(path.size()) - 1 >= max_edges) return;
      for (int next : topo.neighbors(node)) {
        if (on_path[next] || !usable(node, next)) continue;
        on_path[next] = true;
        path.push_back(next);
        self(self, next, acc + topo.pref(node, next) - topo.pref(next, node));
        path.pop_back();
        on_path[next] = false;
      }
    };
    dfs(dfs, n0, 0.0);

    for (int m0 : topo.neighbors(n0)) {
      WasteCertificate c;
      c.n0 = n0;
      c.m0 = m0;
      c.waste = std::max(0.0, -(sol.q(n0, m0) + sol.q(m0, n0)));
      c.margin = -std::numeric_limits<double>::infinity();
      if (sol.q(m0, n0) < topo.capacity(m0, n0) - options.tol) {
        for (int m = 0; m < n; ++m) {
          if (!std::isfinite(best[m]) || !std::isfinite(absorb[m])) continue;
          const double rate = absorb[m] - topo.pref(n0, m0) + best[m];
          if (rate > c.margin) {
            c.margin = rate;
            c.path = best_path[m];
          }
        }
      }
      c.certified = c.margin > options.threshold;
      c.consistent = !c.certified || c.waste <= options.tol;
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::vector<UnilateralViolation> congestion_unilateral_violations(const Scenario& s, const MarketSolution& sol,
                                                                  double tol) {
  const Topology topo(s);
  std::vector<UnilateralViolation> out;
  for (auto [u, v] : sol.pairs) {
    if (!(topo.capacity(u, v) > 0.0)) continue;
    if (at_capacity(topo, sol, u, v, tol) && at_capacity(topo, sol, v, u, tol)) out.push_back({u, v});
  }
  return out;
}

std::vector<std::pair<int, int>> congested_trades(const Scenario& s, const MarketSolution& sol, double tol) {
  const Topology topo(s);
  std::vector<std::pair<int, int>> out;
  for (const auto& a : topo.arcs()) {
    const bool full = topo.capacity(a.from, a.to) > 0.0 && at_capacity(topo, sol, a.from, a.to, tol);
    if (full || sol.xi(a.to, a.from) > tol) out.emplace_back(a.from, a.to);
  }
  return out;
}

StructureReport analyze_structure(const Scenario& s, const MarketSolution& sol, const CycleOptions& cycles,
                                  const CertificateOptions& certificates) {
  StructureReport r;
  r.cycles = detect_preference_cycles(s, cycles);
  r.game_cycles = detect_game_cycles(s, cycles);
  r.predictions = predict_cycle_congestion(s, cycles);
  auto asym = predict_asymmetry_congestion(s);
  r.predictions.insert(r.predictions.end(), asym.begin(), asym.end());
  for (const auto& p : r.predictions) r.verdicts.push_back(verify_prediction(s, p, sol));
  r.no_waste = no_waste_necessary(s);
  r.certificates = waste_certificates(s, sol, certificates);
  r.unilateral_violations = congestion_unilateral_violations(s, sol);
  r.congested = congested_trades(s, sol);
  return r;
}

}  // namespace peermarket
