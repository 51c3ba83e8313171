#include "peermarket/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace peermarket {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Lawson-Hanson nonnegative least squares: min ‖A x − b‖ s.t. x ≥ 0.
VectorXd nnls(const MatrixXd& A, const VectorXd& b) {
  const Eigen::Index n = A.cols();
  VectorXd x = VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff());
  for (int outer = 0; outer < 3 * static_cast<int>(n) + 10; ++outer) {
    VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[j] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < 3 * static_cast<int>(n) + 10; ++inner) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j]) idx.push_back(j);
      }
      MatrixXd sub(A.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
      VectorXd z_sub = sub.colPivHouseholderQr().solve(b);
      VectorXd z = VectorXd::Zero(n);
      for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = z_sub[static_cast<Eigen::Index>(k)];
      bool all_pos = true;
      for (Eigen::Index j : idx) all_pos = all_pos && z[j] > 0;
      if (all_pos) {
        x = z;
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index j : idx) {
        if (z[j] <= 0) alpha = std::min(alpha, x[j] / (x[j] - z[j]));
      }
      x += alpha * (z - x);
      for (Eigen::Index j : idx) {
        if (x[j] <= tol) {
          x[j] = 0.0;
          passive[j] = false;
        }
      }
    }
  }
  return x;
}

double max_kappa(const Scenario& s) {
  double k = 0.0;
  for (const auto& l : s.links) k = std::max(k, l.kappa);
  return k;
}

}  // namespace

double AgentKktReport::max() const { return std::max({stationarity, feasibility, complementarity}); }

double AgentKktReport::zeta_with(int m) const {
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    if (neighbors[j] == m) return zeta[j];
  }
  return std::numeric_limits<double>::quiet_NaN();
}

AgentKktReport check_agent_kkt(const Scenario& s, const MarketSolution& cand, int node) {
  const Topology topo(s);
  const auto& p = s.prosumers.at(static_cast<std::size_t>(node));
  const auto& nb = topo.neighbors(node);
  const int deg = static_cast<int>(nb.size());
  const double act = 1e-6 * (1.0 + max_kappa(s));

  AgentKktReport rep;
  rep.node = node;
  rep.neighbors = nb;

  const double D = cand.D[node];
  const double G = cand.G[node];
  // Slacks of the agent's own constraints, all written as slack ≥ 0.
  const double s_dlo = D - p.d_min, s_dhi = p.d_max - D;
  const double s_glo = G - p.g_min, s_ghi = p.g_max - G;
  std::vector<double> s_cap(deg), s_rec(deg);
  double import = 0.0;
  for (int j = 0; j < deg; ++j) {
    const int m = nb[j];
    s_cap[j] = topo.capacity(m, node) - cand.q(m, node);
    s_rec[j] = -(cand.q(m, node) + cand.q(node, m));
    import += cand.q(m, node);
  }
  rep.feasibility = std::max({0.0, -s_dlo, -s_dhi, -s_glo, -s_ghi, std::abs(D - G - p.delta_g - import)});
  for (int j = 0; j < deg; ++j) rep.feasibility = std::max({rep.feasibility, -s_cap[j], -s_rec[j]});

  // Columns: λ⁺, λ⁻, μ̲, μ̄, ν̲, ν̄, then (ξ_j, ζ_j) per neighbor.
  const int cols = 6 + 2 * deg;
  const int rows = 2 + deg;
  MatrixXd A = MatrixXd::Zero(rows + cols, cols);
  VectorXd b = VectorXd::Zero(rows + cols);
  A.row(0) << 1, -1, -1, 1, 0, 0, Eigen::RowVectorXd::Zero(2 * deg);
  b[0] = -2.0 * p.a_tilde * (D - p.d_star);
  A.row(1) << -1, 1, 0, 0, -1, 1, Eigen::RowVectorXd::Zero(2 * deg);
  b[1] = -(p.a * G + p.b);
  for (int j = 0; j < deg; ++j) {
    A(2 + j, 0) = -1;
    A(2 + j, 1) = 1;
    A(2 + j, 6 + 2 * j) = 1;
    A(2 + j, 7 + 2 * j) = 1;
    b[2 + j] = -topo.pref(node, nb[j]);
  }
  std::vector<bool> active(cols, true);
  active[2] = s_dlo <= act;
  active[3] = s_dhi <= act;
  active[4] = s_glo <= act;
  active[5] = s_ghi <= act;
  for (int j = 0; j < deg; ++j) {
    active[6 + 2 * j] = s_cap[j] <= act;
    active[7 + 2 * j] = s_rec[j] <= act;
  }
  const double eps = 1e-6;
  for (int c = 0; c < cols; ++c) {
    if (!active[c]) A.col(c).head(rows).setZero();
    const bool congestion = c >= 6 && (c - 6) % 2 == 0;
    const bool bound = c >= 2 && c < 6;
    A(rows + c, c) = congestion ? 1e3 * eps : (bound ? 10 * eps : eps);
  }
  VectorXd x = nnls(A, b);
  // Proximal re-solves drop the ridge bias on determined directions and keep
  // the tie-break on the rest.
  for (int it = 0; it < 100; ++it) {
    for (int c = 0; c < cols; ++c) b[rows + c] = A(rows + c, c) * x[c];
    const VectorXd next = nnls(A, b);
    const double step = (next - x).lpNorm<Eigen::Infinity>();
    x = next;
    if (step <= 1e-13 * (1.0 + x.lpNorm<Eigen::Infinity>())) break;
  }
  for (int c = 0; c < cols; ++c) {
    if (!active[c]) x[c] = 0.0;
  }
  VectorXd resid = A.topRows(rows) * x - b.head(rows);
  rep.stationarity = resid.lpNorm<Eigen::Infinity>();
  rep.lambda = x[0] - x[1];
  rep.mu_lo = x[2];
  rep.mu_hi = x[3];
  rep.nu_lo = x[4];
  rep.nu_hi = x[5];
  double comp = std::max({std::abs(x[2] * s_dlo), std::abs(x[3] * s_dhi), std::abs(x[4] * s_glo), std::abs(x[5] * s_ghi)});
  for (int j = 0; j < deg; ++j) {
    rep.xi.push_back(x[6 + 2 * j]);
    rep.zeta.push_back(x[7 + 2 * j]);
    comp = std::max({comp, std::abs(x[6 + 2 * j] * s_cap[j]), std::abs(x[7 + 2 * j] * s_rec[j])});
  }
  rep.complementarity = comp;
  return rep;
}

MarketSolution candidate_from_decisions(const Scenario& s, const VectorXd& D, const VectorXd& G, const MatrixXd& q) {
  const Topology topo(s);
  const int n = topo.nodes();
  if (D.size() != n || G.size() != n || q.rows() != n || q.cols() != n) {
    throw std::invalid_argument("candidate_from_decisions: shape mismatch with scenario");
  }
  MarketSolution m;
  m.D = D;
  m.G = G;
  m.q = q;
  m.Q = q.colwise().sum().transpose();
  m.lambda = m.mu_lo = m.mu_hi = m.nu_lo = m.nu_hi = VectorXd::Zero(n);
  m.zeta = m.xi = MatrixXd::Zero(n, n);
  for (const auto& a : topo.arcs()) {
    if (a.from < a.to) m.pairs.emplace_back(a.from, a.to);
  }
  m.sw = social_welfare(s, D, G, q);
  for (auto [u, v] : m.pairs) {
    const double w = -(q(u, v) + q(v, u));
    if (w > 0) m.total_waste += w;
  }
  return m;
}

double complementarity_tolerance(const Scenario& s) { return 1e-6 * (1.0 + max_kappa(s)); }

ParameterizedMarket::ParameterizedMarket(const Scenario& scenario, const MarketOptions& options)
    : scenario_(scenario), options_(options) {
  base_ = build_centralized_qp(scenario_, {options_.regularization, {}});
  check_problem(base_.qp);
  const Topology topo(scenario_);
  linked_ = Eigen::MatrixXi::Zero(topo.nodes(), topo.nodes());
  for (const auto& a : topo.arcs()) linked_(a.from, a.to) = 1;
  root_ = topo.root();
  root_neighbors_ = topo.neighbors(root_);
  eps_comp_ = complementarity_tolerance(scenario_);
}

GneSample ParameterizedMarket::solve(const OmegaMatrix& omega) const {
  const MarketLayout& L = base_.layout;
  const int n = L.nodes;
  if (omega.rows() != n || omega.cols() != n) throw MarketError("omega must be N×N");
  MarketQp mqp = base_;
  mqp.terms.arc_weight = VectorXd::Zero(L.arcs);
  for (int k = 0; k < L.arcs; ++k) {
    const auto& arc = L.arc_list[k];
    const double w = omega(arc.to, arc.from);
    if (!(w >= 0.0)) throw MarketError("omega entries must be nonnegative");
    mqp.terms.arc_weight[k] = w;
    mqp.qp.r[L.q_var(k)] += w;
  }
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (omega(a, b) != 0.0 && !linked_(a, b)) throw MarketError("omega set on an unlinked pair");
    }
  }
  QpSolution sol = solve_unchecked(mqp.qp, options_.qp);
  GneSample g;
  g.omega = omega;
  g.solution = extract_solution(scenario_, mqp, sol, SolutionKind::parameterized);
  const MarketSolution& m = g.solution;
  g.recovered_zeta = MatrixXd::Zero(n, n);
  for (auto [u, v] : m.pairs) {
    g.recovered_zeta(u, v) = m.zeta(u, v) + omega(u, v);
    g.recovered_zeta(v, u) = m.zeta(v, u) + omega(v, u);
    const double slack = std::abs(m.q(u, v) + m.q(v, u));
    g.violation = std::max({g.violation, omega(u, v) * slack, omega(v, u) * slack});
  }
  g.is_gne = g.violation <= eps_comp_;
  g.r = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (int v : root_neighbors_) {
    if (g.recovered_zeta(root_, v) > 1e-8) g.r[v] = g.recovered_zeta(v, root_) / g.recovered_zeta(root_, v);
  }
  return g;
}

std::optional<GneSample> ParameterizedMarket::worst_on_face(const GneSample& g) const {
  if (options_.regularization > 0.0 || !g.is_gne) return std::nullopt;
  const MarketLayout& L = base_.layout;
  const Topology topo(scenario_);
  const MarketSolution& m = g.solution;
  const int arcs = L.arcs;
  QpProblem lp = QpProblem::with_vars(arcs);
  VectorXd weight(arcs);
  VectorXd current(arcs);
  for (int k = 0; k < arcs; ++k) {
    const auto& a = L.arc_list[k];
    const double c = topo.pref(a.to, a.from);
    lp.r[k] = -c;
    weight[k] = c + g.omega(a.to, a.from);
    current[k] = m.q(a.from, a.to);
  }
  std::vector<std::pair<VectorXd, double>> ineq, eq;
  for (int k = 0; k < arcs; ++k) {
    const auto& a = L.arc_list[k];
    VectorXd row = VectorXd::Zero(arcs);
    row[k] = 1.0;
    ineq.emplace_back(row, topo.capacity(a.from, a.to));
  }
  for (auto [u, v] : m.pairs) {
    VectorXd row = VectorXd::Zero(arcs);
    row[topo.arc(u, v)] = 1.0;
    row[topo.arc(v, u)] = 1.0;
    const bool filtered = g.omega(u, v) > 0.0 || g.omega(v, u) > 0.0;
    (filtered ? eq : ineq).emplace_back(row, 0.0);
  }
  for (int i = 0; i < L.nodes; ++i) {
    VectorXd row = VectorXd::Zero(arcs);
    for (int k = 0; k < arcs; ++k) {
      if (L.arc_list[k].to == i) row[k] = 1.0;
    }
    eq.emplace_back(row, m.Q[i]);
  }
  const double level = weight.dot(current);
  ineq.emplace_back(weight, level + 1e-9 * (1.0 + std::abs(level)));
  auto fill = [&](const auto& rows, MatrixXd& A, VectorXd& b) {
    A.resize(static_cast<Eigen::Index>(rows.size()), arcs);
    b.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      A.row(static_cast<Eigen::Index>(r)) = rows[r].first.transpose();
      b[static_cast<Eigen::Index>(r)] = rows[r].second;
    }
  };
  fill(ineq, lp.A_ineq, lp.b_ineq);
  fill(eq, lp.A_eq, lp.b_eq);
  QpSolution sol = solve_unchecked(lp, options_.qp);
  if (!sol.optimal()) return std::nullopt;

  GneSample out = g;
  out.face_extreme = true;
  MarketSolution& f = out.solution;
  for (int k = 0; k < arcs; ++k) {
    const auto& a = L.arc_list[k];
    f.q(a.from, a.to) = sol.x[k];
  }
  f.sw = social_welfare(scenario_, f.D, f.G, f.q);
  if (f.sw >= m.sw - 1e-6) return std::nullopt;
  f.total_waste = 0.0;
  f.waste.clear();
  for (auto [u, v] : f.pairs) {
    const double w = -(f.q(u, v) + f.q(v, u));
    if (w > 0) f.total_waste += w;
    if (w > kWasteReportThreshold) {
      f.waste.push_back({u, v, w, f.lambda[u], f.lambda[v], topo.pref(u, v), topo.pref(v, u)});
    }
  }
  out.violation = 0.0;
  for (auto [u, v] : f.pairs) {
    const double slack = std::abs(f.q(u, v) + f.q(v, u));
    out.violation = std::max({out.violation, g.omega(u, v) * slack, g.omega(v, u) * slack});
  }
  out.is_gne = out.violation <= eps_comp_;
  return out;
}

GneSample solve_parameterized(const Scenario& s, const OmegaMatrix& omega, const MarketOptions& options) {
  return ParameterizedMarket(s, options).solve(omega);
}

const char* to_string(OmegaSupport support) {
  switch (support) {
    case OmegaSupport::lower: return "lower";
    case OmegaSupport::upper: return "upper";
    case OmegaSupport::full: return "full";
  }
  return "unknown";
}

std::optional<OmegaSupport> parse_support(const std::string& name) {
  if (name == "lower") return OmegaSupport::lower;
  if (name == "upper") return OmegaSupport::upper;
  if (name == "full") return OmegaSupport::full;
  return std::nullopt;
}

std::vector<std::pair<int, int>> support_directions(const Scenario& s, OmegaSupport support) {
  const Topology topo(s);
  std::vector<std::pair<int, int>> dirs;
  for (const auto& a : topo.arcs()) {
    // Arc from seller to buyer: the deciding agent is the buyer.
    const int agent = a.to;
    const int other = a.from;
    const int id_agent = s.prosumers[agent].id;
    const int id_other = s.prosumers[other].id;
    const bool keep = support == OmegaSupport::full || (support == OmegaSupport::lower && id_agent > id_other) ||
                      (support == OmegaSupport::upper && id_agent < id_other);
    if (keep) dirs.emplace_back(agent, other);
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

namespace {

long grid_levels(const SweepStrategy& st) {
  if (!(st.step > 0) || st.hi < st.lo) throw std::invalid_argument("grid needs step > 0 and lo ≤ hi");
  return static_cast<long>(std::floor((st.hi - st.lo) / st.step + 1e-9)) + 1;
}

long checked_pow(long base, std::size_t exp) {
  long out = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (base != 0 && out > std::numeric_limits<long>::max() / base) return std::numeric_limits<long>::max();
    out *= base;
  }
  return out;
}

}  // namespace

long sweep_size(const Scenario& s, const SweepStrategy& st) {
  const std::size_t dims = support_directions(s, st.support).size();
  switch (st.kind) {
    case SweepStrategy::Kind::grid: return checked_pow(grid_levels(st), dims);
    case SweepStrategy::Kind::axis:
      if (st.axis.empty()) throw std::invalid_argument("axis strategy needs at least one value");
      return checked_pow(static_cast<long>(st.axis.size()), dims);
    case SweepStrategy::Kind::random:
      if (st.count < 1) throw std::invalid_argument("random strategy needs count ≥ 1");
      return st.count;
  }
  return 0;
}

SweepResult sweep_gne(const Scenario& s, const SweepStrategy& st, const SweepOptions& opt) {
  SweepResult res;
  res.directions = support_directions(s, st.support);
  const std::size_t dims = res.directions.size();
  const long total = sweep_size(s, st);
  if (total > opt.max_evaluations) {
    std::ostringstream msg;
    msg << "sweep needs " << total << " evaluations, budget is " << opt.max_evaluations;
    throw BudgetExceeded(msg.str());
  }
  if (st.kind == SweepStrategy::Kind::random && !(st.hi >= st.lo && st.lo >= 0)) {
    throw std::invalid_argument("random strategy needs 0 ≤ lo ≤ hi");
  }
  for (double v : st.axis) {
    if (!(v >= 0)) throw std::invalid_argument("omega values must be nonnegative");
  }
  if (st.kind == SweepStrategy::Kind::grid && st.lo < 0) throw std::invalid_argument("omega values must be nonnegative");

  // Random draws are generated up front so the stream does not depend on
  // the thread schedule.
  std::vector<double> random_values;
  if (st.kind == SweepStrategy::Kind::random) {
    std::mt19937_64 rng(st.seed);
    std::uniform_real_distribution<double> dist(st.lo, st.hi);
    random_values.resize(static_cast<std::size_t>(total) * dims);
    for (auto& v : random_values) v = dist(rng);
  }
  const long levels = st.kind == SweepStrategy::Kind::grid ? grid_levels(st) : static_cast<long>(st.axis.size());
  auto omega_values = [&](long index) {
    std::vector<double> w(dims);
    if (st.kind == SweepStrategy::Kind::random) {
      for (std::size_t d = 0; d < dims; ++d) w[d] = random_values[static_cast<std::size_t>(index) * dims + d];
      return w;
    }
    long rest = index;
    for (std::size_t d = dims; d-- > 0;) {
      const long k = rest % levels;
      rest /= levels;
      w[d] = st.kind == SweepStrategy::Kind::grid ? st.lo + static_cast<double>(k) * st.step : st.axis[static_cast<std::size_t>(k)];
    }
    return w;
  };

  const ParameterizedMarket market(s, opt.market);
  const int n = static_cast<int>(s.size());
  const int threads = opt.threads > 0 ? opt.threads : std::max(1u, std::thread::hardware_concurrency());

  struct Slot {
    SampleRecord record;
    std::optional<GneSample> sample;
  };
  auto evaluate = [&](long index, Slot& slot) {
    slot.record.index = index;
    slot.record.omega = omega_values(index);
    OmegaMatrix omega = OmegaMatrix::Zero(n, n);
    for (std::size_t d = 0; d < dims; ++d) omega(res.directions[d].first, res.directions[d].second) = slot.record.omega[d];
    try {
      GneSample g = market.solve(omega);
      slot.record.solved = true;
      slot.record.sw = g.solution.sw;
      slot.record.is_gne = g.is_gne;
      slot.record.violation = g.violation;
      slot.record.trades.reserve(market.base().layout.arc_list.size());
      for (const auto& a : market.base().layout.arc_list) slot.record.trades.push_back(g.solution.q(a.from, a.to));
      if (g.is_gne || opt.keep_all) slot.sample = std::move(g);
    } catch (const MarketError&) {
      slot.record.solved = false;
    }
  };

  std::map<std::vector<long long>, bool> seen;
  auto dedup_key = [&](const MarketSolution& m) {
    std::vector<long long> key;
    auto push = [&](double v) { key.push_back(std::llround(v / opt.dedup_resolution)); };
    for (int i = 0; i < n; ++i) push(m.D[i]);
    for (int i = 0; i < n; ++i) push(m.G[i]);
    for (const auto& a : market.base().layout.arc_list) push(m.q(a.from, a.to));
    return key;
  };

  const long block = 2048;
  std::vector<Slot> slots;
  for (long start = 0; start < total; start += block) {
    const long len = std::min(block, total - start);
    slots.assign(static_cast<std::size_t>(len), Slot{});
    if (threads <= 1 || len < 64) {
      for (long i = 0; i < len; ++i) evaluate(start + i, slots[static_cast<std::size_t>(i)]);
    } else {
      std::vector<std::thread> pool;
      const long per = (len + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const long a = t * per;
        const long b = std::min(len, a + per);
        if (a >= b) break;
        pool.emplace_back([&, a, b] {
          for (long i = a; i < b; ++i) evaluate(start + i, slots[static_cast<std::size_t>(i)]);
        });
      }
      for (auto& th : pool) th.join();
    }
    for (auto& slot : slots) {
      ++res.evaluated;
      if (!slot.record.solved) ++res.failed;
      if (slot.record.is_gne) ++res.valid;
      if (opt.on_sample) opt.on_sample(slot.record);
      if (!slot.sample) continue;
      if (!seen.emplace(dedup_key(slot.sample->solution), true).second) {
        ++res.duplicates;
        continue;
      }
      std::optional<GneSample> extreme;
      if (opt.explore_faces) extreme = market.worst_on_face(*slot.sample);
      res.samples.push_back(std::move(*slot.sample));
      if (extreme && extreme->is_gne && seen.emplace(dedup_key(extreme->solution), true).second) {
        ++res.face_extremes;
        res.samples.push_back(std::move(*extreme));
      }
    }
  }
  return res;
}

PoaResult poa_bound(const std::vector<GneSample>& samples, double ve_sw) {
  PoaResult out;
  bool any = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].is_gne) continue;
    if (!any || samples[i].solution.sw < out.worst_sw) {
      out.worst_sw = samples[i].solution.sw;
      out.worst_sample = i;
    }
    any = true;
  }
  if (!any) throw std::invalid_argument("poa_bound needs at least one valid GNE sample");
  if (!(out.worst_sw > 0.0) || !(ve_sw > 0.0)) {
    std::ostringstream msg;
    msg << "undefined: worst GNE welfare " << out.worst_sw << " and optimal welfare " << ve_sw
        << " must both be positive for a ratio";
    out.diagnostic = msg.str();
    return out;
  }
  out.defined = true;
  out.poa_lower_bound = ve_sw / out.worst_sw;
  return out;
}

}  // namespace peermarket
