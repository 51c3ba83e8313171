#include "peermarket/report.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <sstream>

namespace peermarket {

using json = nlohmann::ordered_json;

namespace {

int id_of(const Scenario& s, int dense) { return s.prosumers[static_cast<std::size_t>(dense)].id; }

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

json meta_json(const Scenario& s, const ReportMeta& meta) {
  json config = json::object();
  for (const auto& [k, v] : meta.config) config[k] = v;
  return json{{"command", meta.command},
              {"scenario", s.name},
              {"units", {{"energy", s.units.energy}, {"price", s.units.price}}},
              {"config", config},
              {"generated_at", meta.timestamp}};
}

json ids_json(const Scenario& s) {
  json a = json::array();
  for (const auto& p : s.prosumers) a.push_back(p.id);
  return a;
}

json residuals_json(const KktResiduals& r) {
  return json{{"stationarity", r.stationarity},
              {"primal", r.primal},
              {"dual", r.dual},
              {"complementarity", r.complementarity}};
}

json solution_body(const Scenario& s, const MarketSolution& m) {
  const Topology topo(s);
  json nodes = json::array();
  for (int i = 0; i < m.nodes(); ++i) {
    nodes.push_back({{"id", id_of(s, i)},
                     {"D", m.D[i]},
                     {"G", m.G[i]},
                     {"Q", m.Q[i]},
                     {"lambda", m.lambda[i]},
                     {"mu_lo", m.mu_lo[i]},
                     {"mu_hi", m.mu_hi[i]},
                     {"nu_lo", m.nu_lo[i]},
                     {"nu_hi", m.nu_hi[i]}});
  }
  json trades = json::array();
  for (const auto& a : topo.arcs()) {
    trades.push_back({{"seller", id_of(s, a.from)},
                      {"buyer", id_of(s, a.to)},
                      {"q", m.q(a.from, a.to)},
                      {"kappa", topo.capacity(a.from, a.to)},
                      {"c", topo.pref(a.to, a.from)},
                      {"xi", m.xi(a.to, a.from)},
                      {"zeta", m.zeta(a.to, a.from)}});
  }
  json waste = json::array();
  for (const auto& w : m.waste) {
    waste.push_back({{"u", id_of(s, w.u)},
                     {"v", id_of(s, w.v)},
                     {"waste", w.waste},
                     {"lambda_u", w.lambda_u},
                     {"lambda_v", w.lambda_v},
                     {"c_uv", w.c_uv},
                     {"c_vu", w.c_vu}});
  }
  return json{{"kind", to_string(m.kind)},
              {"status", to_string(m.status)},
              {"sw", m.sw},
              {"regularization", m.regularization},
              {"iterations", m.iterations},
              {"nodes", nodes},
              {"trades", trades},
              {"waste", {{"total", m.total_waste}, {"threshold", kWasteReportThreshold}, {"pairs", waste}}},
              {"residuals", residuals_json(m.residuals)},
              {"identity_residual", m.identity_residual}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string solution_json(const Scenario& s, const MarketSolution& m, const ReportMeta& meta,
                          const std::optional<ClosedFormPrices>& cf) {
  json j = meta_json(s, meta);
  j["solution"] = solution_body(s, m);
  const Topology topo(s);
  const int root = topo.root();
  json diffs = json::object();
  for (int i = 0; i < m.nodes(); ++i) diffs[std::to_string(id_of(s, i))] = m.lambda[i] - m.lambda[root];
  j["lambda_minus_root"] = diffs;
  if (cf) {
    j["closed_form"] = {{"lambda", vector_json(cf->lambda)}, {"root", cf->root}, {"deviation", cf->deviation}};
  }
  return dump(j);
}

std::string solution_nodes_csv(const Scenario& s, const MarketSolution& m) {
  std::ostringstream out;
  out << "id,D,G,Q,lambda,mu_lo,mu_hi,nu_lo,nu_hi\n";
  for (int i = 0; i < m.nodes(); ++i) {
    out << id_of(s, i) << ',' << format_number(m.D[i]) << ',' << format_number(m.G[i]) << ','
        << format_number(m.Q[i]) << ',' << format_number(m.lambda[i]) << ',' << format_number(m.mu_lo[i]) << ','
        << format_number(m.mu_hi[i]) << ',' << format_number(m.nu_lo[i]) << ',' << format_number(m.nu_hi[i]) << '\n';
  }
  return out.str();
}

std::string solution_pairs_csv(const Scenario& s, const MarketSolution& m) {
  const Topology topo(s);
  std::ostringstream out;
  out << "seller,buyer,q,kappa,c,xi,zeta\n";
  for (const auto& a : topo.arcs()) {
    out << id_of(s, a.from) << ',' << id_of(s, a.to) << ',' << format_number(m.q(a.from, a.to)) << ','
        << format_number(topo.capacity(a.from, a.to)) << ',' << format_number(topo.pref(a.to, a.from)) << ','
        << format_number(m.xi(a.to, a.from)) << ',' << format_number(m.zeta(a.to, a.from)) << '\n';
  }
  return out.str();
}

std::string sample_csv_header(const Scenario& s, const std::vector<std::pair<int, int>>& directions) {
  const Topology topo(s);
  std::string out = "index";
  for (auto [n, m] : directions) {
    out += ',' + csv_field("omega_" + std::to_string(id_of(s, n)) + "_" + std::to_string(id_of(s, m)));
  }
  out += ",sw,is_gne,violation,solved";
  for (const auto& a : topo.arcs()) {
    out += ",q_" + std::to_string(id_of(s, a.from)) + "_" + std::to_string(id_of(s, a.to));
  }
  return out + "\n";
}

std::string sample_csv_row(const SampleRecord& r, std::size_t trade_columns) {
  std::string out = std::to_string(r.index);
  for (double w : r.omega) out += ',' + format_number(w);
  out += ',' + (r.solved ? format_number(r.sw) : std::string());
  out += r.is_gne ? ",1" : ",0";
  out += ',' + (r.solved ? format_number(r.violation) : std::string());
  out += r.solved ? ",1" : ",0";
  for (std::size_t k = 0; k < trade_columns; ++k) {
    out += ',';
    if (k < r.trades.size()) out += format_number(r.trades[k]);
  }
  return out + "\n";
}

std::string point_cloud_header() { return "q01,q12,q20\n"; }

std::optional<std::string> point_cloud_row(const Scenario& s, const SampleRecord& r) {
  if (s.size() != 3 || !r.solved || !r.is_gne) return std::nullopt;
  const auto i0 = s.index_of(0);
  const auto i1 = s.index_of(1);
  const auto i2 = s.index_of(2);
  if (!i0 || !i1 || !i2) return std::nullopt;
  const Topology topo(s);
  const int a01 = topo.arc(static_cast<int>(*i0), static_cast<int>(*i1));
  const int a12 = topo.arc(static_cast<int>(*i1), static_cast<int>(*i2));
  const int a20 = topo.arc(static_cast<int>(*i2), static_cast<int>(*i0));
  if (a01 < 0 || a12 < 0 || a20 < 0 || r.trades.size() != topo.arcs().size()) return std::nullopt;
  return format_number(r.trades[static_cast<std::size_t>(a01)]) + ',' +
         format_number(r.trades[static_cast<std::size_t>(a12)]) + ',' +
         format_number(r.trades[static_cast<std::size_t>(a20)]) + '\n';
}

std::string gne_json(const Scenario& s, const SweepResult& sweep, const MarketSolution& ve,
                     const std::optional<PoaResult>& poa, const ReportMeta& meta) {
  json j = meta_json(s, meta);
  json dirs = json::array();
  for (auto [n, m] : sweep.directions) dirs.push_back({{"agent", id_of(s, n)}, {"other", id_of(s, m)}});
  j["directions"] = dirs;
  j["counts"] = {{"evaluated", sweep.evaluated},
                 {"valid", sweep.valid},
                 {"failed", sweep.failed},
                 {"duplicates", sweep.duplicates},
                 {"face_extremes", sweep.face_extremes},
                 {"distinct", sweep.samples.size()}};
  j["ve_sw"] = ve.sw;
  if (poa) {
    json p = {{"defined", poa->defined}, {"worst_sw", poa->worst_sw}};
    if (poa->defined) {
      p["poa_lower_bound"] = poa->poa_lower_bound;
    } else {
      p["diagnostic"] = poa->diagnostic;
    }
    if (poa->worst_sample < sweep.samples.size()) {
      const GneSample& w = sweep.samples[poa->worst_sample];
      json omega = json::array();
      for (auto [n, m] : sweep.directions) omega.push_back(w.omega(n, m));
      p["worst"] = {{"omega", omega},
                    {"face_extreme", w.face_extreme},
                    {"lambda", vector_json(w.solution.lambda)},
                    {"r", vector_json(w.r)},
                    {"solution", solution_body(s, w.solution)}};
    }
    j["poa"] = p;
  } else {
    j["poa"] = {{"defined", false}, {"diagnostic", "no valid GNE sample"}};
  }
  j["node_ids"] = ids_json(s);
  return dump(j);
}

std::string analysis_json(const Scenario& s, const MarketSolution& m, const StructureReport& r, const ReportMeta& meta) {
  json j = meta_json(s, meta);
  auto cycles_json = [&](const std::vector<PreferenceCycle>& cs) {
    json a = json::array();
    for (const auto& c : cs) {
      json nodes = json::array();
      for (int v : c.nodes) nodes.push_back(id_of(s, v));
      a.push_back({{"nodes", nodes}, {"weight", c.weight}, {"sign", to_string(c.sign)}, {"game_cycle", c.game_cycle}});
    }
    return a;
  };
  j["cycles"] = cycles_json(r.cycles);
  j["game_cycles"] = cycles_json(r.game_cycles);
  json preds = json::array();
  for (std::size_t k = 0; k < r.predictions.size(); ++k) {
    const auto& p = r.predictions[k];
    json cand = json::array();
    for (auto [a, b] : p.candidates) cand.push_back({{"seller", id_of(s, a)}, {"buyer", id_of(s, b)}});
    json entry = {{"reason", to_string(p.reason)},
                  {"candidates", cand},
                  {"premises", p.premises},
                  {"premise_failed", p.premise_failed},
                  {"detail", p.detail}};
    if (k < r.verdicts.size()) {
      entry["verdict"] = {{"applicable", r.verdicts[k].applicable},
                          {"holds", r.verdicts[k].holds},
                          {"detail", r.verdicts[k].detail}};
    }
    preds.push_back(entry);
  }
  j["predictions"] = preds;
  json waste_pairs = json::array();
  for (const auto& w : m.waste) waste_pairs.push_back({{"u", id_of(s, w.u)}, {"v", id_of(s, w.v)}, {"waste", w.waste}});
  j["waste"] = {{"pairs", waste_pairs}, {"total", m.total_waste}};
  j["no_waste_necessary"] = {{"possible", r.no_waste.possible},
                             {"witness", r.no_waste.witness ? json(id_of(s, *r.no_waste.witness)) : json(nullptr)}};
  json certs = json::array();
  for (const auto& c : r.certificates) {
    json path = json::array();
    for (int v : c.path) path.push_back(id_of(s, v));
    certs.push_back({{"n0", id_of(s, c.n0)},
                     {"m0", id_of(s, c.m0)},
                     {"certified", c.certified},
                     {"margin", number(c.margin)},
                     {"path", path},
                     {"waste", c.waste},
                     {"consistent", c.consistent}});
  }
  j["certificates"] = certs;
  json uni = json::array();
  for (const auto& u : r.unilateral_violations) uni.push_back({{"u", id_of(s, u.u)}, {"v", id_of(s, u.v)}});
  j["unilateral_violations"] = uni;
  json cong = json::array();
  for (auto [a, b] : r.congested) cong.push_back({{"seller", id_of(s, a)}, {"buyer", id_of(s, b)}});
  j["congested"] = cong;
  j["solution"] = solution_body(s, m);
  return dump(j);
}

std::string analysis_dot(const Scenario& s, const MarketSolution& m, const std::vector<std::pair<int, int>>& congested) {
  const Topology topo(s);
  std::ostringstream out;
  std::string name = s.name.empty() ? "market" : s.name;
  out << "graph \"" << name << "\" {\n";
  out << "  node [shape=circle];\n";
  for (int i = 0; i < topo.nodes(); ++i) {
    out << "  n" << id_of(s, i) << " [label=\"" << id_of(s, i) << "\\nλ=" << format_number(m.lambda[i]) << "\"];\n";
  }
  for (auto [u, v] : m.pairs) {
    std::string dir;
    for (auto [a, b] : congested) {
      if ((a == u && b == v) || (a == v && b == u)) dir = std::to_string(id_of(s, a)) + "→" + std::to_string(id_of(s, b));
    }
    const int seller = m.q(u, v) >= 0 ? u : v;
    const int buyer = seller == u ? v : u;
    out << "  n" << id_of(s, u) << " -- n" << id_of(s, v) << " [color=" << (dir.empty() ? "green" : "red")
        << ", label=\"" << id_of(s, seller) << "→" << id_of(s, buyer) << " " << format_number(std::abs(m.q(u, v)))
        << (dir.empty() ? "" : " full " + dir) << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

std::string bias_json(const Scenario& s, const BiasReport& r, const ReportMeta& meta) {
  json j = meta_json(s, meta);
  j["node_ids"] = ids_json(s);
  j["r"] = vector_json(r.r);
  j["r_lo"] = vector_json(r.r_lo);
  j["r_hi"] = vector_json(r.r_hi);
  j["rho"] = vector_json(r.rho);
  j["beta"] = vector_json(r.beta);
  j["expected_bias"] = vector_json(r.expected_bias);
  j["exact_bias"] = vector_json(r.exact_bias);
  j["phi"] = vector_json(r.phi);
  if (r.samples > 0) {
    j["monte_carlo"] = {{"samples", r.samples},
                        {"chunk", kMcChunk},
                        {"mean", vector_json(r.mc_mean)},
                        {"stderr", vector_json(r.mc_stderr)},
                        {"raw_mean", vector_json(r.mc_raw_mean)},
                        {"raw_stderr", vector_json(r.mc_raw_stderr)}};
  }
  json clamped = json::array();
  for (const auto& c : r.clamped) {
    clamped.push_back({{"n", id_of(s, c.n)}, {"m", id_of(s, c.m)}, {"original", c.original}, {"clamped", c.clamped}});
  }
  j["clamped_covariances"] = clamped;
  j["ve_sw"] = r.ve_sw;
  j["phi_percent"] = r.phi_percent;
  j["normalization"] = kBiasNormalization;
  return dump(j);
}

std::string surface_csv(const BiasSurface& surface) {
  std::ostringstream out;
  out << "a_tilde_" << surface.node_1 << ",a_tilde_" << surface.node_2 << ",phi_sum,ve_sw,percent\n";
  for (const auto& p : surface.points) {
    out << format_number(p.a_tilde_1) << ',' << format_number(p.a_tilde_2) << ',' << format_number(p.phi_sum) << ','
        << format_number(p.ve_sw) << ',' << format_number(p.percent) << '\n';
  }
  return out.str();
}

std::string validation_json(const Scenario& s, const std::vector<Violation>& violations, const ReportMeta& meta) {
  json j = meta_json(s, meta);
  json list = json::array();
  for (const auto& v : violations) {
    list.push_back({{"severity", to_string(v.severity)}, {"code", v.code}, {"subject", v.subject}, {"message", v.message}});
  }
  j["violations"] = list;
  j["valid"] = !has_errors(violations);
  return dump(j);
}

}  // namespace peermarket
