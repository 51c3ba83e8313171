#include "peermarket/scenario.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "builtin_data.hpp"

namespace peermarket {

using json = nlohmann::ordered_json;

std::optional<std::size_t> Scenario::index_of(int id) const {
  for (std::size_t i = 0; i < prosumers.size(); ++i) {
    if (prosumers[i].id == id) return i;
  }
  return std::nullopt;
}

const TradeLink* Scenario::find_link(int u, int v) const {
  for (const auto& l : links) {
    if ((l.n == u && l.m == v) || (l.n == v && l.m == u)) return &l;
  }
  return nullptr;
}

TradeLink* Scenario::find_link(int u, int v) {
  return const_cast<TradeLink*>(std::as_const(*this).find_link(u, v));
}

const char* to_string(Severity severity) { return severity == Severity::error ? "error" : "warning"; }

namespace {

std::string node_subject(int id) { return "node " + std::to_string(id); }
std::string link_subject(const TradeLink& l) {
  return "link " + std::to_string(l.n) + "-" + std::to_string(l.m);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::vector<Violation> validate(const Scenario& s) {
  struct Keyed {
    int group;
    int a;
    int b;
    Violation v;
  };
  std::vector<Keyed> out;
  auto add_node = [&](int id, Severity sev, std::string code, std::string msg) {
    out.push_back({0, id, 0, {sev, std::move(code), node_subject(id), std::move(msg)}});
  };
  auto add_link = [&](const TradeLink& l, Severity sev, std::string code, std::string msg) {
    out.push_back({1, std::min(l.n, l.m), std::max(l.n, l.m), {sev, std::move(code), link_subject(l), std::move(msg)}});
  };
  auto add_scenario = [&](Severity sev, std::string code, std::string msg) {
    out.push_back({2, 0, 0, {sev, std::move(code), "scenario", std::move(msg)}});
  };

  std::set<int> ids;
  for (const auto& p : s.prosumers) {
    const auto E = Severity::error;
    const auto W = Severity::warning;
    if (!ids.insert(p.id).second) add_node(p.id, E, "duplicate_id", "node id appears more than once");
    const double vals[] = {p.d_min, p.d_max, p.g_min, p.g_max, p.d_star, p.a_tilde, p.b_tilde, p.a, p.b, p.d, p.delta_g};
    if (!std::all_of(std::begin(vals), std::end(vals), [](double x) { return std::isfinite(x); })) {
      add_node(p.id, E, "non_finite", "parameter is not a finite number");
      continue;
    }
    if (p.d_min > p.d_max) add_node(p.id, E, "demand_bounds", "d_min " + fmt(p.d_min) + " exceeds d_max " + fmt(p.d_max));
    if (p.g_min > p.g_max) add_node(p.id, E, "flex_bounds", "g_min " + fmt(p.g_min) + " exceeds g_max " + fmt(p.g_max));
    if (p.d_min < 0 || p.d_max < 0 || p.g_min < 0 || p.g_max < 0) add_node(p.id, E, "negative_bound", "demand and flexibility bounds must be nonnegative");
    if (!(p.a > 0)) add_node(p.id, E, "flex_cost_curvature", "a must be positive");
    if (!(p.a_tilde > 0)) add_node(p.id, E, "benefit_curvature", "a_tilde must be positive");
    if (p.b_tilde < 0) add_node(p.id, E, "benefit_level", "b_tilde must be nonnegative");
    if (p.delta_g < 0) add_node(p.id, E, "negative_generation", "delta_g must be nonnegative");
    if (p.conventional_only && p.delta_g != 0.0) add_node(p.id, E, "conventional_generation", "conventional-only node must have delta_g = 0");
    if (p.a_tilde > 0 && p.b_tilde >= 0) {
      const double w = std::sqrt(p.b_tilde / p.a_tilde);
      if (p.d_max - w > p.d_star + 1e-9 || p.d_star > p.d_min + w + 1e-9) {
        const std::string window = p.d_max - w > p.d_min + w + 1e-9
                                       ? "benefit turns negative inside [d_min, d_max] for every d_star"
                                       : "d_star " + fmt(p.d_star) + " outside the nonnegative-benefit window [" +
                                             fmt(p.d_max - w) + ", " + fmt(p.d_min + w) + "]";
        add_node(p.id, W, "benefit_window", window);
      }
      const double zero_benefit = p.a_tilde * p.d_star * p.d_star;
      if (std::abs(zero_benefit - p.b_tilde) > 1e-9 * std::max(1.0, p.b_tilde)) {
        add_node(p.id, W, "benefit_origin", "a_tilde*d_star^2 = " + fmt(zero_benefit) + " differs from b_tilde = " + fmt(p.b_tilde));
      }
    }
    for (const auto& f : p.assumed) add_node(p.id, W, "assumed", "field '" + f + "' is an assumed value");
  }
  if (!ids.count(0)) add_scenario(Severity::error, "missing_root", "node 0 is not present");

  std::set<std::pair<int, int>> pairs;
  for (const auto& l : s.links) {
    const auto E = Severity::error;
    bool endpoints_ok = true;
    if (l.n == l.m) {
      add_link(l, E, "self_link", "link endpoints must differ");
      endpoints_ok = false;
    }
    if (!ids.count(l.n) || !ids.count(l.m)) {
      add_link(l, E, "unknown_endpoint", "link refers to a missing node");
      endpoints_ok = false;
    }
    if (!pairs.insert({std::min(l.n, l.m), std::max(l.n, l.m)}).second) {
      add_link(l, E, "duplicate_link", "pair already linked; capacities are per unordered pair");
    }
    if (!std::isfinite(l.kappa) || !std::isfinite(l.c_nm) || !std::isfinite(l.c_mn)) {
      add_link(l, E, "non_finite", "parameter is not a finite number");
      continue;
    }
    if (l.kappa < 0) add_link(l, E, "negative_capacity", "kappa must be nonnegative");
    if (!(l.c_nm > 0) || !(l.c_mn > 0)) add_link(l, E, "preference_price", "preference price must be positive");
    if (endpoints_ok) {
      for (int end : {l.n, l.m}) {
        const auto& p = s.prosumers[*s.index_of(end)];
        if (p.g_max > l.kappa) {
          add_link(l, Severity::warning, "capacity_below_flex", "g_max " + fmt(p.g_max) + " of node " + std::to_string(end) + " exceeds kappa " + fmt(l.kappa));
        }
      }
    }
    for (const auto& f : l.assumed) add_link(l, Severity::warning, "assumed", "field '" + f + "' is an assumed value");
  }

  if (ids.count(0)) {
    std::map<int, std::vector<int>> adj;
    for (const auto& l : s.links) {
      adj[l.n].push_back(l.m);
      adj[l.m].push_back(l.n);
    }
    std::set<int> seen{0};
    std::vector<int> stack{0};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : adj[u]) {
        if (seen.insert(v).second) stack.push_back(v);
      }
    }
    if (seen.size() < ids.size()) add_scenario(Severity::warning, "disconnected", "some nodes are not reachable from node 0");
  }

  std::stable_sort(out.begin(), out.end(), [](const Keyed& x, const Keyed& y) {
    return std::tie(x.group, x.a, x.b) < std::tie(y.group, y.a, y.b);
  });
  std::vector<Violation> result;
  result.reserve(out.size());
  for (auto& k : out) result.push_back(std::move(k.v));
  return result;
}

bool has_errors(const std::vector<Violation>& violations) {
  return std::any_of(violations.begin(), violations.end(), [](const Violation& v) { return v.severity == Severity::error; });
}

// ---- JSON ------------------------------------------------------------------

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw ScenarioError(path + ": " + what);
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      field_error(path + "." + key, "unknown field");
    }
  }
}

const json& require(const json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(path + "." + key, "missing field");
  return *it;
}

double number(const json& obj, const std::string& path, const char* key) {
  const json& v = require(obj, path, key);
  if (!v.is_number()) field_error(path + "." + key, "expected number");
  return v.get<double>();
}

double number_or(const json& obj, const std::string& path, const char* key, double fallback) {
  return obj.contains(key) ? number(obj, path, key) : fallback;
}

int integer(const json& obj, const std::string& path, const char* key) {
  const json& v = require(obj, path, key);
  if (!v.is_number_integer()) field_error(path + "." + key, "expected integer");
  return v.get<int>();
}

std::vector<std::string> string_list(const json& obj, const std::string& path, const char* key) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const json& v = obj.at(key);
  if (!v.is_array()) field_error(path + "." + key, "expected array of field names");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) field_error(path + "." + key + "[" + std::to_string(i) + "]", "expected string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

void check_assumed(const std::vector<std::string>& names, const std::string& path,
                   std::initializer_list<const char*> allowed) {
  for (const auto& n : names) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return n == a; })) {
      field_error(path + ".assumed", "'" + n + "' is not a field name");
    }
  }
}

Scenario from_json(const json& doc) {
  if (!doc.is_object()) field_error("$", "expected object");
  reject_unknown(doc, "$", {"schema_version", "name", "units", "prosumers", "links"});
  const int version = integer(doc, "$", "schema_version");
  if (version != kSchemaVersion) {
    field_error("$.schema_version", "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  Scenario s;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) field_error("$.name", "expected string");
    s.name = doc["name"].get<std::string>();
  }
  if (doc.contains("units")) {
    const json& u = doc["units"];
    if (!u.is_object()) field_error("$.units", "expected object");
    reject_unknown(u, "$.units", {"energy", "price"});
    if (u.contains("energy")) s.units.energy = u["energy"].get<std::string>();
    if (u.contains("price")) s.units.price = u["price"].get<std::string>();
  }
  const json& ps = require(doc, "$", "prosumers");
  if (!ps.is_array()) field_error("$.prosumers", "expected array");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string path = "$.prosumers[" + std::to_string(i) + "]";
    const json& o = ps[i];
    if (!o.is_object()) field_error(path, "expected object");
    reject_unknown(o, path, {"id", "d_min", "d_max", "g_min", "g_max", "d_star", "a_tilde", "b_tilde", "a", "b", "d",
                             "delta_g", "conventional_only", "assumed"});
    ProsumerParams p;
    p.id = integer(o, path, "id");
    p.d_min = number(o, path, "d_min");
    p.d_max = number(o, path, "d_max");
    p.g_min = number(o, path, "g_min");
    p.g_max = number(o, path, "g_max");
    p.d_star = number(o, path, "d_star");
    p.a_tilde = number(o, path, "a_tilde");
    p.b_tilde = number(o, path, "b_tilde");
    p.a = number(o, path, "a");
    p.b = number(o, path, "b");
    p.d = number_or(o, path, "d", 0.0);
    p.delta_g = number_or(o, path, "delta_g", 0.0);
    if (o.contains("conventional_only")) {
      if (!o["conventional_only"].is_boolean()) field_error(path + ".conventional_only", "expected boolean");
      p.conventional_only = o["conventional_only"].get<bool>();
    }
    p.assumed = string_list(o, path, "assumed");
    check_assumed(p.assumed, path, {"d_min", "d_max", "g_min", "g_max", "d_star", "a_tilde", "b_tilde", "a", "b", "d", "delta_g"});
    s.prosumers.push_back(std::move(p));
  }
  const json& ls = require(doc, "$", "links");
  if (!ls.is_array()) field_error("$.links", "expected array");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const std::string path = "$.links[" + std::to_string(i) + "]";
    const json& o = ls[i];
    if (!o.is_object()) field_error(path, "expected object");
    if (o.contains("kappa_nm") || o.contains("kappa_mn")) field_error(path, "directed capacities are not supported; use a single kappa");
    reject_unknown(o, path, {"n", "m", "kappa", "c_nm", "c_mn", "assumed"});
    TradeLink l;
    l.n = integer(o, path, "n");
    l.m = integer(o, path, "m");
    l.kappa = number(o, path, "kappa");
    l.c_nm = number(o, path, "c_nm");
    l.c_mn = number(o, path, "c_mn");
    l.assumed = string_list(o, path, "assumed");
    check_assumed(l.assumed, path, {"kappa", "c_nm", "c_mn"});
    s.links.push_back(std::move(l));
  }
  return s;
}

json to_json(const Scenario& s) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["name"] = s.name;
  doc["units"] = {{"energy", s.units.energy}, {"price", s.units.price}};
  json ps = json::array();
  for (const auto& p : s.prosumers) {
    json o;
    o["id"] = p.id;
    o["d_min"] = p.d_min;
    o["d_max"] = p.d_max;
    o["g_min"] = p.g_min;
    o["g_max"] = p.g_max;
    o["d_star"] = p.d_star;
    o["a_tilde"] = p.a_tilde;
    o["b_tilde"] = p.b_tilde;
    o["a"] = p.a;
    o["b"] = p.b;
    o["d"] = p.d;
    o["delta_g"] = p.delta_g;
    if (p.conventional_only) o["conventional_only"] = true;
    if (!p.assumed.empty()) o["assumed"] = p.assumed;
    ps.push_back(std::move(o));
  }
  doc["prosumers"] = std::move(ps);
  json ls = json::array();
  for (const auto& l : s.links) {
    json o;
    o["n"] = l.n;
    o["m"] = l.m;
    o["kappa"] = l.kappa;
    o["c_nm"] = l.c_nm;
    o["c_mn"] = l.c_mn;
    if (!l.assumed.empty()) o["assumed"] = l.assumed;
    ls.push_back(std::move(o));
  }
  doc["links"] = std::move(ls);
  return doc;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string("parse error: ") + e.what());
  }
  try {
    return from_json(doc);
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("schema error: ") + e.what());
  }
}

Scenario load_scenario(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  return load_scenario(in);
}

void save_scenario(const Scenario& scenario, std::ostream& out) { out << dump_scenario(scenario) << '\n'; }

std::string dump_scenario(const Scenario& scenario) { return to_json(scenario).dump(2); }

// ---- built-ins -------------------------------------------------------------

namespace {

Scenario ieee14_variant(Scenario s, const std::string& which) {
  for (auto& l : s.links) {
    const bool root_link = l.n == 0 || l.m == 0;
    if (which == "uniform") {
      l.c_nm = l.c_mn = 1.0;
    } else if (which == "symmetric") {
      l.c_mn = l.c_nm;
    } else if (which == "local") {
      l.c_nm = l.c_mn = 1.0;
      if (root_link) (l.n == 0 ? l.c_mn : l.c_nm) = 3.0;
    }
    l.assumed.erase(std::remove_if(l.assumed.begin(), l.assumed.end(),
                                   [](const std::string& f) { return f == "c_nm" || f == "c_mn"; }),
                    l.assumed.end());
  }
  s.name = "ieee14_" + which;
  return s;
}

}  // namespace

Scenario builtin(const std::string& name) {
  if (name == "three_node") return parse_scenario(data::three_node_json);
  if (name == "three_node_fitted") return parse_scenario(data::three_node_fitted_json);
  if (name == "ieee14") return parse_scenario(data::ieee14_json);
  if (name == "ieee14_uniform") return ieee14_variant(builtin("ieee14"), "uniform");
  if (name == "ieee14_symmetric") return ieee14_variant(builtin("ieee14"), "symmetric");
  if (name == "ieee14_local") return ieee14_variant(builtin("ieee14"), "local");
  throw ScenarioError("unknown builtin scenario '" + name + "'");
}

std::vector<std::string> builtin_names() {
  return {"three_node", "three_node_fitted", "ieee14", "ieee14_uniform", "ieee14_symmetric", "ieee14_local"};
}

// ---- topology --------------------------------------------------------------

Topology::Topology(const Scenario& s) : nodes_(static_cast<int>(s.size())) {
  const auto n = static_cast<std::size_t>(nodes_);
  neighbors_.assign(n, {});
  arc_index_.assign(n * n, -1);
  link_index_.assign(n * n, -1);
  pref_.assign(n * n, 0.0);
  cap_.assign(n * n, 0.0);
  root_ = static_cast<int>(s.index_of(0).value_or(0));
  for (std::size_t k = 0; k < s.links.size(); ++k) {
    const auto& l = s.links[k];
    const auto iu = s.index_of(l.n);
    const auto iv = s.index_of(l.m);
    if (!iu || !iv || *iu == *iv) throw ScenarioError("link " + link_subject(l) + " has invalid endpoints");
    const int u = static_cast<int>(*iu);
    const int v = static_cast<int>(*iv);
    link_index_[u * nodes_ + v] = link_index_[v * nodes_ + u] = static_cast<int>(k);
    pref_[u * nodes_ + v] = l.c_nm;
    pref_[v * nodes_ + u] = l.c_mn;
    cap_[u * nodes_ + v] = cap_[v * nodes_ + u] = l.kappa;
    neighbors_[u].push_back(v);
    neighbors_[v].push_back(u);
    arcs_.push_back({u, v, k});
    arcs_.push_back({v, u, k});
  }
  for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
  std::sort(arcs_.begin(), arcs_.end(), [](const Arc& x, const Arc& y) { return std::tie(x.from, x.to) < std::tie(y.from, y.to); });
  for (std::size_t i = 0; i < arcs_.size(); ++i) arc_index_[arcs_[i].from * nodes_ + arcs_[i].to] = static_cast<int>(i);
}

// ---- random instances ------------------------------------------------------

Scenario random_scenario(unsigned long seed, const RandomScenarioOptions& opt) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int n = std::uniform_int_distribution<int>(opt.min_nodes, opt.max_nodes)(rng);
  Scenario s;
  s.name = "random_" + std::to_string(seed);
  for (int i = 0; i < n; ++i) {
    ProsumerParams p;
    p.id = i;
    p.d_star = uni(1.0, 8.0);
    p.a_tilde = uni(1.0, 10.0);
    p.b_tilde = p.a_tilde * p.d_star * p.d_star;
    p.d_min = 0.0;
    p.d_max = 10.0;
    p.a = uni(0.5, 5.0);
    p.b = uni(0.0, 10.0);
    p.d = 0.0;
    if (i == 0) {
      p.g_max = 10.0;
      p.conventional_only = true;
    } else {
      p.g_max = uni(0.0, 1.0) < 0.5 ? 0.0 : uni(0.0, 5.0);
      p.delta_g = uni(0.0, 6.0);
    }
    s.prosumers.push_back(p);
  }
  std::set<std::pair<int, int>> edges;
  for (int i = 1; i < n; ++i) {
    const int j = std::uniform_int_distribution<int>(0, i - 1)(rng);
    edges.insert({j, i});
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (!edges.count({i, j}) && uni(0.0, 1.0) < opt.edge_probability) edges.insert({i, j});
    }
  }
  for (auto [i, j] : edges) {
    TradeLink l;
    l.n = i;
    l.m = j;
    l.kappa = uni(opt.kappa_lo, opt.kappa_hi);
    l.c_nm = uni(opt.c_lo, opt.c_hi);
    l.c_mn = uni(opt.c_lo, opt.c_hi);
    s.links.push_back(l);
  }
  return s;
}

}  // namespace peermarket
