#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "peermarket/central_market.hpp"
#include "peermarket/equilibrium.hpp"
#include "peermarket/privacy.hpp"
#include "peermarket/report.hpp"
#include "peermarket/scenario.hpp"
#include "peermarket/structure.hpp"

namespace peermarket::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidScenario : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string builtin_name;
  std::string scenario_path;
  double reg = 0.0;
  double tol = 1e-8;
  int max_iter = 100;
  std::string out_dir;
  std::vector<std::string> formats{"json"};
  unsigned long seed = 1;
  int threads = 0;
};

std::string default_out_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? env : ".";
}

void add_common(CLI::App* cmd, Common& c) {
  auto* b = cmd->add_option("--builtin", c.builtin_name, "built-in scenario name");
  auto* s = cmd->add_option("--scenario", c.scenario_path, "scenario JSON file");
  b->excludes(s);
  cmd->add_option("--reg", c.reg, "Tikhonov weight on trades")->check(CLI::NonNegativeNumber);
  cmd->add_option("--tol", c.tol, "solver tolerance")->check(CLI::PositiveNumber);
  cmd->add_option("--max-iter", c.max_iter, "interior-point iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out_dir, std::string("output directory (default $") + kOutputDirEnv + " or .)");
  cmd->add_option("--format", c.formats, "report formats")->check(CLI::IsMember({"json", "csv", "dot"}));
  cmd->add_option("--seed", c.seed, "root random seed");
  cmd->add_option("--threads", c.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
}

Scenario load(const Common& c) {
  if (c.builtin_name.empty() == c.scenario_path.empty()) {
    throw UsageError("give exactly one of --builtin or --scenario");
  }
  if (!c.builtin_name.empty()) {
    try {
      return builtin(c.builtin_name);
    } catch (const ScenarioError& e) {
      throw UsageError(e.what());
    }
  }
  return load_scenario_file(c.scenario_path);
}

void require_valid(const Scenario& s, std::ostream& err) {
  const auto violations = validate(s);
  if (!has_errors(violations)) return;
  for (const auto& v : violations) {
    if (v.severity == Severity::error) err << "error: " << v.subject << ": " << v.message << '\n';
  }
  throw InvalidScenario("scenario '" + s.name + "' is invalid");
}

MarketOptions market_options(const Common& c) {
  MarketOptions o;
  o.qp.tol = c.tol;
  o.qp.max_iter = c.max_iter;
  o.regularization = c.reg;
  return o;
}

bool wants(const Common& c, const std::string& format) {
  return std::find(c.formats.begin(), c.formats.end(), format) != c.formats.end();
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm utc{};
  gmtime_r(&t, &utc);
  std::ostringstream os;
  os << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

ReportMeta meta_for(const std::string& command, const Common& c,
                    std::vector<std::pair<std::string, std::string>> extra) {
  ReportMeta m;
  m.command = command;
  m.timestamp = timestamp();
  m.config = {{"scenario_source", c.builtin_name.empty() ? "file:" + c.scenario_path : "builtin:" + c.builtin_name},
              {"regularization", format_number(c.reg)},
              {"tol", format_number(c.tol)},
              {"max_iter", std::to_string(c.max_iter)},
              {"seed", std::to_string(c.seed)}};
  for (auto& kv : extra) m.config.push_back(std::move(kv));
  return m;
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir.empty() ? default_out_dir() : dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory " + dir_.string());
  }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path path = dir_ / name;
    std::ofstream f(path, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw IoError("cannot write " + path.string());
    return path;
  }

  [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
};

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_number(v[i]);
  }
  return s;
}

std::pair<double, double> parse_range(const std::string& text) {
  std::istringstream in(text);
  double lo = 0, hi = 0;
  char colon = 0;
  if (!(in >> lo >> colon >> hi) || colon != ':' || !in.eof()) throw UsageError("expected lo:hi, got '" + text + "'");
  if (lo > hi) throw UsageError("range needs lo ≤ hi");
  return {lo, hi};
}

std::vector<double> parse_grid(const std::string& text) {
  std::istringstream in(text);
  double lo = 0, hi = 0, step = 0;
  char c1 = 0, c2 = 0;
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !in.eof()) {
    throw UsageError("expected lo:hi:step, got '" + text + "'");
  }
  if (!(step > 0) || lo > hi) throw UsageError("grid needs step > 0 and lo ≤ hi");
  return {lo, hi, step};
}

// solve

struct SolveArgs {
  Common common;
  bool ve = false;
};

int cmd_solve(const SolveArgs& a, std::ostream& out, std::ostream& err) {
  const Scenario s = load(a.common);
  require_valid(s, err);
  const OutputDir dir(a.common.out_dir);
  const MarketOptions opt = market_options(a.common);
  const MarketSolution sol = a.ve ? solve_ve(s, opt) : solve_centralized(s, opt);
  std::optional<ClosedFormPrices> closed;
  try {
    closed = nodal_price_closed_form(s, sol);
  } catch (const MarketError&) {
  }
  const ReportMeta meta = meta_for("solve", a.common, {{"mode", a.ve ? "variational" : "centralized"}});
  if (wants(a.common, "json")) dir.write("solution.json", solution_json(s, sol, meta, closed));
  if (wants(a.common, "csv")) {
    dir.write("solution_nodes.csv", solution_nodes_csv(s, sol));
    dir.write("solution_pairs.csv", solution_pairs_csv(s, sol));
  }
  if (wants(a.common, "dot")) dir.write("solution.dot", analysis_dot(s, sol, congested_trades(s, sol)));
  out << "SW " << format_number(sol.sw) << '\n';
  out << "lambda " << join(sol.lambda) << '\n';
  if (sol.regularization > 0) out << "regularization " << format_number(sol.regularization) << '\n';
  out << "kkt_residual " << format_number(sol.residuals.max()) << '\n';
  return kOk;
}

// gne

struct GneArgs {
  Common common;
  std::string grid;
  std::optional<long> random;
  std::string range = "0:100";
  std::string support = "lower";
  long budget = 2'000'000;
  bool explore_faces = false;
};

int cmd_gne(const GneArgs& a, std::ostream& out, std::ostream& err) {
  const Scenario s = load(a.common);
  require_valid(s, err);

  SweepStrategy st;
  const auto support = parse_support(a.support);
  if (!support) throw UsageError("unknown support '" + a.support + "'");
  st.support = *support;
  st.seed = a.common.seed;
  if (a.random) {
    if (!a.grid.empty()) throw UsageError("--grid and --random are exclusive");
    if (*a.random < 1) throw UsageError("--random count must be at least 1");
    st.kind = SweepStrategy::Kind::random;
    st.count = *a.random;
    std::tie(st.lo, st.hi) = parse_range(a.range);
    if (st.lo < 0) throw UsageError("omega range must be nonnegative");
  } else {
    const auto g = parse_grid(a.grid.empty() ? "0:100:1" : a.grid);
    if (g[0] < 0) throw UsageError("omega grid must be nonnegative");
    st.kind = SweepStrategy::Kind::grid;
    st.lo = g[0];
    st.hi = g[1];
    st.step = g[2];
  }

  const OutputDir dir(a.common.out_dir);
  SweepOptions so;
  so.market = market_options(a.common);
  so.max_evaluations = a.budget;
  so.threads = a.common.threads;
  so.explore_faces = a.explore_faces;

  const Topology topo(s);
  const auto directions = support_directions(s, st.support);
  const auto trade_columns = topo.arcs().size();
  std::ofstream samples;
  std::ofstream cloud;
  const bool three = s.size() == 3;
  if (wants(a.common, "csv")) {
    samples.open(dir.path("gne_samples.csv"), std::ios::binary);
    if (!samples) throw IoError("cannot write gne_samples.csv");
    samples << sample_csv_header(s, directions);
    if (three) {
      cloud.open(dir.path("gne_points.csv"), std::ios::binary);
      if (!cloud) throw IoError("cannot write gne_points.csv");
      cloud << point_cloud_header() << '\n';
    }
    so.on_sample = [&](const SampleRecord& r) {
      samples << sample_csv_row(r, trade_columns);
      if (three && r.is_gne) {
        if (auto row = point_cloud_row(s, r)) cloud << *row << '\n';
      }
    };
  }

  const SweepResult sweep = sweep_gne(s, st, so);
  if (samples.is_open() && !samples.flush()) throw IoError("cannot write gne_samples.csv");
  if (cloud.is_open() && !cloud.flush()) throw IoError("cannot write gne_points.csv");

  const MarketSolution ve = solve_ve(s, so.market);
  std::optional<PoaResult> poa;
  if (sweep.valid > 0) poa = poa_bound(sweep.samples, ve.sw);
  const ReportMeta meta = meta_for(
      "gne", a.common,
      {{"strategy", a.random ? "random" : "grid"},
       {"grid", a.random ? "" : format_number(st.lo) + ":" + format_number(st.hi) + ":" + format_number(st.step)},
       {"random", a.random ? std::to_string(*a.random) : ""},
       {"range", a.random ? a.range : ""},
       {"support", to_string(st.support)},
       {"budget", std::to_string(a.budget)},
       {"explore_faces", a.explore_faces ? "true" : "false"}});
  if (wants(a.common, "json")) dir.write("gne.json", gne_json(s, sweep, ve, poa, meta));

  out << "evaluated " << sweep.evaluated << " valid " << sweep.valid << " distinct " << sweep.samples.size()
      << " failed " << sweep.failed << '\n';
  out << "VE SW " << format_number(ve.sw) << '\n';
  if (poa && poa->defined) {
    out << "worst SW " << format_number(poa->worst_sw) << '\n';
    out << "PoA lower bound " << format_number(poa->poa_lower_bound) << '\n';
  } else {
    out << "PoA undefined: " << (poa ? poa->diagnostic : std::string("no valid GNE sample")) << '\n';
  }
  return kOk;
}

// analyze

struct AnalyzeArgs {
  Common common;
  bool ve = false;
  int max_cycle_len = 0;
};

std::string cycle_line(const Scenario& s, const PreferenceCycle& c) {
  std::string text;
  for (int v : c.nodes) text += std::to_string(s.prosumers[static_cast<std::size_t>(v)].id) + "→";
  text += std::to_string(s.prosumers[static_cast<std::size_t>(c.nodes.front())].id);
  return text + " weight " + format_number(c.weight);
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  const Scenario s = load(a.common);
  require_valid(s, err);
  const OutputDir dir(a.common.out_dir);
  const MarketOptions opt = market_options(a.common);
  const MarketSolution sol = a.ve ? solve_ve(s, opt) : solve_centralized(s, opt);
  CycleOptions co;
  co.max_len = a.max_cycle_len;
  const StructureReport rep = analyze_structure(s, sol, co);
  const ReportMeta meta = meta_for("analyze", a.common,
                                   {{"mode", a.ve ? "variational" : "centralized"},
                                    {"max_cycle_len", std::to_string(a.max_cycle_len)}});
  if (wants(a.common, "json")) dir.write("analysis.json", analysis_json(s, sol, rep, meta));
  if (wants(a.common, "dot")) dir.write("analysis.dot", analysis_dot(s, sol, rep.congested));

  out << "cycles " << rep.cycles.size() << '\n';
  for (const auto& c : rep.cycles) out << "  " << cycle_line(s, c) << (c.game_cycle ? " game" : "") << '\n';
  out << "congested " << rep.congested.size() << '\n';
  for (auto [from, to] : rep.congested) {
    out << "  " << s.prosumers[static_cast<std::size_t>(from)].id << "→" << s.prosumers[static_cast<std::size_t>(to)].id
        << '\n';
  }
  out << "unilateral violations " << rep.unilateral_violations.size() << '\n';
  return kOk;
}

// privacy

struct PrivacyArgs {
  Common common;
  long samples = 100'000;
  std::string errors = "published";
  double sigma_max = 1.0;
  double r = 1.0;
  double r_lo = 0.5;
  double r_hi = 2.0;
  std::string surface;
  std::optional<double> b_shared;
};

// Shared usage benefit on prosumers 1 and 2 with target demand √(b̃/ã).
Scenario with_shared_benefit(Scenario s, double b_shared) {
  for (int id : {1, 2}) {
    const auto i = s.index_of(id);
    if (!i) throw UsageError("--b-shared needs prosumers 1 and 2");
    auto& p = s.prosumers[*i];
    p.b_tilde = b_shared;
    p.d_star = std::sqrt(b_shared / p.a_tilde);
  }
  return s;
}

int cmd_privacy(const PrivacyArgs& a, std::ostream& out, std::ostream& err) {
  const Scenario s = a.b_shared ? with_shared_benefit(load(a.common), *a.b_shared) : load(a.common);
  require_valid(s, err);
  if (a.samples != 0 && a.samples < 1000) throw UsageError("--samples must be 0 or at least 1000");
  if (!(a.r_lo <= a.r && a.r <= a.r_hi)) throw UsageError("need r-lo ≤ r ≤ r-hi");
  ErrorModel model;
  if (a.errors == "published") {
    if (s.size() != 3) throw UsageError("the published error model covers three nodes; use --errors random");
    model = three_node_error_model();
  } else if (a.errors == "random") {
    model = random_error_model(s, a.common.seed, a.sigma_max);
  } else {
    throw UsageError("unknown error model '" + a.errors + "'");
  }
  const OutputDir dir(a.common.out_dir);
  const auto n = static_cast<Eigen::Index>(s.size());
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(n, a.r);
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, a.r_lo);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, a.r_hi);
  const BiasReport rep = bias_report(s, model, r, lo, hi, a.samples, a.common.seed, a.common.threads);
  const ReportMeta meta =
      meta_for("privacy", a.common,
               {{"samples", std::to_string(a.samples)},
                {"errors", a.errors},
                {"sigma_max", format_number(a.sigma_max)},
                {"r", format_number(a.r)},
                {"r_box", format_number(a.r_lo) + ":" + format_number(a.r_hi)},
                {"surface", a.surface},
                {"b_shared", a.b_shared ? format_number(*a.b_shared) : ""}});
  if (wants(a.common, "json")) dir.write("privacy.json", bias_json(s, rep, meta));
  if (!a.surface.empty()) {
    const auto g = parse_grid(a.surface);
    if (!(g[0] > 0)) throw UsageError("surface grid needs positive values");
    std::vector<double> axis;
    for (double v = g[0]; v <= g[1] + 1e-9 * g[2]; v += g[2]) axis.push_back(v);
    const BiasSurface surface = bias_vs_utility_params(s, model, axis, axis, a.b_shared.value_or(60.0), lo, hi);
    dir.write("privacy_surface.csv", surface_csv(surface));
    const auto& pmin = surface.points[surface.argmin];
    const auto& pmax = surface.points[surface.argmax];
    out << "surface percent range " << format_number(pmin.percent) << " .. " << format_number(pmax.percent) << '\n';
  }

  out << "clamped covariances " << rep.clamped.size() << '\n';
  out << "node closed_form exact mc stderr phi\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    out << s.prosumers[static_cast<std::size_t>(i)].id << ' ' << format_number(rep.expected_bias[i]) << ' '
        << format_number(rep.exact_bias[i]);
    if (rep.samples > 0) out << ' ' << format_number(rep.mc_mean[i]) << ' ' << format_number(rep.mc_stderr[i]);
    out << ' ' << format_number(rep.phi[i]) << '\n';
  }
  out << "phi percent " << format_number(rep.phi_percent) << '\n';
  return kOk;
}

// validate

int cmd_validate(const Common& c, std::ostream& out) {
  const Scenario s = load(c);
  const auto violations = validate(s);
  const OutputDir dir(c.out_dir);
  if (wants(c, "json")) dir.write("validation.json", validation_json(s, violations, meta_for("validate", c, {})));
  for (const auto& v : violations) out << to_string(v.severity) << ' ' << v.subject << ' ' << v.code << ": " << v.message << '\n';
  out << (has_errors(violations) ? "invalid" : "valid") << '\n';
  return has_errors(violations) ? kInfeasible : kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Peer-to-peer energy market solver"};
  app.name("peermarket");
  app.require_subcommand(1);

  SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve", "centralized optimum or variational equilibrium");
  add_common(solve_cmd, solve.common);
  solve_cmd->add_flag("--ve", solve.ve, "solve the variational equilibrium");

  GneArgs gne;
  auto* gne_cmd = app.add_subcommand("gne", "sample generalized Nash equilibria and bound the price of anarchy");
  add_common(gne_cmd, gne.common);
  gne_cmd->add_option("--grid", gne.grid, "omega grid lo:hi:step (default 0:100:1)");
  gne_cmd->add_option("--random", gne.random, "random omega draws");
  gne_cmd->add_option("--range", gne.range, "omega range lo:hi for --random");
  gne_cmd->add_option("--support", gne.support, "directions carrying omega")
      ->check(CLI::IsMember({"lower", "upper", "full"}));
  gne_cmd->add_option("--budget", gne.budget, "maximum evaluations (default 2000000)")->check(CLI::PositiveNumber);
  gne_cmd->add_flag("--explore-faces", gne.explore_faces, "also keep the worst point of each optimal face");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "preference cycles, congestion and waste");
  add_common(analyze_cmd, analyze.common);
  analyze_cmd->add_flag("--ve", analyze.ve, "analyze the variational equilibrium");
  analyze_cmd->add_option("--max-cycle-len", analyze.max_cycle_len, "longest cycle, 0 = node count")
      ->check(CLI::NonNegativeNumber);

  PrivacyArgs privacy;
  auto* privacy_cmd = app.add_subcommand("privacy", "forecast-error utility bias");
  add_common(privacy_cmd, privacy.common);
  privacy_cmd->add_option("--samples", privacy.samples, "Monte Carlo draws, 0 to skip");
  privacy_cmd->add_option("--errors", privacy.errors, "error model")->check(CLI::IsMember({"published", "random"}));
  privacy_cmd->add_option("--sigma-max", privacy.sigma_max, "largest standard deviation of a random model")
      ->check(CLI::NonNegativeNumber);
  privacy_cmd->add_option("--r", privacy.r, "forecast weight for every node")->check(CLI::NonNegativeNumber);
  privacy_cmd->add_option("--r-lo", privacy.r_lo, "lower end of the weight box")->check(CLI::NonNegativeNumber);
  privacy_cmd->add_option("--r-hi", privacy.r_hi, "upper end of the weight box")->check(CLI::NonNegativeNumber);
  privacy_cmd->add_option("--surface", privacy.surface, "usage-curvature grid lo:hi:step for the bias surface");
  privacy_cmd->add_option("--b-shared", privacy.b_shared, "usage benefit shared by prosumers 1 and 2 (surface default 60)")
      ->check(CLI::NonNegativeNumber);

  Common validate_common;
  auto* validate_cmd = app.add_subcommand("validate", "check scenario invariants");
  add_common(validate_cmd, validate_common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*solve_cmd) return cmd_solve(solve, out, err);
    if (*gne_cmd) return cmd_gne(gne, out, err);
    if (*analyze_cmd) return cmd_analyze(analyze, out, err);
    if (*privacy_cmd) return cmd_privacy(privacy, out, err);
    return cmd_validate(validate_common, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidScenario& e) {
    err << e.what() << '\n';
    return kInfeasible;
  } catch (const MarketInfeasible& e) {
    err << e.what() << '\n';
    return kInfeasible;
  } catch (const BudgetExceeded& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace peermarket::cli
