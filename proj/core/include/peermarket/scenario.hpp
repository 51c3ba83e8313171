#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace peermarket {

struct ProsumerParams {
  int id = 0;
  double d_min = 0.0;
  double d_max = 0.0;
  double g_min = 0.0;
  double g_max = 0.0;
  double d_star = 0.0;
  double a_tilde = 1.0;   // usage benefit curvature
  double b_tilde = 0.0;   // maximum usage benefit
  double a = 1.0;         // flexibility cost, quadratic
  double b = 0.0;         // flexibility cost, linear
  double d = 0.0;         // flexibility cost, fixed
  double delta_g = 0.0;   // realized renewable generation
  bool conventional_only = false;
  std::vector<std::string> assumed;  // fields filled by assumption, not data

  friend bool operator==(const ProsumerParams&, const ProsumerParams&) = default;
};

/// One undirected link. c_nm is the price n attaches to buying from m and
/// c_mn the reverse; kappa bounds the flow in each direction.
struct TradeLink {
  int n = 0;
  int m = 0;
  double kappa = 0.0;
  double c_nm = 1.0;
  double c_mn = 1.0;
  std::vector<std::string> assumed;

  friend bool operator==(const TradeLink&, const TradeLink&) = default;
};

struct Units {
  std::string energy = "energy";
  std::string price = "price";

  friend bool operator==(const Units&, const Units&) = default;
};

struct Scenario {
  std::string name;
  Units units;
  std::vector<ProsumerParams> prosumers;
  std::vector<TradeLink> links;

  [[nodiscard]] std::size_t size() const { return prosumers.size(); }
  /// Position of node `id` in `prosumers`, if present.
  [[nodiscard]] std::optional<std::size_t> index_of(int id) const;
  /// Link joining the two nodes in either orientation.
  [[nodiscard]] const TradeLink* find_link(int u, int v) const;
  [[nodiscard]] TradeLink* find_link(int u, int v);

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

enum class Severity { warning, error };

struct Violation {
  Severity severity = Severity::error;
  std::string code;
  std::string subject;  // "node 2", "link 0-1", "scenario"
  std::string message;
};

[[nodiscard]] const char* to_string(Severity severity);

/// All invariant breaches, errors and warnings, ordered by nodes then links.
[[nodiscard]] std::vector<Violation> validate(const Scenario& scenario);
[[nodiscard]] bool has_errors(const std::vector<Violation>& violations);

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

/// Reads a JSON scenario. Throws ScenarioError with a line or field path on
/// malformed input, unknown keys or schema-version mismatch.
[[nodiscard]] Scenario load_scenario(std::istream& in);
[[nodiscard]] Scenario load_scenario_file(const std::string& path);
[[nodiscard]] Scenario parse_scenario(const std::string& text);
void save_scenario(const Scenario& scenario, std::ostream& out);
[[nodiscard]] std::string dump_scenario(const Scenario& scenario);

/// Scenarios shipped with the library; see builtin_names(). "three_node_fitted"
/// differs from "three_node" only in node 0's flexibility cost (a, b) = (2, 5),
/// which reproduces the published centralized operating point. The ieee14
/// variants change preference prices only. Throws ScenarioError for unknown
/// names.
[[nodiscard]] Scenario builtin(const std::string& name);
[[nodiscard]] std::vector<std::string> builtin_names();

/// Directed view of a scenario with dense node indices 0..N-1 (positions in
/// `prosumers`). Arcs are all ordered pairs (from, to) over links, sorted.
class Topology {
 public:
  explicit Topology(const Scenario& scenario);

  struct Arc {
    int from = 0;  // dense index of the seller
    int to = 0;    // dense index of the buyer
    std::size_t link = 0;
  };

  [[nodiscard]] int nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<Arc>& arcs() const { return arcs_; }
  [[nodiscard]] const std::vector<int>& neighbors(int node) const { return neighbors_[node]; }
  /// Arc index for trade from -> to, or -1.
  [[nodiscard]] int arc(int from, int to) const { return arc_index_[from * nodes_ + to]; }
  /// Link index for the unordered pair, or -1.
  [[nodiscard]] int link(int u, int v) const { return link_index_[u * nodes_ + v]; }
  /// Dense index of the node with id 0.
  [[nodiscard]] int root() const { return root_; }

  /// Preference price buyer attaches to seller, c[buyer][seller].
  [[nodiscard]] double pref(int buyer, int seller) const { return pref_[buyer * nodes_ + seller]; }
  [[nodiscard]] double capacity(int u, int v) const { return cap_[u * nodes_ + v]; }

 private:
  int nodes_ = 0;
  int root_ = 0;
  std::vector<Arc> arcs_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> arc_index_;
  std::vector<int> link_index_;
  std::vector<double> pref_;
  std::vector<double> cap_;
};

/// Generated test instances used by the tests, the acceptance gate and the
/// CLI; all deterministic in the seed.
struct RandomScenarioOptions {
  int min_nodes = 3;
  int max_nodes = 6;
  double edge_probability = 0.5;
  double kappa_lo = 1.0;
  double kappa_hi = 8.0;
  double c_lo = 0.5;
  double c_hi = 4.0;
};

[[nodiscard]] Scenario random_scenario(unsigned long seed, const RandomScenarioOptions& options = {});

}  // namespace peermarket
