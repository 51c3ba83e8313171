#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "peermarket/central_market.hpp"
#include "peermarket/equilibrium.hpp"
#include "peermarket/privacy.hpp"
#include "peermarket/scenario.hpp"
#include "peermarket/structure.hpp"

namespace peermarket {

/// Provenance block embedded in every JSON report. The timestamp is the only
/// field that varies between identical runs.
struct ReportMeta {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config;
  std::string timestamp;
};

/// Shortest round-trip decimal form.
[[nodiscard]] std::string format_number(double value);

/// RFC 4180 field quoting.
[[nodiscard]] std::string csv_field(const std::string& text);

// Node and pair references in reports use prosumer ids.

[[nodiscard]] std::string solution_json(const Scenario& scenario, const MarketSolution& solution,
                                        const ReportMeta& meta,
                                        const std::optional<ClosedFormPrices>& closed_form = std::nullopt);
[[nodiscard]] std::string solution_nodes_csv(const Scenario& scenario, const MarketSolution& solution);
[[nodiscard]] std::string solution_pairs_csv(const Scenario& scenario, const MarketSolution& solution);

[[nodiscard]] std::string sample_csv_header(const Scenario& scenario, const std::vector<std::pair<int, int>>& directions);
/// Unsolved records leave the SW, violation and trade cells empty.
[[nodiscard]] std::string sample_csv_row(const SampleRecord& record, std::size_t trade_columns);

/// Trades q(0,1), q(1,2), q(2,0) of a three-node sample; nullopt for other
/// topologies or unsolved records.
[[nodiscard]] std::optional<std::string> point_cloud_row(const Scenario& scenario, const SampleRecord& record);
[[nodiscard]] std::string point_cloud_header();

[[nodiscard]] std::string gne_json(const Scenario& scenario, const SweepResult& sweep, const MarketSolution& ve,
                                   const std::optional<PoaResult>& poa, const ReportMeta& meta);

[[nodiscard]] std::string analysis_json(const Scenario& scenario, const MarketSolution& solution,
                                        const StructureReport& report, const ReportMeta& meta);

/// Undirected graph; congested links red with the saturating direction in the
/// label, the rest green.
[[nodiscard]] std::string analysis_dot(const Scenario& scenario, const MarketSolution& solution,
                                       const std::vector<std::pair<int, int>>& congested);

[[nodiscard]] std::string bias_json(const Scenario& scenario, const BiasReport& report, const ReportMeta& meta);
[[nodiscard]] std::string surface_csv(const BiasSurface& surface);

[[nodiscard]] std::string validation_json(const Scenario& scenario, const std::vector<Violation>& violations,
                                          const ReportMeta& meta);

}  // namespace peermarket
