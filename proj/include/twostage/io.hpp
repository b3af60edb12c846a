#pragma once

// File schemas: ratings CSV in, JSON configs in, JSON reports and CSV tables
// out.
//
// Ratings CSV header (column order free, stratum optional):
//   item_id,stratum,llm_rating,human_rating,inclusion_prob
// An empty human_rating marks an item without a human rating.

#include "twostage/design.hpp"
#include "twostage/estimator.hpp"
#include "twostage/simulate.hpp"
#include "twostage/strata.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace twostage {

using Json = nlohmann::ordered_json;

struct RatingsReadOptions {
    // When set, a file that carries any human rating must give
    // inclusion_prob on every row. Otherwise empty cells read as 1.
    bool require_inclusion_prob = true;
};

// Throws InputError listing every offending line.
std::vector<RatingRecord> read_ratings_csv(std::istream& in, const RatingsReadOptions& options = {});
std::vector<RatingRecord> read_ratings_file(const std::filesystem::path& path,
                                            const RatingsReadOptions& options = {});

void write_ratings_csv(std::ostream& out, std::span<const RatingRecord> records);

std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view text);

Json read_json_file(const std::filesystem::path& path);

Json to_json(const DrEstimate& e);
Json to_json(const PredictionModel& m);
Json to_json(const DesignSolution& s);
Json to_json(const AllocationPlan& p);
Json to_json(const BudgetReport& b);
Json to_json(const SimConfig& c);
Json to_json(const SimResult& r);
Json to_json(const EstimatorSummary& s);

// Fields absent from the JSON keep their value in `base`.
SimConfig sim_config_from_json(const Json& j, SimConfig base = {});
StratumSpec stratum_from_json(const Json& j);

// "label:size:r2[:cost]".
StratumSpec parse_stratum_spec(const std::string& text);
// "label:proportion:pi[:rho]".
SimStratum parse_sim_stratum(const std::string& text);

} // namespace twostage
