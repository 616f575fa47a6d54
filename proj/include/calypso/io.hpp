#pragma once

// CSV inputs and outputs.
//
//   patches.csv   patch_id,region,category,population
//   travel.csv    src,dst,commute_flow,facility_flow
//   cases.csv     patch_id,week_index,count
//   features.csv  patch_id,week_index,<one column per channel>
//
// Week indices are 0-based and contiguous. Numbers are written in shortest
// round-trip form so repeated runs give identical bytes.

#include "calypso/core.hpp"
#include "calypso/synth.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace calypso {

/// A parsed CSV file: header names and string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column position of `name`; ParseError if missing.
    Index column(std::string_view name) const;
};

/// Comma separated, no quoting. Blank lines are skipped, CRLF accepted.
CsvTable parse_csv(std::string_view text, std::string_view source = "<csv>");
CsvTable read_csv(const std::string& path);

double parse_number(std::string_view text, std::string_view what);
Index parse_index(std::string_view text, std::string_view what);

std::string read_text(const std::string& path);
/// Writes through a temporary file in the same directory, then renames.
void write_text(const std::string& path, std::string_view text);

std::string format_number(double value);

struct GraphInput {
    std::vector<PatchInfo> patches; // file order
    FlowMap commute;                // keyed by file order
    FlowMap facility;
    PatchGraph graph;
};

GraphInput read_graph(const std::string& patches_csv, const std::string& travel_csv);

/// patch x week matrix in graph order. Every patch must cover the same
/// contiguous weeks 0..W-1.
Matrix read_cases(const std::string& path, const PatchGraph& graph);

struct FeatureInput {
    std::vector<std::string> names;
    std::vector<Matrix> channels;
};

FeatureInput read_features(const std::string& path, const PatchGraph& graph);

struct Inputs {
    PatchGraph graph;
    DataSet data;
};

/// Reads the four CSV files of a data directory. The last `horizon` weeks are
/// held out: window = weeks - horizon. Initial infections are week 0 counts.
Inputs load_inputs(const std::string& dir, Index horizon);

std::string patches_csv(const std::vector<PatchInfo>& patches);
std::string travel_csv(const std::vector<PatchInfo>& patches, const FlowMap& commute, const FlowMap& facility);
std::string cases_csv(const Matrix& counts, const PatchGraph& graph);
std::string features_csv(const DataSet& data, const PatchGraph& graph);

/// level,unit,week,quantity,value rows: the patch trajectory (S, I, R,
/// new_infections) and the region parameters.
std::string ground_truth_csv(const Trajectory& truth, const DiseaseParams& theta_star, const PatchGraph& graph);

/// Writes patches.csv, travel.csv, cases.csv, features.csv and ground_truth.csv.
void write_synth(const std::string& dir, const SynthResult& synth);

/// week,patch_id,S,I,R,new_infections
std::string trajectory_csv(const Trajectory& traj, const PatchGraph& graph);

/// week,region,beta,gamma,delta,kappa,epsilon
std::string params_csv(const DiseaseParams& params, const PatchGraph& graph);

/// Region-level parameters from params_csv output; weeks must be contiguous.
DiseaseParams read_params(const std::string& path, const PatchGraph& graph);

} // namespace calypso
