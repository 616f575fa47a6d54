#include "calypso/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <sstream>

namespace calypso {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

/// Week columns keyed by patch id, checked for contiguity.
struct WeekRows {
    std::map<std::string, std::map<Index, std::vector<double>>> by_patch;
};

Matrix to_matrix(const std::map<Index, std::vector<double>>& weeks, Index width, Index channel) {
    Matrix m(1, width);
    for (const auto& [w, values] : weeks) {
        m(0, w) = values[channel];
    }
    return m;
}

WeekRows collect_weeks(const CsvTable& table, const std::vector<Index>& value_columns, std::string_view source) {
    WeekRows out;
    const Index id_col = table.column("patch_id");
    const Index week_col = table.column("week_index");
    for (const auto& row : table.rows) {
        const Index week = parse_index(row[week_col], "week_index");
        std::vector<double> values;
        for (Index c : value_columns) {
            values.push_back(parse_number(row[c], table.header[c]));
        }
        auto& weeks = out.by_patch[row[id_col]];
        if (!weeks.emplace(week, std::move(values)).second) {
            throw Error(ErrorCode::ParseError,
                        fmt::format("{}: duplicate week {} for patch '{}'", source, week, row[id_col]));
        }
    }
    return out;
}

Index check_weeks(const WeekRows& rows, const PatchGraph& graph, std::string_view source) {
    for (const auto& [id, weeks] : rows.by_patch) {
        if (!graph.find_patch(id)) {
            throw Error(ErrorCode::UnknownTarget, fmt::format("{}: unknown patch '{}'", source, id));
        }
    }
    Index width = 0;
    for (const auto& id : graph.patch_ids()) {
        const auto it = rows.by_patch.find(id);
        if (it == rows.by_patch.end()) {
            throw Error(ErrorCode::ShapeMismatch, fmt::format("{}: no rows for patch '{}'", source, id));
        }
        const auto& weeks = it->second;
        if (weeks.begin()->first != 0 || weeks.rbegin()->first + 1 != weeks.size()) {
            throw Error(ErrorCode::ParseError,
                        fmt::format("{}: weeks of patch '{}' are not contiguous from 0", source, id));
        }
        if (width == 0) {
            width = weeks.size();
        } else if (weeks.size() != width) {
            throw Error(ErrorCode::ShapeMismatch,
                        fmt::format("{}: patch '{}' has {} weeks, expected {}", source, id, weeks.size(), width));
        }
    }
    return width;
}

} // namespace

Index CsvTable::column(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw Error(ErrorCode::ParseError, fmt::format("missing column '{}'", name));
    }
    return static_cast<Index>(it - header.begin());
}

CsvTable parse_csv(std::string_view text, std::string_view source) {
    CsvTable table;
    std::size_t pos = 0;
    Index line_no = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line.find('"') != std::string_view::npos) {
            throw Error(ErrorCode::ParseError, fmt::format("{}:{}: quoted fields are not supported", source, line_no));
        }
        auto cells = split(line);
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {} fields, header has {}", source, line_no,
                                                           cells.size(), table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) {
        throw Error(ErrorCode::ParseError, fmt::format("{}: empty file", source));
    }
    return table;
}

CsvTable read_csv(const std::string& path) {
    return parse_csv(read_text(path), path);
}

double parse_number(std::string_view text, std::string_view what) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw Error(ErrorCode::ParseError, fmt::format("bad number '{}' in {}", text, what));
    }
    return value;
}

Index parse_index(std::string_view text, std::string_view what) {
    Index value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error(ErrorCode::ParseError, fmt::format("bad index '{}' in {}", text, what));
    }
    return value;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, fmt::format("cannot open '{}'", path));
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const std::string& path, std::string_view text) {
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::IoError, fmt::format("cannot write '{}'", tmp.string()));
        }
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) {
            throw Error(ErrorCode::IoError, fmt::format("short write to '{}'", tmp.string()));
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        throw Error(ErrorCode::IoError, fmt::format("cannot rename to '{}': {}", path, ec.message()));
    }
}

std::string format_number(double value) {
    if (value == 0.0) {
        return "0";
    }
    return fmt::format("{}", value);
}

GraphInput read_graph(const std::string& patches_path, const std::string& travel_path) {
    GraphInput in;
    const CsvTable patches = read_csv(patches_path);
    const Index id = patches.column("patch_id");
    const Index region = patches.column("region");
    const Index category = patches.column("category");
    const Index population = patches.column("population");
    std::map<std::string, Index> index;
    std::vector<double> populations;
    std::vector<std::string> ids;
    for (const auto& row : patches.rows) {
        PatchInfo p;
        p.id = row[id];
        p.region = row[region];
        p.category = parse_category(row[category]);
        p.population = parse_number(row[population], "population");
        if (!index.emplace(p.id, in.patches.size()).second) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("{}: duplicate patch id '{}'", patches_path, p.id));
        }
        populations.push_back(p.population);
        ids.push_back(p.id);
        in.patches.push_back(p);
    }
    if (in.patches.empty()) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("{}: no patches", patches_path));
    }

    const CsvTable travel = read_csv(travel_path);
    const Index src = travel.column("src");
    const Index dst = travel.column("dst");
    const Index commute = travel.column("commute_flow");
    const Index facility = travel.column("facility_flow");
    auto lookup = [&](const std::string& name) {
        const auto it = index.find(name);
        if (it == index.end()) {
            throw Error(ErrorCode::UnknownTarget, fmt::format("{}: unknown patch '{}'", travel_path, name));
        }
        return it->second;
    };
    for (const auto& row : travel.rows) {
        const std::pair<Index, Index> key{lookup(row[src]), lookup(row[dst])};
        const double c = parse_number(row[commute], "commute_flow");
        const double f = parse_number(row[facility], "facility_flow");
        if (c < 0.0 || f < 0.0) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("{}: negative flow {} -> {}", travel_path, row[src], row[dst]));
        }
        if (c != 0.0) {
            in.commute[key] += c;
        }
        if (f != 0.0) {
            in.facility[key] += f;
        }
    }
    in.graph = PatchGraph(in.patches, build_travel_matrix(in.commute, in.facility, populations, ids));
    return in;
}

Matrix read_cases(const std::string& path, const PatchGraph& graph) {
    const CsvTable table = read_csv(path);
    const WeekRows rows = collect_weeks(table, {table.column("count")}, path);
    const Index width = check_weeks(rows, graph, path);
    Matrix out(graph.patch_count(), width);
    for (Index p = 0; p < graph.patch_count(); ++p) {
        const auto row = to_matrix(rows.by_patch.at(graph.patch_ids()[p]), width, 0);
        for (Index t = 0; t < width; ++t) {
            if (row(0, t) < 0.0) {
                throw Error(ErrorCode::InvalidArgument,
                            fmt::format("{}: negative count for '{}' week {}", path, graph.patch_ids()[p], t));
            }
            out(p, t) = row(0, t);
        }
    }
    return out;
}

FeatureInput read_features(const std::string& path, const PatchGraph& graph) {
    const CsvTable table = read_csv(path);
    FeatureInput in;
    std::vector<Index> columns;
    for (Index c = 0; c < table.header.size(); ++c) {
        if (table.header[c] != "patch_id" && table.header[c] != "week_index") {
            in.names.push_back(table.header[c]);
            columns.push_back(c);
        }
    }
    if (columns.empty()) {
        throw Error(ErrorCode::ParseError, fmt::format("{}: no feature columns", path));
    }
    const WeekRows rows = collect_weeks(table, columns, path);
    const Index width = check_weeks(rows, graph, path);
    for (Index c = 0; c < columns.size(); ++c) {
        Matrix m(graph.patch_count(), width);
        for (Index p = 0; p < graph.patch_count(); ++p) {
            const auto row = to_matrix(rows.by_patch.at(graph.patch_ids()[p]), width, c);
            for (Index t = 0; t < width; ++t) {
                m(p, t) = row(0, t);
            }
        }
        in.channels.push_back(std::move(m));
    }
    return in;
}

Inputs load_inputs(const std::string& dir, Index horizon) {
    const fs::path root(dir);
    Inputs in;
    in.graph = read_graph((root / "patches.csv").string(), (root / "travel.csv").string()).graph;
    DataSet& data = in.data;
    data.observed = read_cases((root / "cases.csv").string(), in.graph);
    FeatureInput features = read_features((root / "features.csv").string(), in.graph);
    if (features.channels.front().cols() != data.observed.cols()) {
        throw Error(ErrorCode::ShapeMismatch, fmt::format("features cover {} weeks, cases {}",
                                                          features.channels.front().cols(), data.observed.cols()));
    }
    if (horizon + 2 > data.observed.cols()) {
        throw Error(ErrorCode::WindowMismatch, fmt::format("{} weeks of cases leave no training window for horizon {}",
                                                           data.observed.cols(), horizon));
    }
    data.feature_names = std::move(features.names);
    data.features = std::move(features.channels);
    data.window = data.observed.cols() - horizon;
    data.horizon = horizon;
    data.initial_infections = data.observed.column(0);
    data.validate(in.graph);
    return in;
}

std::string patches_csv(const std::vector<PatchInfo>& patches) {
    std::string out = "patch_id,region,category,population\n";
    for (const auto& p : patches) {
        out += fmt::format("{},{},{},{}\n", p.id, p.region, to_string(p.category), format_number(p.population));
    }
    return out;
}

std::string travel_csv(const std::vector<PatchInfo>& patches, const FlowMap& commute, const FlowMap& facility) {
    std::map<std::pair<Index, Index>, std::pair<double, double>> flows;
    for (const auto& [key, v] : commute) {
        flows[key].first = v;
    }
    for (const auto& [key, v] : facility) {
        flows[key].second = v;
    }
    std::string out = "src,dst,commute_flow,facility_flow\n";
    for (const auto& [key, v] : flows) {
        out += fmt::format("{},{},{},{}\n", patches.at(key.first).id, patches.at(key.second).id,
                           format_number(v.first), format_number(v.second));
    }
    return out;
}

std::string cases_csv(const Matrix& counts, const PatchGraph& graph) {
    std::string out = "patch_id,week_index,count\n";
    for (Index p = 0; p < counts.rows(); ++p) {
        for (Index t = 0; t < counts.cols(); ++t) {
            out += fmt::format("{},{},{}\n", graph.patch_ids()[p], t, format_number(counts(p, t)));
        }
    }
    return out;
}

std::string features_csv(const DataSet& data, const PatchGraph& graph) {
    std::string out = "patch_id,week_index";
    for (const auto& name : data.feature_names) {
        out += "," + name;
    }
    out += "\n";
    for (Index p = 0; p < graph.patch_count(); ++p) {
        for (Index t = 0; t < data.weeks(); ++t) {
            out += fmt::format("{},{}", graph.patch_ids()[p], t);
            for (const auto& f : data.features) {
                out += "," + format_number(f(p, t));
            }
            out += "\n";
        }
    }
    return out;
}

std::string ground_truth_csv(const Trajectory& truth, const DiseaseParams& theta_star, const PatchGraph& graph) {
    std::string out = "level,unit,week,quantity,value\n";
    const std::pair<const char*, const Matrix*> series[] = {
        {"S", &truth.S}, {"I", &truth.I}, {"R", &truth.R}, {"new_infections", &truth.new_infections}};
    for (Index p = 0; p < graph.patch_count(); ++p) {
        for (Index t = 0; t < truth.steps(); ++t) {
            for (const auto& [name, m] : series) {
                out += fmt::format("patch,{},{},{},{}\n", graph.patch_ids()[p], t, name, format_number((*m)(p, t)));
            }
        }
    }
    for (Index r = 0; r < theta_star.units(); ++r) {
        for (Index t = 0; t < theta_star.steps(); ++t) {
            for (Param k : kAllParams) {
                out += fmt::format("region,{},{},{},{}\n", graph.regions()[r], t, to_string(k),
                                   format_number(theta_star[k](r, t)));
            }
        }
    }
    return out;
}

void write_synth(const std::string& dir, const SynthResult& synth) {
    const fs::path root(dir);
    write_text((root / "patches.csv").string(), patches_csv(synth.patches));
    write_text((root / "travel.csv").string(), travel_csv(synth.patches, synth.commute, synth.facility));
    write_text((root / "cases.csv").string(), cases_csv(synth.data.observed, synth.graph));
    write_text((root / "features.csv").string(), features_csv(synth.data, synth.graph));
    write_text((root / "ground_truth.csv").string(), ground_truth_csv(synth.truth, synth.theta_star, synth.graph));
}

std::string trajectory_csv(const Trajectory& traj, const PatchGraph& graph) {
    std::string out = "week,patch_id,S,I,R,new_infections\n";
    for (Index t = 0; t < traj.steps(); ++t) {
        for (Index p = 0; p < traj.patches(); ++p) {
            out += fmt::format("{},{},{},{},{},{}\n", t, graph.patch_ids()[p], format_number(traj.S(p, t)),
                               format_number(traj.I(p, t)), format_number(traj.R(p, t)),
                               format_number(traj.new_infections(p, t)));
        }
    }
    return out;
}

std::string params_csv(const DiseaseParams& params, const PatchGraph& graph) {
    std::string out = "week,region";
    for (Param k : kAllParams) {
        out += fmt::format(",{}", to_string(k));
    }
    out += "\n";
    for (Index t = 0; t < params.steps(); ++t) {
        for (Index r = 0; r < params.units(); ++r) {
            out += fmt::format("{},{}", t,
                               params.level == Level::Region ? graph.regions()[r] : graph.patch_ids()[r]);
            for (Param k : kAllParams) {
                out += "," + format_number(params[k](r, t));
            }
            out += "\n";
        }
    }
    return out;
}

DiseaseParams read_params(const std::string& path, const PatchGraph& graph) {
    const CsvTable table = read_csv(path);
    const Index week = table.column("week");
    const Index region = table.column("region");
    std::array<Index, kParamCount> cols{};
    for (Param k : kAllParams) {
        cols[static_cast<Index>(k)] = table.column(to_string(k));
    }
    Index weeks = 0;
    for (const auto& row : table.rows) {
        weeks = std::max(weeks, parse_index(row[week], "week") + 1);
    }
    if (table.rows.size() != weeks * graph.region_count()) {
        throw Error(ErrorCode::ParamCoverage,
                    fmt::format("{}: expected {} rows for {} weeks x {} regions, found {}", path,
                                weeks * graph.region_count(), weeks, graph.region_count(), table.rows.size()));
    }
    DiseaseParams params(Level::Region, graph.region_count(), weeks);
    std::vector<std::uint8_t> seen(weeks * graph.region_count(), 0);
    for (const auto& row : table.rows) {
        const Index t = parse_index(row[week], "week");
        const Index r = graph.region_index(row[region]);
        if (seen[r * weeks + t]++ != 0) {
            throw Error(ErrorCode::ParamCoverage, fmt::format("{}: duplicate row for {} week {}", path, row[region], t));
        }
        for (Param k : kAllParams) {
            params[k](r, t) = parse_number(row[cols[static_cast<Index>(k)]], to_string(k));
        }
    }
    return params;
}

} // namespace calypso
