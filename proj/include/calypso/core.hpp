#pragma once

// Domain types shared by every module: the patch graph with its region
// hierarchy and travel matrix, disease parameter grids, trajectories, data
// sets, hierarchical aggregation and forecast metrics.

#include "calypso/grid.hpp"
#include "calypso/scalar.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace calypso {

enum class Category { General, NonGeneral };

std::string_view to_string(Category c) noexcept;
Category parse_category(std::string_view text);

enum class Level { Patch, Region, State };

std::string_view to_string(Level level) noexcept;
/// Accepts "patch", "region" or "state"; anything else is UnknownLevel.
Level parse_level(std::string_view text);

struct PatchInfo {
    std::string id;
    std::string region;
    Category category = Category::General;
    double population = 0.0;
};

/// Sparse flow list keyed by (source, destination) patch index.
using FlowMap = std::map<std::pair<Index, Index>, double>;

/// theta_ij = (C_ij + F_ij) / P_i off the diagonal, theta_ii the stay-home
/// residual. `patch_ids` (optional) only improves error messages.
Matrix build_travel_matrix(const FlowMap& commute, const FlowMap& facility,
                           std::span<const double> populations,
                           std::span<const std::string> patch_ids = {});

/// Elementwise mean of equally shaped row-stochastic matrices.
Matrix average_weekly_matrices(std::span<const Matrix> weekly);

/// Patches, their region/category labels, populations and the travel matrix.
///
/// Patches are stored in lexicographic order of their ids regardless of input
/// order; `theta` passed to the constructor must follow the input order and is
/// permuted along with the patches. Regions are likewise sorted by name.
/// Immutable after construction.
class PatchGraph {
public:
    PatchGraph() = default;
    PatchGraph(std::vector<PatchInfo> patches, const Matrix& theta);

    Index patch_count() const noexcept { return ids_.size(); }
    Index region_count() const noexcept { return regions_.size(); }

    const std::vector<std::string>& patch_ids() const noexcept { return ids_; }
    const std::vector<double>& populations() const noexcept { return populations_; }
    const std::vector<Category>& categories() const noexcept { return categories_; }
    const std::vector<std::string>& regions() const noexcept { return regions_; }
    const Matrix& theta() const noexcept { return theta_; }

    Index region_of(Index patch) const { return region_of_.at(patch); }
    /// Member patches of a region, ascending.
    const std::vector<Index>& members(Index region) const { return members_.at(region); }

    std::optional<Index> find_patch(std::string_view id) const;
    std::optional<Index> find_region(std::string_view name) const;
    Index patch_index(std::string_view id) const;   // UnknownTarget if absent
    Index region_index(std::string_view name) const; // UnknownRegion if absent

    double region_population(Index region) const;
    double total_population() const;

    /// Same patches with a different travel matrix (already in this graph's
    /// patch order).
    PatchGraph with_theta(const Matrix& theta) const;

private:
    std::vector<std::string> ids_;
    std::vector<double> populations_;
    std::vector<Category> categories_;
    std::vector<Index> region_of_;
    std::vector<std::string> regions_;
    std::vector<std::vector<Index>> members_;
    Matrix theta_;
};

enum class Param : std::size_t { Beta = 0, Gamma, Delta, Kappa, Epsilon };
inline constexpr std::size_t kParamCount = 5;
inline constexpr std::array<Param, kParamCount> kAllParams = {
    Param::Beta, Param::Gamma, Param::Delta, Param::Kappa, Param::Epsilon};

std::string_view to_string(Param p) noexcept;

/// units x steps grids of (beta, gamma, delta, kappa, epsilon). Units are
/// regions for calibrated output and patches once broadcast.
template <class T>
struct DiseaseParamsT {
    Level level = Level::Region;
    std::array<Grid<T>, kParamCount> grids;

    DiseaseParamsT() = default;
    DiseaseParamsT(Level lvl, Index units, Index steps, const T& fill = T{}) : level(lvl) {
        for (auto& g : grids) {
            g = Grid<T>(units, steps, fill);
        }
    }

    Index units() const noexcept { return grids[0].rows(); }
    Index steps() const noexcept { return grids[0].cols(); }

    Grid<T>& operator[](Param p) noexcept { return grids[static_cast<std::size_t>(p)]; }
    const Grid<T>& operator[](Param p) const noexcept { return grids[static_cast<std::size_t>(p)]; }

    Grid<T>& beta() noexcept { return (*this)[Param::Beta]; }
    const Grid<T>& beta() const noexcept { return (*this)[Param::Beta]; }
};

using DiseaseParams = DiseaseParamsT<double>;

/// Copies each region's row to its member patches.
template <class T>
DiseaseParamsT<T> broadcast_to_patches(const DiseaseParamsT<T>& region_params, const PatchGraph& graph) {
    if (region_params.level == Level::Patch) {
        return region_params;
    }
    if (region_params.units() != graph.region_count()) {
        throw Error(ErrorCode::ParamCoverage, "parameter rows do not match region count");
    }
    DiseaseParamsT<T> out(Level::Patch, graph.patch_count(), region_params.steps());
    for (std::size_t k = 0; k < kParamCount; ++k) {
        for (Index p = 0; p < graph.patch_count(); ++p) {
            const auto src = region_params.grids[k].row(graph.region_of(p));
            auto dst = out.grids[k].row(p);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    return out;
}

/// Per-patch compartments over time. Column t holds the state at week t and
/// new_infections(:, t) the infections drawn from that state.
template <class T>
struct TrajectoryT {
    Grid<T> S, I, R, new_infections;
    /// State after the last step (week `steps`).
    std::vector<T> final_S, final_I, final_R;

    Index patches() const noexcept { return S.rows(); }
    Index steps() const noexcept { return S.cols(); }
};

using Trajectory = TrajectoryT<double>;

/// Per-patch compartments at one instant.
struct SirState {
    std::vector<double> S, I, R;
};

/// Per-channel feature tensor, observed counts and window bookkeeping.
struct DataSet {
    std::vector<std::string> feature_names;
    std::vector<Matrix> features; // one patch x week matrix per channel
    Matrix observed;              // patch x week case counts
    std::vector<double> initial_infections;
    Index window = 0;  // training weeks T
    Index horizon = 0; // forecast weeks h

    Index weeks() const noexcept { return observed.cols(); }
    Index channels() const noexcept { return features.size(); }

    /// Checks the DataSet invariants against a graph; throws ShapeMismatch or
    /// InvalidArgument.
    void validate(const PatchGraph& graph) const;
};

/// Additive aggregation. Region rows sum member patches in ascending patch
/// order; the state row sums region rows in region order.
template <class T>
Grid<T> aggregate(const Grid<T>& series, Level level, const PatchGraph& graph) {
    if (series.rows() != graph.patch_count()) {
        throw Error(ErrorCode::ShapeMismatch, "series rows do not match patch count");
    }
    if (level == Level::Patch) {
        return series;
    }
    const Index cols = series.cols();
    Grid<T> regions(graph.region_count(), cols);
    std::vector<T> buffer;
    for (Index r = 0; r < graph.region_count(); ++r) {
        const auto& members = graph.members(r);
        for (Index t = 0; t < cols; ++t) {
            buffer.clear();
            for (Index p : members) {
                buffer.push_back(series(p, t));
            }
            regions(r, t) = num::sum(std::span<const T>(buffer));
        }
    }
    if (level == Level::Region) {
        return regions;
    }
    Grid<T> state(1, cols);
    for (Index t = 0; t < cols; ++t) {
        buffer.clear();
        for (Index r = 0; r < regions.rows(); ++r) {
            buffer.push_back(regions(r, t));
        }
        state(0, t) = num::sum(std::span<const T>(buffer));
    }
    return state;
}

struct Metrics {
    double r2 = 0.0;
    double mse = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
};

/// Standard regression metrics. Throws ShapeMismatch on unequal lengths,
/// InvalidArgument when shorter than 2, DegenerateTruth on constant truth.
Metrics metrics(std::span<const double> pred, std::span<const double> truth);

/// Coefficient of determination only.
double r_squared(std::span<const double> pred, std::span<const double> truth);

} // namespace calypso
