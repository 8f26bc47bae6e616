#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distance.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace downscaler {

// ---------------------------------------------------------------------------
// Sites and grids
// ---------------------------------------------------------------------------

struct Site {
    std::string id;
    double lon = 0.0;
    double lat = 0.0;

    [[nodiscard]] LonLat location() const { return {lon, lat}; }
};

inline void validate_site(const Site& s) {
    if (!(s.lon >= -180.0 && s.lon <= 180.0) || !(s.lat >= -90.0 && s.lat <= 90.0)) {
        throw DomainError("site '" + s.id + "' has coordinates outside lon [-180,180] / lat [-90,90]");
    }
}

enum class Projection { EquirectangularKm, ExplicitCells };

/// Grid cell with half-open extent [lon_min, lon_max) x [lat_min, lat_max).
struct Cell {
    std::string id;
    double lon_min = 0.0;
    double lon_max = 0.0;
    double lat_min = 0.0;
    double lat_max = 0.0;

    [[nodiscard]] bool contains(double lon, double lat) const {
        return lon >= lon_min && lon < lon_max && lat >= lat_min && lat < lat_max;
    }
    [[nodiscard]] LonLat centroid() const { return {0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max)}; }
};

class Grid {
public:
    Grid() = default;

    /// Regular equirectangular grid of square `cell_size_km` cells. Longitude
    /// spacing uses the cosine of the grid's central latitude.
    static Grid regular(double origin_lon, double origin_lat, double cell_size_km, int n_x, int n_y) {
        if (n_x <= 0 || n_y <= 0 || !(cell_size_km > 0.0)) {
            throw DomainError("regular grid needs n_x, n_y >= 1 and cell_size > 0");
        }
        Grid g;
        g.projection_ = Projection::EquirectangularKm;
        g.origin_lon_ = origin_lon;
        g.origin_lat_ = origin_lat;
        g.cell_size_km_ = cell_size_km;
        g.n_x_ = n_x;
        g.n_y_ = n_y;
        g.dlat_ = cell_size_km / kKmPerDegree;
        const double lat_center = origin_lat + 0.5 * n_y * g.dlat_;
        g.dlon_ = cell_size_km / (kKmPerDegree * std::cos(detail::deg2rad(lat_center)));
        g.cells_.reserve(static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y));
        for (int iy = 0; iy < n_y; ++iy) {
            for (int ix = 0; ix < n_x; ++ix) {
                g.cells_.push_back(Cell{"c" + std::to_string(ix) + "_" + std::to_string(iy),
                                        origin_lon + ix * g.dlon_, origin_lon + (ix + 1) * g.dlon_,
                                        origin_lat + iy * g.dlat_, origin_lat + (iy + 1) * g.dlat_});
            }
        }
        g.index_ids();
        return g;
    }

    static Grid from_cells(std::vector<Cell> cells) {
        Grid g;
        g.projection_ = Projection::ExplicitCells;
        for (const auto& c : cells) {
            if (!(c.lon_min < c.lon_max) || !(c.lat_min < c.lat_max)) {
                throw DomainError("cell '" + c.id + "' has an empty extent");
            }
        }
        g.cells_ = std::move(cells);
        g.index_ids();
        g.check_no_overlap();
        return g;
    }

    [[nodiscard]] Projection projection() const { return projection_; }
    [[nodiscard]] const std::vector<Cell>& cells() const { return cells_; }
    [[nodiscard]] std::size_t size() const { return cells_.size(); }
    [[nodiscard]] double origin_lon() const { return origin_lon_; }
    [[nodiscard]] double origin_lat() const { return origin_lat_; }
    [[nodiscard]] double cell_size_km() const { return cell_size_km_; }
    [[nodiscard]] int n_x() const { return n_x_; }
    [[nodiscard]] int n_y() const { return n_y_; }

    [[nodiscard]] std::optional<std::size_t> find(const std::string& id) const {
        auto it = id_index_.find(id);
        if (it == id_index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] const Cell& cell(const std::string& id) const {
        auto idx = find(id);
        if (!idx) throw DomainError("unknown cell id '" + id + "'");
        return cells_[*idx];
    }

    /// Index of the unique cell whose half-open extent contains the point.
    [[nodiscard]] std::size_t locate(double lon, double lat) const {
        if (projection_ == Projection::EquirectangularKm) {
            int ix = static_cast<int>(std::floor((lon - origin_lon_) / dlon_));
            int iy = static_cast<int>(std::floor((lat - origin_lat_) / dlat_));
            ix = std::clamp(ix, 0, n_x_ - 1);
            iy = std::clamp(iy, 0, n_y_ - 1);
            // the division can land one cell off on an exact boundary; settle
            // against the stored extents so results match an exhaustive scan
            while (ix > 0 && lon < cell_at(ix, iy).lon_min) --ix;
            while (ix < n_x_ - 1 && lon >= cell_at(ix, iy).lon_max) ++ix;
            while (iy > 0 && lat < cell_at(ix, iy).lat_min) --iy;
            while (iy < n_y_ - 1 && lat >= cell_at(ix, iy).lat_max) ++iy;
            const std::size_t idx = static_cast<std::size_t>(iy) * static_cast<std::size_t>(n_x_) + static_cast<std::size_t>(ix);
            if (cells_[idx].contains(lon, lat)) return idx;
        } else {
            for (std::size_t i = 0; i < cells_.size(); ++i)
                if (cells_[i].contains(lon, lat)) return i;
        }
        throw OutOfDomain("point (" + std::to_string(lon) + ", " + std::to_string(lat) + ") lies outside every grid cell");
    }

private:
    const Cell& cell_at(int ix, int iy) const {
        return cells_[static_cast<std::size_t>(iy) * static_cast<std::size_t>(n_x_) + static_cast<std::size_t>(ix)];
    }

    void index_ids() {
        id_index_.clear();
        for (std::size_t i = 0; i < cells_.size(); ++i) {
            if (!id_index_.emplace(cells_[i].id, i).second) {
                throw DuplicateRecord("duplicate cell id '" + cells_[i].id + "'");
            }
        }
    }

    void check_no_overlap() const {
        std::vector<std::size_t> order(cells_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return cells_[a].lon_min < cells_[b].lon_min; });
        for (std::size_t a = 0; a < order.size(); ++a) {
            const Cell& ca = cells_[order[a]];
            for (std::size_t b = a + 1; b < order.size(); ++b) {
                const Cell& cb = cells_[order[b]];
                if (cb.lon_min >= ca.lon_max) break;
                if (cb.lat_min < ca.lat_max && ca.lat_min < cb.lat_max) {
                    throw DomainError("cells '" + ca.id + "' and '" + cb.id + "' overlap");
                }
            }
        }
    }

    Projection projection_ = Projection::ExplicitCells;
    std::vector<Cell> cells_;
    std::unordered_map<std::string, std::size_t> id_index_;
    double origin_lon_ = 0.0, origin_lat_ = 0.0, cell_size_km_ = 0.0;
    double dlon_ = 0.0, dlat_ = 0.0;
    int n_x_ = 0, n_y_ = 0;
};

inline std::string assign_cell(const Site& site, const Grid& grid) {
    return grid.cells()[grid.locate(site.lon, site.lat)].id;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

enum class Transform { Sqrt, Log, Identity };

inline double transform(double raw, Transform t) {
    switch (t) {
        case Transform::Sqrt:
            if (!(raw >= 0.0)) throw DomainError("sqrt transform needs a non-negative value, got " + std::to_string(raw));
            return std::sqrt(raw);
        case Transform::Log:
            if (!(raw > 0.0)) throw DomainError("log transform needs a positive value, got " + std::to_string(raw));
            return std::log(raw);
        case Transform::Identity:
            return raw;
    }
    return raw;
}

/// Inverse of `transform`. A negative value on the square-root scale maps to 0.
inline double back_transform(double value, Transform t) {
    switch (t) {
        case Transform::Sqrt: return value > 0.0 ? value * value : 0.0;
        case Transform::Log: return std::exp(value);
        case Transform::Identity: return value;
    }
    return value;
}

struct TransformSpec {
    std::vector<Transform> per_pollutant;

    /// `pollutant` is 1-based.
    [[nodiscard]] Transform of(int pollutant) const {
        if (pollutant < 1 || static_cast<std::size_t>(pollutant) > per_pollutant.size()) return Transform::Identity;
        return per_pollutant[static_cast<std::size_t>(pollutant - 1)];
    }
    [[nodiscard]] double forward(double raw, int pollutant) const { return transform(raw, of(pollutant)); }
    [[nodiscard]] double backward(double value, int pollutant) const { return back_transform(value, of(pollutant)); }

    static TransformSpec identity(int p) { return {std::vector<Transform>(static_cast<std::size_t>(p), Transform::Identity)}; }
    bool operator==(const TransformSpec&) const = default;
};

inline std::string to_string(Transform t) {
    switch (t) {
        case Transform::Sqrt: return "sqrt";
        case Transform::Log: return "log";
        case Transform::Identity: return "identity";
    }
    return "identity";
}

inline Transform transform_from_string(const std::string& s) {
    if (s == "sqrt") return Transform::Sqrt;
    if (s == "log") return Transform::Log;
    if (s == "identity") return Transform::Identity;
    throw ConfigError("unknown transform '" + s + "'");
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Monitoring record on the raw scale; `pollutant` is 1-based.
struct Observation {
    std::string site_id;
    int t = 0;
    int pollutant = 1;
    double value_raw = 0.0;
};

/// Numerical-model output for one cell, day and pollutant on the raw scale.
struct GridOutput {
    std::string cell_id;
    int t = 0;
    int pollutant = 1;
    double value_raw = 0.0;
};

/// Sites reporting on day t split by which pollutants they report.
/// `patterns` holds every non-empty reporting pattern (bit i-1 set when
/// pollutant i is reported), ordered: all pollutants first, then by mask.
struct DayPartition {
    int t = 0;
    std::vector<std::string> both;
    std::vector<std::string> only_1;
    std::vector<std::string> only_2;
    std::vector<std::pair<unsigned, std::vector<std::string>>> patterns;

    [[nodiscard]] std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [mask, ids] : patterns) n += ids.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Aligned dataset
// ---------------------------------------------------------------------------

/// Observations, grid outputs and the site-to-cell association. Values are
/// stored raw and transformed on access. Immutable once built.
class AlignedDataset {
public:
    AlignedDataset() = default;

    static AlignedDataset build(std::vector<Site> sites, Grid grid, std::vector<Observation> observations,
                                std::vector<GridOutput> grid_outputs, TransformSpec transform, int p = 0) {
        AlignedDataset d;
        d.sites_ = std::move(sites);
        d.grid_ = std::move(grid);
        d.observations_ = std::move(observations);
        d.grid_outputs_ = std::move(grid_outputs);
        d.transform_ = std::move(transform);

        int max_pollutant = 0;
        for (const auto& o : d.observations_) max_pollutant = std::max(max_pollutant, o.pollutant);
        for (const auto& g : d.grid_outputs_) max_pollutant = std::max(max_pollutant, g.pollutant);
        d.p_ = p > 0 ? p : std::max(max_pollutant, static_cast<int>(d.transform_.per_pollutant.size()));
        if (d.p_ < 1) d.p_ = 1;
        if (d.transform_.per_pollutant.empty()) d.transform_ = TransformSpec::identity(d.p_);
        if (static_cast<int>(d.transform_.per_pollutant.size()) != d.p_) {
            throw DimensionMismatch("transform spec covers " + std::to_string(d.transform_.per_pollutant.size()) +
                                    " pollutants, dataset has " + std::to_string(d.p_));
        }

        for (std::size_t i = 0; i < d.sites_.size(); ++i) {
            validate_site(d.sites_[i]);
            if (!d.site_index_.emplace(d.sites_[i].id, i).second) {
                throw DuplicateRecord("duplicate site id '" + d.sites_[i].id + "'");
            }
            const std::size_t cell = d.grid_.locate(d.sites_[i].lon, d.sites_[i].lat);
            d.site_cell_.push_back(cell);
            d.site_to_cell_[d.sites_[i].id] = d.grid_.cells()[cell].id;
        }

        std::set<std::tuple<std::string, int, int>> seen;
        std::set<int> days;
        for (const auto& o : d.observations_) {
            if (o.pollutant < 1 || o.pollutant > d.p_) throw DomainError("pollutant index out of range for site '" + o.site_id + "'");
            if (o.t < 0) throw DomainError("negative day index for site '" + o.site_id + "'");
            if (!std::isfinite(o.value_raw)) throw DomainError("non-finite value at site '" + o.site_id + "'");
            if (!d.site_index_.count(o.site_id)) throw DomainError("observation for unknown site '" + o.site_id + "'");
            if (!seen.emplace(o.site_id, o.t, o.pollutant).second) {
                throw DuplicateRecord("duplicate observation (site " + o.site_id + ", t " + std::to_string(o.t) +
                                      ", pollutant " + std::to_string(o.pollutant) + ")");
            }
            (void)d.transform_.forward(o.value_raw, o.pollutant);
            days.insert(o.t);
        }
        for (const auto& g : d.grid_outputs_) {
            const auto cell = d.grid_.find(g.cell_id);
            if (!cell) throw DomainError("grid output for unknown cell '" + g.cell_id + "'");
            if (g.pollutant < 1 || g.pollutant > d.p_) throw DomainError("grid output pollutant out of range");
            if (!std::isfinite(g.value_raw)) throw DomainError("non-finite grid output in cell '" + g.cell_id + "'");
            (void)d.transform_.forward(g.value_raw, g.pollutant);
            if (!d.grid_lookup_.emplace(grid_key(*cell, g.t, g.pollutant), g.value_raw).second) {
                throw DuplicateRecord("duplicate grid output (cell " + g.cell_id + ", t " + std::to_string(g.t) + ")");
            }
            days.insert(g.t);
        }
        d.days_.assign(days.begin(), days.end());
        std::map<int, std::map<std::string, unsigned>> masks;
        for (const auto& o : d.observations_) masks[o.t][o.site_id] |= 1u << (o.pollutant - 1);
        for (int t : d.days_) d.partitions_.push_back(d.make_partition(t, masks[t]));
        return d;
    }

    [[nodiscard]] int p() const { return p_; }
    [[nodiscard]] const std::vector<Site>& sites() const { return sites_; }
    [[nodiscard]] const Grid& grid() const { return grid_; }
    [[nodiscard]] const std::vector<Observation>& observations() const { return observations_; }
    [[nodiscard]] const std::vector<GridOutput>& grid_outputs() const { return grid_outputs_; }
    [[nodiscard]] const std::map<std::string, std::string>& site_to_cell() const { return site_to_cell_; }
    [[nodiscard]] const std::vector<DayPartition>& partitions() const { return partitions_; }
    [[nodiscard]] const TransformSpec& transform() const { return transform_; }
    /// Sorted day indices present in either observations or grid outputs.
    [[nodiscard]] const std::vector<int>& days() const { return days_; }

    [[nodiscard]] std::optional<std::size_t> site_index(const std::string& id) const {
        auto it = site_index_.find(id);
        if (it == site_index_.end()) return std::nullopt;
        return it->second;
    }
    [[nodiscard]] const Site& site(const std::string& id) const {
        auto i = site_index(id);
        if (!i) throw DomainError("unknown site '" + id + "'");
        return sites_[*i];
    }
    [[nodiscard]] std::size_t cell_of_site(std::size_t site_idx) const { return site_cell_[site_idx]; }

    [[nodiscard]] bool has_grid_output(std::size_t cell, int t, int pollutant) const {
        return grid_lookup_.count(grid_key(cell, t, pollutant)) > 0;
    }
    [[nodiscard]] double grid_value_raw(std::size_t cell, int t, int pollutant) const {
        auto it = grid_lookup_.find(grid_key(cell, t, pollutant));
        if (it == grid_lookup_.end()) {
            throw MissingGridOutput("no grid output for cell '" + grid_.cells()[cell].id + "', day " + std::to_string(t) +
                                    ", pollutant " + std::to_string(pollutant));
        }
        return it->second;
    }
    /// Grid output on the transformed (model) scale.
    [[nodiscard]] double grid_value(std::size_t cell, int t, int pollutant) const {
        return transform_.forward(grid_value_raw(cell, t, pollutant), pollutant);
    }
    [[nodiscard]] double transformed(const Observation& o) const { return transform_.forward(o.value_raw, o.pollutant); }

    [[nodiscard]] const DayPartition* partition(int t) const {
        auto it = std::lower_bound(days_.begin(), days_.end(), t);
        if (it == days_.end() || *it != t) return nullptr;
        return &partitions_[static_cast<std::size_t>(it - days_.begin())];
    }

    /// Dataset restricted to the given sites. Grid and grid outputs are kept.
    [[nodiscard]] AlignedDataset subset_sites(const std::set<std::string>& keep) const {
        std::vector<Site> sites;
        for (const auto& s : sites_)
            if (keep.count(s.id)) sites.push_back(s);
        std::vector<Observation> obs;
        for (const auto& o : observations_)
            if (keep.count(o.site_id)) obs.push_back(o);
        return build(std::move(sites), grid_, std::move(obs), grid_outputs_, transform_, p_);
    }

    /// Dataset restricted to the given days (observations and grid outputs).
    [[nodiscard]] AlignedDataset subset_days(const std::set<int>& keep) const {
        std::vector<Observation> obs;
        for (const auto& o : observations_)
            if (keep.count(o.t)) obs.push_back(o);
        std::vector<GridOutput> out;
        for (const auto& g : grid_outputs_)
            if (keep.count(g.t)) out.push_back(g);
        return build(sites_, grid_, std::move(obs), std::move(out), transform_, p_);
    }

    [[nodiscard]] DayPartition compute_partition(int t) const {
        std::map<std::string, unsigned> mask_by_site;
        for (const auto& o : observations_)
            if (o.t == t) mask_by_site[o.site_id] |= 1u << (o.pollutant - 1);
        return make_partition(t, mask_by_site);
    }

private:
    [[nodiscard]] DayPartition make_partition(int t, const std::map<std::string, unsigned>& mask_by_site) const {
        const unsigned full = (1u << p_) - 1u;
        std::map<unsigned, std::vector<std::string>> groups;
        for (const auto& [id, mask] : mask_by_site) groups[mask].push_back(id);

        DayPartition part;
        part.t = t;
        if (auto it = groups.find(full); it != groups.end()) {
            part.both = it->second;
            part.patterns.emplace_back(full, it->second);
        }
        for (const auto& [mask, ids] : groups) {
            if (mask == full) continue;
            part.patterns.emplace_back(mask, ids);
            if (p_ >= 2 && mask == 1u) part.only_1 = ids;
            if (p_ >= 2 && mask == 2u) part.only_2 = ids;
        }
        return part;
    }

    static std::uint64_t grid_key(std::size_t cell, int t, int pollutant) {
        return (static_cast<std::uint64_t>(cell) << 32) | (static_cast<std::uint64_t>(t) << 8) | static_cast<std::uint64_t>(pollutant);
    }

    int p_ = 1;
    std::vector<Site> sites_;
    Grid grid_;
    std::vector<Observation> observations_;
    std::vector<GridOutput> grid_outputs_;
    TransformSpec transform_;
    std::unordered_map<std::string, std::size_t> site_index_;
    std::vector<std::size_t> site_cell_;
    std::map<std::string, std::string> site_to_cell_;
    std::unordered_map<std::uint64_t, double> grid_lookup_;
    std::vector<int> days_;
    std::vector<DayPartition> partitions_;
};

inline DayPartition partition_day(const AlignedDataset& dataset, int t) { return dataset.compute_partition(t); }

/// Random split by site: a `fraction` of the sites (rounded) goes to validation.
/// Deterministic in `seed`.
inline std::pair<AlignedDataset, AlignedDataset> split_train_validation(const AlignedDataset& dataset, double fraction,
                                                                        std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("validation fraction must lie in [0, 1]");
    std::vector<std::string> ids;
    for (const auto& s : dataset.sites()) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    Rng rng = Rng::stream(seed, {0x5917});
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
    std::set<std::string> val(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::set<std::string> train(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
    return {dataset.subset_sites(train), dataset.subset_sites(val)};
}

}  // namespace downscaler
