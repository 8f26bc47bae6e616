#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "errors.hpp"

namespace downscaler {

// ---------------------------------------------------------------------------
// Formatting and CSV helpers
// ---------------------------------------------------------------------------

/// Shortest decimal representation that round-trips exactly.
inline std::string fmt_num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Line-oriented CSV reader. Blank lines and lines starting with '#' are
/// skipped; the first remaining line must equal `expected_header`.
class CsvReader {
public:
    CsvReader(const std::string& path, const std::vector<std::string>& expected_header) : path_(path), in_(path) {
        if (!std::filesystem::exists(path)) throw MissingFile("input file not found: " + path);
        if (!in_) throw MissingFile("cannot open input file: " + path);
        std::vector<std::string> header;
        if (!next(header)) throw ParseError(path_, line_no_, "missing header");
        if (header != expected_header) {
            std::string want;
            for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
            throw ParseError(path_, line_no_, "unexpected header, expected '" + want + "'");
        }
        width_ = expected_header.size();
    }

    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            const auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            fields = split_csv_line(line);
            if (width_ != 0 && fields.size() != width_) {
                throw ParseError(path_, line_no_, "expected " + std::to_string(width_) + " fields, found " + std::to_string(fields.size()));
            }
            return true;
        }
        return false;
    }

    [[nodiscard]] std::size_t line() const { return line_no_; }
    [[nodiscard]] const std::string& path() const { return path_; }

    double to_double(const std::string& s) const {
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(path_, line_no_, "not a number: '" + s + "'");
        return v;
    }
    int to_int(const std::string& s) const {
        int v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(path_, line_no_, "not an integer: '" + s + "'");
        return v;
    }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t line_no_ = 0;
    std::size_t width_ = 0;
};

/// Output file that starts with a `# config_hash=...` provenance line.
inline std::ofstream open_output(const std::string& path, const std::string& config_hash) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot open output file: " + path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Monitoring and grid-output CSVs
// ---------------------------------------------------------------------------

inline const std::vector<std::string> kMonitoringHeader{"site_id", "lon", "lat", "t", "pollutant", "value_raw"};
inline const std::vector<std::string> kGridOutputHeader{"cell_id", "t", "pollutant", "value_raw"};

struct MonitoringData {
    std::vector<Site> sites;
    std::vector<Observation> observations;
};

inline MonitoringData ingest_monitoring(const std::string& path) {
    CsvReader reader(path, kMonitoringHeader);
    MonitoringData data;
    std::map<std::string, std::size_t> site_index;
    std::set<std::tuple<std::string, int, int>> seen;
    std::vector<std::string> f;
    while (reader.next(f)) {
        Site s{f[0], reader.to_double(f[1]), reader.to_double(f[2])};
        if (s.id.empty()) throw ParseError(path, reader.line(), "empty site_id");
        const int t = reader.to_int(f[3]);
        const int pollutant = reader.to_int(f[4]);
        const double value = reader.to_double(f[5]);
        if (t < 0) throw ParseError(path, reader.line(), "negative day index");
        if (pollutant < 1) throw ParseError(path, reader.line(), "pollutant must be a 1-based index");
        if (auto it = site_index.find(s.id); it == site_index.end()) {
            site_index.emplace(s.id, data.sites.size());
            data.sites.push_back(s);
        } else {
            const Site& prev = data.sites[it->second];
            if (prev.lon != s.lon || prev.lat != s.lat) throw ParseError(path, reader.line(), "inconsistent coordinates for site '" + s.id + "'");
        }
        if (!seen.emplace(s.id, t, pollutant).second) {
            throw DuplicateRecord(path + ":" + std::to_string(reader.line()) + ": repeated (site, t, pollutant) record for '" + s.id + "'");
        }
        data.observations.push_back(Observation{s.id, t, pollutant, value});
    }
    return data;
}

inline std::vector<GridOutput> ingest_grid(const std::string& path) {
    CsvReader reader(path, kGridOutputHeader);
    std::vector<GridOutput> out;
    std::set<std::tuple<std::string, int, int>> seen;
    std::vector<std::string> f;
    while (reader.next(f)) {
        GridOutput g{f[0], reader.to_int(f[1]), reader.to_int(f[2]), reader.to_double(f[3])};
        if (g.pollutant < 1) throw ParseError(path, reader.line(), "pollutant must be a 1-based index");
        if (!seen.emplace(g.cell_id, g.t, g.pollutant).second) {
            throw DuplicateRecord(path + ":" + std::to_string(reader.line()) + ": repeated (cell, t, pollutant) record");
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline void write_monitoring_csv(const std::string& path, const std::vector<Site>& sites, const std::vector<Observation>& observations,
                                 const std::string& config_hash = "") {
    std::map<std::string, const Site*> by_id;
    for (const auto& s : sites) by_id[s.id] = &s;
    auto out = open_output(path, config_hash);
    out << "site_id,lon,lat,t,pollutant,value_raw\n";
    for (const auto& o : observations) {
        const Site* s = by_id.at(o.site_id);
        out << o.site_id << ',' << fmt_num(s->lon) << ',' << fmt_num(s->lat) << ',' << o.t << ',' << o.pollutant << ','
            << fmt_num(o.value_raw) << '\n';
    }
}

inline void write_grid_csv(const std::string& path, const std::vector<GridOutput>& outputs, const std::string& config_hash = "") {
    auto out = open_output(path, config_hash);
    out << "cell_id,t,pollutant,value_raw\n";
    for (const auto& g : outputs) out << g.cell_id << ',' << g.t << ',' << g.pollutant << ',' << fmt_num(g.value_raw) << '\n';
}

// ---------------------------------------------------------------------------
// Grid definition (JSON)
// ---------------------------------------------------------------------------

inline nlohmann::json grid_to_json(const Grid& grid) {
    nlohmann::json j;
    if (grid.projection() == Projection::EquirectangularKm) {
        j["projection"] = "equirectangular-km";
        j["origin_lon"] = grid.origin_lon();
        j["origin_lat"] = grid.origin_lat();
        j["cell_size_km"] = grid.cell_size_km();
        j["n_x"] = grid.n_x();
        j["n_y"] = grid.n_y();
    } else {
        j["projection"] = "explicit-cells";
        auto& cells = j["cells"] = nlohmann::json::array();
        for (const auto& c : grid.cells()) {
            cells.push_back({{"id", c.id}, {"lon_min", c.lon_min}, {"lon_max", c.lon_max}, {"lat_min", c.lat_min}, {"lat_max", c.lat_max}});
        }
    }
    return j;
}

inline Grid grid_from_json(const nlohmann::json& j) {
    try {
        const std::string proj = j.at("projection").get<std::string>();
        if (proj == "equirectangular-km") {
            return Grid::regular(j.at("origin_lon").get<double>(), j.at("origin_lat").get<double>(), j.at("cell_size_km").get<double>(),
                                 j.at("n_x").get<int>(), j.at("n_y").get<int>());
        }
        if (proj == "explicit-cells") {
            std::vector<Cell> cells;
            for (const auto& c : j.at("cells")) {
                cells.push_back(Cell{c.at("id").get<std::string>(), c.at("lon_min").get<double>(), c.at("lon_max").get<double>(),
                                     c.at("lat_min").get<double>(), c.at("lat_max").get<double>()});
            }
            return Grid::from_cells(std::move(cells));
        }
        throw ConfigError("unknown grid projection '" + proj + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed grid definition: ") + e.what());
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    if (!std::filesystem::exists(path)) throw MissingFile("input file not found: " + path);
    std::ifstream in(path);
    try {
        return nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
}

inline Grid load_grid_definition(const std::string& path) { return grid_from_json(read_json_file(path)); }

inline void write_grid_definition(const std::string& path, const Grid& grid, const std::string& config_hash = "") {
    auto j = grid_to_json(grid);
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    auto out = open_output(path, "");
    out << j.dump(2) << '\n';
}

}  // namespace downscaler
