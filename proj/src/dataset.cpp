#include "gfgl/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace gfgl {

namespace {

void validate_name(const std::string& name) {
    if (name.empty()) throw DataError("empty molecule name");
    if (name.find_first_of(",\"=\r\n") != std::string::npos) {
        throw DataError("molecule name '" + name + "' contains a reserved character (, \" = or newline)");
    }
    if (std::isspace(static_cast<unsigned char>(name.front())) ||
        std::isspace(static_cast<unsigned char>(name.back()))) {
        throw DataError("molecule name '" + name + "' has leading or trailing whitespace");
    }
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::int64_t parse_int(std::string_view text, const std::string& context) {
    const std::string t = trim(text);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw DataError(context + ": cannot parse integer '" + t + "'");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

CountDataset::CountDataset(SpatialGraph graph, Array2D<std::int64_t> counts, Array2D<std::uint8_t> observed,
                           std::vector<std::int64_t> lod, std::vector<std::string> molecule_names)
    : graph_(std::move(graph)),
      counts_(std::move(counts)),
      observed_(std::move(observed)),
      lod_(std::move(lod)),
      names_(std::move(molecule_names)) {
    const std::size_t m = graph_.num_vertices();
    const std::size_t d = counts_.cols();
    if (d == 0) throw DataError("dataset has no molecules");
    if (counts_.rows() != m || observed_.rows() != m || observed_.cols() != d) {
        throw DimensionError("count/observed matrices do not match the graph and molecule count");
    }
    if (lod_.size() != d || names_.size() != d) throw DimensionError("lod/name vectors must have one entry per molecule");

    std::set<std::string> unique;
    for (const auto& n : names_) {
        validate_name(n);
        if (!unique.insert(n).second) throw DataError("duplicate molecule name '" + n + "'");
    }
    for (std::size_t k = 0; k < d; ++k) {
        if (lod_[k] < 0) throw DataError("negative limit of detection for '" + names_[k] + "'");
    }
    for (std::size_t i = 0; i < m; ++i) {
        std::int64_t total = 0;
        for (std::size_t k = 0; k < d; ++k) {
            if (!observed_(i, k)) {
                counts_(i, k) = 0;
                if (lod_[k] < 1) {
                    throw DataError("molecule '" + names_[k] + "' has censored entries but no limit of detection");
                }
                continue;
            }
            observed_(i, k) = 1;
            if (counts_(i, k) < 0) throw DataError("negative count at pixel " + std::to_string(i));
            total += counts_(i, k);
        }
        if (total < 1) {
            throw DataError("pixel " + std::to_string(i) + " has no observed counts (every molecule censored or zero)");
        }
    }
}

bool CountDataset::has_censoring(std::size_t i) const {
    const auto row = observed_.row(i);
    return std::any_of(row.begin(), row.end(), [](std::uint8_t o) { return o == 0; });
}

std::size_t CountDataset::num_censored() const {
    return static_cast<std::size_t>(std::count(observed_.data().begin(), observed_.data().end(), 0));
}

std::vector<std::int64_t> compute_totals(const CountDataset& ds) {
    std::vector<std::int64_t> totals(ds.num_pixels(), 0);
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        for (std::size_t d = 0; d < ds.num_molecules(); ++d) {
            if (ds.is_observed(i, d)) totals[i] += ds.count(i, d);
        }
    }
    return totals;
}

std::string encode_mask(const std::vector<std::uint8_t>& mask) {
    std::ostringstream out;
    std::size_t i = 0;
    bool first = true;
    while (i < mask.size()) {
        std::size_t j = i;
        while (j < mask.size() && (mask[j] != 0) == (mask[i] != 0)) ++j;
        if (!first) out << ',';
        out << (mask[i] ? 1 : 0) << '*' << (j - i);
        first = false;
        i = j;
    }
    return out.str();
}

std::vector<std::uint8_t> decode_mask(const std::string& text) {
    std::vector<std::uint8_t> mask;
    for (auto run : split(text, ',')) {
        const auto parts = split(run, '*');
        if (parts.size() != 2) throw DataError("malformed mask run '" + std::string(run) + "'");
        const auto value = parse_int(parts[0], "mask value");
        const auto length = parse_int(parts[1], "mask run length");
        if ((value != 0 && value != 1) || length < 0) throw DataError("malformed mask run '" + std::string(run) + "'");
        mask.insert(mask.end(), static_cast<std::size_t>(length), static_cast<std::uint8_t>(value));
    }
    return mask;
}

CountDataset load_dataset(const std::filesystem::path& counts_path, const std::filesystem::path& meta_path) {
    std::ifstream meta(meta_path);
    if (!meta) throw DataError("cannot open meta file " + meta_path.string());

    std::optional<std::int64_t> rows;
    std::optional<std::int64_t> cols;
    std::optional<std::vector<std::uint8_t>> mask;
    std::map<std::string, std::int64_t> lods;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw DataError(meta_path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        const std::string where = meta_path.string() + ":" + std::to_string(lineno);
        if (key == "grid_rows") {
            rows = parse_int(value, where);
        } else if (key == "grid_cols") {
            cols = parse_int(value, where);
        } else if (key == "mask") {
            mask = decode_mask(value);
        } else if (key.rfind("lod.", 0) == 0) {
            lods[key.substr(4)] = parse_int(value, where);
        } else {
            throw DataError(where + ": unknown key '" + key + "'");
        }
    }
    if (!rows || !cols || *rows < 1 || *cols < 1) throw DataError("meta file must set positive grid_rows and grid_cols");

    auto graph = SpatialGraph::grid(static_cast<std::size_t>(*rows), static_cast<std::size_t>(*cols), mask);

    std::ifstream csv(counts_path);
    if (!csv) throw DataError("cannot open counts file " + counts_path.string());
    if (!std::getline(csv, line)) throw DataError("counts file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "pixel_row" || header[1] != "pixel_col") {
        throw DataError("counts header must start with 'pixel_row,pixel_col' followed by molecule names");
    }
    std::vector<std::string> names;
    for (std::size_t k = 2; k < header.size(); ++k) names.emplace_back(header[k]);
    const std::size_t d = names.size();
    const std::size_t m = graph.num_vertices();

    Array2D<std::int64_t> counts(m, d, 0);
    Array2D<std::uint8_t> observed(m, d, 1);
    std::vector<std::uint8_t> seen(m, 0);
    lineno = 1;
    while (std::getline(csv, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const std::string where = counts_path.string() + ":" + std::to_string(lineno);
        const auto fields = split(line, ',');
        if (fields.size() != d + 2) {
            throw DataError(where + ": expected " + std::to_string(d + 2) + " fields, got " +
                            std::to_string(fields.size()));
        }
        const auto r = parse_int(fields[0], where);
        const auto c = parse_int(fields[1], where);
        if (r < 0 || c < 0) throw DataError(where + ": pixel coordinates must be nonnegative");
        const auto v = graph.vertex_at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        if (v < 0) throw DataError(where + ": pixel (" + std::to_string(r) + "," + std::to_string(c) + ") is outside the grid mask");
        if (seen[v]) throw DataError(where + ": duplicate pixel");
        seen[v] = 1;
        for (std::size_t k = 0; k < d; ++k) {
            const std::string f = trim(fields[k + 2]);
            if (f == "NA") {
                observed(v, k) = 0;
                continue;
            }
            const auto x = parse_int(f, where);
            if (x < 0) throw DataError(where + ": negative count for '" + names[k] + "'");
            counts(v, k) = x;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (!seen[i]) throw DataError("counts file has no row for an active pixel (vertex " + std::to_string(i) + ")");
    }

    std::vector<std::int64_t> lod(d, 0);
    for (std::size_t k = 0; k < d; ++k) {
        const auto it = lods.find(names[k]);
        if (it != lods.end()) {
            lod[k] = it->second;
            lods.erase(it);
        }
    }
    if (!lods.empty()) throw DataError("meta file sets lod for unknown molecule '" + lods.begin()->first + "'");
    return CountDataset(std::move(graph), std::move(counts), std::move(observed), std::move(lod), std::move(names));
}

void save_dataset(const CountDataset& ds, const std::filesystem::path& counts_path,
                  const std::filesystem::path& meta_path) {
    const auto& g = ds.graph();
    if (g.grid_rows() == 0) throw DataError("only grid-backed datasets can be saved");
    {
        std::ofstream meta(meta_path, std::ios::binary);
        if (!meta) throw DataError("cannot write meta file " + meta_path.string());
        meta << "grid_rows = " << g.grid_rows() << "\n";
        meta << "grid_cols = " << g.grid_cols() << "\n";
        if (g.has_holes()) meta << "mask = " << encode_mask(g.mask()) << "\n";
        for (std::size_t k = 0; k < ds.num_molecules(); ++k) {
            meta << "lod." << ds.molecule_names()[k] << " = " << ds.lod()[k] << "\n";
        }
        if (!meta) throw DataError("failed writing " + meta_path.string());
    }
    std::ofstream csv(counts_path, std::ios::binary);
    if (!csv) throw DataError("cannot write counts file " + counts_path.string());
    csv << "pixel_row,pixel_col";
    for (const auto& n : ds.molecule_names()) csv << ',' << n;
    csv << '\n';
    const auto coords = g.coordinates();
    for (std::size_t i = 0; i < ds.num_pixels(); ++i) {
        csv << coords[i].row << ',' << coords[i].col;
        for (std::size_t k = 0; k < ds.num_molecules(); ++k) {
            csv << ',';
            if (ds.is_observed(i, k)) {
                csv << ds.count(i, k);
            } else {
                csv << "NA";
            }
        }
        csv << '\n';
    }
    if (!csv) throw DataError("failed writing " + counts_path.string());
}

}  // namespace gfgl
