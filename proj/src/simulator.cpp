#include "gfgl/simulator.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "gfgl/errors.hpp"
#include "gfgl/rng.hpp"

namespace gfgl {

using nlohmann::json;

bool Region::contains(std::size_t row, std::size_t col) const {
    if (shape == Shape::rect) {
        return row >= row0 && row < row0 + height && col >= col0 && col < col0 + width;
    }
    const double dr = static_cast<double>(row) - center_row;
    const double dc = static_cast<double>(col) - center_col;
    return dr * dr + dc * dc <= radius * radius;
}

void SimSpec::validate() const {
    if (rows == 0 || cols == 0) throw ConfigError("simulation grid must be non-empty");
    if (num_molecules == 0) throw ConfigError("simulation needs at least one molecule");
    if (base_log_rate.size() != num_molecules) throw ConfigError("base_log_rate needs one entry per molecule");
    if (lod.size() != num_molecules) throw ConfigError("lod needs one entry per molecule");
    if (!names.empty() && names.size() != num_molecules) throw ConfigError("names needs one entry per molecule");
    if (!(total_scale > 0.0) || !std::isfinite(total_scale)) throw ConfigError("total_scale must be positive");
    for (double b : base_log_rate) {
        if (!std::isfinite(b)) throw ConfigError("base log rates must be finite");
    }
    for (auto l : lod) {
        if (l < 0) throw ConfigError("lod must be non-negative");
    }
    for (const auto& r : regions) {
        if (r.molecule >= num_molecules) throw ConfigError("region refers to a molecule out of range");
        if (!std::isfinite(r.log_offset)) throw ConfigError("region offsets must be finite");
        if (r.shape == Region::Shape::rect) {
            if (r.height == 0 || r.width == 0 || r.row0 + r.height > rows || r.col0 + r.width > cols) {
                throw ConfigError("rectangle region lies outside the grid");
            }
        } else {
            if (!(r.radius > 0.0) || r.center_row - r.radius < -0.5 || r.center_col - r.radius < -0.5 ||
                r.center_row + r.radius > static_cast<double>(rows) - 0.5 ||
                r.center_col + r.radius > static_cast<double>(cols) - 0.5) {
                throw ConfigError("disc region lies outside the grid");
            }
        }
    }
}

namespace {

Region rect(std::size_t d, double offset, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
    Region r;
    r.shape = Region::Shape::rect;
    r.molecule = d;
    r.log_offset = offset;
    r.row0 = r0;
    r.col0 = c0;
    r.height = h;
    r.width = w;
    return r;
}

Region disc(std::size_t d, double offset, double cr, double cc, double radius) {
    Region r;
    r.shape = Region::Shape::disc;
    r.molecule = d;
    r.log_offset = offset;
    r.center_row = cr;
    r.center_col = cc;
    r.radius = radius;
    return r;
}

}  // namespace

std::vector<std::string> sim_preset_names() { return {"paper-like", "two-region"}; }

SimSpec sim_preset(std::string_view name, std::uint64_t seed) {
    SimSpec s;
    s.seed = seed;
    if (name == "paper-like") {
        s.rows = 32;
        s.cols = 32;
        s.num_molecules = 7;
        s.total_scale = 500.0;
        // An abundant molecule with a strong left/right split drives the
        // per-pixel totals, which is what distorts total-count normalization.
        s.base_log_rate = {3.0, 1.5, 1.0, 0.0, 1.0, 0.3, 1.2};
        s.regions = {
            rect(0, std::log(5.0), 0, 0, 32, 16),
            disc(2, std::log(4.0), 9.5, 22.5, 6.0),
            rect(3, std::log(3.0), 18, 3, 12, 12),
            rect(4, std::log(3.0), 2, 2, 10, 10),
            disc(4, std::log(2.5), 24.0, 24.0, 5.0),
            rect(4, -std::log(2.5), 14, 16, 6, 16),
            disc(4, std::log(5.0), 6.0, 27.0, 3.0),
            rect(5, -std::log(4.0), 10, 10, 12, 12),
            disc(6, std::log(2.0), 15.5, 15.5, 10.0),
        };
        s.lod = {0, 0, 0, 4, 0, 3, 0};
    } else if (name == "two-region") {
        s.rows = 8;
        s.cols = 8;
        s.num_molecules = 3;
        s.total_scale = 300.0;
        s.base_log_rate = {1.0, 0.5, 0.0};
        s.regions = {rect(0, std::log(4.0), 0, 0, 8, 4)};
        s.lod = {0, 0, 0};
    } else {
        throw ConfigError("unknown simulation preset '" + std::string(name) + "'");
    }
    return s;
}

SimTruth build_truth(const SimSpec& spec, const SpatialGraph& graph) {
    const std::size_t m = graph.num_vertices();
    const std::size_t d_count = spec.num_molecules;
    Matrix log_theta(m, d_count);
    const auto coords = graph.coordinates();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t d = 0; d < d_count; ++d) log_theta(i, d) = spec.base_log_rate[d];
        for (const auto& r : spec.regions) {
            if (r.contains(coords[i].row, coords[i].col)) log_theta(i, r.molecule) += r.log_offset;
        }
    }
    SimTruth t;
    t.theta = Matrix(m, d_count);
    t.theta_tilde = Matrix(m, d_count);
    for (std::size_t d = 0; d < d_count; ++d) {
        double sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            t.theta(i, d) = std::exp(log_theta(i, d));
            sum += t.theta(i, d);
        }
        for (std::size_t i = 0; i < m; ++i) t.theta_tilde(i, d) = t.theta(i, d) / sum;
    }
    t.change_point_edges.assign(d_count, {});
    const auto edges = graph.edges();
    for (std::size_t r = 0; r < edges.size(); ++r) {
        for (std::size_t d = 0; d < d_count; ++d) {
            if (log_theta(edges[r].lo, d) != log_theta(edges[r].hi, d)) t.change_point_edges[d].push_back(r);
        }
    }
    return t;
}

std::pair<CountDataset, SimTruth> simulate(const SimSpec& spec) {
    spec.validate();
    auto graph = SpatialGraph::grid(spec.rows, spec.cols);
    auto truth = build_truth(spec, graph);
    const std::size_t m = graph.num_vertices();
    const std::size_t d_count = spec.num_molecules;

    Array2D<std::int64_t> counts(m, d_count, 0);
    Array2D<std::uint8_t> observed(m, d_count, 1);
    for (std::size_t i = 0; i < m; ++i) {
        Rng rng = Rng::stream(spec.seed, {0x51u, i});
        std::int64_t n = static_cast<std::int64_t>(spec.total_scale);
        if (!spec.constant_total) n = std::poisson_distribution<std::int64_t>(spec.total_scale)(rng);
        double rest = 0.0;
        for (std::size_t d = 0; d < d_count; ++d) rest += truth.theta(i, d);
        // Multinomial by sequential conditional binomials.
        std::int64_t left = n;
        for (std::size_t d = 0; d < d_count; ++d) {
            std::int64_t x = left;
            if (d + 1 < d_count) {
                const double p = std::clamp(truth.theta(i, d) / rest, 0.0, 1.0);
                x = left > 0 ? std::binomial_distribution<std::int64_t>(left, p)(rng) : 0;
            }
            rest -= truth.theta(i, d);
            left -= x;
            counts(i, d) = x;
            if (x < spec.lod[d]) {
                observed(i, d) = 0;
                counts(i, d) = 0;
            }
        }
        std::int64_t obs_total = 0;
        for (std::size_t d = 0; d < d_count; ++d) obs_total += counts(i, d);
        if (obs_total == 0) {
            const auto c = graph.coordinates()[i];
            throw DataError("pixel (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                            ") has no observed counts; total_scale is too small for these limits of detection");
        }
    }
    std::vector<std::string> names = spec.names;
    if (names.empty()) {
        for (std::size_t d = 0; d < d_count; ++d) names.push_back("M" + std::to_string(d + 1));
    }
    CountDataset ds(std::move(graph), std::move(counts), std::move(observed), spec.lod, std::move(names));
    return {std::move(ds), std::move(truth)};
}

ChangePointReport count_change_points(const SimTruth& truth) {
    ChangePointReport rep;
    const double m = static_cast<double>(truth.theta.rows());
    const double d = static_cast<double>(truth.theta.cols());
    rep.bound = m - m / d;
    for (const auto& e : truth.change_point_edges) {
        rep.per_molecule.push_back(e.size());
        if (static_cast<double>(e.size()) > rep.bound) rep.within_bound = false;
    }
    return rep;
}

json to_json(const SimSpec& s) {
    json regions = json::array();
    for (const auto& r : s.regions) {
        if (r.shape == Region::Shape::rect) {
            regions.push_back({{"shape", "rect"},
                               {"molecule", r.molecule},
                               {"log_offset", r.log_offset},
                               {"row0", r.row0},
                               {"col0", r.col0},
                               {"height", r.height},
                               {"width", r.width}});
        } else {
            regions.push_back({{"shape", "disc"},
                               {"molecule", r.molecule},
                               {"log_offset", r.log_offset},
                               {"center_row", r.center_row},
                               {"center_col", r.center_col},
                               {"radius", r.radius}});
        }
    }
    return json{{"rows", s.rows},
                {"cols", s.cols},
                {"num_molecules", s.num_molecules},
                {"base_log_rate", s.base_log_rate},
                {"regions", regions},
                {"total_scale", s.total_scale},
                {"constant_total", s.constant_total},
                {"lod", s.lod},
                {"names", s.names},
                {"seed", s.seed}};
}

SimSpec sim_spec_from_json(const json& j) {
    try {
        SimSpec s;
        s.rows = j.at("rows").get<std::size_t>();
        s.cols = j.at("cols").get<std::size_t>();
        s.num_molecules = j.value("num_molecules", std::size_t{7});
        s.base_log_rate = j.at("base_log_rate").get<std::vector<double>>();
        s.total_scale = j.value("total_scale", 500.0);
        s.constant_total = j.value("constant_total", false);
        s.lod = j.value("lod", std::vector<std::int64_t>(s.num_molecules, 0));
        s.names = j.value("names", std::vector<std::string>{});
        s.seed = j.value("seed", std::uint64_t{0});
        for (const auto& rj : j.value("regions", json::array())) {
            Region r;
            const auto shape = rj.at("shape").get<std::string>();
            r.molecule = rj.at("molecule").get<std::size_t>();
            r.log_offset = rj.at("log_offset").get<double>();
            if (shape == "rect") {
                r.shape = Region::Shape::rect;
                r.row0 = rj.at("row0").get<std::size_t>();
                r.col0 = rj.at("col0").get<std::size_t>();
                r.height = rj.at("height").get<std::size_t>();
                r.width = rj.at("width").get<std::size_t>();
            } else if (shape == "disc") {
                r.shape = Region::Shape::disc;
                r.center_row = rj.at("center_row").get<double>();
                r.center_col = rj.at("center_col").get<double>();
                r.radius = rj.at("radius").get<double>();
            } else {
                throw ConfigError("unknown region shape '" + shape + "'");
            }
            s.regions.push_back(r);
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad simulation spec: ") + e.what());
    }
}

void save_truth(const SimTruth& truth, const CountDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write truth file " + path.string());
    out << "pixel_row,pixel_col,molecule,theta_tilde,theta\n" << std::setprecision(17);
    const auto coords = ds.graph().coordinates();
    for (std::size_t i = 0; i < truth.theta.rows(); ++i) {
        for (std::size_t d = 0; d < truth.theta.cols(); ++d) {
            out << coords[i].row << ',' << coords[i].col << ',' << ds.molecule_names()[d] << ','
                << truth.theta_tilde(i, d) << ',' << truth.theta(i, d) << '\n';
        }
    }
}

SimTruth load_truth(const std::filesystem::path& path, const CountDataset& ds) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open truth file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("pixel_row,pixel_col,molecule,theta_tilde", 0) != 0) {
        throw DataError("truth file must start with pixel_row,pixel_col,molecule,theta_tilde");
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t d = 0; d < ds.num_molecules(); ++d) index[ds.molecule_names()[d]] = d;
    const std::size_t m = ds.num_pixels();
    SimTruth t;
    t.theta = Matrix(m, ds.num_molecules(), std::nan(""));
    t.theta_tilde = Matrix(m, ds.num_molecules(), std::nan(""));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[5];
        std::size_t nf = 0;
        while (nf < 5 && std::getline(ss, f[nf], ',')) ++nf;
        if (nf < 4) throw DataError("truth line " + std::to_string(line_no) + " has too few fields");
        try {
            const auto v = ds.graph().vertex_at(std::stoul(f[0]), std::stoul(f[1]));
            const auto it = index.find(f[2]);
            if (v < 0 || it == index.end()) {
                throw DataError("truth line " + std::to_string(line_no) + " names an unknown pixel or molecule");
            }
            t.theta_tilde(static_cast<std::size_t>(v), it->second) = std::stod(f[3]);
            if (nf == 5) t.theta(static_cast<std::size_t>(v), it->second) = std::stod(f[4]);
        } catch (const std::logic_error&) {
            throw DataError("truth line " + std::to_string(line_no) + " is malformed");
        }
    }
    for (std::size_t k = 0; k < m * ds.num_molecules(); ++k) {
        if (std::isnan(t.theta_tilde.data()[k])) throw DataError("truth file does not cover every pixel and molecule");
    }
    const auto edges = ds.graph().edges();
    t.change_point_edges.assign(ds.num_molecules(), {});
    for (std::size_t r = 0; r < edges.size(); ++r) {
        for (std::size_t d = 0; d < ds.num_molecules(); ++d) {
            if (t.theta_tilde(edges[r].lo, d) != t.theta_tilde(edges[r].hi, d)) t.change_point_edges[d].push_back(r);
        }
    }
    return t;
}

}  // namespace gfgl
