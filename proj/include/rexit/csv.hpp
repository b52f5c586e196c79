#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <json.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "sampler.hpp"

namespace rexit {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw config_error("csv: bad number '" + s + "'");
    return v;
}

inline std::uint64_t parse_count(const std::string& s) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw config_error("csv: bad count '" + s + "'");
    return v;
}

inline constexpr const char* cell_header = "epsilon,T,scheme,N,estimate,second_moment,rel_error,std_error,hits,wall_time_s";

// One row per cell; failed cells keep their coordinates and leave the rest empty.
inline void write_cells_csv(std::ostream& os, const GridResult& g) {
    os << cell_header << '\n';
    for (const auto& c : g.cells) {
        os << format_double(c.epsilon) << ',' << format_double(c.horizon) << ',' << to_string(g.kind);
        if (c.report) {
            const auto& r = *c.report;
            os << ',' << r.n << ',' << format_double(r.estimate) << ',' << format_double(r.second_moment) << ','
               << format_double(r.rel_error) << ',' << format_double(r.std_error) << ',' << r.hits << ','
               << format_double(r.wall_time_s);
        } else {
            os << ",,,,,,,";
        }
        os << '\n';
    }
}

// Inverse of write_cells_csv. Cell order fixes the epsilon and T lists.
inline GridResult read_cells_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != cell_header) throw config_error("csv: unexpected header");
    GridResult g;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        boost::split(f, line, boost::is_any_of(","));
        if (f.size() != 10) throw config_error("csv: expected 10 fields in '" + line + "'");
        GridCell c;
        c.epsilon = parse_double(f[0]);
        c.horizon = parse_double(f[1]);
        auto kind = parse_scheme_kind(f[2]);
        if (first) g.kind = kind, first = false;
        if (!f[3].empty()) {
            EstimatorReport r;
            r.n = parse_count(f[3]);
            r.estimate = parse_double(f[4]);
            r.second_moment = parse_double(f[5]);
            r.rel_error = parse_double(f[6]);
            r.std_error = parse_double(f[7]);
            r.hits = parse_count(f[8]);
            r.wall_time_s = parse_double(f[9]);
            c.report = r;
        }
        if (std::find(g.epsilons.begin(), g.epsilons.end(), c.epsilon) == g.epsilons.end())
            g.epsilons.push_back(c.epsilon);
        if (std::find(g.horizons.begin(), g.horizons.end(), c.horizon) == g.horizons.end())
            g.horizons.push_back(c.horizon);
        g.cells.push_back(std::move(c));
    }
    if (g.cells.size() != g.epsilons.size() * g.horizons.size()) throw config_error("csv: cells do not form a grid");
    return g;
}

enum class TableValue { Estimate, RelError };

// Epsilon rows by T columns. "-" marks a cell with no exits, "error" a failed cell.
inline void write_table_csv(std::ostream& os, const GridResult& g, TableValue what) {
    os << "epsilon\\T";
    for (double t : g.horizons) os << ',' << format_double(t);
    os << '\n';
    for (std::size_t i = 0; i < g.epsilons.size(); ++i) {
        os << format_double(g.epsilons[i]);
        for (std::size_t j = 0; j < g.horizons.size(); ++j) {
            const auto& c = g.at(i, j);
            os << ',';
            if (!c.report) os << "error";
            else if (c.report->zero_hits()) os << '-';
            else os << format_double(what == TableValue::Estimate ? c.report->estimate : c.report->rel_error);
        }
        os << '\n';
    }
}

inline nlohmann::ordered_json spec_to_json(const ExperimentSpec& s) {
    nlohmann::ordered_json j;
    j["model"] = {{"name", s.model.name},
                  {"c", s.model.c},
                  {"sigma", s.model.sigma},
                  {"rest_point", s.model.rest_point},
                  {"drift", s.model.drift},
                  {"diffusion", s.model.diffusion}};
    j["domain"] = {{"kind", s.domain.kind},
                   {"lower", s.domain.lower},
                   {"upper", s.domain.upper},
                   {"level", s.domain.level == LevelRule::Max ? "max" : "subsolution"}};
    nlohmann::ordered_json sch = {{"kind", std::string(to_string(s.kind))},
                                  {"kappa", s.rule.kappa},
                                  {"xhat", s.rule.xhat},
                                  {"xhat_exponent", s.rule.xhat_exponent},
                                  {"delta_factor", s.rule.delta_factor}};
    if (s.rule.fixed_M) sch["M"] = *s.rule.fixed_M;
    if (s.rule.delta) sch["delta"] = *s.rule.delta;
    if (s.rule.tstar) sch["tstar"] = *s.rule.tstar;
    j["scheme"] = sch;
    j["experiment"] = {{"epsilons", s.epsilons}, {"horizons", s.horizons}, {"samples", s.samples},
                       {"dt", s.dt},             {"seed", s.seed},         {"workers", s.workers}};
    j["verify"] = {{"epsilon", s.verify.epsilon},
                   {"horizon", s.verify.horizon},
                   {"eta", s.verify.analysis.eta},
                   {"t_points", s.verify.analysis.t_points},
                   {"x_points", s.verify.analysis.x_points},
                   {"slack", s.verify.analysis.slack}};
    j["output"] = {{"dir", s.out_dir}, {"name", s.name}};
    return j;
}

inline constexpr const char* version_string = "0.1.0";

// Config echo, per-cell parameters and failures, build and timing information.
inline nlohmann::ordered_json run_manifest(const ExperimentSpec& s, const GridResult& g, double wall_time_s) {
    nlohmann::ordered_json j;
    j["tool"] = "rexit";
    j["version"] = version_string;
    j["compiler"] = __VERSION__;
    j["spec"] = spec_to_json(s);
    auto lin = linearize(build_model(s.model));
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        const auto& c = g.cells[i];
        nlohmann::ordered_json cj = {{"cell", i}, {"epsilon", c.epsilon}, {"T", c.horizon}};
        try {
            auto p = make_params(lin, s.kind, s.rule, c.epsilon, c.horizon);
            cj["params"] = {{"M", p.M}, {"xhat", p.xhat}, {"delta", p.delta}, {"tstar", p.tstar}, {"z", p.z}, {"H", p.H}};
        } catch (const error&) {
        }
        if (!c.report) cj["error"] = c.error;
        else if (c.report->zero_hits()) cj["zero_hits"] = true;
        cells.push_back(cj);
    }
    j["cells"] = cells;
    j["wall_time_s"] = wall_time_s;
    return j;
}

} // namespace rexit
