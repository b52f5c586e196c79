#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "sampler.hpp"
#include "subsolution.hpp"
#include "verify.hpp"

namespace rexit {

// Experiment description read from an INI file:
//
//   [model]      name = linear | double-well | polynomial, c, sigma, rest_point,
//                drift / diffusion (ascending coefficients, polynomial only)
//   [domain]     kind = two-sided | one-sided, lower, upper, level = subsolution | max
//   [scheme]     kind, M (fixed) or kappa, xhat, xhat_exponent, delta_factor, delta, tstar
//   [experiment] epsilons, horizons, samples, dt, seed, workers
//   [verify]     epsilon, horizon, eta, t_points, x_points, slack
//   [output]     dir, name
struct ModelSpec {
    std::string name = "linear";
    double c = 1.0;
    double sigma = 1.0;
    double rest_point = 0.0;
    std::vector<double> drift;
    std::vector<double> diffusion;
};

struct DomainSpec {
    std::string kind = "two-sided";
    double lower = -1.0;
    double upper = 1.0;
    LevelRule level = LevelRule::Subsolution;
};

struct VerifySpec {
    double epsilon = 0.1;
    double horizon = 5.0;
    AnalysisParams analysis;
};

struct ExperimentSpec {
    ModelSpec model;
    DomainSpec domain;
    SchemeKind kind = SchemeKind::MollifiedLinear;
    ParamRule rule;
    std::vector<double> epsilons;
    std::vector<double> horizons;
    std::uint64_t samples = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 1;
    unsigned workers = 0; // 0: hardware concurrency
    VerifySpec verify;
    std::string out_dir = "out";
    std::string name = "experiment";
};

inline ProcessModel build_model(const ModelSpec& m) {
    if (m.name == "linear") return linear_model(m.c, m.sigma, m.rest_point);
    if (m.name == "double-well") return double_well_model();
    if (m.name == "polynomial") {
        if (m.drift.empty() || m.diffusion.empty())
            throw config_error("model.drift / model.diffusion: polynomial model needs both coefficient lists");
        return polynomial_model("polynomial", Polynomial{m.drift}, Polynomial{m.diffusion}, m.rest_point);
    }
    throw config_error("model.name: unknown model '" + m.name + "'");
}

inline ExitDomain build_domain(const DomainSpec& d) {
    if (d.kind == "two-sided") return ExitDomain::two_sided(d.lower, d.upper);
    if (d.kind == "one-sided") return ExitDomain::one_sided(d.upper);
    throw config_error("domain.kind: expected two-sided or one-sided, got '" + d.kind + "'");
}

inline GridRequest grid_request(const ExperimentSpec& s) {
    GridRequest r;
    r.kind = s.kind;
    r.rule = s.rule;
    r.level = s.domain.level;
    r.epsilons = s.epsilons;
    r.horizons = s.horizons;
    r.samples = s.samples;
    r.seed = s.seed;
    r.dt = s.dt;
    r.workers = s.workers;
    return r;
}

namespace detail {

using boost::property_tree::ptree;

template <class T>
T parse_value(const std::string& path, const std::string& text) {
    try {
        return boost::lexical_cast<T>(boost::trim_copy(text));
    } catch (const boost::bad_lexical_cast&) {
        throw config_error(path + ": cannot parse '" + text + "'");
    }
}

template <class T>
void read(const ptree& pt, const std::string& path, T& out) {
    if (auto v = pt.get_optional<std::string>(path)) out = parse_value<T>(path, *v);
}

template <class T>
void read(const ptree& pt, const std::string& path, std::optional<T>& out) {
    if (auto v = pt.get_optional<std::string>(path)) out = parse_value<T>(path, *v);
}

inline std::vector<double> parse_list(const std::string& path, const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    std::vector<double> out;
    for (auto& p : parts) {
        if (boost::trim_copy(p).empty()) continue;
        out.push_back(parse_value<double>(path, p));
    }
    return out;
}

inline void read_list(const ptree& pt, const std::string& path, std::vector<double>& out) {
    if (auto v = pt.get_optional<std::string>(path)) out = parse_list(path, *v);
}

inline void require_known_keys(const ptree& pt) {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> known = {
        {"model", {"name", "c", "sigma", "rest_point", "drift", "diffusion"}},
        {"domain", {"kind", "lower", "upper", "level"}},
        {"scheme", {"kind", "M", "kappa", "xhat", "xhat_exponent", "delta_factor", "delta", "tstar"}},
        {"experiment", {"epsilons", "horizons", "samples", "dt", "seed", "workers"}},
        {"verify", {"epsilon", "horizon", "eta", "t_points", "x_points", "slack"}},
        {"output", {"dir", "name"}},
    };
    for (const auto& [section, body] : pt) {
        auto it = std::find_if(known.begin(), known.end(), [&](const auto& k) { return k.first == section; });
        if (it == known.end()) throw config_error(section + ": unknown section");
        for (const auto& [key, value] : body) {
            if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
                throw config_error(section + "." + key + ": unknown key");
        }
    }
}

} // namespace detail

inline void validate(const ExperimentSpec& s) {
    if (s.epsilons.empty()) throw config_error("experiment.epsilons: list is empty");
    if (s.horizons.empty()) throw config_error("experiment.horizons: list is empty");
    for (double e : s.epsilons)
        if (!(e > 0.0)) throw config_error("experiment.epsilons: values must be positive");
    for (double t : s.horizons)
        if (!(t > 0.0)) throw config_error("experiment.horizons: values must be positive");
    if (s.samples < 1) throw config_error("experiment.samples: must be at least 1");
    if (!(s.dt > 0.0)) throw config_error("experiment.dt: must be positive");
    if (!s.rule.fixed_M && s.rule.xhat_exponent > 0.0 && !(s.rule.xhat_exponent < s.rule.kappa))
        throw config_error("scheme.xhat_exponent: must be below scheme.kappa when both scale with epsilon");
    if (s.rule.fixed_M && !(*s.rule.fixed_M > 0.0)) throw config_error("scheme.M: must be positive");
    if (!(s.rule.xhat > 0.0)) throw config_error("scheme.xhat: must be positive");
    if (!(s.verify.analysis.eta >= 0.0 && s.verify.analysis.eta <= 0.25))
        throw config_error("verify.eta: must lie in [0, 1/4]");
    if (s.verify.analysis.t_points < 2 || s.verify.analysis.x_points < 2)
        throw config_error("verify.t_points / verify.x_points: need at least 2");
    // Resolve names and model invariants now rather than per cell.
    try {
        auto m = build_model(s.model);
        validate_domain(m, build_domain(s.domain));
    } catch (const model_error& e) {
        throw config_error(std::string("model/domain: ") + e.what());
    }
}

inline ExperimentSpec parse_spec(std::istream& in) {
    detail::ptree pt;
    try {
        boost::property_tree::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw config_error(std::string("spec: ") + e.what());
    }
    detail::require_known_keys(pt);
    ExperimentSpec s;
    using detail::read;
    read(pt, "model.name", s.model.name);
    read(pt, "model.c", s.model.c);
    read(pt, "model.sigma", s.model.sigma);
    read(pt, "model.rest_point", s.model.rest_point);
    detail::read_list(pt, "model.drift", s.model.drift);
    detail::read_list(pt, "model.diffusion", s.model.diffusion);

    read(pt, "domain.kind", s.domain.kind);
    read(pt, "domain.lower", s.domain.lower);
    read(pt, "domain.upper", s.domain.upper);
    if (auto lv = pt.get_optional<std::string>("domain.level")) {
        if (*lv == "subsolution") s.domain.level = LevelRule::Subsolution;
        else if (*lv == "max") s.domain.level = LevelRule::Max;
        else throw config_error("domain.level: expected subsolution or max");
    }

    if (auto k = pt.get_optional<std::string>("scheme.kind")) {
        try {
            s.kind = parse_scheme_kind(boost::trim_copy(*k));
        } catch (const error& e) {
            throw config_error(std::string("scheme.kind: ") + e.what());
        }
    }
    read(pt, "scheme.M", s.rule.fixed_M);
    read(pt, "scheme.kappa", s.rule.kappa);
    read(pt, "scheme.xhat", s.rule.xhat);
    read(pt, "scheme.xhat_exponent", s.rule.xhat_exponent);
    read(pt, "scheme.delta_factor", s.rule.delta_factor);
    read(pt, "scheme.delta", s.rule.delta);
    read(pt, "scheme.tstar", s.rule.tstar);

    detail::read_list(pt, "experiment.epsilons", s.epsilons);
    detail::read_list(pt, "experiment.horizons", s.horizons);
    read(pt, "experiment.samples", s.samples);
    read(pt, "experiment.dt", s.dt);
    read(pt, "experiment.seed", s.seed);
    read(pt, "experiment.workers", s.workers);

    read(pt, "verify.epsilon", s.verify.epsilon);
    read(pt, "verify.horizon", s.verify.horizon);
    read(pt, "verify.eta", s.verify.analysis.eta);
    read(pt, "verify.t_points", s.verify.analysis.t_points);
    read(pt, "verify.x_points", s.verify.analysis.x_points);
    read(pt, "verify.slack", s.verify.analysis.slack);

    read(pt, "output.dir", s.out_dir);
    read(pt, "output.name", s.name);
    validate(s);
    return s;
}

inline ExperimentSpec parse_spec_string(const std::string& text) {
    std::istringstream in(text);
    return parse_spec(in);
}

} // namespace rexit
