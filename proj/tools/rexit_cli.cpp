#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include <rexit/config.hpp>
#include <rexit/csv.hpp>
#include <rexit/sampler.hpp>
#include <rexit/verify.hpp>

namespace fs = std::filesystem;
using namespace rexit;

namespace {

struct Common {
    std::string spec_path;
    std::optional<std::string> out;
    std::optional<unsigned> workers;
    std::optional<std::uint64_t> seed;
    std::optional<double> dt;
    bool no_timing = false;
};

ExperimentSpec load(const Common& c) {
    std::ifstream in(c.spec_path);
    if (!in) throw config_error("--spec: cannot open '" + c.spec_path + "'");
    auto s = parse_spec(in);
    if (c.out) s.out_dir = *c.out;
    if (c.workers) s.workers = *c.workers;
    if (c.seed) s.seed = *c.seed;
    if (c.dt) {
        if (!(*c.dt > 0.0)) throw config_error("--dt: must be positive");
        s.dt = *c.dt;
    }
    if (s.workers == 0) s.workers = std::max(1u, std::thread::hardware_concurrency());
    return s;
}

std::ofstream open_out(const ExperimentSpec& s, const std::string& suffix) {
    fs::create_directories(s.out_dir);
    auto path = fs::path(s.out_dir) / (s.name + suffix);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw config_error("output.dir: cannot write '" + path.string() + "'");
    return os;
}

void print_report(const EstimatorReport& r, double eps, double T, SchemeKind k) {
    std::printf("scheme %s  eps %g  T %g  N %llu\n", std::string(to_string(k)).c_str(), eps, T,
                static_cast<unsigned long long>(r.n));
    if (r.zero_hits()) {
        std::printf("no trajectory exited (estimate 0)\n");
        return;
    }
    std::printf("estimate       %.6e\nsecond moment  %.6e\nrel error      %.4f\nstd error      %.3e\nhits           %llu\n"
                "wall time      %.2f s\n",
                r.estimate, r.second_moment, r.rel_error, r.std_error, static_cast<unsigned long long>(r.hits),
                r.wall_time_s);
}

EstimatorReport run_cell(const ExperimentSpec& s, double eps, double T, std::uint32_t cell, double dt, unsigned workers) {
    auto model = build_model(s.model);
    auto domain = build_domain(s.domain);
    auto p = make_params(linearize(model), s.kind, s.rule, eps, T);
    Subsolution sub(model, domain, s.kind, p, s.domain.level);
    SimConfig cfg;
    cfg.epsilon = eps;
    cfg.horizon = T;
    cfg.dt = dt;
    cfg.samples = s.samples;
    cfg.seed = s.seed;
    cfg.cell = cell;
    cfg.workers = workers;
    return estimate(sub, cfg);
}

int cmd_estimate(const Common& c, std::optional<double> eps, std::optional<double> T, std::optional<std::string> kind,
                 std::optional<std::uint64_t> samples) {
    auto s = load(c);
    if (kind) s.kind = parse_scheme_kind(*kind);
    if (samples) s.samples = *samples;
    double e = eps.value_or(s.epsilons.front());
    double t = T.value_or(s.horizons.front());
    auto r = run_cell(s, e, t, 0, s.dt, s.workers);
    print_report(r, e, t, s.kind);
    return 0;
}

int cmd_table(const Common& c) {
    auto s = load(c);
    auto t0 = std::chrono::steady_clock::now();
    auto g = experiment_grid(build_model(s.model), build_domain(s.domain), grid_request(s));
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.no_timing) {
        wall = 0.0;
        for (auto& cell : g.cells)
            if (cell.report) cell.report->wall_time_s = 0.0;
    }
    {
        auto os = open_out(s, "_cells.csv");
        write_cells_csv(os, g);
    }
    {
        auto os = open_out(s, "_estimates.csv");
        write_table_csv(os, g, TableValue::Estimate);
    }
    {
        auto os = open_out(s, "_rel_errors.csv");
        write_table_csv(os, g, TableValue::RelError);
    }
    {
        auto os = open_out(s, "_manifest.json");
        os << run_manifest(s, g, wall).dump(2) << '\n';
    }
    std::size_t failed = 0;
    std::printf("%s: %zu x %zu cells, scheme %s\n", s.name.c_str(), g.epsilons.size(), g.horizons.size(),
                std::string(to_string(s.kind)).c_str());
    for (std::size_t i = 0; i < g.epsilons.size(); ++i) {
        std::printf("eps %-6g", g.epsilons[i]);
        for (std::size_t j = 0; j < g.horizons.size(); ++j) {
            const auto& cell = g.at(i, j);
            if (!cell.report) {
                ++failed;
                std::printf("  %10s", "error");
            } else if (cell.report->zero_hits()) {
                std::printf("  %10s", "-");
            } else {
                std::printf("  %.2e/%-4.1f", cell.report->estimate, cell.report->rel_error);
            }
        }
        std::printf("\n");
    }
    if (failed) std::printf("%zu cell(s) failed; see the manifest\n", failed);
    return 0;
}

int cmd_verify(const Common& c, bool strict) {
    auto s = load(c);
    if (!uses_lqr_pieces(s.kind)) throw config_error("scheme.kind: verify needs a mollified scheme");
    auto model = build_model(s.model);
    auto domain = build_domain(s.domain);
    auto p = make_params(linearize(model), s.kind, s.rule, s.verify.epsilon, s.verify.horizon);
    const auto& ap = s.verify.analysis;
    auto lem = check_region_lemmas(model, domain, s.kind, p, ap);
    auto tb = theorem_bound(model, domain, s.kind, p, ap, false);

    auto os = open_out(s, "_verify.csv");
    os << "section,item,value,status\n";
    std::printf("verify: %s, eps %g, T %g, M %g, xhat %g, delta %g, eta %g\n", std::string(to_string(s.kind)).c_str(),
                p.epsilon, p.horizon, p.M, p.xhat, p.delta, ap.eta);
    for (const auto& r : lem.regions) {
        const char* st = r.empty ? "empty" : (r.passed ? "pass" : "FAIL");
        os << "region," << r.name << " worst margin," << format_double(r.worst_margin) << ',' << st << '\n';
        if (!r.empty && std::isfinite(r.worst_margin_half))
            os << "region," << r.name << " worst margin at eps/2," << format_double(r.worst_margin_half) << ','
               << st << '\n';
        if (r.empty) {
            std::printf("  region %-14s empty\n", r.name.c_str());
        } else {
            std::printf("  region %-14s worst margin %+.3e at (t=%.3g, x=%.3g)", r.name.c_str(), r.worst_margin, r.t_at,
                        r.x_at);
            if (std::isfinite(r.worst_margin_half) || r.worst_margin < -ap.slack)
                std::printf(", at eps/2 %+.3e (shrink %.2f)", r.worst_margin_half, r.shrink);
            std::printf("  %s\n", st);
        }
    }
    auto row = [&](const char* item, double v) {
        os << "theorem," << item << ',' << format_double(v) << ",\n";
        std::printf("  %-28s %.6g\n", item, v);
    };
    row("bound", tb.bound);
    row(tb.uses_first_form ? "I1" : "I2", tb.uses_first_form ? tb.I1 : tb.I2);
    row("U(0,x0)", tb.rest_value);
    row("U(0,x0) lower bound", tb.rest_value_lower_bound);
    row("log correction", tb.log_correction);
    row("decay rate", tb.decay_rate);
    if (s.kind == SchemeKind::MollifiedNonlinear) {
        row("C0", tb.constants.C0);
        row("C1", tb.constants.C1);
        row("c*", tb.constants.c_star);
        row("sigma*^2", tb.constants.sigma_star_sq);
        row("eta0", tb.eta0);
        row("eps0", tb.epsilon0);
        row("integral of r", tb.r_integral);
        row("negative-part integral", tb.negative_part_integral);
    }
    if (tb.correction_dropped) std::printf("  (log correction dropped: its argument is not positive)\n");
    for (const auto& h : tb.hypotheses) {
        os << "hypothesis," << h.name << ",," << (h.holds ? "holds" : "fails") << '\n';
        std::printf("  hypothesis %-40s %s  (%s)\n", h.name.c_str(), h.holds ? "holds" : "FAILS", h.detail.c_str());
    }
    bool ok = lem.passed() && (!strict || tb.hypotheses_hold());
    std::printf("summary: %s\n", ok ? "all pass" : "FAIL");
    if (!lem.passed()) throw lemma_violation("region check failed");
    if (strict && !tb.hypotheses_hold()) throw hypothesis_violation("theorem hypotheses fail");
    return 0;
}

int cmd_selfcheck(const Common& c, std::optional<std::uint64_t> samples) {
    auto s = load(c);
    if (samples) s.samples = *samples;
    double e = s.epsilons.front(), T = s.horizons.front();
    unsigned many = std::max(8u, s.workers);
    auto r1 = run_cell(s, e, T, 0, s.dt, 1);
    auto r8 = run_cell(s, e, T, 0, s.dt, many);
    bool same = r1.estimate == r8.estimate && r1.second_moment == r8.second_moment && r1.hits == r8.hits;
    std::printf("reproducibility (workers 1 vs %u): %.17g vs %.17g  %s\n", many, r1.estimate, r8.estimate,
                same ? "pass" : "FAIL");
    auto rh = run_cell(s, e, T, 0, 0.5 * s.dt, many);
    double se = std::sqrt(r1.std_error * r1.std_error + rh.std_error * rh.std_error);
    double diff = std::abs(r1.estimate - rh.estimate);
    bool dt_ok = !r1.zero_hits() && !rh.zero_hits() && diff < 2.0 * se;
    std::printf("dt halving (%g -> %g): %.4e vs %.4e, |diff| %.2e, 2 SE %.2e  %s\n", s.dt, 0.5 * s.dt, r1.estimate,
                rh.estimate, diff, 2.0 * se, dt_ok ? "pass" : "FAIL");
    if (!same) throw assertion_failure("estimates depend on the worker count");
    if (!dt_ok) throw assertion_failure("halving dt moved the estimate by 2 standard errors or more");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Importance sampling of exit probabilities with LQR-based subsolutions"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--spec", common.spec_path, "experiment spec (INI)")->required();
        sub->add_option("--out", common.out, "output directory (overrides spec)");
        sub->add_option("--workers", common.workers, "worker threads, 0 = all cores");
        sub->add_option("--seed", common.seed, "RNG seed (overrides spec)");
        sub->add_option("--dt", common.dt, "time step (overrides spec)");
    };

    std::optional<double> eps, T;
    std::optional<std::string> kind;
    std::optional<std::uint64_t> samples;
    bool strict = false;

    auto* est = app.add_subcommand("estimate", "run one (eps, T) cell and print the report");
    add_common(est);
    est->add_option("--epsilon", eps, "noise level (default: first in spec)");
    est->add_option("--T", T, "horizon (default: first in spec)");
    est->add_option("--kind", kind, "scheme kind (overrides spec)");
    est->add_option("--samples", samples, "sample count (overrides spec)");

    auto* tab = app.add_subcommand("table", "run the spec's (eps, T) grid and write CSVs and a manifest");
    add_common(tab);
    tab->add_flag("--no-timing", common.no_timing, "write zero wall times so reruns are byte-identical");

    auto* ver = app.add_subcommand("verify", "grid-check the region bounds and evaluate the theorem bound");
    add_common(ver);
    ver->add_flag("--strict", strict, "fail when a theorem hypothesis does not hold");

    auto* sc = app.add_subcommand("selfcheck", "worker-count reproducibility and dt-halving checks");
    add_common(sc);
    sc->add_option("--samples", samples, "sample count (overrides spec)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*est) return cmd_estimate(common, eps, T, kind, samples);
        if (*tab) return cmd_table(common);
        if (*ver) return cmd_verify(common, strict);
        if (*sc) return cmd_selfcheck(common, samples);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const assertion_failure& e) {
        std::cerr << "assertion failed: " << e.what() << '\n';
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
