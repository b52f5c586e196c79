#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "quadrature.hpp"
#include "subsolution.hpp"

namespace rexit {

// Which drift/diffusion the operator uses: the linearisation at the rest point
// or the model itself.
enum class OperatorForm { Linearized, Exact };

inline OperatorForm operator_form(SchemeKind k) {
    return k == SchemeKind::MollifiedNonlinear ? OperatorForm::Exact : OperatorForm::Linearized;
}

inline std::pair<double, double> operator_coefficients(const ProcessModel& m, OperatorForm form, double x) {
    if (form == OperatorForm::Exact) return {m.drift(x), m.diffusion(x)};
    return {-m.c() * (x - m.rest_point()), m.sigma_bar()};
}

// W_t + b DW - |sigma DW|^2 / 2 + eps sigma^2 D^2W / 2
inline double g_eps(const Piece& w, double b, double sigma, double eps) {
    double sd = sigma * w.dx;
    return w.dt + b * w.dx - 0.5 * sd * sd + 0.5 * eps * sigma * sigma * w.dxx;
}

inline double g_eps(const Piece& w, double x, double eps, const ProcessModel& m, OperatorForm form) {
    auto [b, s] = operator_coefficients(m, form, x);
    return g_eps(w, b, s, eps);
}

// The operator with the control-mismatch penalty -|sigma (DW - DU)|^2 / 2.
inline double g_eps_pair(const Piece& w, const Piece& u, double x, double eps, const ProcessModel& m,
                         OperatorForm form) {
    auto [b, s] = operator_coefficients(m, form, x);
    double mis = s * (w.dx - u.dx);
    return g_eps(w, b, s, eps) - 0.5 * mis * mis;
}

// Weighted variance of the piece gradients times sigma^2 (nonnegative).
inline double beta0(const Subsolution::Evaluation& ev, double sigma) {
    double g = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < ev.count; ++i) {
        g += ev.weights[i] * ev.pieces[i].dx;
        g2 += ev.weights[i] * ev.pieces[i].dx * ev.pieces[i].dx;
    }
    return sigma * sigma * std::max(0.0, g2 - g * g);
}

inline Piece scaled(const Piece& p, double f) { return {f * p.value, f * p.dx, f * p.dxx, f * p.dt}; }

// Central differences of a value function of (t, x).
template <class F>
Piece finite_difference_piece(F&& value, double t, double x, double hx, double ht) {
    Piece p;
    p.value = value(t, x);
    double up = value(t, x + hx), dn = value(t, x - hx);
    p.dx = (up - dn) / (2.0 * hx);
    p.dxx = (up - 2.0 * p.value + dn) / (hx * hx);
    p.dt = (value(t + ht, x) - value(t - ht, x)) / (2.0 * ht);
    return p;
}

struct AnalysisParams {
    double eta = 0.25;
    std::size_t t_points = 201;
    std::size_t x_points = 101;
    double slack = 1e-6;
    double hx_rel = 1e-5;
    double ht_rel = 1e-5;
};

// Remainder-bound constants of the nonlinear analysis, all grid suprema.
struct NonlinearConstants {
    double C0 = 0.0;
    double C1 = 0.0;
    double c_star = 0.0;
    double sigma_star_sq = 0.0;
};

namespace detail {

// Supremum of f over a uniform grid on [lo, hi], refined once on a finer grid
// around the best point.
template <class F>
double grid_sup(F&& f, double lo, double hi, std::size_t points) {
    double h = (hi - lo) / static_cast<double>(points - 1);
    double best = -std::numeric_limits<double>::infinity();
    double arg = lo;
    for (std::size_t i = 0; i < points; ++i) {
        double x = lo + h * static_cast<double>(i);
        double v = f(x);
        if (v > best) best = v, arg = x;
    }
    double a = std::max(lo, arg - h), b = std::min(hi, arg + h);
    for (std::size_t i = 0; i <= 100; ++i) best = std::max(best, f(a + (b - a) * static_cast<double>(i) / 100.0));
    return best;
}

// Both sides of the rest point at offsets [lo, hi], clipped to the domain.
inline std::vector<std::pair<double, double>> side_intervals(const ProcessModel& m, const ExitDomain& d, double lo,
                                                             double hi) {
    double x0 = m.rest_point();
    std::vector<std::pair<double, double>> out;
    double right = std::min(hi, d.upper - x0);
    if (right > lo) out.emplace_back(x0 + lo, x0 + right);
    if (!d.one_sided_domain()) {
        double left = std::min(hi, x0 - d.lower);
        if (left > lo) out.emplace_back(x0 - left, x0 - lo);
    }
    return out;
}

} // namespace detail

inline NonlinearConstants nonlinear_constants(const ProcessModel& m, const ExitDomain& d, std::size_t points = 10000) {
    auto [lo, hi] = working_interval(m, d);
    double x0 = m.rest_point(), c = m.c(), sb = m.sigma_bar();
    double k = c / (sb * sb);
    NonlinearConstants k0;
    auto away = [x0](double x) { return std::abs(x - x0) > 1e-9; };
    auto c0f = [&](double x) {
        if (!away(x)) return 0.0;
        double y = x - x0;
        double r1 = m.drift(x) + c * y;
        double r2 = m.diffusion(x) - sb;
        return std::abs(r1) / (y * y) + std::abs(r2) / std::abs(y) * std::abs(2.0 * sb + r2);
    };
    auto c1f = [&](double x) {
        if (!away(x)) return 0.0;
        double y = x - x0;
        return std::abs(-quasipotential(m, x) + k * y * y) / std::abs(y * y * y);
    };
    k0.C0 = detail::grid_sup(c0f, lo, hi, points);
    k0.C1 = detail::grid_sup(c1f, lo, hi, points);
    k0.c_star = detail::grid_sup(
        [&](double x) {
            double s = m.diffusion(x);
            return s * s * std::abs(m.drift_ratio_derivative(x));
        },
        lo, hi, points);
    k0.sigma_star_sq = detail::grid_sup(
        [&](double x) {
            double s = m.diffusion(x);
            return s * s;
        },
        lo, hi, points);
    return k0;
}

// Supremum over the outer region |x - x0| >= H of
// -eps sigma^2 D(b/sigma^2) / (-eps sigma^2 D(b/sigma^2) + b^2/sigma^2).
// Zero when the outer region is empty, which leaves no constraint on eta.
inline double eta0(double eps, const ProcessModel& m, const ExitDomain& d, double H, std::size_t points = 10000) {
    auto ratio = [&](double x) {
        double s = m.diffusion(x);
        double num = -eps * s * s * m.drift_ratio_derivative(x);
        double b = m.drift(x);
        return num / (num + b * b / (s * s));
    };
    double best = -std::numeric_limits<double>::infinity();
    for (auto [a, b] : detail::side_intervals(m, d, H, std::numeric_limits<double>::infinity()))
        best = std::max(best, detail::grid_sup(ratio, a, b, points));
    return std::isfinite(best) ? best : 0.0;
}

// eps such that eta0(eps) = 1/4, by bisection; infinite without an outer region.
inline double epsilon0(const ProcessModel& m, const ExitDomain& d, double H, std::size_t points = 2000) {
    if (detail::side_intervals(m, d, H, std::numeric_limits<double>::infinity()).empty())
        return std::numeric_limits<double>::infinity();
    auto f = [&](double e) { return eta0(e, m, d, H, points) - 0.25; };
    double lo = 1e-10, hi = 1e-3;
    while (f(hi) < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw numerical_error("eta0 never reaches 1/4");
    }
    auto r = boost::math::tools::bisect(f, lo, hi, boost::math::tools::eps_tolerance<double>(40));
    return 0.5 * (r.first + r.second);
}

// Upper bound on the linearisation error of the operator applied to the LQR
// piece, up to the constant C0.
inline double r_term(double t, double eps, const Linearization& lin, const SchemeParams& p) {
    double a = riccati_coefficient(t, p.horizon, lin.c, lin.sigma_bar, p.M);
    double q = a * (p.z + p.xhat * std::exp(lin.c * (p.horizon - t)));
    return q * p.z * p.z + q * q * p.z + a * eps * p.z;
}

struct JIntegrals {
    double J1 = 0.0, J2 = 0.0, J3 = 0.0, J4 = 0.0;
};

// Closed forms of the integrals over s = T - t in [tstar, T] of a + a^2,
// a e^{cs} + 2 a^2 e^{cs}, a^2 e^{2cs} and a.
inline JIntegrals j_integrals(const Linearization& lin, double M, double tstar, double T) {
    double c = lin.c, sb = lin.sigma_bar, sb2 = sb * sb;
    double K = 2.0 * c / M + sb2;
    double rk = std::sqrt(K);
    double wT = std::exp(-2.0 * c * T), ws = std::exp(-2.0 * c * tstar);
    double vT = std::exp(-c * T), vs = std::exp(-c * tstar);
    double dT = K - sb2 * wT, ds = K - sb2 * ws;
    double lnQ = std::log(dT / ds);
    auto atanh_term = [&](double v) { return std::log((1.0 + sb / rk * v) / (1.0 - sb / rk * v)); };
    JIntegrals j;
    j.J1 = (1.0 / (2.0 * sb2)) * (1.0 - c / sb2) * lnQ + (c / (2.0 * sb2 * sb2)) * (K / ds - K / dT);
    j.J2 = (1.0 / (2.0 * sb * rk)) * (1.0 - c / sb2) * (atanh_term(vs) - atanh_term(vT)) +
           (c / (2.0 * sb2 * sb2)) * (2.0 * sb2 * vs / ds - 2.0 * sb2 * vT / dT);
    j.J3 = (c / (2.0 * sb2 * sb2)) * (sb2 / ds - sb2 / dT);
    j.J4 = (1.0 / (2.0 * sb2)) * lnQ;
    return j;
}

inline double r_integral_closed(double eps, const Linearization& lin, const SchemeParams& p) {
    if (p.horizon <= p.tstar) return 0.0;
    auto j = j_integrals(lin, p.M, p.tstar, p.horizon);
    return j.J1 * p.z * p.z * p.z + j.J2 * p.z * p.z * p.xhat + j.J3 * p.z * p.xhat * p.xhat + j.J4 * eps * p.z;
}

inline double r_integral_quadrature(double eps, const Linearization& lin, const SchemeParams& p,
                                    double abs_tol = 1e-12) {
    if (p.horizon <= p.tstar) return 0.0;
    return integrate([&](double t) { return r_term(t, eps, lin, p); }, 0.0, p.horizon - p.tstar, abs_tol, 60);
}

// Infimum over |x - x0| in [z, H] of the nonlinear correction in the middle
// region; the left side is handled in reflected coordinates.
inline double gamma_term(double t, double eps, double eta, const Subsolution& s, std::size_t points = 200) {
    const auto& m = s.model();
    const auto& lin = s.linearization();
    const auto& p = s.params();
    double sb2 = lin.sigma_bar * lin.sigma_bar;
    double lead = p.z - p.xhat * std::exp(lin.c * (t - p.horizon));
    double best = std::numeric_limits<double>::infinity();
    for (auto [a, b] : detail::side_intervals(m, s.domain(), p.z, p.H)) {
        double side = a >= lin.x0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < points; ++i) {
            double x = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
            double diff = side * (-m.action_density(x) + 2.0 * lin.c / sb2 * (x - lin.x0));
            double v = lin.c * eta / (2.0 * sb2) * diff * lead + eta / 8.0 * diff * diff +
                       2.0 * eps * (lin.c / sb2 + m.drift_ratio_derivative(x));
            best = std::min(best, v);
        }
    }
    return std::isfinite(best) ? best : 0.0;
}

struct RegionReport {
    std::string name;
    bool empty = false;
    double worst_margin = std::numeric_limits<double>::infinity();
    double t_at = 0.0, x_at = 0.0;
    double worst_margin_half = std::numeric_limits<double>::infinity();
    double shrink = std::numeric_limits<double>::infinity();
    bool passed = true;
};

struct LemmaReport {
    std::vector<RegionReport> regions;
    NonlinearConstants constants;
    bool passed() const {
        return std::all_of(regions.begin(), regions.end(), [](const RegionReport& r) { return r.passed; });
    }
};

namespace detail {

// Worst margin of the analysis operator against a region's lower bound.
template <class Bound>
void scan_region(const Subsolution& s, double eta, const AnalysisParams& ap, double lo, double hi, Bound&& bound,
                 double& worst, double& t_at, double& x_at) {
    const auto& m = s.model();
    const auto& p = s.params();
    auto form = operator_form(s.kind());
    double t_end = p.horizon - p.tstar;
    for (auto [a, b] : side_intervals(m, s.domain(), lo, hi)) {
        for (std::size_t i = 0; i < ap.t_points; ++i) {
            double t = t_end * static_cast<double>(i) / static_cast<double>(ap.t_points - 1);
            double bt = bound(t);
            for (std::size_t j = 0; j < ap.x_points; ++j) {
                double x = a + (b - a) * static_cast<double>(j) / static_cast<double>(ap.x_points - 1);
                auto ev = s.evaluate(t, x);
                Piece w = scaled(ev.u, 1.0 - eta);
                double g = g_eps_pair(w, ev.u, x, p.epsilon, m, form);
                double margin = g - bt;
                if (margin < worst) worst = margin, t_at = t, x_at = x;
            }
        }
    }
}

} // namespace detail

// Grid certification of the three region lower bounds on [0, T - tstar] for
// the analysis function (1 - eta) U^delta. Negative margins beyond the slack
// are accepted as exponentially negligible only if halving eps shrinks them
// at least twofold.
inline LemmaReport check_region_lemmas(const ProcessModel& model, const ExitDomain& domain, SchemeKind kind,
                                       const SchemeParams& params, const AnalysisParams& ap) {
    if (!uses_lqr_pieces(kind)) throw param_error("region checks need a mollified scheme");
    bool nonlinear = kind == SchemeKind::MollifiedNonlinear;
    LemmaReport rep;
    if (nonlinear) rep.constants = nonlinear_constants(model, domain);
    const double eta = ap.eta;

    auto run = [&](const SchemeParams& p, std::vector<RegionReport>& out) {
        Subsolution s(model, domain, kind, p);
        const auto& lin = s.linearization();
        double c = lin.c, sb2 = lin.sigma_bar * lin.sigma_bar, eps = p.epsilon;
        const auto& k0 = rep.constants;
        auto r_corr = [&](double t) { return nonlinear ? (1.0 - eta) * k0.C0 * r_term(t, eps, lin, p) : 0.0; };
        auto middle = [&](double t) {
            double lead = p.z - p.xhat * std::exp(c * (t - p.horizon));
            if (!nonlinear) return std::min(0.5 * (c * c * eta / (2.0 * sb2) * lead * lead - 2.0 * eps * c), 0.0);
            double inner = (c * c * eta / (2.0 * sb2) * lead * lead - 2.0 * eps * c) / sb2 + gamma_term(t, eps, eta, s);
            return std::min(0.5 * k0.sigma_star_sq * inner, 0.0) - r_corr(t);
        };
        struct Spec {
            const char* name;
            double lo, hi;
        };
        double far = std::numeric_limits<double>::infinity();
        Spec specs[3] = {{"inner [0, z]", 0.0, p.z}, {"middle [z, H]", p.z, p.H}, {"outer [H, A]", p.H, far}};
        for (int r = 0; r < 3; ++r) {
            RegionReport rr;
            rr.name = specs[r].name;
            bool has_points = p.horizon > p.tstar && !detail::side_intervals(model, domain, specs[r].lo, specs[r].hi).empty();
            if (!has_points) {
                rr.empty = true;
                out.push_back(rr);
                continue;
            }
            if (r == 0)
                detail::scan_region(s, eta, ap, specs[r].lo, specs[r].hi, [&](double t) { return -r_corr(t); },
                                    rr.worst_margin, rr.t_at, rr.x_at);
            else if (r == 1)
                detail::scan_region(s, eta, ap, specs[r].lo, specs[r].hi, middle, rr.worst_margin, rr.t_at, rr.x_at);
            else
                detail::scan_region(s, eta, ap, specs[r].lo, specs[r].hi, [](double) { return 0.0; },
                                    rr.worst_margin, rr.t_at, rr.x_at);
            out.push_back(rr);
        }
    };

    run(params, rep.regions);
    bool need_half = std::any_of(rep.regions.begin(), rep.regions.end(),
                                 [&](const RegionReport& r) { return !r.empty && r.worst_margin < -ap.slack; });
    if (need_half) {
        SchemeParams half = params;
        half.epsilon = 0.5 * params.epsilon;
        half.delta = 0.5 * params.delta;
        std::vector<RegionReport> h;
        run(half, h);
        for (std::size_t i = 0; i < rep.regions.size(); ++i) {
            auto& r = rep.regions[i];
            if (r.empty || r.worst_margin >= -ap.slack) continue;
            r.worst_margin_half = h[i].worst_margin;
            r.shrink = h[i].worst_margin >= -ap.slack ? std::numeric_limits<double>::infinity()
                                                      : r.worst_margin / h[i].worst_margin;
            r.passed = r.shrink >= 2.0;
        }
    }
    return rep;
}

struct Hypothesis {
    std::string name;
    bool holds = false;
    std::string detail;
};

struct TheoremBound {
    double bound = 0.0;
    bool uses_first_form = true; // T >= tstar
    double I1 = std::numeric_limits<double>::quiet_NaN();
    double I2 = std::numeric_limits<double>::quiet_NaN();
    double rest_value = 0.0;             // combined subsolution at (0, x0)
    double rest_value_lower_bound = 0.0; // closed-form lower bound for it
    double log_correction = 0.0;
    bool correction_dropped = false; // its argument was not positive
    double r_integral = 0.0;
    double negative_part_integral = 0.0;
    double decay_rate = 0.0;
    double eta0 = std::numeric_limits<double>::quiet_NaN();
    double epsilon0 = std::numeric_limits<double>::quiet_NaN();
    NonlinearConstants constants;
    std::vector<Hypothesis> hypotheses;

    bool hypotheses_hold() const {
        return std::all_of(hypotheses.begin(), hypotheses.end(), [](const Hypothesis& h) { return h.holds; });
    }
};

namespace detail {

// Integral of min(f, 0) over [0, end]: sign scan on a grid, bisection on the
// crossings, then quadrature on each negative stretch.
template <class F>
double negative_part_integral(F&& f, double end, std::size_t scan = 10000) {
    if (end <= 0.0) return 0.0;
    std::vector<double> ts(scan + 1), fs(scan + 1);
    for (std::size_t i = 0; i <= scan; ++i) {
        ts[i] = end * static_cast<double>(i) / static_cast<double>(scan);
        fs[i] = f(ts[i]);
    }
    auto edge = [&](std::size_t i) {
        auto r = boost::math::tools::bisect(f, ts[i], ts[i + 1], boost::math::tools::eps_tolerance<double>(45));
        return 0.5 * (r.first + r.second);
    };
    double total = 0.0;
    std::size_t i = 0;
    while (i < scan) {
        while (i < scan && fs[i] >= 0.0 && fs[i + 1] >= 0.0) ++i;
        if (i >= scan) break;
        double a = fs[i] < 0.0 ? ts[i] : edge(i);
        std::size_t j = i + 1;
        while (j < scan && fs[j] < 0.0 && fs[j + 1] < 0.0) ++j;
        double b = (j >= scan && fs[scan] < 0.0) ? end : (fs[j] < 0.0 ? edge(j) : ts[j]);
        if (b > a) total += integrate([&](double t) { return std::min(f(t), 0.0); }, a, b, 1e-9, 30);
        i = j + 1;
    }
    return total;
}

} // namespace detail

// Lower bound on -eps log(second moment) from the performance theorems. With
// require_hypotheses the first failed hypothesis throws; otherwise they are
// listed in the result.
inline TheoremBound theorem_bound(const ProcessModel& model, const ExitDomain& domain, SchemeKind kind,
                                  const SchemeParams& p, const AnalysisParams& ap, bool require_hypotheses = true) {
    if (!uses_lqr_pieces(kind)) throw param_error("theorem bounds need a mollified scheme");
    bool nonlinear = kind == SchemeKind::MollifiedNonlinear;
    Subsolution s(model, domain, kind, p);
    const auto& lin = s.linearization();
    double c = lin.c, sb2 = lin.sigma_bar * lin.sigma_bar, eps = p.epsilon, eta = ap.eta, T = p.horizon;
    double two_L = s.two_L();
    double K = 2.0 * c / p.M + sb2;
    TheoremBound tb;
    tb.rest_value = s.value(0.0, lin.x0);
    tb.rest_value_lower_bound =
        c * p.xhat * p.xhat / (K - sb2 * std::exp(-2.0 * c * T)) + (two_L - c / sb2 * p.xhat * p.xhat) - p.delta * std::log(3.0);
    double e2 = std::exp(-2.0 * c * T);
    tb.decay_rate = two_L + c * p.xhat * p.xhat / sb2 * e2 / (1.0 - e2);
    tb.uses_first_form = T >= p.tstar;

    auto add = [&](std::string name, bool ok, std::string detail) {
        tb.hypotheses.push_back({std::move(name), ok, std::move(detail)});
    };
    add("delta = 2 eps", std::abs(p.delta - 2.0 * eps) <= 1e-12 * std::max(1.0, eps), "delta=" + std::to_string(p.delta));
    add("z^2 c eta >= 8 eps sigma^2", p.z * p.z * c * eta >= 8.0 * eps * sb2,
        std::to_string(p.z * p.z * c * eta) + " vs " + std::to_string(8.0 * eps * sb2));

    if (!nonlinear) {
        double lo = eps / (eps + c * p.H * p.H / sb2);
        add("eta in (eps/(eps + cH^2/sigma^2), 1/4)", eta > lo && eta < 0.25,
            "eta=" + std::to_string(eta) + ", lower end " + std::to_string(lo));
        add("M >= 4c/sigma^2", p.M >= 4.0 * c / sb2, "M=" + std::to_string(p.M));
        tb.I2 = two_L - c * T * eps;
        if (tb.uses_first_form) {
            double arg = (p.z - std::sqrt(4.0 * eps * sb2 / (c * eta))) / p.xhat;
            if (arg > 0.0) {
                tb.log_correction = eps * std::min(std::log(arg), 0.0);
            } else {
                tb.correction_dropped = true;
                tb.log_correction = 0.0;
            }
            tb.I1 = (1.0 - eta) * tb.rest_value + tb.log_correction;
            tb.bound = 2.0 * tb.I1;
        } else {
            tb.bound = 2.0 * tb.I2;
        }
    } else {
        tb.constants = nonlinear_constants(model, domain);
        const auto& k0 = tb.constants;
        tb.eta0 = eta0(eps, model, domain, p.H);
        tb.epsilon0 = epsilon0(model, domain, p.H);
        add("eta in (eta0(eps), 1/4)", eta > tb.eta0 && eta < 0.25,
            "eta=" + std::to_string(eta) + ", eta0=" + std::to_string(tb.eta0));
        add("M >= 5c/sigma^2", p.M >= 5.0 * c / sb2, "M=" + std::to_string(p.M));
        add("eps < eps0", eps < tb.epsilon0, "eps0=" + std::to_string(tb.epsilon0));
        tb.I2 = two_L - k0.c_star * T * eps;
        if (tb.uses_first_form) {
            auto integrand = [&](double t) {
                double lead = p.z - p.xhat * std::exp(c * (t - T));
                double B = (c * c * eta / (2.0 * sb2) * lead * lead - 2.0 * eps * c) / sb2;
                return B + gamma_term(t, eps, eta, s);
            };
            tb.negative_part_integral = detail::negative_part_integral(integrand, T - p.tstar);
            tb.r_integral = r_integral_closed(eps, lin, p);
            tb.I1 = (1.0 - eta) * tb.rest_value + 0.5 * k0.sigma_star_sq * tb.negative_part_integral -
                    p.tstar * k0.c_star * eps;
            tb.bound = 2.0 * (tb.I1 - (1.0 - eta) * k0.C0 * tb.r_integral);
        } else {
            tb.bound = 2.0 * tb.I2;
        }
    }
    if (require_hypotheses) {
        for (const auto& h : tb.hypotheses)
            if (!h.holds) throw hypothesis_violation("theorem hypothesis failed: " + h.name + " (" + h.detail + ")");
    }
    return tb;
}

} // namespace rexit
