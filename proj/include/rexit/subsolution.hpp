#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace rexit {

enum class SchemeKind { None, Quasipotential, EpsZeroHJB, MollifiedLinear, MollifiedNonlinear };

inline std::string_view to_string(SchemeKind k) {
    switch (k) {
    case SchemeKind::None: return "none";
    case SchemeKind::Quasipotential: return "quasipotential";
    case SchemeKind::EpsZeroHJB: return "eps-zero-hjb";
    case SchemeKind::MollifiedLinear: return "mollified-linear";
    case SchemeKind::MollifiedNonlinear: return "mollified-nonlinear";
    }
    return "?";
}

inline SchemeKind parse_scheme_kind(std::string_view s) {
    for (auto k : {SchemeKind::None, SchemeKind::Quasipotential, SchemeKind::EpsZeroHJB, SchemeKind::MollifiedLinear,
                   SchemeKind::MollifiedNonlinear})
        if (to_string(k) == s) return k;
    throw config_error("unknown scheme kind '" + std::string(s) + "'");
}

inline bool uses_lqr_pieces(SchemeKind k) {
    return k == SchemeKind::MollifiedLinear || k == SchemeKind::MollifiedNonlinear;
}

// Value with its x-gradient, second x-derivative and time derivative.
struct Piece {
    double value = 0.0;
    double dx = 0.0;
    double dxx = 0.0;
    double dt = 0.0;
};

// Coefficient of the LQR value function with terminal curvature M:
// c e^{2c(t-T)} / (K - sb^2 e^{2c(t-T)}), K = 2c/M + sb^2.
inline double riccati_coefficient(double t, double T, double c, double sb, double M) {
    double e = std::exp(2.0 * c * (t - T));
    double K = 2.0 * c / M + sb * sb;
    return c * e / (K - sb * sb * e);
}

// Its time derivative from the Riccati equation.
inline double riccati_coefficient_dt(double a, double c, double sb) { return 2.0 * c * a + 2.0 * sb * sb * a * a; }

inline double handoff_time(double c, double sb, double M) {
    double q = 2.0 * c / (M * sb * sb);
    if (!(q < 1.0)) throw param_error("M * sigma^2 must exceed 2c for the handoff time (M = " + std::to_string(M) + ")");
    return -(2.0 / c) * std::log(q);
}

struct ParamRule {
    std::optional<double> fixed_M;
    double kappa = 0.4;
    double xhat = 1.0;
    double xhat_exponent = 0.0; // xhat * eps^lambda
    double delta_factor = 2.0;  // delta = factor * eps unless given
    std::optional<double> delta;
    std::optional<double> tstar;
};

struct SchemeParams {
    double epsilon = 0.1;
    double horizon = 1.0;
    double xhat = 1.0;
    double M = 4.0;
    double kappa = 0.4;
    double delta = 0.2;
    double tstar = 0.0;
    double z = 0.0;
    double H = 0.0;
};

inline SchemeParams make_params(const Linearization& lin, SchemeKind kind, const ParamRule& rule, double eps, double T) {
    if (!(eps > 0.0)) throw param_error("epsilon must be positive");
    if (!(T > 0.0)) throw param_error("horizon must be positive");
    SchemeParams p;
    p.epsilon = eps;
    p.horizon = T;
    p.kappa = rule.kappa;
    p.xhat = rule.xhat * std::pow(eps, rule.xhat_exponent);
    double sb2 = lin.sigma_bar * lin.sigma_bar;
    p.M = rule.fixed_M ? *rule.fixed_M : 2.0 * lin.c * p.xhat * p.xhat / (sb2 * std::pow(eps, 2.0 * rule.kappa));
    p.delta = rule.delta ? *rule.delta : rule.delta_factor * eps;
    if (p.delta < 0.0) throw param_error("delta must be nonnegative");
    p.z = p.xhat * std::sqrt(lin.c / (p.M * sb2)) / 2.0;
    p.H = 10.0 * p.z;
    if (uses_lqr_pieces(kind)) {
        if (!(p.M > 0.0) || !(p.xhat > 0.0)) throw param_error("M and xhat must be positive");
        if (!(p.delta > 0.0)) throw param_error("mollified schemes need delta > 0");
        p.tstar = rule.tstar ? *rule.tstar : handoff_time(lin.c, lin.sigma_bar, p.M);
        if (p.tstar < 0.0) throw param_error("tstar must be nonnegative");
    }
    return p;
}

struct CrossingRoots {
    double lower; // offsets from x0
    double upper;
};

// Solutions of F2+ = F1 in the offset y = x - x0.
inline CrossingRoots crossing_roots(double t, const Linearization& lin, double xhat, double M, double T) {
    double sb2 = lin.sigma_bar * lin.sigma_bar;
    double K = 2.0 * lin.c / M + sb2;
    double e1 = std::exp(lin.c * (t - T));
    double disc = 2.0 * lin.c * K / (M * sb2 * sb2) - (2.0 * lin.c / (M * sb2)) * e1 * e1;
    if (disc < 0.0) throw param_error("crossing roots are complex");
    double s = std::sqrt(disc);
    double f = sb2 * xhat / K;
    return {f * (e1 - s), f * (e1 + s)};
}

// Quadratic approximation 2L - (c/sb^2)(x - x0)^2.
inline Piece f1_piece(double x, const Linearization& lin, double two_L) {
    double k = lin.c / (lin.sigma_bar * lin.sigma_bar);
    double y = x - lin.x0;
    return {two_L - k * y * y, -2.0 * k * y, -2.0 * k, 0.0};
}

// 2L - S(x0, x); the gradient is 2b/sigma^2 in closed form.
inline Piece f1_bar_piece(double x, const ProcessModel& m, double two_L, double s_value) {
    return {two_L - s_value, -m.action_density(x), 2.0 * m.drift_ratio_derivative(x), 0.0};
}

inline Piece f1_bar_piece(double x, const ProcessModel& m, double two_L) {
    return f1_bar_piece(x, m, two_L, quasipotential(m, x));
}

// LQR piece centred on x0 + side * xhat e^{c(T-t)}; side is +1 or -1.
inline Piece f2_piece(double t, double x, int side, const Linearization& lin, double two_L, const SchemeParams& p) {
    double a = riccati_coefficient(t, p.horizon, lin.c, lin.sigma_bar, p.M);
    double da = riccati_coefficient_dt(a, lin.c, lin.sigma_bar);
    double s = side * p.xhat * std::exp(lin.c * (p.horizon - t));
    double floor = two_L - lin.c / (lin.sigma_bar * lin.sigma_bar) * p.xhat * p.xhat;
    double d = (x - lin.x0) - s;
    return {a * d * d + floor, 2.0 * a * d, 2.0 * a, da * d * d + 2.0 * a * lin.c * s * d};
}

// One side of the eps = 0 solution with exit distance A on that side.
inline Piece u0_side_piece(double t, double x, int side, const Linearization& lin, double A, double T) {
    double k = lin.c / (lin.sigma_bar * lin.sigma_bar);
    double y = side * (x - lin.x0);
    double e = std::exp(lin.c * (t - T));
    Piece r;
    if (y >= A * e) {
        r = {k * (A * A - y * y), -2.0 * k * y, -2.0 * k, 0.0};
    } else {
        double g = A - y * e;
        double h = 1.0 - e * e;
        r.value = k * g * g / h;
        r.dx = -2.0 * k * e * g / h;
        r.dxx = 2.0 * k * e * e / h;
        r.dt = k * (-2.0 * g * y * lin.c * e / h + g * g * 2.0 * lin.c * e * e / (h * h));
    }
    r.dx *= side;
    return r;
}

// Raw piecewise U0: the + side for x >= x0, the - side below.
inline double u0_piecewise(double t, double x, const Linearization& lin, const ExitDomain& d, double T) {
    if (d.one_sided_domain() || x >= lin.x0) return u0_side_piece(t, x, +1, lin, d.upper - lin.x0, T).value;
    return u0_side_piece(t, x, -1, lin, lin.x0 - d.lower, T).value;
}

inline constexpr std::size_t max_pieces = 4;

struct Mollified {
    Piece u;
    std::array<double, max_pieces> weights{};
    std::size_t count = 0;
};

// Soft minimum -delta log sum exp(-U_i / delta) with weights rho_i and the
// chain-rule derivatives. delta == 0 gives the hard minimum.
inline Mollified mollify(std::span<const Piece> pieces, double delta) {
    if (pieces.empty() || pieces.size() > max_pieces) throw param_error("mollify needs 1..4 pieces");
    Mollified out;
    out.count = pieces.size();
    std::size_t imin = 0;
    for (std::size_t i = 1; i < pieces.size(); ++i)
        if (pieces[i].value < pieces[imin].value) imin = i;
    double vmin = pieces[imin].value;
    if (delta == 0.0) {
        out.u = pieces[imin];
        out.weights[imin] = 1.0;
        return out;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        out.weights[i] = std::exp(-(pieces[i].value - vmin) / delta);
        sum += out.weights[i];
    }
    double g = 0.0, g2 = 0.0, h = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        double w = out.weights[i] / sum;
        out.weights[i] = w;
        g += w * pieces[i].dx;
        g2 += w * pieces[i].dx * pieces[i].dx;
        h += w * pieces[i].dxx;
        tt += w * pieces[i].dt;
    }
    out.u.value = vmin - delta * std::log(sum);
    out.u.dx = g;
    out.u.dxx = h + (g * g - g2) / delta;
    out.u.dt = tt;
    return out;
}

// Precomputed per-step coefficients so that the inner simulation loop costs a
// handful of flops and at most two exponentials per step.
class ControlStepper;

// The combined subsolution for one scheme kind and parameter set. Immutable
// after construction, safe to share between threads.
class Subsolution {
  public:
    struct Evaluation {
        Piece u;
        std::array<Piece, max_pieces> pieces{};
        std::array<double, max_pieces> weights{};
        std::size_t count = 0;
        bool mollified = false;
    };

    Subsolution(ProcessModel model, ExitDomain domain, SchemeKind kind, SchemeParams params,
                LevelRule rule = LevelRule::Subsolution)
        : model_(std::move(model)), domain_(domain), kind_(kind), p_(params), lin_(linearize(model_)) {
        validate_domain(model_, domain_);
        two_L_ = 2.0 * exit_level(model_, domain_, rule);
        if (needs_exact_quasipotential() && !model_.has_closed_form_quasipotential()) {
            auto [lo, hi] = working_interval(model_, domain_);
            double pad = 0.05 * (hi - lo);
            table_ = QuasipotentialTable(model_, lo - pad, hi + pad);
        }
    }

    const ProcessModel& model() const { return model_; }
    const ExitDomain& domain() const { return domain_; }
    SchemeKind kind() const { return kind_; }
    const SchemeParams& params() const { return p_; }
    const Linearization& linearization() const { return lin_; }
    double two_L() const { return two_L_; }
    bool one_sided() const { return domain_.one_sided_domain(); }

    // True when the scheme uses only the quasipotential piece at time t.
    bool in_handoff(double t) const { return uses_lqr_pieces(kind_) && t > p_.horizon - p_.tstar; }

    double s_value(double x) const { return table_.empty() ? quasipotential(model_, x) : table_(x); }

    Piece f1(double x) const { return f1_piece(x, lin_, two_L_); }
    Piece f1_bar(double x) const { return f1_bar_piece(x, model_, two_L_, s_value(x)); }
    Piece f2(double t, double x, int side) const { return f2_piece(t, x, side, lin_, two_L_, p_); }
    Piece base_piece(double x) const { return kind_ == SchemeKind::MollifiedLinear ? f1(x) : f1_bar(x); }

    // The pieces entering the mollification at (t, x), ignoring the handoff.
    std::size_t pieces_at(double t, double x, std::array<Piece, max_pieces>& out) const {
        if (kind_ == SchemeKind::EpsZeroHJB) {
            out[0] = u0_side_piece(t, x, +1, lin_, domain_.upper - lin_.x0, p_.horizon);
            if (one_sided()) return 1;
            out[1] = u0_side_piece(t, x, -1, lin_, lin_.x0 - domain_.lower, p_.horizon);
            return 2;
        }
        out[0] = base_piece(x);
        if (!uses_lqr_pieces(kind_)) return 1;
        out[1] = f2(t, x, +1);
        if (one_sided()) return 2;
        out[2] = f2(t, x, -1);
        return 3;
    }

    Evaluation evaluate(double t, double x) const {
        Evaluation ev;
        if (kind_ == SchemeKind::None) {
            ev.count = 0;
            return ev;
        }
        if (kind_ == SchemeKind::Quasipotential || in_handoff(t)) {
            ev.pieces[0] = base_piece(x);
            ev.weights[0] = 1.0;
            ev.count = 1;
            ev.u = ev.pieces[0];
            return ev;
        }
        ev.count = pieces_at(t, x, ev.pieces);
        auto m = mollify(std::span<const Piece>(ev.pieces.data(), ev.count), p_.delta);
        ev.u = m.u;
        ev.weights = m.weights;
        ev.mollified = true;
        return ev;
    }

    double value(double t, double x) const { return evaluate(t, x).u.value; }
    double gradient(double t, double x) const { return kind_ == SchemeKind::None ? 0.0 : evaluate(t, x).u.dx; }
    double control(double t, double x) const { return -model_.diffusion(x) * gradient(t, x); }

    ControlStepper stepper(double dt, std::size_t steps) const;

  private:
    bool needs_exact_quasipotential() const {
        return kind_ == SchemeKind::Quasipotential || kind_ == SchemeKind::MollifiedNonlinear;
    }

    ProcessModel model_;
    ExitDomain domain_;
    SchemeKind kind_;
    SchemeParams p_;
    Linearization lin_;
    double two_L_ = 0.0;
    QuasipotentialTable table_;
};

class ControlStepper {
  public:
    ControlStepper(const Subsolution& s, double dt, std::size_t steps) : s_(&s), steps_(steps) {
        const auto& lin = s.linearization();
        const auto& p = s.params();
        kind_ = s.kind();
        x0_ = lin.x0;
        k_ = lin.c / (lin.sigma_bar * lin.sigma_bar);
        two_L_ = s.two_L();
        delta_ = p.delta;
        inv_delta_ = delta_ > 0.0 ? 1.0 / delta_ : 0.0;
        two_sided_ = !s.one_sided();
        if (uses_lqr_pieces(kind_)) {
            floor_ = two_L_ - k_ * p.xhat * p.xhat;
            a_.resize(steps);
            shift_.resize(steps);
            active_.resize(steps);
            for (std::size_t i = 0; i < steps; ++i) {
                double t = dt * static_cast<double>(i);
                active_[i] = !s.in_handoff(t);
                a_[i] = riccati_coefficient(t, p.horizon, lin.c, lin.sigma_bar, p.M);
                shift_[i] = p.xhat * std::exp(lin.c * (p.horizon - t));
            }
        } else if (kind_ == SchemeKind::EpsZeroHJB) {
            a_plus_ = s.domain().upper - x0_;
            a_minus_ = x0_ - s.domain().lower;
            a_.resize(steps);
            shift_.resize(steps);
            for (std::size_t i = 0; i < steps; ++i) {
                double e = std::exp(lin.c * (dt * static_cast<double>(i) - p.horizon));
                a_[i] = e;
                shift_[i] = 1.0 / (1.0 - e * e);
            }
        }
    }

    std::size_t steps() const { return steps_; }

    // Gradient of the combined subsolution at step index k; b is the drift at x,
    // passed in because the caller needs it anyway.
    double gradient(std::size_t k, double x, double b, double sigma) const {
        switch (kind_) {
        case SchemeKind::None: return 0.0;
        case SchemeKind::Quasipotential: return 2.0 * b / (sigma * sigma);
        case SchemeKind::EpsZeroHJB: return eps_zero_gradient(k, x);
        case SchemeKind::MollifiedLinear:
        case SchemeKind::MollifiedNonlinear: return mollified_gradient(k, x, b, sigma);
        }
        return 0.0;
    }

  private:
    // Unnormalised weight of a piece lying `gap` above the minimum. Gaps beyond
    // 40 delta carry relative weight below 1e-17 and are dropped.
    double weight(double gap) const {
        if (gap == 0.0) return 1.0;
        double r = gap * inv_delta_;
        return r > 40.0 ? 0.0 : std::exp(-r);
    }

    double mollified_gradient(std::size_t k, double x, double b, double sigma) const {
        double y = x - x0_;
        bool linear = kind_ == SchemeKind::MollifiedLinear;
        double d1 = linear ? -2.0 * k_ * y : 2.0 * b / (sigma * sigma);
        if (!active_[k]) return d1;
        double v1 = linear ? two_L_ - k_ * y * y : two_L_ - s_->s_value(x);
        double a = a_[k], s = shift_[k];
        double dp = y - s;
        double vp = a * dp * dp + floor_;
        double gp = 2.0 * a * dp;
        if (!two_sided_) {
            double m = std::min(v1, vp);
            double w1 = weight(v1 - m), wp = weight(vp - m);
            return (w1 * d1 + wp * gp) / (w1 + wp);
        }
        double dm = y + s;
        double vm = a * dm * dm + floor_;
        double gm = 2.0 * a * dm;
        double m = std::min({v1, vp, vm});
        double w1 = weight(v1 - m), wp = weight(vp - m), wm = weight(vm - m);
        return (w1 * d1 + wp * gp + wm * gm) / (w1 + wp + wm);
    }

    // Gradient and value of one side of U0 using the tabulated e^{c(t-T)}.
    void u0_side(double y, double A, double e, double inv, double& v, double& g) const {
        if (y >= A * e) {
            v = k_ * (A * A - y * y);
            g = -2.0 * k_ * y;
        } else {
            double q = A - y * e;
            v = k_ * q * q * inv;
            g = -2.0 * k_ * e * q * inv;
        }
    }

    double eps_zero_gradient(std::size_t k, double x) const {
        double y = x - x0_;
        double e = a_[k], inv = shift_[k];
        double vp, gp;
        u0_side(y, a_plus_, e, inv, vp, gp);
        if (!two_sided_) return gp;
        double vm, gm;
        u0_side(-y, a_minus_, e, inv, vm, gm);
        gm = -gm;
        if (delta_ == 0.0) return vp <= vm ? gp : gm;
        double m = std::min(vp, vm);
        double wp = weight(vp - m), wm = weight(vm - m);
        return (wp * gp + wm * gm) / (wp + wm);
    }

    const Subsolution* s_;
    std::size_t steps_;
    SchemeKind kind_;
    double x0_ = 0.0, k_ = 0.0, two_L_ = 0.0, delta_ = 0.0, inv_delta_ = 0.0, floor_ = 0.0;
    double a_plus_ = 0.0, a_minus_ = 0.0;
    bool two_sided_ = true;
    std::vector<double> a_, shift_;
    std::vector<char> active_;
};

inline ControlStepper Subsolution::stepper(double dt, std::size_t steps) const { return ControlStepper(*this, dt, steps); }

} // namespace rexit
