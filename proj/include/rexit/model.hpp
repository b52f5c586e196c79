#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "quadrature.hpp"

namespace rexit {

using RealFn = std::function<double(double)>;

// Coefficients in ascending powers.
struct Polynomial {
    std::vector<double> coef;

    double operator()(double x) const {
        double acc = 0.0;
        for (auto it = coef.rbegin(); it != coef.rend(); ++it) acc = acc * x + *it;
        return acc;
    }

    Polynomial derivative() const {
        Polynomial d;
        for (std::size_t k = 1; k < coef.size(); ++k) d.coef.push_back(static_cast<double>(k) * coef[k]);
        return d;
    }

    Polynomial antiderivative() const {
        Polynomial p{{0.0}};
        for (std::size_t k = 0; k < coef.size(); ++k) p.coef.push_back(coef[k] / static_cast<double>(k + 1));
        return p;
    }

    Polynomial scaled(double s) const {
        Polynomial p = *this;
        for (auto& v : p.coef) v *= s;
        return p;
    }

    // Nonzero coefficients only up to the constant term.
    bool is_constant() const {
        return std::all_of(coef.begin() + std::min<std::size_t>(1, coef.size()), coef.end(),
                           [](double v) { return v == 0.0; });
    }
};

// Central difference with step 1e-6 times the local scale.
inline double central_difference(const RealFn& f, double x) {
    double h = 1e-6 * std::max(1.0, std::abs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct ModelFunctions {
    RealFn drift;
    RealFn diffusion;
    RealFn drift_derivative{};     // optional
    RealFn diffusion_derivative{}; // optional
    RealFn quasipotential{};       // optional closed form of S(x0, x)
    // When set, evaluated inline instead of through the function objects.
    std::optional<Polynomial> drift_poly{};
    std::optional<Polynomial> diffusion_poly{};
};

// dX = b(X) dt + sqrt(eps) sigma(X) dB with a stable rest point x0.
// Immutable after construction.
class ProcessModel {
  public:
    ProcessModel(std::string name, ModelFunctions fns, double rest_point)
        : name_(std::move(name)), f_(std::move(fns)), x0_(rest_point) {
        if (!f_.drift || !f_.diffusion) throw model_error("model '" + name_ + "' needs drift and diffusion");
        double db = drift_derivative(x0_);
        double scale = std::max({1.0, std::abs(db), std::abs(f_.drift(x0_ + 1.0)), std::abs(f_.drift(x0_ - 1.0))});
        if (std::abs(f_.drift(x0_)) > 1e-12 * scale)
            throw model_error("model '" + name_ + "': drift does not vanish at the rest point");
        c_ = -db;
        if (!(c_ > 0.0)) throw model_error("model '" + name_ + "': rest point is not stable (c <= 0)");
        sigma_bar_ = f_.diffusion(x0_);
        if (!(sigma_bar_ > 0.0)) throw model_error("model '" + name_ + "': degenerate diffusion at the rest point");
    }

    const std::string& name() const { return name_; }
    double rest_point() const { return x0_; }
    double c() const { return c_; }
    double sigma_bar() const { return sigma_bar_; }

    double drift(double x) const { return f_.drift_poly ? (*f_.drift_poly)(x) : f_.drift(x); }
    double diffusion(double x) const { return f_.diffusion_poly ? (*f_.diffusion_poly)(x) : f_.diffusion(x); }

    double drift_derivative(double x) const {
        return f_.drift_derivative ? f_.drift_derivative(x) : central_difference(f_.drift, x);
    }
    double diffusion_derivative(double x) const {
        return f_.diffusion_derivative ? f_.diffusion_derivative(x) : central_difference(f_.diffusion, x);
    }
    bool has_analytic_derivatives() const {
        return static_cast<bool>(f_.drift_derivative) && static_cast<bool>(f_.diffusion_derivative);
    }

    // -2 b / sigma^2, the integrand of the quasipotential and the gradient of F1bar up to sign.
    double action_density(double x) const {
        double s = diffusion(x);
        return -2.0 * drift(x) / (s * s);
    }

    // D(b / sigma^2)
    double drift_ratio_derivative(double x) const {
        double s = diffusion(x);
        double s2 = s * s;
        return (drift_derivative(x) * s2 - 2.0 * drift(x) * s * diffusion_derivative(x)) / (s2 * s2);
    }

    bool has_closed_form_quasipotential() const { return static_cast<bool>(f_.quasipotential); }
    const RealFn& closed_form_quasipotential() const { return f_.quasipotential; }

  private:
    std::string name_;
    ModelFunctions f_;
    double x0_;
    double c_ = 0.0;
    double sigma_bar_ = 0.0;
};

struct Linearization {
    double x0;
    double c;
    double sigma_bar;
};

inline Linearization linearize(const ProcessModel& m) { return {m.rest_point(), m.c(), m.sigma_bar()}; }

// Polynomial drift and diffusion. With a constant diffusion the quasipotential
// has a polynomial closed form.
inline ProcessModel polynomial_model(std::string name, Polynomial drift, Polynomial diffusion, double rest_point) {
    ModelFunctions f;
    auto db = drift.derivative();
    auto ds = diffusion.derivative();
    f.drift = [drift](double x) { return drift(x); };
    f.diffusion = [diffusion](double x) { return diffusion(x); };
    f.drift_derivative = [db](double x) { return db(x); };
    f.diffusion_derivative = [ds](double x) { return ds(x); };
    f.drift_poly = drift;
    f.diffusion_poly = diffusion;
    if (diffusion.is_constant()) {
        double s = diffusion(0.0);
        auto prim = drift.scaled(-2.0 / (s * s)).antiderivative();
        double base = prim(rest_point);
        f.quasipotential = [prim, base](double x) { return prim(x) - base; };
    }
    return ProcessModel(std::move(name), std::move(f), rest_point);
}

// b(x) = -c (x - x0), sigma constant.
inline ProcessModel linear_model(double c, double sigma_bar, double rest_point = 0.0) {
    if (!(c > 0.0)) throw model_error("linear model needs c > 0");
    if (!(sigma_bar > 0.0)) throw model_error("linear model needs sigma > 0");
    return polynomial_model("linear", Polynomial{{c * rest_point, -c}}, Polynomial{{sigma_bar}}, rest_point);
}

// b = -V' with V(x) = (x^2 - 1)^2 / 2, unit diffusion, rest point at -1.
inline ProcessModel double_well_model() {
    return polynomial_model("double-well", Polynomial{{0.0, 2.0, 0.0, -2.0}}, Polynomial{{1.0}}, -1.0);
}

enum class DomainKind { TwoSided, OneSided };

struct ExitDomain {
    DomainKind kind = DomainKind::TwoSided;
    double lower = -1.0; // -inf for one-sided
    double upper = 1.0;

    static ExitDomain two_sided(double a1, double a2) { return {DomainKind::TwoSided, a1, a2}; }
    static ExitDomain one_sided(double a) {
        return {DomainKind::OneSided, -std::numeric_limits<double>::infinity(), a};
    }

    bool one_sided_domain() const { return kind == DomainKind::OneSided; }
    bool inside(double x) const { return x > lower && x < upper; }
};

// Interval on which the model is evaluated. One-sided domains get a mirror of
// the right half so that grids stay finite.
inline std::pair<double, double> working_interval(const ProcessModel& m, const ExitDomain& d) {
    if (d.one_sided_domain()) return {m.rest_point() - (d.upper - m.rest_point()), d.upper};
    return {d.lower, d.upper};
}

inline void validate_domain(const ProcessModel& m, const ExitDomain& d, int points = 200) {
    double x0 = m.rest_point();
    if (!(d.upper > x0) || !(d.lower < x0))
        throw model_error("exit domain must contain the rest point strictly inside");
    auto [lo, hi] = working_interval(m, d);
    for (int i = 1; i <= points; ++i) {
        double f = static_cast<double>(i) / points;
        double xr = x0 + f * (hi - x0);
        double xl = x0 - f * (x0 - lo);
        if (!(m.drift(xr) < 0.0)) throw model_error("drift must be negative on (x0, A2]");
        if (!(m.drift(xl) > 0.0)) throw model_error("drift must be positive on [A1, x0)");
        if (!(m.diffusion(xr) > 0.0) || !(m.diffusion(xl) > 0.0))
            throw model_error("diffusion must be positive on the domain");
    }
}

// S(x0, x) = int_{x0}^{x} -2 b / sigma^2.
inline double quasipotential(const ProcessModel& m, double x) {
    if (m.has_closed_form_quasipotential()) return m.closed_form_quasipotential()(x);
    return integrate([&m](double y) { return m.action_density(y); }, m.rest_point(), x, 1e-10, 60);
}

enum class LevelRule {
    Subsolution, // half the smaller endpoint action, keeps 2L - S <= 0 on both endpoints
    Max,         // half the larger endpoint action
};

inline double exit_level(const ProcessModel& m, const ExitDomain& d, LevelRule rule = LevelRule::Subsolution) {
    double right = quasipotential(m, d.upper);
    if (d.one_sided_domain()) return 0.5 * right;
    double left = quasipotential(m, d.lower);
    return 0.5 * (rule == LevelRule::Max ? std::max(left, right) : std::min(left, right));
}

// Cubic Hermite table of S for models without a closed form. Node slopes are
// exact (-2b/sigma^2), so the interpolant is fourth order.
class QuasipotentialTable {
  public:
    QuasipotentialTable() = default;
    QuasipotentialTable(const ProcessModel& m, double lo, double hi, std::size_t nodes = 4097)
        : lo_(lo), h_((hi - lo) / static_cast<double>(nodes - 1)), s_(nodes), ds_(nodes) {
        std::size_t i0 = static_cast<std::size_t>(std::clamp((m.rest_point() - lo) / h_, 0.0, double(nodes - 1)));
        s_[i0] = quasipotential(m, lo + h_ * static_cast<double>(i0));
        auto density = [&m](double y) { return m.action_density(y); };
        for (std::size_t i = i0 + 1; i < nodes; ++i)
            s_[i] = s_[i - 1] + integrate(density, x_at(i - 1), x_at(i), 1e-13, 60);
        for (std::size_t i = i0; i-- > 0;) s_[i] = s_[i + 1] - integrate(density, x_at(i), x_at(i + 1), 1e-13, 60);
        for (std::size_t i = 0; i < nodes; ++i) ds_[i] = m.action_density(x_at(i));
    }

    double operator()(double x) const {
        double u = (x - lo_) / h_;
        auto last = static_cast<double>(s_.size() - 2);
        double fi = std::clamp(std::floor(u), 0.0, last);
        auto i = static_cast<std::size_t>(fi);
        double t = u - fi;
        double t2 = t * t, t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * s_[i] + (t3 - 2 * t2 + t) * h_ * ds_[i] + (-2 * t3 + 3 * t2) * s_[i + 1] +
               (t3 - t2) * h_ * ds_[i + 1];
    }

    bool empty() const { return s_.empty(); }

  private:
    double x_at(std::size_t i) const { return lo_ + h_ * static_cast<double>(i); }
    double lo_ = 0.0;
    double h_ = 1.0;
    std::vector<double> s_;
    std::vector<double> ds_;
};

} // namespace rexit
