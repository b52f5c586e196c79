#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "subsolution.hpp"

namespace rexit {

struct SimConfig {
    double epsilon = 0.1;
    double horizon = 1.0;
    double dt = 1e-3;
    std::uint64_t samples = 1;
    std::uint64_t seed = 1;
    std::uint32_t cell = 0;
    unsigned workers = 1;
    std::optional<double> start; // rest point if unset
    std::uint64_t block_size = 1024;
};

enum class ExitSide { None, Left, Right };

struct TrajectoryOutcome {
    bool exited = false;
    double exit_time = std::numeric_limits<double>::quiet_NaN();
    ExitSide side = ExitSide::None;
    double log_lr = 0.0;
};

struct EstimatorReport {
    std::uint64_t n = 0;
    std::uint64_t hits = 0;
    double estimate = 0.0;
    double second_moment = 0.0;
    double rel_error = std::numeric_limits<double>::quiet_NaN();
    double std_error = std::numeric_limits<double>::quiet_NaN();
    double wall_time_s = 0.0;

    bool zero_hits() const { return hits == 0; }
};

// The horizon is split into an integer number of equal steps no longer than
// roughly dt.
inline std::size_t step_count(double T, double dt) {
    if (!(dt > 0.0) || !(dt <= T)) throw param_error("need 0 < dt <= T");
    return static_cast<std::size_t>(std::max(1.0, std::round(T / dt)));
}

// Euler-Maruyama under the sampling measure with the log likelihood ratio
// accumulated alongside. Exit is checked at grid times only.
inline TrajectoryOutcome simulate_trajectory(const Subsolution& s, const ControlStepper& st, double epsilon, double dt,
                                             double x_start, NormalStream& noise) {
    const auto& m = s.model();
    const double lo = s.domain().lower, hi = s.domain().upper;
    const double sq_dt = std::sqrt(dt);
    const double sq_eps = std::sqrt(epsilon);
    const double inv_sq_eps = 1.0 / sq_eps;
    const double half_inv_eps_dt = 0.5 * dt / epsilon;
    const bool controlled = s.kind() != SchemeKind::None;
    TrajectoryOutcome out;
    double x = x_start, lr = 0.0;
    const std::size_t n = st.steps();
    for (std::size_t k = 0; k < n; ++k) {
        double b = m.drift(x);
        double sig = m.diffusion(x);
        double db = sq_dt * noise.next();
        if (controlled) {
            double u = -sig * st.gradient(k, x, b, sig);
            x += (b + sig * u) * dt + sig * sq_eps * db;
            lr -= u * u * half_inv_eps_dt + u * db * inv_sq_eps;
        } else {
            x += b * dt + sig * sq_eps * db;
        }
        if (!(x > lo && x < hi)) {
            if (!std::isfinite(x) || !std::isfinite(lr))
                throw numerical_error("non-finite state; the step size is too large for this control");
            out.exited = true;
            out.exit_time = dt * static_cast<double>(k + 1);
            out.side = x <= lo ? ExitSide::Left : ExitSide::Right;
            out.log_lr = lr;
            return out;
        }
    }
    if (!std::isfinite(x) || !std::isfinite(lr))
        throw numerical_error("non-finite state; the step size is too large for this control");
    out.log_lr = lr;
    return out;
}

namespace detail {

struct BlockSum {
    double w = 0.0;
    double w2 = 0.0;
    std::uint64_t hits = 0;
};

// Runs job(i) for i in [0, count) on up to `workers` threads. The first
// exception is rethrown after all threads join.
template <class Job>
void parallel_for(std::size_t count, unsigned workers, Job&& job) {
    unsigned nt = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), count));
    if (nt <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                job(i);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!err) err = std::current_exception();
                next.store(count);
            }
        }
    };
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < nt; ++t) pool.emplace_back(run);
    pool.clear();
    if (err) std::rethrow_exception(err);
}

} // namespace detail

// Trajectories are grouped into fixed-size blocks summed in trajectory order;
// block sums are then added in block order, so the result does not depend on
// the worker count.
inline EstimatorReport estimate(const Subsolution& s, const SimConfig& cfg) {
    if (cfg.samples < 1) throw param_error("need at least one sample");
    if (!(cfg.epsilon > 0.0)) throw param_error("epsilon must be positive");
    const auto& p = s.params();
    if (p.epsilon != cfg.epsilon || p.horizon != cfg.horizon)
        throw param_error("simulation epsilon/horizon differ from the scheme's");
    auto t0 = std::chrono::steady_clock::now();
    std::size_t n_steps = step_count(cfg.horizon, cfg.dt);
    double dt = cfg.horizon / static_cast<double>(n_steps);
    auto st = s.stepper(dt, n_steps);
    double x_start = cfg.start ? *cfg.start : s.model().rest_point();
    if (!s.domain().inside(x_start)) throw param_error("start point outside the domain");

    std::uint64_t bs = std::max<std::uint64_t>(1, cfg.block_size);
    std::size_t n_blocks = static_cast<std::size_t>((cfg.samples + bs - 1) / bs);
    std::vector<detail::BlockSum> sums(n_blocks);
    detail::parallel_for(n_blocks, cfg.workers, [&](std::size_t b) {
        detail::BlockSum acc;
        std::uint64_t first = b * bs, last = std::min<std::uint64_t>(cfg.samples, first + bs);
        for (std::uint64_t i = first; i < last; ++i) {
            NormalStream noise(cfg.seed, cfg.cell, i);
            auto o = simulate_trajectory(s, st, cfg.epsilon, dt, x_start, noise);
            if (!o.exited) continue;
            double w = std::exp(o.log_lr);
            acc.w += w;
            acc.w2 += w * w;
            ++acc.hits;
        }
        sums[b] = acc;
    });

    detail::BlockSum tot;
    for (const auto& b : sums) {
        tot.w += b.w;
        tot.w2 += b.w2;
        tot.hits += b.hits;
    }
    EstimatorReport r;
    r.n = cfg.samples;
    r.hits = tot.hits;
    double n = static_cast<double>(cfg.samples);
    r.estimate = tot.w / n;
    r.second_moment = tot.w2 / n;
    if (r.estimate > 0.0) {
        r.rel_error = std::sqrt(std::max(0.0, r.second_moment - r.estimate * r.estimate)) / r.estimate;
        r.std_error = r.rel_error * r.estimate / std::sqrt(n);
    }
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct GridCell {
    double epsilon = 0.0;
    double horizon = 0.0;
    std::optional<EstimatorReport> report;
    std::string error; // set when the cell failed
};

struct GridResult {
    SchemeKind kind = SchemeKind::None;
    std::vector<double> epsilons;
    std::vector<double> horizons;
    std::vector<GridCell> cells; // row-major: epsilon index, then horizon index

    const GridCell& at(std::size_t i, std::size_t j) const { return cells.at(i * horizons.size() + j); }
};

struct GridRequest {
    SchemeKind kind = SchemeKind::MollifiedLinear;
    ParamRule rule;
    LevelRule level = LevelRule::Subsolution;
    std::vector<double> epsilons;
    std::vector<double> horizons;
    std::uint64_t samples = 1;
    std::uint64_t seed = 1;
    double dt = 1e-3;
    unsigned workers = 1;
};

// One estimate per (epsilon, T) cell; the cell index keys the RNG stream.
// A failing cell records its message and the grid carries on.
inline GridResult experiment_grid(const ProcessModel& model, const ExitDomain& domain, const GridRequest& req) {
    if (req.epsilons.empty() || req.horizons.empty()) throw config_error("epsilon and horizon lists must be nonempty");
    GridResult g;
    g.kind = req.kind;
    g.epsilons = req.epsilons;
    g.horizons = req.horizons;
    auto lin = linearize(model);
    for (std::size_t i = 0; i < req.epsilons.size(); ++i) {
        for (std::size_t j = 0; j < req.horizons.size(); ++j) {
            GridCell cell;
            cell.epsilon = req.epsilons[i];
            cell.horizon = req.horizons[j];
            try {
                auto p = make_params(lin, req.kind, req.rule, cell.epsilon, cell.horizon);
                Subsolution s(model, domain, req.kind, p, req.level);
                SimConfig cfg;
                cfg.epsilon = cell.epsilon;
                cfg.horizon = cell.horizon;
                cfg.dt = req.dt;
                cfg.samples = req.samples;
                cfg.seed = req.seed;
                cfg.cell = static_cast<std::uint32_t>(i * req.horizons.size() + j);
                cfg.workers = req.workers;
                cell.report = estimate(s, cfg);
            } catch (const error& e) {
                cell.error = e.what();
            }
            g.cells.push_back(std::move(cell));
        }
    }
    return g;
}

} // namespace rexit
