#pragma once

// Time integration of the coupled system with an embedded Dormand-Prince pair,
// and classification of where trajectories end up.

#include "metapatch/continuation.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"
#include "metapatch/model.hpp"
#include "metapatch/network.hpp"
#include "metapatch/persist.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace metapatch {

struct Tolerances {
    double rel = 1e-8;
    double abs = 1e-10;
    /// undershoot below -negativity rejects the step
    double negativity = 1e-9;
    /// relative sup-norm radius for matching a terminal state to an equilibrium
    double classify = 1e-4;
    std::size_t max_steps = 2000000;
};

inline constexpr double default_t_end = 5000.0;

/// An equilibrium of the coupled system at a fixed alpha, named by its uncoupled pattern.
struct LabeledEquilibrium {
    EquilibriumPattern pattern;
    Vec X;
    Stability stability = Stability::marginal;

    std::string label() const { return pattern.label(); }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::string terminal_classification = "unresolved";
    std::optional<EquilibriumPattern> terminal_pattern;
    double min_component = 0.0;
    std::size_t rejected_negative = 0;

    const Vec& terminal() const { return states.back(); }
};

/**
 * Equilibria reachable by continuation from alpha = 0 that are still in the cone at alpha.
 * Branches that fold or exit before alpha are left out.
 */
inline std::vector<LabeledEquilibrium> equilibrium_catalog(const std::vector<RegionProfile>& regions,
                                                           const MobilityNetwork& net, double alpha)
{
    std::vector<double> grid = default_alpha_grid(std::max(alpha, 0.0));
    grid.erase(std::remove_if(grid.begin(), grid.end(), [&](double a) { return a >= alpha * (1.0 - 1e-12); }),
               grid.end());
    grid.push_back(alpha);
    std::vector<LabeledEquilibrium> out;
    for (const auto& rec : continue_all(regions, net, grid)) {
        const auto* p = rec.at(alpha);
        if (p && !rec.exit_alpha) {
            out.push_back({rec.pattern, p->X, p->stability});
        }
    }
    return out;
}

/// Nearest catalog entry within the relative sup-norm radius, if any.
inline const LabeledEquilibrium* classify_state(const Vec& X, const std::vector<LabeledEquilibrium>& catalog,
                                                double radius)
{
    const LabeledEquilibrium* best = nullptr;
    double best_dist = 0.0;
    for (const auto& e : catalog) {
        if (e.X.size() != X.size()) {
            throw DomainError("classify_state: dimension mismatch");
        }
        const double dist = (X - e.X).lpNorm<Eigen::Infinity>() / std::max(1.0, e.X.lpNorm<Eigen::Infinity>());
        if (dist <= radius && (!best || dist < best_dist)) {
            best = &e;
            best_dist = dist;
        }
    }
    return best;
}

namespace detail {

using ode_state = std::vector<double>;

struct CoupledRhs {
    const std::vector<PatchModel>* models;
    const MobilityNetwork* net;
    Mat travel;
    int d;

    void operator()(const ode_state& s, ode_state& ds, double /*t*/) const
    {
        const Eigen::Map<const Vec> X(s.data(), static_cast<Eigen::Index>(s.size()));
        Vec r = travel * X;
        for (int i = 0; i < net->r; ++i) {
            r.segment(i * d, d) +=
                patch_residual((*models)[i], PatchState::unpack(X.segment(i * d, d), net->n, net->m, net->k));
        }
        ds.assign(r.data(), r.data() + r.size());
    }
};

} // namespace detail

/**
 * Integrate the coupled system from X0 to t_end. Every accepted step is recorded.
 * The terminal state is matched against `catalog`; no match leaves it "unresolved".
 */
inline Trajectory integrate(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                            const Vec& X0, double t_end, const Tolerances& tol = {},
                            const std::vector<LabeledEquilibrium>& catalog = {})
{
    namespace ode = boost::numeric::odeint;
    detail::require_models(models, net);
    const int d = net.n + net.m + net.k;
    if (X0.size() != net.r * d) {
        throw DomainError("integrate: initial state has length " + std::to_string(X0.size()) + ", expected " +
                          std::to_string(net.r * d));
    }
    if (!X0.allFinite() || X0.minCoeff() < 0.0) {
        throw DomainError("integrate: initial state must be finite and nonnegative");
    }
    if (!(t_end >= 0.0) || !(alpha >= 0.0)) {
        throw DomainError("integrate: t_end and alpha must be nonnegative");
    }
    detail::CoupledRhs rhs{&models, &net, alpha * travel_operator(net), d};
    // inadmissible data is reported before any stepping
    detail::ode_state s(X0.data(), X0.data() + X0.size());
    detail::ode_state ds;
    rhs(s, ds, 0.0);

    auto stepper = ode::make_controlled(tol.abs, tol.rel, ode::runge_kutta_dopri5<detail::ode_state>());
    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(X0);
    traj.min_component = X0.minCoeff();

    double t = 0.0;
    double dt = std::min(0.01, std::max(t_end, 1e-12));
    detail::ode_state trial;
    std::size_t steps = 0;
    while (t < t_end) {
        if (++steps > tol.max_steps) {
            throw NumericalError("integrate: step budget exhausted at t = " + std::to_string(t));
        }
        dt = std::min(dt, t_end - t);
        if (dt < 1e-14 * std::max(1.0, t)) {
            throw NumericalError("integrate: step size underflow at t = " + std::to_string(t) + " (stiff failure)");
        }
        trial = s;
        double t_trial = t;
        double dt_trial = dt;
        if (stepper.try_step(rhs, trial, t_trial, dt_trial) == ode::fail) {
            dt = dt_trial;
            continue;
        }
        const double lowest = *std::min_element(trial.begin(), trial.end());
        if (lowest < -tol.negativity) {
            ++traj.rejected_negative;
            dt *= 0.5;
            continue;
        }
        s.swap(trial);
        t = t_trial;
        dt = dt_trial;
        traj.times.push_back(t);
        traj.states.push_back(Eigen::Map<const Vec>(s.data(), static_cast<Eigen::Index>(s.size())));
        traj.min_component = std::min(traj.min_component, lowest);
    }
    if (const auto* e = classify_state(traj.states.back(), catalog, tol.classify)) {
        traj.terminal_classification = e->label();
        traj.terminal_pattern = e->pattern;
    }
    return traj;
}

struct InitialState {
    std::string label;
    Vec X;
};

struct ProbeResult {
    std::string label;
    std::string classification;
    std::optional<EquilibriumPattern> pattern;
    Vec terminal;
    double min_component = 0.0;
};

/// Terminal classification of each initial state, in input order.
inline std::vector<ProbeResult> basin_probe(const std::vector<RegionProfile>& regions, const MobilityNetwork& net,
                                            double alpha, const std::vector<InitialState>& initial_set,
                                            double t_end = default_t_end, const Tolerances& tol = {})
{
    if (initial_set.empty()) {
        return {};
    }
    const auto catalog = equilibrium_catalog(regions, net, alpha);
    const auto models = models_of(regions);
    std::vector<ProbeResult> out(initial_set.size());
    parallel_for(initial_set.size(), [&](std::size_t i) {
        const auto traj = integrate(models, net, alpha, initial_set[i].X, t_end, tol, catalog);
        out[i] = {initial_set[i].label, traj.terminal_classification, traj.terminal_pattern, traj.terminal(),
                  traj.min_component};
    });
    return out;
}

/**
 * HIV initial state with S = 10, S_V = 5 and the given Y1, W1 per region; every other class starts at 0.
 */
inline Vec hiv_initial_state(const std::vector<double>& Y1, const std::vector<double>& W1, double S = 10.0,
                             double SV = 5.0)
{
    if (Y1.size() != W1.size() || Y1.empty()) {
        throw DomainError("hiv_initial_state: Y1 and W1 need one entry per region");
    }
    const int r = static_cast<int>(Y1.size());
    Vec X = Vec::Zero(7 * r);
    for (int i = 0; i < r; ++i) {
        X(7 * i + 0) = Y1[i];
        X(7 * i + 2) = W1[i];
        X(7 * i + 4) = S;
        X(7 * i + 5) = SV;
    }
    return X;
}

} // namespace metapatch
