#pragma once

// Steady states of a single patch, local reproduction numbers, the fold of the
// HIV backward bifurcation, and the product patterns of the uncoupled system.

#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"
#include "metapatch/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace metapatch {

enum class Stability { stable, unstable, marginal };
enum class EquilibriumKind { disease_free, endemic };
enum class Regime { below_Rc, backward_window, above_one };

inline const char* to_string(Stability s)
{
    switch (s) {
    case Stability::stable:
        return "stable";
    case Stability::unstable:
        return "unstable";
    case Stability::marginal:
        return "marginal";
    }
    return "?";
}

inline const char* to_string(EquilibriumKind k)
{
    return k == EquilibriumKind::disease_free ? "disease_free" : "endemic";
}

inline const char* to_string(Regime r)
{
    switch (r) {
    case Regime::below_Rc:
        return "below_Rc";
    case Regime::backward_window:
        return "backward_window";
    case Regime::above_one:
        return "above_one";
    }
    return "?";
}

/// |max real eigenvalue| below this counts as marginal.
inline constexpr double stability_margin = 1e-9;

inline Stability classify_stability(double max_real_eig)
{
    if (std::abs(max_real_eig) < stability_margin) {
        return Stability::marginal;
    }
    return max_real_eig < 0.0 ? Stability::stable : Stability::unstable;
}

struct PatchEquilibrium {
    PatchState state;
    EquilibriumKind kind = EquilibriumKind::disease_free;
    int index = 0; ///< 0 for the DFE, 1..e for endemic states ordered by force of infection
    Stability stability = Stability::marginal;
    bool jac_invertible = false;
    double max_real_eig = 0.0;
};

/// Fill stability fields from the patch Jacobian.
inline void classify_equilibrium(const PatchModel& model, PatchEquilibrium& eq)
{
    const Mat J = patch_jacobian(model, eq.state);
    eq.max_real_eig = spectral_abscissa(J);
    eq.stability = classify_stability(eq.max_real_eig);
    eq.jac_invertible = condition_estimate(J) < singular_condition_threshold;
}

namespace detail {

inline Vec solve_dfe_susceptibles(const PatchModel& model)
{
    if (!model.custom_g) {
        return solve_linear(model.recruit_A, -model.recruit_b);
    }
    // damped Newton on g(0, y, 0) = 0
    const Vec x0 = Vec::Zero(model.n), z0 = Vec::Zero(model.k);
    Vec y = Vec::Ones(model.m);
    auto g = [&](const Vec& yy) { return model.custom_g(x0, yy, z0); };
    for (int it = 0; it < 200; ++it) {
        const Vec r = g(y);
        if (r.lpNorm<Eigen::Infinity>() < 1e-13) {
            break;
        }
        Mat J(model.m, model.m);
        for (int c = 0; c < model.m; ++c) {
            const double h = 1e-6 * (1.0 + std::abs(y(c)));
            Vec yp = y, ym = y;
            yp(c) += h;
            ym(c) -= h;
            J.col(c) = (g(yp) - g(ym)) / (2.0 * h);
        }
        const Vec step = solve_linear(J, -r);
        double t = 1.0;
        while (t > 1e-6 && g(y + t * step).norm() >= r.norm()) {
            t *= 0.5;
        }
        y += t * step;
    }
    if (g(y).lpNorm<Eigen::Infinity>() > 1e-9) {
        throw NumericalError("disease-free susceptible state did not converge");
    }
    return y;
}

} // namespace detail

/// Disease-free equilibrium (0, y0, 0) with its stability class.
inline PatchEquilibrium disease_free_equilibrium(const PatchModel& model)
{
    const Vec y0 = detail::solve_dfe_susceptibles(model);
    if (!(y0.minCoeff() > 0.0)) {
        throw NumericalError("disease-free susceptible state is not strictly positive");
    }
    PatchEquilibrium eq;
    eq.state = {Vec::Zero(model.n), y0, Vec::Zero(model.k)};
    eq.kind = EquilibriumKind::disease_free;
    eq.index = 0;
    classify_equilibrium(model, eq);
    return eq;
}

/// Spectral radius of F(DFE) V^{-1}.
inline double local_reproduction_number(const PatchModel& model)
{
    const Vec y0 = detail::solve_dfe_susceptibles(model);
    const PatchState dfe{Vec::Zero(model.n), y0, Vec::Zero(model.k)};
    const Mat F = new_infection_operator(model, dfe);
    const Mat Vinv = Eigen::FullPivLU<Mat>(model.V).inverse();
    return spectral_radius(F * Vinv);
}

// ---------------------------------------------------------------------------
// HIV scalar reduction

/// Full patch state parameterized by the force of infection.
inline PatchState lift_hiv_state(const HivParams& hp, double lambda)
{
    const double SV = hp.p * hp.Lambda / (hp.mu + hp.q * lambda + hp.gamma);
    const double S = ((1.0 - hp.p) * hp.Lambda + hp.gamma * SV) / (hp.mu + lambda);
    Vec x(4);
    x << hp.rho1 * lambda * S / (hp.mu + hp.sigma1), hp.rho2 * lambda * S / (hp.mu + hp.sigma2),
        hp.pi1 * hp.q * lambda * SV / (hp.mu + hp.theta1 * hp.sigma1),
        hp.pi2 * hp.q * lambda * SV / (hp.mu + hp.theta2 * hp.sigma2);
    Vec y(2);
    y << S, SV;
    Vec z(1);
    z(0) = (hp.sigma1 * x(0) + hp.sigma2 * x(1) + hp.theta1 * hp.sigma1 * x(2) + hp.theta2 * hp.sigma2 * x(3)) /
           (hp.delta + hp.mu);
    return {x, y, z};
}

/// lambda minus the force of infection generated by the lifted state.
inline double hiv_lambda_residual(const HivParams& hp, double lambda)
{
    const PatchState s = lift_hiv_state(hp, lambda);
    const double N = s.y.sum() + s.x.sum();
    const double force =
        (hp.beta1 * (s.x(0) + hp.s1 * s.x(2)) + hp.beta2 * (s.x(1) + hp.s2 * s.x(3))) / N;
    return lambda - force;
}

struct LambdaScan {
    int points = 4000;
    double lo = 1e-8;
    double hi = 50.0;
    double tol = 1e-12;
};

namespace detail {

template <class H>
double bisect_root(const H& h, double a, double b, double fa, double tol)
{
    for (int it = 0; it < 200 && b - a > tol; ++it) {
        const double c = 0.5 * (a + b);
        const double fc = h(c);
        if (fc == 0.0) {
            return c;
        }
        if ((fc < 0.0) == (fa < 0.0)) {
            a = c;
            fa = fc;
        }
        else {
            b = c;
        }
    }
    return 0.5 * (a + b);
}

/// Minimizes sign * h over [a, b] by golden section in log-lambda; returns the argmin.
template <class H>
double golden_extremum(const H& h, double a, double b, double sign)
{
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double la = std::log(a), lb = std::log(b);
    double l1 = lb - g * (lb - la), l2 = la + g * (lb - la);
    double f1 = sign * h(std::exp(l1)), f2 = sign * h(std::exp(l2));
    for (int it = 0; it < 120 && lb - la > 1e-14; ++it) {
        if (f1 < f2) {
            lb = l2;
            l2 = l1;
            f2 = f1;
            l1 = lb - g * (lb - la);
            f1 = sign * h(std::exp(l1));
        }
        else {
            la = l1;
            l1 = l2;
            f1 = f2;
            l2 = la + g * (lb - la);
            f2 = sign * h(std::exp(l2));
        }
    }
    return std::exp(0.5 * (la + lb));
}

} // namespace detail

/**
 * Positive roots of a scalar function on a log-spaced grid.
 *
 * Sign changes are bisected. A grid point where |h| has a local minimum without
 * a sign change is refined by golden section, so a close root pair near a fold
 * is not lost between grid points.
 */
template <class H>
std::vector<double> scan_positive_roots(const H& h, const LambdaScan& scan = {})
{
    const int N = scan.points;
    std::vector<double> lam(static_cast<std::size_t>(N)), val(static_cast<std::size_t>(N));
    const double llo = std::log(scan.lo), lhi = std::log(scan.hi);
    for (int i = 0; i < N; ++i) {
        lam[i] = std::exp(llo + (lhi - llo) * i / (N - 1));
        val[i] = h(lam[i]);
    }
    std::vector<double> roots;
    for (int i = 0; i + 1 < N; ++i) {
        if (val[i] == 0.0) {
            roots.push_back(lam[i]);
            continue;
        }
        if ((val[i] < 0.0) != (val[i + 1] < 0.0) && val[i + 1] != 0.0) {
            roots.push_back(detail::bisect_root(h, lam[i], lam[i + 1], val[i], scan.tol));
        }
        else if (i > 0 && val[i - 1] != 0.0 && val[i + 1] != 0.0 && (val[i - 1] < 0.0) == (val[i] < 0.0) &&
                 (val[i + 1] < 0.0) == (val[i] < 0.0) && std::abs(val[i]) < std::abs(val[i - 1]) &&
                 std::abs(val[i]) <= std::abs(val[i + 1])) {
            const double sign = val[i] > 0.0 ? 1.0 : -1.0;
            const double c = detail::golden_extremum(h, lam[i - 1], lam[i + 1], sign);
            const double hc = h(c);
            if ((hc < 0.0) != (val[i] < 0.0) && hc != 0.0) {
                roots.push_back(detail::bisect_root(h, lam[i - 1], c, val[i - 1], scan.tol));
                roots.push_back(detail::bisect_root(h, c, lam[i + 1], hc, scan.tol));
            }
        }
    }
    if (val[N - 1] == 0.0) {
        roots.push_back(lam[N - 1]);
    }
    std::sort(roots.begin(), roots.end());
    return roots;
}

struct BifurcationReport {
    double R_local = 0.0;
    Regime regime = Regime::below_Rc;
    std::vector<double> endemic_lambdas;
    std::optional<double> R_c_estimate;
};

inline std::vector<double> hiv_endemic_lambdas(const HivParams& hp, const LambdaScan& scan = {})
{
    return scan_positive_roots([&](double l) { return hiv_lambda_residual(hp, l); }, scan);
}

/// Endemic force-of-infection roots of the HIV patch and its bifurcation regime.
inline BifurcationReport endemic_equilibria_hiv(const HivParams& hp, const LambdaScan& scan = {})
{
    hp.validate();
    BifurcationReport report;
    report.R_local = local_reproduction_number(make_hiv(hp));
    report.endemic_lambdas = hiv_endemic_lambdas(hp, scan);
    const auto count = report.endemic_lambdas.size();
    if (report.R_local > 1.0 && count == 1) {
        report.regime = Regime::above_one;
    }
    else if (report.R_local < 1.0 && count == 2) {
        report.regime = Regime::backward_window;
    }
    else if (report.R_local < 1.0 && count == 0) {
        report.regime = Regime::below_Rc;
    }
    else {
        throw NumericalError("endemic_equilibria_hiv: " + std::to_string(count) +
                             " endemic roots at R = " + std::to_string(report.R_local) +
                             " do not match any bifurcation regime");
    }
    return report;
}

/**
 * Reproduction number at the fold of the backward bifurcation.
 *
 * Bisects the parameter `name` on [lo, hi] between a value with no endemic root
 * and one with two, to relative width 1e-6.
 */
inline double estimate_Rc(const HivParams& hp, const std::string& name, double lo, double hi,
                          const LambdaScan& scan = {})
{
    if (!(lo < hi)) {
        throw DomainError("estimate_Rc: empty parameter range");
    }
    auto count_at = [&](double v) {
        HivParams trial = hp;
        trial.at(name) = v;
        return hiv_endemic_lambdas(trial, scan).size();
    };
    auto R_at = [&](double v) {
        HivParams trial = hp;
        trial.at(name) = v;
        return local_reproduction_number(make_hiv(trial));
    };
    const auto c_lo = count_at(lo), c_hi = count_at(hi);
    const bool lo_is_zero = c_lo == 0 && c_hi == 2;
    const bool hi_is_zero = c_lo == 2 && c_hi == 0;
    if (!lo_is_zero && !hi_is_zero) {
        throw NumericalError("estimate_Rc: no fold in range (root counts " + std::to_string(c_lo) + " and " +
                             std::to_string(c_hi) + ")");
    }
    double a = lo, b = hi;
    while (b - a > 1e-6 * std::max(std::abs(a), std::abs(b))) {
        const double c = 0.5 * (a + b);
        const bool zero_here = count_at(c) == 0;
        if (zero_here == lo_is_zero) {
            a = c;
        }
        else {
            b = c;
        }
    }
    return R_at(0.5 * (a + b));
}

// ---------------------------------------------------------------------------
// generic endemic search

struct GenericEndemicResult {
    std::vector<PatchEquilibrium> roots;
    int seeds_tried = 0;
    int seeds_discarded = 0;
};

namespace detail {

/// Damped Newton on the patch residual; nullopt on failure or an inadmissible limit.
inline std::optional<Vec> newton_patch(const PatchModel& model, Vec v)
{
    const int n = model.n, m = model.m, k = model.k;
    auto admissible = [&](const Vec& w) { return w.segment(n, m).minCoeff() > 0.0; };
    auto residual = [&](const Vec& w) { return patch_residual(model, PatchState::unpack(w, n, m, k)); };
    Vec r = residual(v);
    for (int it = 0; it < 100; ++it) {
        const double rn = r.lpNorm<Eigen::Infinity>();
        if (rn < 1e-12) {
            break;
        }
        const Mat J = patch_jacobian(model, PatchState::unpack(v, n, m, k));
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible()) {
            return std::nullopt;
        }
        const Vec step = lu.solve(-r);
        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
            const Vec trial = v + t * step;
            if (!admissible(trial)) {
                continue;
            }
            const Vec rt = residual(trial);
            if (rt.squaredNorm() <= (1.0 - 1e-4 * t) * r.squaredNorm()) {
                v = trial;
                r = rt;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            return std::nullopt;
        }
    }
    if (!(r.lpNorm<Eigen::Infinity>() <= 1e-9)) {
        return std::nullopt;
    }
    return v;
}

inline double total_incidence(const PatchModel& model, const PatchState& s)
{
    return s.y.dot(transmission_matrix(model, s) * s.x);
}

} // namespace detail

/**
 * Endemic equilibria by multi-start damped Newton.
 *
 * Seeds form a tensor grid of {0.1, 1, 10} times the disease-free population per
 * compartment (per block when the state has more than 9 compartments), plus a
 * per-block grid down to 1e-4 so that small-prevalence roots near a fold are seeded too.
 */
inline GenericEndemicResult endemic_equilibria_generic(const PatchModel& model)
{
    const int n = model.n, m = model.m, k = model.k, d = n + m + k;
    const double scale = detail::solve_dfe_susceptibles(model).sum();
    std::vector<Vec> seeds;
    auto add_grid = [&](const std::vector<double>& factors, bool per_compartment) {
        const int nf = static_cast<int>(factors.size());
        const int axes = per_compartment ? d : 3;
        long total = 1;
        for (int a = 0; a < axes; ++a) {
            total *= nf;
        }
        for (long code = 0; code < total; ++code) {
            Vec seed(d);
            long c = code;
            std::vector<double> f(static_cast<std::size_t>(axes));
            for (int a = 0; a < axes; ++a) {
                f[a] = factors[c % nf];
                c /= nf;
            }
            for (int i = 0; i < d; ++i) {
                const int axis = per_compartment ? i : (i < n ? 0 : (i < n + m ? 1 : 2));
                seed(i) = f[axis] * scale;
            }
            seeds.push_back(seed);
        }
    };
    add_grid({0.1, 1.0, 10.0}, d <= 9);
    add_grid({1e-4, 1e-3, 1e-2, 0.1, 1.0}, false);

    GenericEndemicResult result;
    // the disease-free state is a known root; seeds that collapse onto it are discarded
    const Vec dfe = PatchState{Vec::Zero(n), detail::solve_dfe_susceptibles(model), Vec::Zero(k)}.packed();
    std::vector<Vec> found{dfe};
    for (const auto& seed : seeds) {
        ++result.seeds_tried;
        auto root = detail::newton_patch(model, seed);
        if (!root || root->minCoeff() <= 0.0) {
            ++result.seeds_discarded;
            continue;
        }
        const bool duplicate = std::any_of(found.begin(), found.end(), [&](const Vec& f) {
            return (f - *root).lpNorm<Eigen::Infinity>() <= 1e-7 * (1.0 + f.lpNorm<Eigen::Infinity>());
        });
        if (!duplicate) {
            found.push_back(*root);
        }
        else if ((dfe - *root).lpNorm<Eigen::Infinity>() <= 1e-7 * (1.0 + dfe.lpNorm<Eigen::Infinity>())) {
            ++result.seeds_discarded;
        }
    }
    for (const auto& v : std::vector<Vec>(found.begin() + 1, found.end())) {
        PatchEquilibrium eq;
        eq.state = PatchState::unpack(v, n, m, k);
        eq.kind = EquilibriumKind::endemic;
        classify_equilibrium(model, eq);
        result.roots.push_back(eq);
    }
    std::sort(result.roots.begin(), result.roots.end(), [&](const auto& a, const auto& b) {
        return detail::total_incidence(model, a.state) < detail::total_incidence(model, b.state);
    });
    for (std::size_t i = 0; i < result.roots.size(); ++i) {
        result.roots[i].index = static_cast<int>(i) + 1;
    }
    return result;
}

/// DFE followed by the endemic states in increasing force of infection.
inline std::vector<PatchEquilibrium> patch_equilibria(const PatchModel& model)
{
    std::vector<PatchEquilibrium> out{disease_free_equilibrium(model)};
    if (model.hiv) {
        const auto lambdas = hiv_endemic_lambdas(*model.hiv);
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            PatchEquilibrium eq;
            eq.state = lift_hiv_state(*model.hiv, lambdas[i]);
            eq.kind = EquilibriumKind::endemic;
            eq.index = static_cast<int>(i) + 1;
            classify_equilibrium(model, eq);
            out.push_back(eq);
        }
    }
    else {
        for (auto& eq : endemic_equilibria_generic(model).roots) {
            out.push_back(eq);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// product patterns

struct EquilibriumPattern {
    std::vector<int> choices;

    bool is_dfe() const
    {
        return std::all_of(choices.begin(), choices.end(), [](int c) { return c == 0; });
    }
    bool all_endemic() const
    {
        return std::all_of(choices.begin(), choices.end(), [](int c) { return c > 0; });
    }
    bool is_boundary() const { return !is_dfe() && !all_endemic(); }
    int regions() const { return static_cast<int>(choices.size()); }

    bool operator==(const EquilibriumPattern&) const = default;
    auto operator<=>(const EquilibriumPattern&) const = default;

    std::string label() const
    {
        std::string s = "(";
        for (std::size_t i = 0; i < choices.size(); ++i) {
            s += (i ? "," : "") + std::to_string(choices[i]);
        }
        return s + ")";
    }
};

/// All products of per-patch choices, region 1 most significant, DFE first.
inline std::vector<EquilibriumPattern> enumerate_patterns(const std::vector<int>& counts)
{
    for (int e : counts) {
        if (e < 0) {
            throw DomainError("enumerate_patterns: negative equilibrium count");
        }
    }
    std::vector<EquilibriumPattern> out;
    EquilibriumPattern cur{std::vector<int>(counts.size(), 0)};
    while (true) {
        out.push_back(cur);
        int i = static_cast<int>(counts.size()) - 1;
        while (i >= 0 && cur.choices[i] == counts[i]) {
            cur.choices[i] = 0;
            --i;
        }
        if (i < 0) {
            break;
        }
        ++cur.choices[i];
    }
    return out;
}

} // namespace metapatch
