#pragma once

// The coupled system of all regions as one residual T(alpha, X), and natural-parameter
// continuation of uncoupled equilibria in alpha.

#include "metapatch/equilibria.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"
#include "metapatch/model.hpp"
#include "metapatch/network.hpp"
#include "metapatch/persist.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace metapatch {

/// Component values below this count as a cone exit; values above are round-off.
inline constexpr double cone_tolerance = 1e-9;

namespace detail {

inline void require_models(const std::vector<PatchModel>& models, const MobilityNetwork& net)
{
    if (static_cast<int>(models.size()) != net.r) {
        throw DomainError("expected " + std::to_string(net.r) + " patch models, got " + std::to_string(models.size()));
    }
    for (const auto& m : models) {
        if (m.n != net.n || m.m != net.m || m.k != net.k) {
            throw DomainError("patch block sizes differ from the network");
        }
    }
}

} // namespace detail

/**
 * Linear travel operator: the travel terms of all regions equal alpha * travel_operator(net) * X.
 * Region i, block w: -sum_j C_w^{ji} w^i + sum_j C_w^{ij} w^j.
 */
inline Mat travel_operator(const MobilityNetwork& net)
{
    const int d = net.n + net.m + net.k;
    Mat T = Mat::Zero(net.r * d, net.r * d);
    for (int i = 0; i < net.r; ++i) {
        for (int j = 0; j < net.r; ++j) {
            if (i == j) {
                continue;
            }
            const auto& in = net.link(i, j);  // j -> i
            const auto& out = net.link(j, i); // i -> j
            Vec c_in(d), c_out(d);
            c_in << in.cx, in.cy, in.cz;
            c_out << out.cx, out.cy, out.cz;
            T.block(i * d, j * d, d, d).diagonal() += c_in;
            T.block(i * d, i * d, d, d).diagonal() -= c_out;
        }
    }
    return T;
}

inline Vec coupled_residual(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                            const Vec& X)
{
    detail::require_models(models, net);
    const int d = net.n + net.m + net.k;
    if (X.size() != net.r * d) {
        throw DomainError("coupled_residual: state length " + std::to_string(X.size()) + ", expected " +
                          std::to_string(net.r * d));
    }
    Vec r(X.size());
    for (int i = 0; i < net.r; ++i) {
        r.segment(i * d, d) = patch_residual(models[i], PatchState::unpack(X.segment(i * d, d), net.n, net.m, net.k));
    }
    if (alpha != 0.0) {
        r += alpha * (travel_operator(net) * X);
    }
    return r;
}

inline Mat coupled_jacobian(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                            const Vec& X)
{
    detail::require_models(models, net);
    const int d = net.n + net.m + net.k;
    if (X.size() != net.r * d) {
        throw DomainError("coupled_jacobian: state length mismatch");
    }
    Mat J = Mat::Zero(X.size(), X.size());
    for (int i = 0; i < net.r; ++i) {
        J.block(i * d, i * d, d, d) =
            patch_jacobian(models[i], PatchState::unpack(X.segment(i * d, d), net.n, net.m, net.k));
    }
    if (alpha != 0.0) {
        J += alpha * travel_operator(net);
    }
    return J;
}

struct CoupledState {
    double alpha = 0.0;
    Vec X;
    double residual_norm = 0.0;
    Stability stability = Stability::marginal;
    double max_real_eig = 0.0;
    double min_component = 0.0;
};

struct BranchRecord {
    EquilibriumPattern pattern;
    std::vector<CoupledState> points;
    std::optional<double> exit_alpha;
    Verdict verdict_observed = Verdict::persists;
    bool complete = true;    ///< false when the corrector gave up before the last target
    std::string diagnostics; ///< why the branch stopped early

    const CoupledState* at(double alpha) const
    {
        for (const auto& p : points) {
            if (p.alpha == alpha) {
                return &p;
            }
        }
        return nullptr;
    }
};

struct ContinuationOptions {
    double newton_tol = 1e-10;
    int max_halvings = 20;
    int max_newton = 40;
    /// Bisect the exit between grid points to two significant digits.
    bool refine_exit = false;
};

/// Geometric grid {0, 1e-8, 1e-7, ..., up_to}.
inline std::vector<double> default_alpha_grid(double up_to = 1e-1)
{
    std::vector<double> grid{0.0};
    for (int e = 8; e >= 0; --e) {
        const double a = 1.0 / std::pow(10.0, e); // same double as the literal 1e-e
        if (a > up_to * (1.0 + 1e-12)) {
            break;
        }
        grid.push_back(a);
    }
    return grid;
}

/// Uncoupled product state of a pattern, packed as (x1,y1,z1, ..., xr,yr,zr).
inline Vec product_state(const EquilibriumPattern& pattern, const std::vector<RegionProfile>& regions)
{
    const int r = static_cast<int>(regions.size());
    if (pattern.regions() != r) {
        throw DomainError("product_state: pattern size differs from region count");
    }
    const int d = regions.front().model.dim();
    Vec X(r * d);
    for (int i = 0; i < r; ++i) {
        if (pattern.choices[i] < 0 || pattern.choices[i] > regions[i].endemic_count()) {
            throw DomainError("product_state: invalid choice for region " + std::to_string(i + 1));
        }
        X.segment(i * d, d) = regions[i].equilibria[static_cast<std::size_t>(pattern.choices[i])].state.packed();
    }
    return X;
}

inline std::vector<PatchModel> models_of(const std::vector<RegionProfile>& regions)
{
    std::vector<PatchModel> out;
    for (const auto& r : regions) {
        out.push_back(r.model);
    }
    return out;
}

namespace detail {

/// Damped Newton on T(alpha, .) from X; nullopt when it stalls.
inline std::optional<Vec> correct(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                                  Vec X, const ContinuationOptions& opt)
{
    Vec r;
    try {
        r = coupled_residual(models, net, alpha, X);
    }
    catch (const DomainError&) {
        return std::nullopt; // predictor left the admissible set
    }
    int polish = 0;
    for (int it = 0; it < opt.max_newton; ++it) {
        const double rn = r.lpNorm<Eigen::Infinity>();
        if (rn <= opt.newton_tol) {
            // a few extra steps push the error to round-off level
            if (++polish > 2 || rn == 0.0) {
                break;
            }
        }
        const Mat J = coupled_jacobian(models, net, alpha, X);
        Eigen::PartialPivLU<Mat> lu(J);
        const Vec step = lu.solve(-r);
        if (!step.allFinite()) {
            return std::nullopt;
        }
        double t = 1.0;
        bool accepted = false;
        const double r2 = r.squaredNorm();
        for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
            const Vec trial = X + t * step;
            Vec rt;
            try {
                rt = coupled_residual(models, net, alpha, trial);
            }
            catch (const DomainError&) {
                continue;
            }
            if (rt.allFinite() && rt.squaredNorm() <= (1.0 - 1e-4 * t) * r2) {
                X = trial;
                r = rt;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (rn <= opt.newton_tol) {
                break; // already converged, no further decrease possible
            }
            return std::nullopt;
        }
    }
    if (!(r.lpNorm<Eigen::Infinity>() <= opt.newton_tol)) {
        return std::nullopt;
    }
    return X;
}

/// Disease-free branch: infected and removed blocks stay exactly zero, susceptibles solve the reduced system.
inline Vec disease_free_branch(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                               const Vec& X0)
{
    const int n = net.n, m = net.m, k = net.k, d = n + m + k, r = net.r;
    const Mat T = travel_operator(net);
    auto y_index = [&](int i, int p) { return i * d + n + p; };
    Mat Ty(r * m, r * m);
    for (int a = 0; a < r; ++a) {
        for (int p = 0; p < m; ++p) {
            for (int b = 0; b < r; ++b) {
                for (int q = 0; q < m; ++q) {
                    Ty(a * m + p, b * m + q) = T(y_index(a, p), y_index(b, q));
                }
            }
        }
    }
    const bool affine = std::none_of(models.begin(), models.end(), [](const auto& mm) { return bool(mm.custom_g); });
    Vec Y(r * m);
    if (affine) {
        Mat A = alpha * Ty;
        Vec b(r * m);
        for (int i = 0; i < r; ++i) {
            A.block(i * m, i * m, m, m) += models[i].recruit_A;
            b.segment(i * m, m) = models[i].recruit_b;
        }
        Y = solve_linear(A, -b);
    }
    else {
        for (int i = 0; i < r; ++i) {
            Y.segment(i * m, m) = X0.segment(i * d + n, m);
        }
        auto g = [&](const Vec& yy) {
            Vec out = alpha * (Ty * yy);
            for (int i = 0; i < r; ++i) {
                const Vec yi = yy.segment(i * m, m);
                const Vec x0 = Vec::Zero(n), z0 = Vec::Zero(k);
                out.segment(i * m, m) += models[i].custom_g ? models[i].custom_g(x0, yi, z0)
                                                            : Vec(models[i].recruit_b + models[i].recruit_A * yi);
            }
            return out;
        };
        for (int it = 0; it < 100; ++it) {
            const Vec res = g(Y);
            if (res.lpNorm<Eigen::Infinity>() < 1e-13) {
                break;
            }
            Mat J(r * m, r * m);
            for (int c = 0; c < r * m; ++c) {
                const double h = 1e-6 * (1.0 + std::abs(Y(c)));
                Vec yp = Y, ym = Y;
                yp(c) += h;
                ym(c) -= h;
                J.col(c) = (g(yp) - g(ym)) / (2.0 * h);
            }
            Y += solve_linear(J, -res);
        }
    }
    Vec X = Vec::Zero(r * d);
    for (int i = 0; i < r; ++i) {
        X.segment(i * d + n, m) = Y.segment(i * m, m);
    }
    return X;
}

inline CoupledState make_point(const std::vector<PatchModel>& models, const MobilityNetwork& net, double alpha,
                               const Vec& X)
{
    CoupledState s;
    s.alpha = alpha;
    s.X = X;
    s.residual_norm = coupled_residual(models, net, alpha, X).lpNorm<Eigen::Infinity>();
    s.max_real_eig = spectral_abscissa(coupled_jacobian(models, net, alpha, X));
    s.stability = classify_stability(s.max_real_eig);
    s.min_component = X.minCoeff();
    return s;
}

/// Advance from (a0, X) to a1 with Euler-tangent predictor and damped Newton, halving the step on failure.
inline std::optional<Vec> advance(const std::vector<PatchModel>& models, const MobilityNetwork& net, double a0,
                                  Vec X, double a1, const ContinuationOptions& opt, std::string& why)
{
    const Mat T = travel_operator(net);
    double a = a0;
    double step = a1 - a0;
    int halvings = 0;
    while (a < a1) {
        step = std::min(step, a1 - a);
        const Mat J = coupled_jacobian(models, net, a, X);
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible()) {
            why = "singular Jacobian at alpha = " + std::to_string(a);
            return std::nullopt;
        }
        const Vec tangent = lu.solve(-(T * X));
        const double target = (a1 - a - step) <= 1e-15 * a1 ? a1 : a + step;
        const Vec predicted = X + (target - a) * tangent;
        auto corrected = correct(models, net, target, predicted, opt);
        // a correction larger than half the predictor move means Newton landed on another branch
        if (corrected && (*corrected - predicted).lpNorm<Eigen::Infinity>() >
                             0.5 * (predicted - X).lpNorm<Eigen::Infinity>() +
                                 1e-9 * (1.0 + X.lpNorm<Eigen::Infinity>())) {
            corrected.reset();
        }
        if (corrected) {
            X = *corrected;
            a = target;
            step *= 2.0; // recover after a successful step
            continue;
        }
        if (++halvings > opt.max_halvings) {
            why = "corrector failed after " + std::to_string(opt.max_halvings) + " step halvings near alpha = " +
                  std::to_string(a);
            return std::nullopt;
        }
        step *= 0.5;
    }
    return X;
}

} // namespace detail

/**
 * Continue the uncoupled equilibrium `pattern` along alpha through `alpha_targets`
 * (sorted, nonnegative). Throws when the Jacobian at alpha = 0 is singular.
 */
inline BranchRecord continue_branch(const EquilibriumPattern& pattern, const std::vector<RegionProfile>& regions,
                                    const MobilityNetwork& net, std::vector<double> alpha_targets,
                                    const ContinuationOptions& opt = {})
{
    const auto models = models_of(regions);
    detail::require_models(models, net);
    std::sort(alpha_targets.begin(), alpha_targets.end());
    if (!alpha_targets.empty() && alpha_targets.front() < 0.0) {
        throw DomainError("continue_branch: alpha must be nonnegative");
    }
    if (alpha_targets.empty() || alpha_targets.front() != 0.0) {
        alpha_targets.insert(alpha_targets.begin(), 0.0);
    }
    alpha_targets.erase(std::unique(alpha_targets.begin(), alpha_targets.end()), alpha_targets.end());

    const Vec X0 = product_state(pattern, regions);
    const Mat J0 = coupled_jacobian(models, net, 0.0, X0);
    const double cond = condition_estimate(J0);
    if (!(cond < singular_condition_threshold)) {
        throw SingularMatrixError("continue_branch: theorem hypothesis violated, Jacobian at alpha = 0 is singular "
                                  "for pattern " + pattern.label(),
                                  cond);
    }

    BranchRecord rec;
    rec.pattern = pattern;
    rec.points.push_back(detail::make_point(models, net, 0.0, X0));
    Vec X = X0;
    double a = 0.0;
    for (std::size_t t = 1; t < alpha_targets.size(); ++t) {
        const double target = alpha_targets[t];
        std::optional<Vec> next;
        std::string why;
        if (pattern.is_dfe()) {
            next = detail::disease_free_branch(models, net, target, X);
        }
        else {
            next = detail::advance(models, net, a, X, target, opt, why);
        }
        if (!next) {
            rec.complete = false;
            rec.diagnostics = why;
            break;
        }
        X = *next;
        a = target;
        rec.points.push_back(detail::make_point(models, net, target, X));
        if (rec.points.back().min_component < -cone_tolerance) {
            break; // outside the cone the branch has no biological meaning
        }
    }

    for (std::size_t p = 0; p < rec.points.size(); ++p) {
        if (rec.points[p].min_component < -cone_tolerance) {
            rec.exit_alpha = rec.points[p].alpha;
            if (opt.refine_exit && p > 0 && !pattern.is_dfe()) {
                // bisection on the sign change to two significant digits
                double lo = rec.points[p - 1].alpha, hi = rec.points[p].alpha;
                Vec Xlo = rec.points[p - 1].X;
                while ((hi - lo) > 0.005 * hi) {
                    const double mid = 0.5 * (lo + hi);
                    std::string why;
                    auto Xm = detail::advance(models, net, lo, Xlo, mid, opt, why);
                    if (!Xm) {
                        break;
                    }
                    if (Xm->minCoeff() < -cone_tolerance) {
                        hi = mid;
                    }
                    else {
                        lo = mid;
                        Xlo = *Xm;
                    }
                }
                rec.exit_alpha = hi;
            }
            break;
        }
    }
    rec.verdict_observed = rec.exit_alpha ? Verdict::vanishes : Verdict::persists;
    return rec;
}

/// Infected block of region i at the point with the given alpha.
inline Vec branch_infected(const BranchRecord& rec, const MobilityNetwork& net, int i, double alpha)
{
    const auto* p = rec.at(alpha);
    if (!p) {
        throw DomainError("branch record has no point at alpha = " + std::to_string(alpha));
    }
    const int d = net.n + net.m + net.k;
    return p->X.segment(i * d, net.n);
}

namespace detail {

inline double relative_discrepancy(const Vec& numeric, const Vec& analytic)
{
    const double scale = analytic.lpNorm<Eigen::Infinity>();
    const double diff = (numeric - analytic).lpNorm<Eigen::Infinity>();
    return scale > 0.0 ? diff / scale : diff;
}

} // namespace detail

/**
 * Relative sup-norm gap between the analytic first derivative and the Richardson
 * estimate 2 (f(h) - f(0)) / h - (f(2h) - f(0)) / (2h) from the branch record.
 * Absolute gap when the analytic value is zero.
 */
inline double branch_derivative_check(const BranchRecord& rec, const BranchDerivative& analytic,
                                      const MobilityNetwork& net, double h)
{
    if (analytic.order != 1) {
        throw DomainError("branch_derivative_check: first-order derivative expected");
    }
    const Vec f0 = branch_infected(rec, net, analytic.region, 0.0);
    const Vec f1 = branch_infected(rec, net, analytic.region, h);
    const Vec f2 = branch_infected(rec, net, analytic.region, 2.0 * h);
    const Vec numeric = 2.0 * (f1 - f0) / h - (f2 - f0) / (2.0 * h);
    return detail::relative_discrepancy(numeric, analytic.value);
}

/// Same check for the second derivative using (f(2h) - 2 f(h) + f(0)) / h^2.
inline double branch_second_derivative_check(const BranchRecord& rec, const BranchDerivative& analytic,
                                             const MobilityNetwork& net, double h)
{
    if (analytic.order != 2) {
        throw DomainError("branch_second_derivative_check: second-order derivative expected");
    }
    const Vec f0 = branch_infected(rec, net, analytic.region, 0.0);
    const Vec f1 = branch_infected(rec, net, analytic.region, h);
    const Vec f2 = branch_infected(rec, net, analytic.region, 2.0 * h);
    return detail::relative_discrepancy((f2 - 2.0 * f1 + f0) / (h * h), analytic.value);
}

/// Worker count from METAPATCH_THREADS, else the hardware concurrency.
inline unsigned worker_count()
{
    if (const char* env = std::getenv("METAPATCH_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) {
            return static_cast<unsigned>(v);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, count) on worker_count() threads; the first exception is rethrown.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body)
{
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count && !failed; i = next++) {
                try {
                    body(i);
                }
                catch (...) {
                    if (!failed.exchange(true)) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

/// Branches for every pattern, in enumeration order.
inline std::vector<BranchRecord> continue_all(const std::vector<RegionProfile>& regions, const MobilityNetwork& net,
                                              const std::vector<double>& alpha_targets,
                                              const ContinuationOptions& opt = {})
{
    const auto patterns = enumerate_patterns(endemic_counts(regions));
    std::vector<BranchRecord> out(patterns.size());
    parallel_for(patterns.size(),
                 [&](std::size_t i) { out[i] = continue_branch(patterns[i], regions, net, alpha_targets, opt); });
    return out;
}

struct StabilityCount {
    int stable = 0;
    int unstable = 0;
    int marginal = 0;
    int vanished = 0;
};

/// Stability tally at alpha over the branches that stay in the cone.
inline StabilityCount count_stable(const std::vector<RegionProfile>& regions, const MobilityNetwork& net, double alpha)
{
    std::vector<double> grid;
    if (alpha > 0.0) {
        for (double a : default_alpha_grid(alpha)) {
            if (a < alpha * (1.0 - 1e-12)) {
                grid.push_back(a);
            }
        }
        grid.push_back(alpha);
    }
    StabilityCount count;
    for (const auto& rec : continue_all(regions, net, grid)) {
        const auto* p = rec.at(alpha);
        if (!p || rec.exit_alpha) {
            ++count.vanished;
            continue;
        }
        switch (p->stability) {
        case Stability::stable:
            ++count.stable;
            break;
        case Stability::unstable:
            ++count.unstable;
            break;
        case Stability::marginal:
            ++count.marginal;
            break;
        }
    }
    return count;
}

} // namespace metapatch
