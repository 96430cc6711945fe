#pragma once

// Per-patch compartmental model: infected block x (n), susceptible block y (m),
// removed block z (k).
//
//   x' = F(x,y,z) x - V x
//   y' = g(x,y,z) - diag(y) B(x,y,z) x
//   z' = -D z + Z x
//
// with F_{j,q} = sum_p (eta_{p,q})_j y_p B_{p,q}.

#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace metapatch {

enum class Family { multigroup, stage_progression, multistrain, hiv_vaccination, custom };

/// mass_action: B = beta. standard: B = beta / N with N = sum(x) + sum(y).
enum class Incidence { mass_action, standard };

inline const char* to_string(Family f)
{
    switch (f) {
    case Family::multigroup:
        return "multigroup";
    case Family::stage_progression:
        return "stage_progression";
    case Family::multistrain:
        return "multistrain";
    case Family::hiv_vaccination:
        return "hiv_vaccination";
    case Family::custom:
        return "custom";
    }
    return "?";
}

struct PatchState {
    Vec x;
    Vec y;
    Vec z;

    Eigen::Index size() const { return x.size() + y.size() + z.size(); }

    Vec packed() const
    {
        Vec v(size());
        v << x, y, z;
        return v;
    }

    static PatchState unpack(const Vec& v, int n, int m, int k)
    {
        if (v.size() != n + m + k) {
            throw DomainError("PatchState::unpack: vector length " + std::to_string(v.size()) + ", expected " +
                              std::to_string(n + m + k));
        }
        return {v.segment(0, n), v.segment(n, m), v.segment(n + m, k)};
    }
};

/// HIV model with vaccination and differential infectivity. x = (Y1,Y2,W1,W2), y = (S,S_V), z = (A).
struct HivParams {
    double Lambda = 1.0;
    double mu = 0.05;
    double gamma = 0.05;
    double delta = 1.0;
    double p = 0.999;
    double q = 0.5;
    double rho1 = 0.3;
    double rho2 = 0.7;
    double pi1 = 0.9;
    double pi2 = 0.1;
    double theta1 = 0.5;
    double theta2 = 0.5;
    double s1 = 1.0;
    double s2 = 1.0;
    double sigma1 = 0.45;
    double sigma2 = 17.0;
    double beta1 = 0.85;
    double beta2 = 0.1;

    /// Named view used by configs and parameter sweeps.
    std::map<std::string, double> as_map() const
    {
        return {{"Lambda", Lambda}, {"mu", mu},         {"gamma", gamma},   {"delta", delta},   {"p", p},
                {"q", q},           {"rho1", rho1},     {"rho2", rho2},     {"pi1", pi1},       {"pi2", pi2},
                {"theta1", theta1}, {"theta2", theta2}, {"s1", s1},         {"s2", s2},         {"sigma1", sigma1},
                {"sigma2", sigma2}, {"beta1", beta1},   {"beta2", beta2}};
    }

    double& at(const std::string& name)
    {
        static const std::map<std::string, double HivParams::*> fields = {
            {"Lambda", &HivParams::Lambda}, {"mu", &HivParams::mu},         {"gamma", &HivParams::gamma},
            {"delta", &HivParams::delta},   {"p", &HivParams::p},           {"q", &HivParams::q},
            {"rho1", &HivParams::rho1},     {"rho2", &HivParams::rho2},     {"pi1", &HivParams::pi1},
            {"pi2", &HivParams::pi2},       {"theta1", &HivParams::theta1}, {"theta2", &HivParams::theta2},
            {"s1", &HivParams::s1},         {"s2", &HivParams::s2},         {"sigma1", &HivParams::sigma1},
            {"sigma2", &HivParams::sigma2}, {"beta1", &HivParams::beta1},   {"beta2", &HivParams::beta2}};
        auto it = fields.find(name);
        if (it == fields.end()) {
            throw DomainError("HivParams: unknown parameter '" + name + "'");
        }
        return this->*(it->second);
    }

    double get(const std::string& name) const { return const_cast<HivParams*>(this)->at(name); }

    void validate() const
    {
        for (const auto& [name, value] : as_map()) {
            // beta may be switched off to model a transmission-free patch
            const bool may_be_zero = name == "beta1" || name == "beta2";
            if (!std::isfinite(value) || value < 0.0 || (!may_be_zero && value == 0.0)) {
                throw DomainError("HivParams: parameter '" + name + "' must be positive, got " + std::to_string(value));
            }
        }
        if (p > 1.0) {
            throw DomainError("HivParams: vaccinated fraction p must not exceed 1");
        }
        if (std::abs(rho1 + rho2 - 1.0) > 1e-12 || std::abs(pi1 + pi2 - 1.0) > 1e-12) {
            throw DomainError("HivParams: rho1+rho2 and pi1+pi2 must equal 1");
        }
    }
};

/// Recruitment g(x,y,z) for user extensions; the Jacobian is taken by central differences.
using RecruitmentFn = std::function<Vec(const Vec& x, const Vec& y, const Vec& z)>;

struct PatchModel {
    int n = 0;
    int m = 0;
    int k = 0;
    Family family = Family::custom;
    Incidence incidence = Incidence::mass_action;
    Mat V;    ///< n x n
    Mat D;    ///< k x k diagonal
    Mat Z;    ///< k x n
    Mat beta; ///< m x n transmission coefficients
    /// eta[p * n + q] is the distribution of new infections from (p,q) over the n infected classes.
    std::vector<Vec> eta;
    /// Affine recruitment g = b + A y, used unless custom_g is set.
    Vec recruit_b;
    Mat recruit_A;
    RecruitmentFn custom_g;
    std::map<std::string, double> params;
    std::optional<HivParams> hiv;

    const Vec& eta_of(int p, int q) const { return eta[static_cast<std::size_t>(p * n + q)]; }

    int dim() const { return n + m + k; }

    Vec recruitment(const PatchState& s) const
    {
        if (custom_g) {
            return custom_g(s.x, s.y, s.z);
        }
        return recruit_b + recruit_A * s.y;
    }

    void validate() const
    {
        if (n <= 0 || m <= 0 || k <= 0) {
            throw DomainError("PatchModel: n, m, k must be positive");
        }
        auto shape = [](const Mat& a, int r, int c, const char* name) {
            if (a.rows() != r || a.cols() != c) {
                throw DomainError(std::string("PatchModel: ") + name + " has shape " + std::to_string(a.rows()) + "x" +
                                  std::to_string(a.cols()) + ", expected " + std::to_string(r) + "x" +
                                  std::to_string(c));
            }
            if (!a.allFinite()) {
                throw DomainError(std::string("PatchModel: ") + name + " has non-finite entries");
            }
        };
        shape(V, n, n, "V");
        shape(D, k, k, "D");
        shape(Z, k, n, "Z");
        shape(beta, m, n, "beta");
        if (!z_pattern_check(V)) {
            throw DomainError("PatchModel: V must have nonpositive off-diagonal entries");
        }
        const Vec colsum = V.colwise().sum().transpose();
        if (colsum.minCoeff() < -1e-12) {
            throw DomainError("PatchModel: column sums of V must be nonnegative");
        }
        if (!m_matrix_report(V).is_nonsingular_m) {
            throw DomainError("PatchModel: V must be a nonsingular M-matrix");
        }
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                if (i != j && D(i, j) != 0.0) {
                    throw DomainError("PatchModel: D must be diagonal");
                }
            }
            if (!(D(i, i) > 0.0)) {
                throw DomainError("PatchModel: D must have positive diagonal");
            }
        }
        if (Z.minCoeff() < 0.0 || Z.maxCoeff() <= 0.0) {
            throw DomainError("PatchModel: Z must be nonnegative and nonzero");
        }
        if (beta.minCoeff() < 0.0) {
            throw DomainError("PatchModel: transmission coefficients must be nonnegative");
        }
        if (eta.size() != static_cast<std::size_t>(m * n)) {
            throw DomainError("PatchModel: expected " + std::to_string(m * n) + " eta vectors");
        }
        for (int p = 0; p < m; ++p) {
            for (int q = 0; q < n; ++q) {
                const Vec& e = eta_of(p, q);
                if (e.size() != n || e.minCoeff() < 0.0 || std::abs(e.sum() - 1.0) > 1e-12) {
                    throw DomainError("PatchModel: eta(" + std::to_string(p + 1) + "," + std::to_string(q + 1) +
                                      ") must be a nonnegative length-n vector summing to 1");
                }
            }
        }
        if (!custom_g) {
            shape(recruit_A, m, m, "recruitment matrix");
            if (recruit_b.size() != m || !recruit_b.allFinite()) {
                throw DomainError("PatchModel: recruitment constant must have length m");
            }
        }
        if (hiv) {
            hiv->validate();
        }
    }
};

namespace detail {

inline void require_state(const PatchModel& model, const PatchState& s)
{
    if (s.x.size() != model.n || s.y.size() != model.m || s.z.size() != model.k) {
        throw DomainError("state dimensions do not match the patch model");
    }
}

inline double incidence_population(const PatchModel& model, const PatchState& s)
{
    const double N = s.x.sum() + s.y.sum();
    if (!(N > 0.0)) {
        throw DomainError("standard incidence undefined: population N = " + std::to_string(N));
    }
    (void)model;
    return N;
}

} // namespace detail

/// B(x,y,z) as an m x n matrix.
inline Mat transmission_matrix(const PatchModel& model, const PatchState& s)
{
    detail::require_state(model, s);
    if (model.incidence == Incidence::mass_action) {
        return model.beta;
    }
    if (s.y.isZero(0.0)) {
        throw DomainError("standard incidence undefined at y = 0");
    }
    return model.beta / detail::incidence_population(model, s);
}

/// F(x,y,z) with F_{j,q} = sum_p (eta_{p,q})_j y_p B_{p,q}.
inline Mat new_infection_operator(const PatchModel& model, const PatchState& s)
{
    const Mat B = transmission_matrix(model, s);
    Mat F = Mat::Zero(model.n, model.n);
    for (int p = 0; p < model.m; ++p) {
        for (int q = 0; q < model.n; ++q) {
            F.col(q) += model.eta_of(p, q) * (s.y(p) * B(p, q));
        }
    }
    return F;
}

/// Right-hand side of the isolated patch, packed as (x, y, z).
inline Vec patch_residual(const PatchModel& model, const PatchState& s)
{
    const Mat B = transmission_matrix(model, s);
    const Mat F = new_infection_operator(model, s);
    Vec r(model.dim());
    r.segment(0, model.n) = F * s.x - model.V * s.x;
    r.segment(model.n, model.m) = model.recruitment(s) - s.y.cwiseProduct(B * s.x);
    r.segment(model.n + model.m, model.k) = -model.D * s.z + model.Z * s.x;
    return r;
}

namespace detail {

inline Mat recruitment_jacobian_fd(const PatchModel& model, const PatchState& s)
{
    const int n = model.n, m = model.m, k = model.k;
    const Vec v = s.packed();
    Mat J(m, n + m + k);
    for (int c = 0; c < n + m + k; ++c) {
        const double h = 1e-6 * (1.0 + std::abs(v(c)));
        Vec vp = v, vm = v;
        vp(c) += h;
        vm(c) -= h;
        const auto sp = PatchState::unpack(vp, n, m, k);
        const auto sm = PatchState::unpack(vm, n, m, k);
        J.col(c) = (model.custom_g(sp.x, sp.y, sp.z) - model.custom_g(sm.x, sm.y, sm.z)) / (2.0 * h);
    }
    return J;
}

} // namespace detail

/**
 * Jacobian of patch_residual with respect to (x, y, z).
 *
 * Analytic through the fluxes phi_{p,q} = y_p B_{p,q} x_q. The recruitment
 * part is exact for affine g and central differences otherwise.
 */
inline Mat patch_jacobian(const PatchModel& model, const PatchState& s)
{
    detail::require_state(model, s);
    const int n = model.n, m = model.m, k = model.k;
    const Mat B = transmission_matrix(model, s);
    const bool standard = model.incidence == Incidence::standard;
    const double N = standard ? detail::incidence_population(model, s) : 1.0;

    // derivatives of the fluxes, one row per (p,q)
    Mat dphi_dx = Mat::Zero(m * n, n);
    Mat dphi_dy = Mat::Zero(m * n, m);
    for (int p = 0; p < m; ++p) {
        for (int q = 0; q < n; ++q) {
            const int row = p * n + q;
            const double phi = s.y(p) * B(p, q) * s.x(q);
            dphi_dx(row, q) += s.y(p) * B(p, q);
            dphi_dy(row, p) += B(p, q) * s.x(q);
            if (standard) {
                dphi_dx.row(row).array() -= phi / N;
                dphi_dy.row(row).array() -= phi / N;
            }
        }
    }

    Mat J = Mat::Zero(n + m + k, n + m + k);
    for (int p = 0; p < m; ++p) {
        for (int q = 0; q < n; ++q) {
            const int row = p * n + q;
            const Vec& e = model.eta_of(p, q);
            J.block(0, 0, n, n) += e * dphi_dx.row(row);
            J.block(0, n, n, m) += e * dphi_dy.row(row);
            J.block(n + p, 0, 1, n) -= dphi_dx.row(row);
            J.block(n + p, n, 1, m) -= dphi_dy.row(row);
        }
    }
    J.block(0, 0, n, n) -= model.V;
    if (model.custom_g) {
        J.block(n, 0, m, n + m + k) += detail::recruitment_jacobian_fd(model, s);
    }
    else {
        J.block(n, n, m, m) += model.recruit_A;
    }
    J.block(n + m, 0, k, n) = model.Z;
    J.block(n + m, n + m, k, k) = -model.D;
    return J;
}

// ---------------------------------------------------------------------------
// built-in families

namespace detail {

inline std::vector<Vec> unit_eta(int m, int n, const std::function<int(int p, int q)>& target)
{
    std::vector<Vec> eta;
    eta.reserve(static_cast<std::size_t>(m * n));
    for (int p = 0; p < m; ++p) {
        for (int q = 0; q < n; ++q) {
            eta.push_back(Vec::Unit(n, target(p, q)));
        }
    }
    return eta;
}

} // namespace detail

/**
 * Multigroup SIR with mass action. Group p: S_p' = Lambda_p - mu S_p - S_p sum_q beta_pq I_q,
 * I_p' = S_p sum_q beta_pq I_q - (gamma_p + mu) I_p, R_p' = gamma_p I_p - mu R_p.
 */
inline PatchModel make_multigroup(const Vec& Lambda, double mu, const Vec& gamma, const Mat& beta)
{
    const int n = static_cast<int>(Lambda.size());
    if (gamma.size() != n || beta.rows() != n || beta.cols() != n) {
        throw DomainError("make_multigroup: inconsistent group count");
    }
    PatchModel model;
    model.n = model.m = model.k = n;
    model.family = Family::multigroup;
    model.incidence = Incidence::mass_action;
    model.V = (gamma.array() + mu).matrix().asDiagonal();
    model.D = Mat::Identity(n, n) * mu;
    model.Z = gamma.asDiagonal();
    model.beta = beta;
    model.eta = detail::unit_eta(n, n, [](int p, int) { return p; });
    model.recruit_b = Lambda;
    model.recruit_A = -mu * Mat::Identity(n, n);
    model.params = {{"mu", mu}};
    for (int i = 0; i < n; ++i) {
        model.params["Lambda" + std::to_string(i + 1)] = Lambda(i);
        model.params["gamma" + std::to_string(i + 1)] = gamma(i);
    }
    model.validate();
    return model;
}

/**
 * Stage progression: one susceptible class, infection enters stage 1,
 * stage j moves to j+1 at rate sigma_j, the last stage leaves to a single removed class.
 */
inline PatchModel make_stage_progression(double Lambda, double mu, const Vec& sigma, const Vec& beta)
{
    const int n = static_cast<int>(sigma.size());
    if (beta.size() != n || n == 0) {
        throw DomainError("make_stage_progression: sigma and beta must have the same positive length");
    }
    PatchModel model;
    model.n = n;
    model.m = 1;
    model.k = 1;
    model.family = Family::stage_progression;
    model.incidence = Incidence::mass_action;
    model.V = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        model.V(j, j) = sigma(j) + mu;
        if (j > 0) {
            model.V(j, j - 1) = -sigma(j - 1);
        }
    }
    model.D = Mat::Constant(1, 1, mu);
    model.Z = Mat::Zero(1, n);
    model.Z(0, n - 1) = sigma(n - 1);
    model.beta = beta.transpose();
    model.eta = detail::unit_eta(1, n, [](int, int) { return 0; });
    model.recruit_b = Vec::Constant(1, Lambda);
    model.recruit_A = Mat::Constant(1, 1, -mu);
    model.params = {{"Lambda", Lambda}, {"mu", mu}};
    model.validate();
    return model;
}

/// Multistrain: one susceptible class, strain q infections stay in class q, each strain has its own removed class.
inline PatchModel make_multistrain(double Lambda, double mu, const Vec& gamma, const Vec& beta)
{
    const int n = static_cast<int>(gamma.size());
    if (beta.size() != n || n == 0) {
        throw DomainError("make_multistrain: gamma and beta must have the same positive length");
    }
    PatchModel model;
    model.n = n;
    model.m = 1;
    model.k = n;
    model.family = Family::multistrain;
    model.incidence = Incidence::mass_action;
    model.V = (gamma.array() + mu).matrix().asDiagonal();
    model.D = Mat::Identity(n, n) * mu;
    model.Z = gamma.asDiagonal();
    model.beta = beta.transpose();
    model.eta = detail::unit_eta(1, n, [](int, int q) { return q; });
    model.recruit_b = Vec::Constant(1, Lambda);
    model.recruit_A = Mat::Constant(1, 1, -mu);
    model.params = {{"Lambda", Lambda}, {"mu", mu}};
    model.validate();
    return model;
}

/// HIV with vaccination: x = (Y1,Y2,W1,W2), y = (S,S_V), z = (A); N excludes A.
inline PatchModel make_hiv(const HivParams& hp)
{
    hp.validate();
    PatchModel model;
    model.n = 4;
    model.m = 2;
    model.k = 1;
    model.family = Family::hiv_vaccination;
    model.incidence = Incidence::standard;
    const double mu = hp.mu;
    Vec vdiag(4);
    vdiag << mu + hp.sigma1, mu + hp.sigma2, mu + hp.theta1 * hp.sigma1, mu + hp.theta2 * hp.sigma2;
    model.V = vdiag.asDiagonal();
    model.D = Mat::Constant(1, 1, hp.delta + mu);
    model.Z.resize(1, 4);
    model.Z << hp.sigma1, hp.sigma2, hp.theta1 * hp.sigma1, hp.theta2 * hp.sigma2;
    model.beta.resize(2, 4);
    model.beta << hp.beta1, hp.beta2, hp.s1 * hp.beta1, hp.s2 * hp.beta2, //
        hp.q * hp.beta1, hp.q * hp.beta2, hp.q * hp.s1 * hp.beta1, hp.q * hp.s2 * hp.beta2;
    Vec from_unvaccinated(4), from_vaccinated(4);
    from_unvaccinated << hp.rho1, hp.rho2, 0.0, 0.0;
    from_vaccinated << 0.0, 0.0, hp.pi1, hp.pi2;
    for (int q = 0; q < 4; ++q) {
        model.eta.push_back(from_unvaccinated);
    }
    for (int q = 0; q < 4; ++q) {
        model.eta.push_back(from_vaccinated);
    }
    model.recruit_b.resize(2);
    model.recruit_b << (1.0 - hp.p) * hp.Lambda, hp.p * hp.Lambda;
    model.recruit_A.resize(2, 2);
    model.recruit_A << -mu, hp.gamma, 0.0, -hp.gamma - mu;
    model.params = hp.as_map();
    model.hiv = hp;
    model.validate();
    return model;
}

} // namespace metapatch
