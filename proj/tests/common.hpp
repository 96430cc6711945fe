#pragma once

// Shared fixtures and independent oracles for the test suites.

#include "metapatch/model.hpp"

#include <cmath>
#include <random>

namespace testing_support {

using metapatch::HivParams;
using metapatch::Mat;
using metapatch::Vec;

/// Published HIV parameter set; beta1 = 0.85 lies in the backward window.
inline HivParams hiv_window()
{
    return HivParams{};
}

inline HivParams hiv_above()
{
    HivParams p;
    p.beta1 = 1.0;
    return p;
}

inline HivParams hiv_below()
{
    HivParams p;
    p.beta1 = 0.7;
    return p;
}

/// Closed-form disease-free susceptibles (S0, SV0).
inline std::pair<double, double> hiv_dfe_closed_form(const HivParams& h)
{
    const double S0 = (h.gamma + (1.0 - h.p) * h.mu) * h.Lambda / (h.mu * (h.mu + h.gamma));
    const double SV0 = h.p * h.Lambda / (h.mu + h.gamma);
    return {S0, SV0};
}

/// Closed-form reproduction number of the HIV patch.
inline double hiv_R_closed_form(const HivParams& h)
{
    const auto [S0, SV0] = hiv_dfe_closed_form(h);
    const double N0 = S0 + SV0;
    const double mu = h.mu;
    const double B1 = h.beta2 * h.rho2 * (mu + h.sigma1) + h.beta1 * h.rho1 * (mu + h.sigma2);
    const double B2 = h.q * (h.pi2 * h.s2 * h.beta2 * (mu + h.theta1 * h.sigma1) +
                             h.pi1 * h.s1 * h.beta1 * (mu + h.theta2 * h.sigma2));
    return (B1 * S0 / ((mu + h.sigma1) * (mu + h.sigma2)) +
            B2 * SV0 / ((mu + h.theta1 * h.sigma1) * (mu + h.theta2 * h.sigma2))) /
           N0;
}

/// Random HIV parameters around the published set.
inline HivParams random_hiv(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto around = [&](double v) { return v * std::exp(std::log(3.0) * (2.0 * u(rng) - 1.0)); };
    HivParams h;
    h.mu = around(h.mu);
    h.gamma = around(h.gamma);
    h.delta = around(h.delta);
    h.p = 0.05 + 0.9 * u(rng);
    h.q = 0.05 + 0.9 * u(rng);
    h.rho1 = 0.05 + 0.9 * u(rng);
    h.rho2 = 1.0 - h.rho1;
    h.pi1 = 0.05 + 0.9 * u(rng);
    h.pi2 = 1.0 - h.pi1;
    h.theta1 = 0.1 + 0.9 * u(rng);
    h.theta2 = 0.1 + 0.9 * u(rng);
    h.s1 = 0.2 + 1.5 * u(rng);
    h.s2 = 0.2 + 1.5 * u(rng);
    h.sigma1 = around(h.sigma1);
    h.sigma2 = around(h.sigma2);
    h.beta1 = 0.05 + 2.0 * u(rng);
    h.beta2 = 0.05 + 2.0 * u(rng);
    return h;
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& v)
{
    const Vec f0 = f(v);
    Mat J(f0.size(), v.size());
    for (Eigen::Index c = 0; c < v.size(); ++c) {
        const double h = 1e-6 * (1.0 + std::abs(v(c)));
        Vec vp = v, vm = v;
        vp(c) += h;
        vm(c) -= h;
        J.col(c) = (f(vp) - f(vm)) / (2.0 * h);
    }
    return J;
}

} // namespace testing_support
