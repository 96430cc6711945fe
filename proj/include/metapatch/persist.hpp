#pragma once

// Whether an equilibrium of the uncoupled regions survives small travel: derivatives
// of the continued branch at alpha = 0 for disease-free regions, and verdicts from
// local reproduction numbers plus reachability.

#include "metapatch/equilibria.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"
#include "metapatch/model.hpp"
#include "metapatch/network.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace metapatch {

/// One region with everything the predictors need, computed once.
struct RegionProfile {
    PatchModel model;
    std::vector<PatchEquilibrium> equilibria; ///< DFE first, then endemic states
    double R = 0.0;
    Mat v_minus_f; ///< V - F at the disease-free state
    bool irreducible = false;

    int endemic_count() const { return static_cast<int>(equilibria.size()) - 1; }
    const PatchEquilibrium& dfe() const { return equilibria.front(); }
};

inline RegionProfile profile_region(const PatchModel& model)
{
    RegionProfile p;
    p.model = model;
    p.equilibria = patch_equilibria(model);
    p.R = local_reproduction_number(model);
    p.v_minus_f = model.V - new_infection_operator(model, p.dfe().state);
    p.irreducible = is_irreducible(p.v_minus_f);
    return p;
}

inline std::vector<int> endemic_counts(const std::vector<RegionProfile>& regions)
{
    std::vector<int> out;
    for (const auto& r : regions) {
        out.push_back(r.endemic_count());
    }
    return out;
}

namespace detail {

inline void require_compatible(const std::vector<RegionProfile>& regions, const MobilityNetwork& net,
                               const EquilibriumPattern& pattern)
{
    if (static_cast<int>(regions.size()) != net.r || pattern.regions() != net.r) {
        throw DomainError("region count differs between models, network and pattern");
    }
    for (int i = 0; i < net.r; ++i) {
        const auto& m = regions[i].model;
        if (m.n != net.n || m.m != net.m || m.k != net.k) {
            throw DomainError("patch " + std::to_string(i + 1) + " block sizes differ from the network");
        }
        if (pattern.choices[i] < 0 || pattern.choices[i] > regions[i].endemic_count()) {
            throw DomainError("pattern choice " + std::to_string(pattern.choices[i]) + " invalid for region " +
                              std::to_string(i + 1));
        }
    }
}

inline const Vec& pattern_infected(const std::vector<RegionProfile>& regions, const EquilibriumPattern& pattern, int j)
{
    return regions[j].equilibria[static_cast<std::size_t>(pattern.choices[j])].state.x;
}

} // namespace detail

enum class SignClass { zero, positive, nonneg_mixed, has_negative };

inline const char* to_string(SignClass s)
{
    switch (s) {
    case SignClass::zero:
        return "zero";
    case SignClass::positive:
        return "positive";
    case SignClass::nonneg_mixed:
        return "nonneg_mixed";
    case SignClass::has_negative:
        return "has_negative";
    }
    return "?";
}

/// Entries within 1e-11 * max(1, |v|_inf) of zero count as zero.
inline SignClass classify_sign(const Vec& v)
{
    const double tol = 1e-11 * std::max(1.0, v.lpNorm<Eigen::Infinity>());
    bool all_zero = true, all_pos = true;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) < -tol) {
            return SignClass::has_negative;
        }
        all_zero = all_zero && std::abs(v(i)) <= tol;
        all_pos = all_pos && v(i) > tol;
    }
    if (all_zero) {
        return SignClass::zero;
    }
    return all_pos ? SignClass::positive : SignClass::nonneg_mixed;
}

struct BranchDerivative {
    int region = 0;
    int order = 1;
    Vec value;
    SignClass sign_class = SignClass::zero;
};

/// Inflow sum_j C_x^{ij} w^j into region i, with w^j supplied per region.
inline Vec infected_inflow(const MobilityNetwork& net, int i, const std::vector<Vec>& w)
{
    Vec rhs = Vec::Zero(net.n);
    for (int j = 0; j < net.r; ++j) {
        if (j != i && w[j].size() > 0) {
            rhs += net.link(i, j).cx.cwiseProduct(w[j]);
        }
    }
    return rhs;
}

/**
 * First derivative at alpha = 0 of the infected block of a disease-free region:
 * (V - F) d = sum_j C_x^{ij} xhat^j.
 */
inline BranchDerivative branch_first_derivative(int i, const EquilibriumPattern& pattern,
                                                const std::vector<RegionProfile>& regions, const MobilityNetwork& net)
{
    detail::require_compatible(regions, net, pattern);
    net.check_region(i);
    if (pattern.choices[i] != 0) {
        throw DomainError("branch_first_derivative: region " + std::to_string(i + 1) + " is endemic in the pattern");
    }
    std::vector<Vec> xhat;
    for (int j = 0; j < net.r; ++j) {
        xhat.push_back(detail::pattern_infected(regions, pattern, j));
    }
    const Vec rhs = infected_inflow(net, i, xhat);
    BranchDerivative d;
    d.region = i;
    d.order = 1;
    d.value = rhs.isZero(0.0) ? Vec::Zero(net.n) : solve_linear(regions[i].v_minus_f, rhs);
    d.sign_class = classify_sign(d.value);
    return d;
}

/// table[N-1][i] holds the order-N derivative of region i when it is defined.
using DerivativeTable = std::vector<std::vector<std::optional<Vec>>>;

/**
 * Order-N derivative at alpha = 0 of a disease-free region whose lower orders vanish:
 * (V - F) d_N = N sum_j C_x^{ij} d_{N-1}^j.
 *
 * `lower` must hold orders 1..N-1 for region i (all zero) and order N-1 for every
 * region feeding i.
 */
inline BranchDerivative branch_higher_derivative(int i, int N, const DerivativeTable& lower,
                                                 const EquilibriumPattern& pattern,
                                                 const std::vector<RegionProfile>& regions, const MobilityNetwork& net)
{
    detail::require_compatible(regions, net, pattern);
    net.check_region(i);
    if (N < 2 || N > net.r - 1) {
        throw DomainError("branch_higher_derivative: order " + std::to_string(N) + " outside 2.." +
                          std::to_string(net.r - 1));
    }
    if (pattern.choices[i] != 0) {
        throw DomainError("branch_higher_derivative: region " + std::to_string(i + 1) + " is endemic in the pattern");
    }
    if (static_cast<int>(lower.size()) < N - 1) {
        throw DomainError("branch_higher_derivative: lower orders missing");
    }
    for (int l = 1; l < N; ++l) {
        const auto& v = lower[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(i)];
        if (!v || classify_sign(*v) != SignClass::zero) {
            throw DomainError("branch_higher_derivative: order " + std::to_string(l) + " of region " +
                              std::to_string(i + 1) + " is not known to vanish");
        }
    }
    std::vector<Vec> prev(static_cast<std::size_t>(net.r));
    for (int j = 0; j < net.r; ++j) {
        if (j == i || !direct_connection(net, j, i)) {
            continue;
        }
        const auto& v = lower[static_cast<std::size_t>(N - 2)][static_cast<std::size_t>(j)];
        if (!v) {
            throw DomainError("branch_higher_derivative: order " + std::to_string(N - 1) + " of feeding region " +
                              std::to_string(j + 1) + " is unavailable");
        }
        prev[j] = *v;
    }
    const Vec rhs = N * infected_inflow(net, i, prev);
    BranchDerivative d;
    d.region = i;
    d.order = N;
    d.value = rhs.isZero(0.0) ? Vec::Zero(net.n) : solve_linear(regions[i].v_minus_f, rhs);
    d.sign_class = classify_sign(d.value);
    return d;
}

/**
 * Derivatives of every disease-free region through order r-1, each order filled only
 * where the recursion is valid (all lower orders of the region vanish).
 */
inline DerivativeTable derivative_table(const EquilibriumPattern& pattern, const std::vector<RegionProfile>& regions,
                                        const MobilityNetwork& net)
{
    detail::require_compatible(regions, net, pattern);
    const int orders = std::max(1, net.r - 1);
    DerivativeTable table(static_cast<std::size_t>(orders),
                          std::vector<std::optional<Vec>>(static_cast<std::size_t>(net.r)));
    for (int i = 0; i < net.r; ++i) {
        if (pattern.choices[i] == 0) {
            table[0][i] = branch_first_derivative(i, pattern, regions, net).value;
        }
    }
    for (int N = 2; N <= orders; ++N) {
        for (int i = 0; i < net.r; ++i) {
            if (pattern.choices[i] != 0) {
                continue;
            }
            try {
                table[N - 1][i] = branch_higher_derivative(i, N, table, pattern, regions, net).value;
            }
            catch (const DomainError&) {
                // a lower order is nonzero or a feeding value is missing: the recursion does not apply
            }
        }
    }
    return table;
}

enum class Verdict { persists, vanishes, indeterminate };

/// Which argument decided a verdict.
enum class Rule {
    disease_free,         ///< the disease-free state continues for every alpha
    all_endemic,          ///< interior states continue into the open cone
    complete_inflow,      ///< every disease-free region receives positive inflow in every infected class
    irreducible_inflow,   ///< irreducible V - F and each disease-free region fed directly by an endemic one
    general_reachability, ///< irreducible V - F with reachability through intermediate regions
    derivative_direct     ///< reducible V - F: sign of the first nonvanishing derivative
};

inline const char* to_string(Verdict v)
{
    switch (v) {
    case Verdict::persists:
        return "persists";
    case Verdict::vanishes:
        return "vanishes";
    case Verdict::indeterminate:
        return "indeterminate";
    }
    return "?";
}

inline const char* to_string(Rule r)
{
    switch (r) {
    case Rule::disease_free:
        return "disease_free";
    case Rule::all_endemic:
        return "all_endemic";
    case Rule::complete_inflow:
        return "complete_inflow";
    case Rule::irreducible_inflow:
        return "irreducible_inflow";
    case Rule::general_reachability:
        return "general_reachability";
    case Rule::derivative_direct:
        return "derivative_direct";
    }
    return "?";
}

struct PersistenceVerdict {
    EquilibriumPattern pattern;
    Verdict verdict = Verdict::indeterminate;
    Rule rule = Rule::general_reachability;
    std::vector<int> witness;            ///< EAT -> ... -> offending region, 0-based
    std::optional<double> offending_R;   ///< local R of the region that leaves the cone
    std::vector<double> R_values;
    std::string note;
};

/// |R - 1| below this leaves the threshold theorems without a strict inequality.
inline constexpr double marginal_R_band = 1e-6;

inline PersistenceVerdict predict(const EquilibriumPattern& pattern, const std::vector<RegionProfile>& regions,
                                  const MobilityNetwork& net)
{
    detail::require_compatible(regions, net, pattern);
    PersistenceVerdict out;
    out.pattern = pattern;
    for (const auto& r : regions) {
        out.R_values.push_back(r.R);
    }
    if (pattern.is_dfe()) {
        out.verdict = Verdict::persists;
        out.rule = Rule::disease_free;
        return out;
    }
    if (pattern.all_endemic()) {
        out.verdict = Verdict::persists;
        out.rule = Rule::all_endemic;
        return out;
    }

    const auto cls = classify_pattern(net, pattern);
    bool reducible = false;
    for (int i = 0; i < net.r; ++i) {
        if (cls.dfat(i) && cls.reachable_from_eat[i]) {
            if (std::abs(regions[i].R - 1.0) < marginal_R_band) {
                out.verdict = Verdict::indeterminate;
                out.rule = regions[i].irreducible ? Rule::general_reachability : Rule::derivative_direct;
                out.witness = cls.witness[i];
                out.offending_R = regions[i].R;
                out.note = "local R within 1e-6 of the threshold";
                return out;
            }
            reducible = reducible || !regions[i].irreducible;
        }
    }

    if (reducible) {
        out.rule = Rule::derivative_direct;
        const auto table = derivative_table(pattern, regions, net);
        bool unresolved = false;
        for (int i = 0; i < net.r; ++i) {
            if (!cls.dfat(i)) {
                continue;
            }
            std::optional<SignClass> first;
            for (const auto& order : table) {
                if (!order[i]) {
                    break;
                }
                const auto s = classify_sign(*order[i]);
                if (s != SignClass::zero) {
                    first = s;
                    break;
                }
            }
            if (first == SignClass::has_negative) {
                out.verdict = Verdict::vanishes;
                out.witness = cls.witness[i];
                out.offending_R = regions[i].R;
                return out;
            }
            if (first == SignClass::nonneg_mixed) {
                unresolved = true;
            }
        }
        out.verdict = unresolved ? Verdict::indeterminate : Verdict::persists;
        if (unresolved) {
            out.note = "first nonvanishing derivative has zero entries";
        }
        return out;
    }

    // irreducible V - F in every reachable disease-free region
    std::vector<Vec> xhat;
    for (int j = 0; j < net.r; ++j) {
        xhat.push_back(detail::pattern_infected(regions, pattern, j));
    }
    bool complete = true, direct = true;
    for (int i = 0; i < net.r; ++i) {
        if (cls.dfat(i)) {
            const Vec inflow = infected_inflow(net, i, xhat);
            complete = complete && inflow.minCoeff() > 0.0;
            direct = direct && cls.M[i] == 0;
        }
    }
    out.rule = complete ? Rule::complete_inflow : (direct ? Rule::irreducible_inflow : Rule::general_reachability);
    for (int i = 0; i < net.r; ++i) {
        if (cls.dfat(i) && cls.reachable_from_eat[i] && regions[i].R > 1.0) {
            out.verdict = Verdict::vanishes;
            out.witness = cls.witness[i];
            out.offending_R = regions[i].R;
            return out;
        }
    }
    out.verdict = Verdict::persists;
    return out;
}

inline std::vector<PersistenceVerdict> predict_all(const std::vector<RegionProfile>& regions,
                                                   const MobilityNetwork& net)
{
    std::vector<PersistenceVerdict> out;
    for (const auto& pattern : enumerate_patterns(endemic_counts(regions))) {
        out.push_back(predict(pattern, regions, net));
    }
    return out;
}

/// Number of patterns predicted to persist, the DFE included.
inline int count_persisting(const std::vector<RegionProfile>& regions, const MobilityNetwork& net)
{
    if (net.r != 3) {
        throw DomainError("count_persisting: three regions expected");
    }
    int count = 0;
    for (const auto& v : predict_all(regions, net)) {
        if (v.verdict == Verdict::indeterminate) {
            throw NumericalError("count_persisting: pattern " + v.pattern.label() + " is indeterminate");
        }
        count += v.verdict == Verdict::persists ? 1 : 0;
    }
    return count;
}

} // namespace metapatch
