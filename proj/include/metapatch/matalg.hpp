#pragma once

// Dense small-matrix kernel: Perron root, sign-pattern tests, guarded solves
// and irreducibility of nonzero patterns.

#include "metapatch/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <vector>

namespace metapatch {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Complex = std::complex<double>;

/// Condition estimate above which a linear system is reported as numerically singular.
inline constexpr double singular_condition_threshold = 1e12;

/// Entries with magnitude at or below this are structural zeros.
inline constexpr double pattern_zero_threshold = 1e-14;

namespace detail {

inline void require_square(const Mat& a, const char* what)
{
    if (a.rows() != a.cols() || a.rows() == 0) {
        throw DomainError(std::string(what) + ": matrix must be square and non-empty, got " +
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
    }
}

inline void require_finite(const Mat& a, const char* what)
{
    if (!a.allFinite()) {
        throw DomainError(std::string(what) + ": matrix has non-finite entries");
    }
}

} // namespace detail

/// All eigenvalues of a square real matrix (unsorted).
inline std::vector<Complex> eigen_spectrum(const Mat& a)
{
    detail::require_square(a, "eigen_spectrum");
    detail::require_finite(a, "eigen_spectrum");
    Eigen::EigenSolver<Mat> solver(a, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigen_spectrum: eigenvalue iteration did not converge");
    }
    const auto& ev = solver.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

/// Largest real part over the spectrum.
inline double spectral_abscissa(const Mat& a)
{
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& lambda : eigen_spectrum(a)) {
        best = std::max(best, lambda.real());
    }
    return best;
}

/**
 * Perron root of a nonnegative square matrix.
 *
 * Computed from the full spectrum as the largest modulus. Entries below
 * -1e-12 * max|a| are rejected as negative; smaller negatives are round-off
 * from upstream products such as F * V^{-1} and are ignored.
 */
inline double spectral_radius(const Mat& a)
{
    detail::require_square(a, "spectral_radius");
    detail::require_finite(a, "spectral_radius");
    const double scale = a.cwiseAbs().maxCoeff();
    if (a.minCoeff() < -1e-12 * std::max(scale, 1.0)) {
        throw DomainError("spectral_radius: matrix has a negative entry " + std::to_string(a.minCoeff()));
    }
    double rho = 0.0;
    for (const auto& lambda : eigen_spectrum(a)) {
        rho = std::max(rho, std::abs(lambda));
    }
    return rho;
}

/// True iff every off-diagonal entry is <= 0.
inline bool z_pattern_check(const Mat& a)
{
    detail::require_square(a, "z_pattern_check");
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (i != j && a(i, j) > 0.0) {
                return false;
            }
        }
    }
    return true;
}

/// One-norm condition estimate from an explicit inverse; +inf when singular.
inline double condition_estimate(const Mat& a)
{
    detail::require_square(a, "condition_estimate");
    Eigen::FullPivLU<Mat> lu(a);
    if (!lu.isInvertible()) {
        return std::numeric_limits<double>::infinity();
    }
    const Mat inv = lu.inverse();
    auto norm1 = [](const Mat& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); };
    return norm1(a) * norm1(inv);
}

/**
 * Solve a x = b for square, well-conditioned a.
 *
 * Throws SingularMatrixError when the condition estimate exceeds 1e12.
 */
inline Vec solve_linear(const Mat& a, const Vec& b)
{
    detail::require_square(a, "solve_linear");
    detail::require_finite(a, "solve_linear");
    if (b.size() != a.rows()) {
        throw DomainError("solve_linear: right-hand side has length " + std::to_string(b.size()) +
                          ", expected " + std::to_string(a.rows()));
    }
    const double cond = condition_estimate(a);
    if (!(cond < singular_condition_threshold)) {
        throw SingularMatrixError("solve_linear: matrix is numerically singular", cond);
    }
    Eigen::FullPivLU<Mat> lu(a);
    Vec x = lu.solve(b);
    // one step of iterative refinement keeps the residual at round-off level
    const Vec r = b - a * x;
    x += lu.solve(r);
    return x;
}

struct SignPatternReport {
    bool is_z_pattern = false;
    bool is_nonsingular_m = false;
    bool inverse_nonneg = false;
    double min_real_eig = 0.0;
};

/// Z-pattern flag, smallest real part of the spectrum, and nonnegativity of the inverse.
inline SignPatternReport m_matrix_report(const Mat& a)
{
    detail::require_square(a, "m_matrix_report");
    SignPatternReport report;
    report.is_z_pattern = z_pattern_check(a);
    report.min_real_eig = std::numeric_limits<double>::infinity();
    for (const auto& lambda : eigen_spectrum(a)) {
        report.min_real_eig = std::min(report.min_real_eig, lambda.real());
    }
    const double cond = condition_estimate(a);
    if (cond < singular_condition_threshold) {
        const Mat inv = Eigen::FullPivLU<Mat>(a).inverse();
        const double tol = 1e-12 * std::max(inv.cwiseAbs().maxCoeff(), 1.0);
        report.inverse_nonneg = inv.minCoeff() >= -tol;
    }
    report.is_nonsingular_m = report.is_z_pattern && report.min_real_eig > 0.0;
    return report;
}

/// Boolean pattern of entries with magnitude above the structural-zero threshold.
inline BoolMat nonzero_pattern(const Mat& a, double threshold = pattern_zero_threshold)
{
    return (a.array().abs() > threshold).matrix();
}

/**
 * Strongly connected components of the digraph with an edge j -> i whenever
 * pattern(i, j) is true. Returns one component id per node (Tarjan order).
 */
inline std::vector<int> strongly_connected_components(const BoolMat& pattern)
{
    const int n = static_cast<int>(pattern.rows());
    if (pattern.cols() != n) {
        throw DomainError("strongly_connected_components: pattern must be square");
    }
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<char> on_stack(n, 0);
    int counter = 0;
    int n_comp = 0;

    std::function<void(int)> visit = [&](int v) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack[v] = 1;
        for (int w = 0; w < n; ++w) {
            if (w == v || !pattern(w, v)) {
                continue;
            }
            if (index[w] < 0) {
                visit(w);
                low[v] = std::min(low[v], low[w]);
            }
            else if (on_stack[w]) {
                low[v] = std::min(low[v], index[w]);
            }
        }
        if (low[v] == index[v]) {
            int w;
            do {
                w = stack.back();
                stack.pop_back();
                on_stack[w] = 0;
                comp[w] = n_comp;
            } while (w != v);
            ++n_comp;
        }
    };

    for (int v = 0; v < n; ++v) {
        if (index[v] < 0) {
            visit(v);
        }
    }
    return comp;
}

/// True iff the pattern's digraph is strongly connected (1x1 is irreducible).
inline bool is_irreducible(const BoolMat& pattern)
{
    if (pattern.rows() != pattern.cols() || pattern.rows() == 0) {
        throw DomainError("is_irreducible: pattern must be square and non-empty");
    }
    const auto comp = strongly_connected_components(pattern);
    return std::all_of(comp.begin(), comp.end(), [&](int c) { return c == comp.front(); });
}

inline bool is_irreducible(const Mat& a)
{
    return is_irreducible(nonzero_pattern(a));
}

} // namespace metapatch
