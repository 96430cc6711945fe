#include "common.hpp"

#include "metapatch/equilibria.hpp"
#include "metapatch/matalg.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace metapatch;
using namespace testing_support;

namespace {

Mat hiv_next_generation(const HivParams& hp)
{
    const auto model = make_hiv(hp);
    const auto dfe = disease_free_equilibrium(model);
    return new_infection_operator(model, dfe.state) * model.V.inverse();
}

Mat hiv_v_minus_f(const HivParams& hp)
{
    const auto model = make_hiv(hp);
    const auto dfe = disease_free_equilibrium(model);
    return model.V - new_infection_operator(model, dfe.state);
}

// reducible iff some nonempty proper subset I has a_ij = 0 for all i in I, j outside I
bool brute_force_irreducible(const BoolMat& p)
{
    const int n = static_cast<int>(p.rows());
    for (int mask = 1; mask < (1 << n) - 1; ++mask) {
        bool closed = true;
        for (int i = 0; i < n && closed; ++i) {
            for (int j = 0; j < n && closed; ++j) {
                if ((mask >> i & 1) && !(mask >> j & 1) && p(i, j)) {
                    closed = false;
                }
            }
        }
        if (closed) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST(SpectralRadius, Identity) { EXPECT_NEAR(spectral_radius(Mat::Identity(2, 2)), 1.0, 1e-12); }

TEST(SpectralRadius, SymmetricPermutation)
{
    Mat a(2, 2);
    a << 0, 2, 2, 0;
    EXPECT_NEAR(spectral_radius(a), 2.0, 1e-12);
}

TEST(SpectralRadius, HivAboveOne) { EXPECT_NEAR(spectral_radius(hiv_next_generation(hiv_above())), 1.12, 5e-3); }

TEST(SpectralRadius, RejectsBadInput)
{
    EXPECT_THROW(spectral_radius(Mat::Ones(2, 3)), DomainError);
    Mat a(2, 2);
    a << 1, -1, 0, 1;
    EXPECT_THROW(spectral_radius(a), DomainError);
}

TEST(ZPattern, Examples)
{
    EXPECT_TRUE(z_pattern_check(Vec::Constant(3, 2.0).asDiagonal().toDenseMatrix()));
    Mat a(2, 2);
    a << 1, 0.5, 0, 1;
    EXPECT_FALSE(z_pattern_check(a));
    EXPECT_TRUE(z_pattern_check(hiv_v_minus_f(hiv_window())));
    EXPECT_THROW(z_pattern_check(Mat::Ones(1, 2)), DomainError);
}

TEST(MMatrix, Examples)
{
    Mat a(2, 2);
    a << 2, -1, -1, 2;
    const auto good = m_matrix_report(a);
    EXPECT_TRUE(good.is_nonsingular_m);
    EXPECT_TRUE(good.inverse_nonneg);
    EXPECT_NEAR(good.min_real_eig, 1.0, 1e-12);

    a << 1, -2, -2, 1;
    const auto bad = m_matrix_report(a);
    EXPECT_FALSE(bad.is_nonsingular_m);
    EXPECT_FALSE(bad.inverse_nonneg);
    EXPECT_NEAR(bad.min_real_eig, -1.0, 1e-12);

    Vec d(3);
    d << 1.05, 1.05, 1.05; // removal block with alpha = 0
    EXPECT_TRUE(m_matrix_report(d.asDiagonal().toDenseMatrix()).inverse_nonneg);
}

TEST(SolveLinear, Examples)
{
    Vec b(2);
    b << 3, 4;
    EXPECT_TRUE(solve_linear(Mat::Identity(2, 2), b).isApprox(b));
    Mat a(2, 2);
    a << 2, 0, 0, 4;
    b << 2, 2;
    Vec expected(2);
    expected << 1, 0.5;
    EXPECT_TRUE(solve_linear(a, b).isApprox(expected));

    const Mat vf = hiv_v_minus_f(hiv_window());
    const Vec rhs = Vec::Ones(4);
    const Vec v = solve_linear(vf, rhs);
    EXPECT_LE((vf * v - rhs).lpNorm<Eigen::Infinity>(), 1e-9 * (1.0 + rhs.lpNorm<Eigen::Infinity>()));
}

TEST(SolveLinear, SingularReportsCondition)
{
    Mat a(2, 2);
    a << 1, 2, 2, 4;
    try {
        solve_linear(a, Vec::Ones(2));
        FAIL() << "expected SingularMatrixError";
    }
    catch (const SingularMatrixError& e) {
        EXPECT_GE(e.condition(), singular_condition_threshold);
    }
    EXPECT_THROW(solve_linear(Mat::Identity(2, 2), Vec::Ones(3)), DomainError);
}

TEST(Irreducible, Examples)
{
    EXPECT_TRUE(is_irreducible(BoolMat(BoolMat::Constant(1, 1, true))));
    EXPECT_TRUE(is_irreducible(BoolMat(BoolMat::Constant(1, 1, false))));
    BoolMat diag = BoolMat::Constant(2, 2, false);
    diag(0, 0) = diag(1, 1) = true;
    EXPECT_FALSE(is_irreducible(diag));
    EXPECT_TRUE(is_irreducible(nonzero_pattern(hiv_v_minus_f(hiv_window()))));
}

TEST(EigenSpectrum, Examples)
{
    Mat rot(2, 2);
    rot << 0, -1, 1, 0;
    auto ev = eigen_spectrum(rot);
    ASSERT_EQ(ev.size(), 2u);
    std::sort(ev.begin(), ev.end(), [](auto a, auto b) { return a.imag() < b.imag(); });
    EXPECT_NEAR(std::abs(ev[0] - Complex(0, -1)), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(ev[1] - Complex(0, 1)), 0.0, 1e-12);

    Vec d(3);
    d << -1, -2, -3;
    auto ev2 = eigen_spectrum(d.asDiagonal().toDenseMatrix());
    std::sort(ev2.begin(), ev2.end(), [](auto a, auto b) { return a.real() < b.real(); });
    EXPECT_NEAR(ev2[0].real(), -3, 1e-12);
    EXPECT_NEAR(ev2[2].real(), -1, 1e-12);

    const auto model = make_hiv(hiv_above());
    const auto dfe = disease_free_equilibrium(model);
    EXPECT_GT(spectral_abscissa(patch_jacobian(model, dfe.state)), 0.0);
}

// ---------------------------------------------------------------------------
// properties

TEST(MatalgProperty, SpectralRadiusBoundsAndTranspose)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 8);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = dim(rng);
        Mat a(n, n);
        for (int i = 0; i < n * n; ++i) {
            a.data()[i] = u(rng) < 0.3 ? 0.0 : u(rng) * 5.0;
        }
        const double rho = spectral_radius(a);
        EXPECT_GE(rho, a.diagonal().maxCoeff() - 1e-10 * (1.0 + rho));
        EXPECT_NEAR(spectral_radius(a.transpose()), rho, 1e-10 * (1.0 + rho));
    }
}

TEST(MatalgProperty, MMatrixEquivalenceOnRandomZPatterns)
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 8);
    int nonsingular = 0, singular = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = dim(rng);
        Mat a(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                a(i, j) = i == j ? 0.0 : (u(rng) < 0.4 ? 0.0 : -u(rng));
            }
        }
        // diagonal shift around the Perron root of the off-diagonal part so both outcomes occur
        const double rho = spectral_radius(-a);
        const double shift = rho * (0.5 + u(rng)) + (u(rng) < 0.5 ? 0.05 : -0.05) * (1.0 + rho) * u(rng);
        a.diagonal().setConstant(shift);
        for (int i = 0; i < n; ++i) {
            a(i, i) += 0.2 * (u(rng) - 0.5);
        }
        const auto report = m_matrix_report(a);
        if (condition_estimate(a) >= 1e10) {
            continue; // equivalence is only decidable away from singularity
        }
        ASSERT_TRUE(report.is_z_pattern);
        EXPECT_EQ(report.is_nonsingular_m, report.inverse_nonneg) << a;
        if (report.is_nonsingular_m) {
            EXPECT_GT(report.min_real_eig, 0.0);
        }
        (report.is_nonsingular_m ? nonsingular : singular)++;
    }
    EXPECT_GT(nonsingular, 100);
    EXPECT_GT(singular, 100);
}

TEST(MatalgProperty, SolveResidualOnWellConditioned)
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 10);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = dim(rng);
        Mat a(n, n);
        for (int i = 0; i < n * n; ++i) {
            a.data()[i] = g(rng);
        }
        a += Mat::Identity(n, n) * (2.0 * std::sqrt(static_cast<double>(n)) + 1.0);
        Vec b(n);
        for (int i = 0; i < n; ++i) {
            b(i) = 100.0 * g(rng);
        }
        const Vec x = solve_linear(a, b);
        EXPECT_LE((a * x - b).lpNorm<Eigen::Infinity>(), 1e-9 * (1.0 + b.lpNorm<Eigen::Infinity>()));
    }
}

TEST(MatalgProperty, IrreducibleMatchesBipartitionSearch)
{
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 1; n <= 6; ++n) {
        for (int trial = 0; trial < 400; ++trial) {
            const double density = u(rng);
            BoolMat p(n, n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    p(i, j) = u(rng) < density;
                }
            }
            EXPECT_EQ(is_irreducible(p), brute_force_irreducible(p)) << p;
        }
    }
}

TEST(MatalgProperty, SpectrumTraceAndDeterminant)
{
    std::mt19937_64 rng(15);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 8);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = dim(rng);
        Mat a(n, n);
        for (int i = 0; i < n * n; ++i) {
            a.data()[i] = g(rng);
        }
        Complex sum = 0.0, prod = 1.0;
        for (const auto& l : eigen_spectrum(a)) {
            sum += l;
            prod *= l;
        }
        EXPECT_NEAR(sum.real(), a.trace(), 1e-7);
        EXPECT_NEAR(sum.imag(), 0.0, 1e-7);
        const double det = a.determinant();
        EXPECT_LE(std::abs(prod - det), 1e-6 * std::max(1.0, std::abs(det)));
    }
}
