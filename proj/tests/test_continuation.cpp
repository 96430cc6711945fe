#include "regimes.hpp"

#include "metapatch/continuation.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

using namespace metapatch;
using namespace testing_support;

namespace {

constexpr int hiv_d = 7;

MobilityNetwork random_hiv_network(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MobilityNetwork net(3, 4, 2, 1);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i != j && u(rng) < 0.6) {
                auto& l = net.link(i, j);
                for (auto* v : {&l.cx, &l.cy, &l.cz}) {
                    for (Eigen::Index c = 0; c < v->size(); ++c) {
                        (*v)(c) = u(rng) < 0.3 ? 0.0 : 3.0 * u(rng);
                    }
                }
            }
        }
    }
    return net;
}

Vec random_state(std::mt19937_64& rng, int r)
{
    std::uniform_real_distribution<double> u(0.01, 5.0);
    Vec X(r * hiv_d);
    for (Eigen::Index c = 0; c < X.size(); ++c) {
        X(c) = u(rng);
    }
    return X;
}

std::vector<PatchModel> hiv_models(std::initializer_list<Regime> list) { return models_of(regions(list)); }

} // namespace

TEST(CoupledResidual, ProductStateIsFixedAtZeroTravel)
{
    const auto regs = regions({W, W, A});
    const auto net = hiv_net("fig3c");
    for (const auto& pat : enumerate_patterns(endemic_counts(regs))) {
        const Vec r = coupled_residual(models_of(regs), net, 0.0, product_state(pat, regs));
        EXPECT_LT(r.lpNorm<Eigen::Infinity>(), 1e-10) << pat.label();
    }
}

TEST(CoupledResidual, SymmetricTravelCancels)
{
    const auto models = hiv_models({W, W});
    MobilityNetwork net(2, 4, 2, 1);
    net.set_edge(0, 1, 0.7);
    net.set_edge(1, 0, 0.7);
    std::mt19937_64 rng(47);
    const Vec x = random_state(rng, 1);
    Vec X(2 * hiv_d);
    X << x, x;
    const Vec patch = patch_residual(models[0], PatchState::unpack(x, 4, 2, 1));
    const Vec r = coupled_residual(models, net, 0.3, X);
    EXPECT_LT((r.segment(0, hiv_d) - patch).lpNorm<Eigen::Infinity>(), 1e-14);
    EXPECT_LT((r.segment(hiv_d, hiv_d) - patch).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(CoupledResidual, ContinuedDiseaseFreeState)
{
    const auto regs = regions({W, W, W});
    const auto net = hiv_net("fig3c");
    const auto rec = continue_branch({{0, 0, 0}}, regs, net, {1e-3});
    const auto* p = rec.at(1e-3);
    ASSERT_NE(p, nullptr);
    EXPECT_LT(coupled_residual(models_of(regs), net, 1e-3, p->X).lpNorm<Eigen::Infinity>(), 1e-9);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(p->X(i * hiv_d + 6), 0.0);
    }
}

TEST(CoupledResidual, RejectsBadInput)
{
    const auto models = hiv_models({W, W, W});
    const auto net = hiv_net("fig3c");
    EXPECT_THROW(coupled_residual(models, net, 0.0, Vec::Ones(5)), DomainError);
    EXPECT_THROW(coupled_residual(hiv_models({W, W}), net, 0.0, Vec::Ones(21)), DomainError);
    // zero population in a region makes standard incidence undefined
    Vec X = Vec::Ones(21);
    X.segment(0, 6).setZero();
    EXPECT_THROW(coupled_residual(models, net, 0.0, X), DomainError);
}

TEST(CoupledJacobian, DeterminantFactorsAtZeroTravel)
{
    const auto regs = regions({W, W, A});
    const auto net = hiv_net("fig3b");
    const EquilibriumPattern pat{{1, 2, 1}};
    const Mat J = coupled_jacobian(models_of(regs), net, 0.0, product_state(pat, regs));
    double product = 1.0;
    for (int i = 0; i < 3; ++i) {
        product *= patch_jacobian(regs[i].model, regs[i].equilibria[pat.choices[i]].state).determinant();
    }
    EXPECT_NEAR(J.determinant(), product, 1e-10 * std::abs(product));
    // off-diagonal blocks are exactly zero
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i != j) {
                EXPECT_TRUE(J.block(i * hiv_d, j * hiv_d, hiv_d, hiv_d).isZero(0.0));
            }
        }
    }
}

TEST(CoupledJacobian, SusceptibleCouplingIsTravelDiagonal)
{
    const auto regs = regions({W, W, W});
    auto net = hiv_net("fig3a");
    net.link(1, 0).cy << 0.4, 1.3;
    const double alpha = 0.02;
    const Mat J = coupled_jacobian(models_of(regs), net, alpha, product_state({{2, 1, 0}}, regs));
    // rows of region 2's susceptibles, columns of region 1's susceptibles
    const Mat block = J.block(1 * hiv_d + 4, 0 * hiv_d + 4, 2, 2);
    EXPECT_TRUE(block.isApprox(Mat(alpha * net.link(1, 0).cy.asDiagonal()), 1e-15));
}

TEST(ContinueBranch, DiseaseFreeToLargeTravel)
{
    const auto regs = regions({W, A, B});
    for (const auto* name : {"fig3a", "fig3c", "fig4d"}) {
        const auto rec = continue_branch({{0, 0, 0}}, regs, hiv_net(name), {1e-5, 1e-3, 1e-1});
        EXPECT_TRUE(rec.complete);
        EXPECT_EQ(rec.verdict_observed, Verdict::persists);
        ASSERT_EQ(rec.points.size(), 4u);
        for (const auto& p : rec.points) {
            for (int i = 0; i < 3; ++i) {
                EXPECT_TRUE(p.X.segment(i * hiv_d, 4).isZero(1e-12));
                EXPECT_LE(std::abs(p.X(i * hiv_d + 6)), 1e-12);
                EXPECT_GT(p.X.segment(i * hiv_d + 4, 2).minCoeff(), 0.0);
            }
            EXPECT_LE(p.residual_norm, 1e-9);
        }
    }
}

TEST(ContinueBranch, FirstPointIsProductState)
{
    const auto regs = regions({W, W, W});
    const EquilibriumPattern pat{{2, 1, 0}};
    const auto rec = continue_branch(pat, regs, hiv_net("fig3b"), {1e-7, 1e-6});
    ASSERT_FALSE(rec.points.empty());
    EXPECT_EQ(rec.points[0].alpha, 0.0);
    EXPECT_EQ(rec.points[0].X, product_state(pat, regs));
    for (std::size_t p = 1; p < rec.points.size(); ++p) {
        EXPECT_GT(rec.points[p].alpha, rec.points[p - 1].alpha);
    }
}

TEST(ContinueBranch, CompleteNetworkUpperBranchesStable)
{
    const auto regs = regions({W, W, W});
    const auto rec = continue_branch({{2, 2, 2}}, regs, hiv_net("fig3c"), default_alpha_grid(1e-5));
    EXPECT_EQ(rec.verdict_observed, Verdict::persists);
    ASSERT_NE(rec.at(1e-5), nullptr);
    EXPECT_EQ(rec.at(1e-5)->stability, Stability::stable);
}

TEST(ContinueBranch, ImmediateExitIntoAboveThresholdRegion)
{
    const auto regs = regions({W, W, A});
    const auto rec = continue_branch({{2, 2, 0}}, regs, hiv_net("fig3c"), default_alpha_grid(1e-4));
    ASSERT_TRUE(rec.exit_alpha);
    EXPECT_LE(*rec.exit_alpha, 1e-6);
    EXPECT_EQ(rec.verdict_observed, Verdict::vanishes);
    // nothing is continued past the exit
    EXPECT_EQ(rec.points.back().alpha, *rec.exit_alpha);
}

TEST(ContinueBranch, ExitRefinement)
{
    const auto regs = regions({W, W, A});
    ContinuationOptions opt;
    opt.refine_exit = true;
    const auto rec = continue_branch({{2, 2, 0}}, regs, hiv_net("fig3c"), default_alpha_grid(1e-4), opt);
    ASSERT_TRUE(rec.exit_alpha);
    EXPECT_LE(*rec.exit_alpha, 1e-8);
    EXPECT_GT(*rec.exit_alpha, 0.0);
}

TEST(ContinueBranch, SingularJacobianAtZeroTravel)
{
    // one-group SIR with R exactly 1: the disease-free Jacobian has a zero eigenvalue
    const auto model = make_multigroup(Vec::Ones(1), 1.0, Vec::Ones(1), Mat::Constant(1, 1, 2.0));
    ASSERT_NEAR(local_reproduction_number(model), 1.0, 1e-15);
    const auto prof = profile_region(model);
    MobilityNetwork net(2, 1, 1, 1);
    net.set_edge(0, 1);
    try {
        continue_branch({{0, 0}}, {prof, prof}, net, {1e-6});
        FAIL() << "expected SingularMatrixError";
    }
    catch (const SingularMatrixError& e) {
        EXPECT_NE(std::string(e.what()).find("theorem hypothesis violated"), std::string::npos);
    }
}

TEST(ContinueBranch, RejectsNegativeTravel)
{
    EXPECT_THROW(continue_branch({{0, 0, 0}}, regions({W, W, W}), hiv_net("fig3c"), {-1e-3}), DomainError);
}

TEST(BranchDerivative, FirstOrderMatchesRichardson)
{
    const auto regs = regions({W, W, W});
    const auto net = hiv_net("fig3c");
    const EquilibriumPattern pat{{0, 2, 2}};
    const auto rec = continue_branch(pat, regs, net, {1e-7, 2e-7});
    const auto d = branch_first_derivative(0, pat, regs, net);
    ASSERT_EQ(d.sign_class, SignClass::positive);
    EXPECT_LE(branch_derivative_check(rec, d, net, 1e-7), 1e-3);
}

TEST(BranchDerivative, UnreachableRegionBothZero)
{
    const auto regs = regions({W, W, W});
    MobilityNetwork net(3, 4, 2, 1);
    net.set_edge(0, 1);
    const EquilibriumPattern pat{{0, 2, 0}};
    const auto rec = continue_branch(pat, regs, net, {1e-7, 2e-7});
    const auto d = branch_first_derivative(0, pat, regs, net);
    EXPECT_EQ(d.sign_class, SignClass::zero);
    EXPECT_LE(branch_derivative_check(rec, d, net, 1e-7), 1e-15);
}

TEST(BranchDerivative, ChainSecondOrder)
{
    const auto regs = regions({W, W, W});
    const auto net = hiv_chain();
    const EquilibriumPattern pat{{0, 0, 2}};
    const auto rec = continue_branch(pat, regs, net, {1e-6, 2e-6});
    const auto table = derivative_table(pat, regs, net);
    BranchDerivative first{0, 1, *table[0][0], SignClass::zero};
    EXPECT_LT(branch_derivative_check(rec, first, net, 1e-6), 1e-4);
    const auto second = branch_higher_derivative(0, 2, table, pat, regs, net);
    EXPECT_LE(branch_second_derivative_check(rec, second, net, 1e-6), 1e-2);
    EXPECT_THROW(branch_derivative_check(rec, second, net, 1e-6), DomainError);
    EXPECT_THROW(branch_derivative_check(rec, first, net, 5e-6), DomainError);
}

TEST(CountStable, BackwardWindowCensus)
{
    const auto regs = regions({W, W, W});
    for (const auto* name : {"fig3a", "fig3b"}) {
        const auto c = count_stable(regs, hiv_net(name), 1e-5);
        EXPECT_EQ(c.stable, 8) << name;
        EXPECT_EQ(c.unstable, 19) << name;
        EXPECT_EQ(c.marginal, 0) << name;
        EXPECT_EQ(c.vanished, 0) << name;
    }
}

TEST(CountStable, ZeroTravelIsProductClassification)
{
    const auto regs = regions({W, W, A});
    const auto c = count_stable(regs, hiv_net("fig3c"), 0.0);
    int stable = 0;
    for (const auto& pat : enumerate_patterns(endemic_counts(regs))) {
        bool all = true;
        for (int i = 0; i < 3; ++i) {
            all = all && regs[i].equilibria[pat.choices[i]].stability == Stability::stable;
        }
        stable += all ? 1 : 0;
    }
    EXPECT_EQ(c.stable, stable);
    EXPECT_EQ(c.stable + c.unstable, 18);
}

TEST(ContinueAll, ThreadCountDoesNotChangeResults)
{
    const auto regs = regions({W, W, A});
    const auto net = hiv_net("fig3b");
    const auto grid = default_alpha_grid(1e-5);
    ::setenv("METAPATCH_THREADS", "1", 1);
    const auto serial = continue_all(regs, net, grid);
    ::setenv("METAPATCH_THREADS", "4", 1);
    const auto parallel = continue_all(regs, net, grid);
    ::unsetenv("METAPATCH_THREADS");
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].pattern, parallel[i].pattern);
        ASSERT_EQ(serial[i].points.size(), parallel[i].points.size());
        EXPECT_EQ(serial[i].points.back().X, parallel[i].points.back().X);
    }
}

// ---------------------------------------------------------------------------
// properties

TEST(ContinuationProperty, JacobianMatchesFiniteDifferences)
{
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::vector<PatchModel> models{make_hiv(random_hiv(rng)), make_hiv(random_hiv(rng)),
                                             make_hiv(random_hiv(rng))};
        const auto net = random_hiv_network(rng);
        const double alpha = u(rng) < 0.2 ? 0.0 : std::pow(10.0, -4.0 * u(rng));
        const Vec X = random_state(rng, 3);
        const Mat J = coupled_jacobian(models, net, alpha, X);
        const Mat fd = fd_jacobian([&](const Vec& v) { return coupled_residual(models, net, alpha, v); }, X);
        EXPECT_LE((J - fd).lpNorm<Eigen::Infinity>(), 1e-5 * std::max(1.0, J.lpNorm<Eigen::Infinity>()));
    }
}

TEST(ContinuationProperty, OracleAgreementAllDigraphs)
{
    int mismatches = 0;
    for (const auto& net : enumerate_networks(3, 4, 2, 1)) {
        for (const auto& assignment : all_regime_assignments()) {
            const auto regs = regions(assignment);
            const auto records = continue_all(regs, net, default_alpha_grid(1e-4));
            const auto verdicts = predict_all(regs, net);
            for (std::size_t p = 0; p < records.size(); ++p) {
                ASSERT_NE(verdicts[p].verdict, Verdict::indeterminate);
                if (records[p].verdict_observed != verdicts[p].verdict) {
                    ++mismatches;
                    ADD_FAILURE() << net.name << " " << records[p].pattern.label();
                }
            }
        }
    }
    EXPECT_EQ(mismatches, 0);
}

TEST(ContinuationProperty, StabilityPersistsForSmallTravel)
{
    for (const auto* name : {"fig3a", "fig3b", "fig3c", "fig4a", "fig4b", "fig4c", "fig4d"}) {
        for (const auto& assignment : {std::vector<Regime>{W, W, W}, std::vector<Regime>{W, A, B}}) {
            for (const auto& rec : continue_all(regions(assignment), hiv_net(name), default_alpha_grid(1e-6))) {
                if (rec.exit_alpha) {
                    continue;
                }
                const auto* p = rec.at(1e-6);
                ASSERT_NE(p, nullptr);
                EXPECT_EQ(p->stability, rec.points.front().stability) << name << " " << rec.pattern.label();
            }
        }
    }
}

TEST(ContinuationProperty, GridRefinementDoesNotMoveBranch)
{
    const auto regs = regions({W, W, A});
    const auto net = hiv_net("fig3a");
    std::vector<double> fine = default_alpha_grid(1e-4);
    for (double a = 1e-5; a < 1e-4; a += 1e-5) {
        fine.push_back(a);
    }
    for (const auto& pat : {EquilibriumPattern{{2, 2, 1}}, EquilibriumPattern{{1, 2, 1}}, EquilibriumPattern{{2, 1, 1}}}) {
        const auto coarse_rec = continue_branch(pat, regs, net, default_alpha_grid(1e-4));
        const auto fine_rec = continue_branch(pat, regs, net, fine);
        ASSERT_TRUE(coarse_rec.at(1e-4) && fine_rec.at(1e-4)) << pat.label();
        EXPECT_LE((coarse_rec.at(1e-4)->X - fine_rec.at(1e-4)->X).lpNorm<Eigen::Infinity>(), 1e-8);
        // consecutive points move no faster than the local slope allows
        for (std::size_t p = 2; p < fine_rec.points.size(); ++p) {
            const auto& a = fine_rec.points[p - 2];
            const auto& b = fine_rec.points[p - 1];
            const auto& c = fine_rec.points[p];
            const double slope = (b.X - a.X).norm() / (b.alpha - a.alpha);
            EXPECT_LE((c.X - b.X).norm(), 10.0 * (c.alpha - b.alpha) * slope + 1e-12);
        }
    }
}

TEST(ContinuationProperty, DiseaseFreeBlocksStayZero)
{
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<RegionProfile> regs;
        for (int i = 0; i < 3; ++i) {
            RegionProfile p;
            p.model = make_hiv(random_hiv(rng));
            p.equilibria = {disease_free_equilibrium(p.model)};
            regs.push_back(p);
        }
        const auto rec = continue_branch({{0, 0, 0}}, regs, random_hiv_network(rng), default_alpha_grid(1e-1));
        ASSERT_TRUE(rec.complete);
        for (const auto& p : rec.points) {
            for (int i = 0; i < 3; ++i) {
                EXPECT_LE(p.X.segment(i * hiv_d, 4).lpNorm<Eigen::Infinity>(), 1e-12);
                EXPECT_LE(std::abs(p.X(i * hiv_d + 6)), 1e-12);
            }
        }
    }
}
