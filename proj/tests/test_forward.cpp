#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <mfgdecode/pipeline.hpp>

using namespace mfg;

namespace {

// kappa = 1 stationary pair on [0,1]:
//   u0' = v0 / (1 - v0 x)  =>  u0 = u_left - log(1 - v0 x)
//   m0 = (1 - v0 x)^2 (m_left + c (1/(v0 (1 - v0 x)) - 1/v0))
double exact_u0(double x, double v0, double ul) { return ul - std::log(1.0 - v0 * x); }
double exact_m0(double x, double v0, double ml, double c)
{
    const double s = 1.0 - v0 * x;
    return s * s * (ml + c * (1.0 / (v0 * s) - 1.0 / v0));
}

StationaryState stationary_unit_kappa(const MetricField& A)
{
    const GridPtr& g = A.grid_ptr();
    const auto u = ScalarField::from_function(g, [](const Point& p) { return exact_u0(p[0], 0.5, 0.0); });
    const auto m = ScalarField::from_function(g, [](const Point& p) { return exact_m0(p[0], 0.5, 1.0, -0.3); });
    return solve_stationary(A, boundary_values(u), boundary_values(m), {harmonic_extension(g, boundary_values(u)),
                                                                        harmonic_extension(g, boundary_values(m))});
}

Truth small_reference(int n = 17, int nt = 16)
{
    Reference1D r;
    r.n_cells = n;
    r.n_time = nt;
    return make_reference_truth(r);
}

}  // namespace

TEST(ClosedForm, FrozenValues)
{
    // Frozen from the analytic expressions at x = 1/2, v0 = 1/2, m_left = 1, c = -0.3.
    EXPECT_NEAR(exact_u0(0.5, 0.5, 0.0), 0.2876820724517809, 1e-15);
    EXPECT_NEAR(exact_m0(0.5, 0.5, 1.0, -0.3), 0.45, 1e-15);
}

TEST(ClosedForm, FamilyMatchesAnalyticUnitKappa)
{
    const StationaryFamily1D fam([](double) { return 1.0; }, {0.0, 1.0}, 0.5, 0.0, 1.0, -0.3);
    for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) {
        EXPECT_NEAR(fam.u0(x), exact_u0(x, 0.5, 0.0), 1e-9);
        EXPECT_NEAR(fam.du0(x), 0.5 / (1.0 - 0.5 * x), 1e-9);
        EXPECT_NEAR(fam.m0(x), exact_m0(x, 0.5, 1.0, -0.3), 1e-9);
    }
}

TEST(Stationary, SecondOrderAgainstClosedForm)
{
    auto err = [](int n) {
        const GridPtr g = make_grid({{0.0, 1.0}}, {n}, 1.0, 4);
        const MetricField A = MetricField::identity(g);
        const StationaryState s = stationary_unit_kappa(A);
        double e = 0.0;
        for (std::size_t i = 0; i < g->node_count(); ++i) {
            const double x = g->point(i)[0];
            e = std::max({e, std::abs(s.u0[i] - exact_u0(x, 0.5, 0.0)), std::abs(s.m0[i] - exact_m0(x, 0.5, 1.0, -0.3))});
        }
        return e;
    };
    const double e1 = err(33), e2 = err(65);
    EXPECT_LT(e2, 1e-4);
    EXPECT_NEAR(std::log2(e1 / e2), 2.0, 0.3);
}

TEST(Stationary, ResidualVanishes)
{
    const Truth t = small_reference(33, 4);
    const auto [ru, rm] = stationary_residual(t.state, t.A);
    EXPECT_LT(ru.max_abs(), 1e-9);
    EXPECT_LT(rm.max_abs(), 1e-9);
}

TEST(Stationary, GaugeInvariance)
{
    const Truth t = small_reference(33, 4);
    const StationaryState shifted{t.state.u0 + 2.5, t.state.m0};
    const VectorField q1 = drift(t.state.u0, t.A), q2 = drift(shifted.u0, t.A);
    EXPECT_LT((q1 - q2).max_abs(), 1e-12 * q1.max_abs());
    const auto r1 = stationary_residual(t.state, t.A), r2 = stationary_residual(shifted, t.A);
    EXPECT_LT((r1.first - r2.first).max_abs(), 1e-10);
    EXPECT_LT((r1.second - r2.second).max_abs(), 1e-12);
}

TEST(Forward, StationaryPersistence)
{
    const Truth t = small_reference();
    MfgSolverOptions opt;
    opt.tol_fp = 1e-10;
    const MfgSolution s = solve_mfg(make_problem(t.A, t.F, t.state), opt);
    const auto U = SpaceTimeField::constant_in_time(t.state.u0), M = SpaceTimeField::constant_in_time(t.state.m0);
    EXPECT_LE(std::max((s.u - U).max_abs(), (s.m - M).max_abs()), 10.0 * opt.tol_fp);
}

TEST(Forward, EmptyBatteryGivesStationaryExtension)
{
    const Truth t = small_reference();
    const MFGProblem p = make_problem(t.A, t.F, t.state, {});
    EXPECT_TRUE(p.perturbations.empty());
    const MfgSolution s = solve_mfg(p);
    EXPECT_LT((s.u - SpaceTimeField::constant_in_time(t.state.u0)).max_abs(), 1e-8);
}

TEST(Forward, DensityStaysNonNegative)
{
    const Truth t = small_reference();
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    MfgSolverOptions opt;
    opt.tol_fp = 1e-10;
    std::vector<double> eps(b.perts.size(), 0.02);
    const MfgSolution s = solve_mfg(with_amplitudes(make_problem(t.A, t.F, t.state, b.perts), eps), opt);
    EXPECT_GE(s.m.min(), -opt.tol_fp);
    EXPECT_FALSE(s.negative_density);
}

TEST(Forward, BoundaryTracesMatchPerturbedData)
{
    const Truth t = small_reference();
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    std::vector<double> eps(b.perts.size(), 0.0);
    eps[0] = 0.01;
    const MfgSolution s = solve_mfg(with_amplitudes(make_problem(t.A, t.F, t.state, b.perts), eps));
    const BoundaryData expected = BoundaryData::combine(trace(SpaceTimeField::constant_in_time(t.state.u0)), b.perts[0].g, 1.0, 0.01);
    EXPECT_LT((trace(s.u) - expected).max_abs(), 1e-13);
}

TEST(Forward, RejectsOversizedAmplitude)
{
    const Truth t = small_reference();
    const Battery b = make_battery(t.A.grid_ptr(), 1, 0);
    std::vector<double> eps(b.perts.size(), 50.0);
    EXPECT_THROW(solve_mfg(with_amplitudes(make_problem(t.A, t.F, t.state, b.perts), eps)), PreconditionViolated);
}

TEST(Forward, AmplitudeCountMismatch)
{
    const Truth t = small_reference();
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    EXPECT_THROW(with_amplitudes(make_problem(t.A, t.F, t.state, b.perts), {0.1}), PreconditionViolated);
}

TEST(RunningCost, TaylorEvaluation)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {5}, 1.0, 2);
    const RunningCost F(ScalarField::constant(g, 1.0), {ScalarField::constant(g, 2.0), ScalarField::constant(g, -6.0)});
    EXPECT_EQ(F.order(), 3);
    // 2 dz^2/2 - 6 dz^3/6 at dz = 0.5
    EXPECT_NEAR(F.evaluate(2, 1.5), 0.25 - 0.125, 1e-15);
    EXPECT_DOUBLE_EQ(F.evaluate(0, 1.0), 0.0);
}

TEST(Compatibility, ZeroPerturbationPasses)
{
    const Truth t = small_reference();
    const GridPtr& g = t.A.grid_ptr();
    const PerturbationSpec z{1, BoundaryData::zeros(g), BoundaryData::zeros(g), 0.0};
    const CompatibilityReport r = check_compatibility(z, t.state, t.A);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.terminal_g, 0.0);
    EXPECT_EQ(r.initial_h, 0.0);
}

TEST(Compatibility, BatteryPasses)
{
    const Truth t = small_reference(33, 32);
    for (const auto& p : make_battery(t.A.grid_ptr(), 2, 2).perts) EXPECT_TRUE(check_compatibility(p, t.state, t.A).pass);
}

TEST(Compatibility, TraceResidualConverges)
{
    auto worst = [](int n) {
        const Truth t = small_reference(n, n - 1);
        double w = 0.0;
        for (const auto& p : make_battery(t.A.grid_ptr(), 2, 2).perts) {
            const auto r = check_compatibility(p, t.state, t.A);
            w = std::max({w, r.pde_g, r.pde_h});
        }
        return w;
    };
    EXPECT_GT(worst(17) / worst(33), 3.5);
}

TEST(Compatibility, ReportsInitialViolationExactly)
{
    const Truth t = small_reference();
    const GridPtr& g = t.A.grid_ptr();
    const auto h = BoundaryData::from_function(g, [](const Point& x, double tt) { return 0.37 * (1.0 + x[0]) * (1.0 - tt); });
    const PerturbationSpec p{1, BoundaryData::zeros(g), h, 0.0};
    const CompatibilityReport r = check_compatibility(p, t.state, t.A);
    EXPECT_FALSE(r.pass);
    EXPECT_DOUBLE_EQ(r.initial_h, 0.74);
}

TEST(Dataset, MeasureRecordsBoundaryQuantities)
{
    const Truth t = small_reference();
    const auto U = SpaceTimeField::constant_in_time(t.state.u0), M = SpaceTimeField::constant_in_time(t.state.m0);
    const CauchyRecord r = measure(U, M);
    EXPECT_EQ(r.u_trace.kind(), BoundaryKind::Trace);
    EXPECT_EQ(r.u_gradient.kind(), BoundaryKind::Gradient);
    EXPECT_LT((r.u_trace - trace(U)).max_abs(), 1e-15);
}
