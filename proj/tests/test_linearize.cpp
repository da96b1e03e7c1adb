#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <mfgdecode/pipeline.hpp>

using namespace mfg;

namespace {

Truth reference(int n, int nt)
{
    Reference1D r;
    r.n_cells = n;
    r.n_time = nt;
    return make_reference_truth(r);
}

double rel_sup(const SpaceTimeField& a, const SpaceTimeField& b) { return (a - b).max_abs() / std::max(b.max_abs(), 1e-300); }

// Backward heat equation -u_t - u_xx = 0 on [0,1] x [0,T], u(.,T) = 0, u(0,t) = T - t, u(1,t) = 0:
//   u = (T - t)(1 - x) - sum_n 2/(n pi)^3 (1 - exp(-(n pi)^2 (T - t))) sin(n pi x)
double heat_series(double x, double t, double T)
{
    const double pi = std::numbers::pi;
    double u = (T - t) * (1.0 - x);
    for (int n = 1; n <= 400; ++n) {
        const double k = n * pi;
        u -= 2.0 / (k * k * k) * (1.0 - std::exp(-k * k * (T - t))) * std::sin(k * x);
    }
    return u;
}

}  // namespace

TEST(Partitions, BellNumbers)
{
    EXPECT_EQ(set_partitions(1).size(), 1u);
    EXPECT_EQ(set_partitions(2).size(), 2u);
    EXPECT_EQ(set_partitions(3).size(), 5u);
    EXPECT_EQ(set_partitions(4).size(), 15u);
    EXPECT_EQ(set_partitions(5).size(), 52u);
}

TEST(Linearized, HeatSeriesOracle)
{
    auto err = [](int n, int nt) {
        const GridPtr g = make_grid({{0.0, 1.0}}, {n}, 0.5, nt);
        const MetricField A = MetricField::identity(g);
        const StationaryState st{ScalarField::zeros(g), ScalarField::constant(g, 1.0)};
        const auto datum = BoundaryData::from_function(g, [&](const Point& x, double t) { return x[0] < 0.5 ? g->T() - t : 0.0; });
        const LinearizedSolution s = solve_first_order(st, A, datum, BoundaryData::zeros(g));
        double e = 0.0;
        for (int k = 0; k <= g->n_time(); ++k)
            for (std::size_t i = 0; i < g->node_count(); ++i)
                e = std::max(e, std::abs(s.u.at(k, i) - heat_series(g->point(i)[0], g->time(k), g->T())));
        return e;
    };
    const double e1 = err(17, 64), e2 = err(33, 256);
    EXPECT_LT(e2, 2e-3);
    // h^2 and dt both drop by four.
    EXPECT_GT(e1 / e2, 3.0);
}

TEST(Linearized, ImposedInitialAndTerminalConditions)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    const LinearizedSystem sys(t.state, t.A);
    for (const auto& p : b.perts) {
        const LinearizedSolution s = sys.first_order(p.g, p.h);
        EXPECT_EQ(s.u.level_field(t.A.grid().n_time()).max_abs(), 0.0);
        EXPECT_EQ(s.m.level_field(0).max_abs(), 0.0);
    }
}

TEST(Linearized, FirstOrderIsLinear)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    const LinearizedSystem sys(t.state, t.A);
    const BoundaryData g = b.perts[0].g + b.perts[1].g, h = b.perts[2].h;
    const double alpha = -3.7;
    const LinearizedSolution s = sys.first_order(g, h), sa = sys.first_order(alpha * g, alpha * h);
    EXPECT_LT((sa.u - alpha * s.u).max_abs(), 1e-13 * std::abs(alpha) * s.u.max_abs());
    EXPECT_LT((sa.m - alpha * s.m).max_abs(), 1e-13 * std::abs(alpha) * s.m.max_abs());
}

TEST(Linearized, SecondOrderIsSymmetric)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    const LinearizedSystem sys(t.state, t.A);
    const LinearizedSolution s1 = sys.first_order(b.perts[0].g, b.perts[0].h, 1);
    const LinearizedSolution s2 = sys.first_order(b.perts[2].g, b.perts[2].h, 2);
    const ScalarField F2 = t.F.coefficient(2);
    const LinearizedSolution a = sys.second_order(F2, s1, s2), c = sys.second_order(F2, s2, s1);
    EXPECT_LT(rel_sup(a.u, c.u), 1e-13);
    EXPECT_LT(rel_sup(a.m, c.m), 1e-13);
}

TEST(Linearized, CascadeReproducesDedicatedSolvers)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    const LinearizedSystem sys(t.state, t.A);
    const LinearizedFamily fam = solve_cascade(sys, t.F, b.perts, {{1, 3}});
    const LinearizedSolution s1 = sys.first_order(b.perts[0].g, b.perts[0].h, 1);
    const LinearizedSolution s3 = sys.first_order(b.perts[2].g, b.perts[2].h, 3);
    EXPECT_EQ((fam.at({1}).u - s1.u).max_abs(), 0.0);
    EXPECT_EQ((fam.at({3}).m - s3.m).max_abs(), 0.0);
    const LinearizedSolution s13 = sys.second_order(t.F.coefficient(2), s1, s3);
    EXPECT_LT(rel_sup(fam.at({1, 3}).u, s13.u), 1e-13);
    EXPECT_LT(rel_sup(fam.at({1, 3}).m, s13.m), 1e-13);
}

TEST(Linearized, MissingLowerOrderIsReported)
{
    const Truth t = reference(17, 16);
    const LinearizedSystem sys(t.state, t.A);
    EXPECT_THROW(sys.order_n(t.F, {}, {1, 2}), MissingLowerOrder);
    EXPECT_THROW(sys.order_n(t.F, {}, {2, 1}), PreconditionViolated);
}

TEST(Linearized, DriftIdentity)
{
    const Truth t = reference(33, 4);
    const LinearizedSystem sys(t.state, t.A);
    const GridPtr& g = t.A.grid_ptr();
    const auto w = ScalarField::from_function(g, [](const Point& x) { return std::cos(4.0 * x[0]) + x[0] * x[0]; });
    const ScalarField ref = quadratic_form(t.A, gradient(t.state.u0), gradient(w)) + quadratic_form(t.A, gradient(w), gradient(t.state.u0));
    const Vec got = sys.apply_drift(w.vec());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[static_cast<Eigen::Index>(i)], ref[i], 1e-12 * ref.max_abs());
}

TEST(Linearized, DividedDifferenceConvergesToFirstOrder)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    MFGProblem p = make_problem(t.A, t.F, t.state, b.perts);
    const LinearizedSolution s = LinearizedSystem(t.state, t.A).first_order(b.perts[0].g, b.perts[0].h);
    MfgSolverOptions opt;
    opt.tol_fp = 1e-13;
    auto err = [&](double eps) {
        std::vector<double> a(b.perts.size(), 0.0);
        a[0] = eps;
        const MfgSolution sol = solve_mfg(with_amplitudes(p, a), opt);
        const SpaceTimeField du = (1.0 / eps) * (sol.u - SpaceTimeField::constant_in_time(t.state.u0));
        return (du - s.u).max_abs();
    };
    const double e1 = err(1e-2), e2 = err(5e-3);
    EXPECT_LT(e2, 1e-2 * s.u.max_abs());
    EXPECT_NEAR(e1 / e2, 2.0, 0.3);
}

TEST(Linearized, MixedDifferenceConvergesToSecondOrder)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 0, 1);
    const MFGProblem p = make_problem(t.A, t.F, t.state, b.perts);
    const LinearizedSystem sys(t.state, t.A);
    const LinearizedFamily fam = solve_cascade(sys, t.F, b.perts, {{1, 2}});
    MfgSolverOptions opt;
    opt.tol_fp = 1e-14;
    auto err = [&](double eps) {
        const auto ds = simulate_dataset(p, required_amplitudes({{1, 2}}, 2, eps), opt);
        const CauchyRecord r = extract_derivative(ds, {1, 2}, eps);
        return BoundaryData::combine(r.u_gradient, measure(fam.at({1, 2})).u_gradient, 1.0, -1.0).max_abs();
    };
    const double e1 = err(2e-2), e2 = err(1e-2);
    EXPECT_LT(e2, 5e-2 * measure(fam.at({1, 2})).u_gradient.max_abs());
    EXPECT_GT(e1 / e2, 1.7);
}

TEST(Frechet, TaylorRemainderSlopes)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 1);
    MFGProblem p = make_problem(t.A, t.F, t.state, b.perts);
    for (auto& q : p.perturbations) q.amplitude = 1.0;
    MfgSolverOptions opt;
    opt.tol_fp = 1e-13;
    const FrechetReport rep = frechet_report(p, 2, {1e-2, 5e-3, 2.5e-3}, opt);
    ASSERT_EQ(rep.slopes.size(), 2u);
    for (double s : rep.slopes[0]) EXPECT_NEAR(s, 2.0, 0.2);
    for (double s : rep.slopes[1]) EXPECT_NEAR(s, 3.0, 0.3);
    EXPECT_TRUE(rep.pass);
}

TEST(Frechet, ZeroDirectionHasZeroRemainder)
{
    const Truth t = reference(17, 16);
    const Battery b = make_battery(t.A.grid_ptr(), 1, 0);
    MFGProblem p = make_problem(t.A, t.F, t.state, b.perts);
    for (auto& q : p.perturbations) q.amplitude = 0.0;
    MfgSolverOptions opt;
    opt.tol_fp = 1e-12;
    const FrechetReport rep = frechet_report(p, 2, {1e-2, 5e-3}, opt);
    for (const auto& r : rep.remainder)
        for (double x : r) EXPECT_LE(x, 10.0 * opt.tol_fp);
}
