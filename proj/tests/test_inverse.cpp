#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <mfgdecode/gate.hpp>

using namespace mfg;

namespace {

constexpr double pi = std::numbers::pi;

Truth reference(int n, int nt)
{
    Reference1D r;
    r.n_cells = n;
    r.n_time = nt;
    return make_reference_truth(r);
}

/// Exact order-2 records from the linearized cascade on the m-only part of a battery.
std::vector<OrderData> second_order_records(const LinearizedSystem& sys, const RunningCost& F, const Battery& b)
{
    std::vector<PerturbationSpec> perts;
    for (int l : b.m_labels) perts.push_back(b.perts[static_cast<std::size_t>(l - 1)]);
    std::vector<int> labels;
    for (std::size_t i = 0; i < perts.size(); ++i) labels.push_back(static_cast<int>(i) + 1);
    const auto targets = multisets(labels, 2);
    const LinearizedFamily fam = solve_cascade(sys, F, perts, targets);
    std::vector<OrderData> out;
    for (const auto& t : targets) out.push_back({t, measure(fam.at(t)), 0.0});
    return out;
}

std::vector<PerturbationSpec> m_perts(const Battery& b)
{
    std::vector<PerturbationSpec> p;
    for (int l : b.m_labels) p.push_back(b.perts[static_cast<std::size_t>(l - 1)]);
    return p;
}

}  // namespace

TEST(Config, ValidationRejectsBadValues)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {9}, 1.0, 8);
    ReconstructionConfig c;
    EXPECT_NO_THROW(validate(c, *g));
    c.lambda_F = -1.0;
    EXPECT_THROW(validate(c, *g), ConfigError);
    c = {};
    c.rho_ladder = {8.0, 4.0};
    EXPECT_THROW(validate(c, *g), ConfigError);
    c = {};
    c.max_frequency = 5;
    EXPECT_THROW(validate(c, *g), ConfigError);
}

TEST(RecoverU0, AffineTraceWithZeroDrift)
{
    const GridPtr g = make_grid({{0.0, 1.0}, {0.0, 1.0}}, {9, 9}, 1.0, 2);
    const auto u = ScalarField::from_function(g, [](const Point& x) { return 0.3 + 2.0 * x[0] - x[1]; });
    const BoundaryData tr = trace(SpaceTimeField::constant_in_time(u));
    const ScalarField r = recover_u0(VectorField::zeros(g), tr);
    EXPECT_LT((r - u).max_abs(), 1e-12);
    // A shifted trace shifts the reconstruction by the same constant.
    const ScalarField rs = recover_u0(VectorField::zeros(g), trace(SpaceTimeField::constant_in_time(u + 1.5)));
    EXPECT_LT((rs - r - ScalarField::constant(g, 1.5)).max_abs(), 1e-12);
}

TEST(RecoverU0, ClosedFormSecondOrder)
{
    auto err = [](int n) {
        const Truth t = reference(n, 2);
        const VectorField q = drift(t.state.u0, t.A);
        const ScalarField r = recover_u0(q, trace(SpaceTimeField::constant_in_time(t.state.u0)));
        return (r - t.state.u0).max_abs();
    };
    EXPECT_LT(err(65), 1e-3);
}

TEST(RecoverM0, ConstantAndLinearity)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {17}, 1.0, 2);
    const BoundaryData one = BoundaryData::from_function(g, [](const Point&, double) { return 1.0; });
    const M0Recovery r = recover_m0(VectorField::zeros(g), one);
    EXPECT_LT((r.m0 - ScalarField::constant(g, 1.0)).max_abs(), 1e-13);
    EXPECT_FALSE(r.negative);

    const Truth t = reference(33, 2);
    const VectorField q = drift(t.state.u0, t.A);
    const BoundaryData tr = trace(SpaceTimeField::constant_in_time(t.state.m0));
    const ScalarField a = recover_m0(q, tr).m0, b = recover_m0(q, 2.0 * tr).m0;
    EXPECT_LT((b - 2.0 * a).max_abs(), 1e-13 * a.max_abs());
    EXPECT_LT(relative_l2(a, t.state.m0), 1e-3);
    EXPECT_THROW(recover_m0(q, -1.0 * tr), PreconditionViolated);
}

TEST(RecoverKappa, IdentityMetricAndDegenerateState)
{
    const Truth t = reference(33, 2);
    const VectorField q = drift(t.state.u0, t.A);
    const MetricField base = t.A.with_kappa(ScalarField::constant(t.A.grid_ptr(), 1.0));
    const KappaRecovery k = recover_kappa(q, t.state.u0, base, 1e-6);
    EXPECT_EQ(k.masked, 0u);
    EXPECT_LT((k.kappa - t.A.kappa()).max_abs(), 1e-12);

    const ScalarField flat = ScalarField::constant(t.A.grid_ptr(), 2.0);
    EXPECT_THROW(recover_kappa(VectorField::zeros(t.A.grid_ptr()), flat, base, 1e-6), DegenerateEverywhere);
}

TEST(RecoverKappa, MaskedNodesAreFilled)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {33}, 1.0, 2);
    // u0 with a critical point at x = 1/2.
    const auto u0 = ScalarField::from_function(g, [](const Point& x) { return (x[0] - 0.5) * (x[0] - 0.5); });
    const MetricField A = MetricField::identity(g, ScalarField::from_function(g, [](const Point& x) { return 1.0 + 0.2 * x[0]; }));
    const VectorField q = drift(u0, A);
    const KappaRecovery k = recover_kappa(q, u0, MetricField::identity(g), 1e-3);
    EXPECT_EQ(k.masked, 1u);
    EXPECT_TRUE(k.mask[16]);
    EXPECT_NEAR(k.kappa[16], 1.1, 1e-12);
}

TEST(RecoverQ, NoRecordsIsInsufficient)
{
    const Truth t = reference(17, 8);
    const CauchyRecord base = measure(SpaceTimeField::constant_in_time(t.state.u0), SpaceTimeField::constant_in_time(t.state.m0));
    EXPECT_THROW(recover_q({}, base, t.A, {}), InsufficientData);
    ReconstructionConfig c;
    c.mode = QMode::Probe;
    EXPECT_THROW(recover_q({base}, base, t.A, c), InsufficientData);
}

TEST(RecoverQ, ConstantStateGivesZeroDrift)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {33}, 1.0, 32);
    const MetricField A = MetricField::identity(g);
    const StationaryState st{ScalarField::constant(g, 0.7), ScalarField::constant(g, 1.0)};
    const Battery b = make_battery(g, 2, 0);
    const LinearizedSystem sys(st, A);
    std::vector<CauchyRecord> first;
    for (const auto& p : b.perts) first.push_back(measure(sys.first_order(p.g, p.h)));
    const CauchyRecord base = measure(SpaceTimeField::constant_in_time(st.u0), SpaceTimeField::constant_in_time(st.m0));
    const QRecovery r = recover_q(first, base, A, {});
    EXPECT_LT(r.q.max_abs(), 1e-6);
}

TEST(RecoverQ, VariationalRecoversReferenceDrift)
{
    const Truth t = reference(65, 64);
    const Battery b = make_battery(t.A.grid_ptr(), 3, 0);
    const LinearizedSystem sys(t.state, t.A);
    std::vector<CauchyRecord> first;
    for (const auto& p : b.perts) first.push_back(measure(sys.first_order(p.g, p.h)));
    const CauchyRecord base = measure(SpaceTimeField::constant_in_time(t.state.u0), SpaceTimeField::constant_in_time(t.state.m0));
    const QRecovery r = recover_q(first, base, t.A, {});
    EXPECT_LT(relative_l2(r.q, drift(t.state.u0, t.A)), 0.05);
}

TEST(RecoverF, ZeroCoefficientGivesZero)
{
    const Truth t = reference(33, 32);
    const Battery b = make_battery(t.A.grid_ptr(), 0, 2);
    const LinearizedSystem sys(t.state, t.A);
    const RunningCost zero = RunningCost::zero(t.state.m0);
    const FRecovery r = recover_F2(sys, m_perts(b), second_order_records(sys, zero, b));
    EXPECT_LT(r.F.max_abs(), 1e-10);
}

TEST(RecoverF, RecoversSineFromExactData)
{
    const Truth t = reference(33, 32);
    const Battery b = make_battery(t.A.grid_ptr(), 0, 2);
    const LinearizedSystem sys(t.state, t.A);
    const FRecovery r = recover_F2(sys, m_perts(b), second_order_records(sys, t.F, b));
    EXPECT_LT(relative_l2(r.F, t.F.coefficient(2)), 0.10);
}

TEST(RecoverF, LinearInData)
{
    const Truth t = reference(33, 32);
    const Battery b = make_battery(t.A.grid_ptr(), 0, 1);
    const LinearizedSystem sys(t.state, t.A);
    auto data = second_order_records(sys, t.F, b);
    const FRecovery r1 = recover_F2(sys, m_perts(b), data);
    for (auto& d : data) d.record = CauchyRecord::combine(d.record, d.record, 2.0, 0.0);
    const FRecovery r2 = recover_F2(sys, m_perts(b), data);
    EXPECT_LT((r2.F - 2.0 * r1.F).max_abs(), 1e-8 * r1.F.max_abs());
}

TEST(RecoverF, ResidualGrowsWithRegularization)
{
    const Truth t = reference(33, 32);
    const Battery b = make_battery(t.A.grid_ptr(), 0, 1);
    const LinearizedSystem sys(t.state, t.A);
    const auto data = second_order_records(sys, t.F, b);
    double prev = -1.0;
    for (double lam : {1e-8, 1e-6, 1e-4, 1e-2, 1.0}) {
        FOptions o;
        o.lambda = lam;
        const double res = recover_F2(sys, m_perts(b), data, o).residual;
        EXPECT_GE(res, prev * (1.0 - 1e-9));
        prev = res;
    }
}

TEST(RecoverF, HigherOrderNeedsData)
{
    const Truth t = reference(17, 16);
    const LinearizedSystem sys(t.state, t.A);
    EXPECT_THROW(recover_Fk(sys, t.F, 3, {}, {}), InsufficientData);
    EXPECT_THROW(recover_Fk(sys, t.F, 5, {}, {}), PreconditionViolated);
}

TEST(Pipeline, SmallNoiselessRun)
{
    const Truth t = reference(33, 32);
    ReconstructionConfig cfg;
    cfg.max_order = 2;
    const Battery b = make_battery(t.A.grid_ptr(), cfg.n_freq_u, cfg.n_freq_m);
    const PipelineData data = generate_data(t, b, cfg);
    const MetricField base = t.A.with_kappa(ScalarField::constant(t.A.grid_ptr(), 1.0));
    const ReconstructionReport rep = run_pipeline(data, b, base, cfg, &t);
    ASSERT_EQ(rep.stages.size(), 5u);
    EXPECT_LT(rep.errors.at("q"), 0.05);
    EXPECT_LT(rep.errors.at("u0"), 0.05);
    EXPECT_LT(rep.errors.at("kappa"), 0.05);
    EXPECT_LT(rep.errors.at("m0"), 0.05);
    EXPECT_LT(rep.errors.at("F2"), 0.10);
}

TEST(Pipeline, GaugeShiftMovesOnlyU0)
{
    Truth t = reference(33, 32);
    ReconstructionConfig cfg;
    cfg.max_order = 2;
    cfg.n_freq_u = 2;
    cfg.n_freq_m = 1;
    const Battery b = make_battery(t.A.grid_ptr(), cfg.n_freq_u, cfg.n_freq_m);
    const MetricField base = t.A.with_kappa(ScalarField::constant(t.A.grid_ptr(), 1.0));
    const ReconstructionReport r1 = run_pipeline(generate_data(t, b, cfg), b, base, cfg);
    t.state.u0 = t.state.u0 + 0.75;
    const ReconstructionReport r2 = run_pipeline(generate_data(t, b, cfg), b, base, cfg);
    const double tol = 1e-6;
    EXPECT_LT((r1.q->q - r2.q->q).max_abs(), tol * r1.q->q.max_abs());
    EXPECT_LT((r1.kappa->kappa - r2.kappa->kappa).max_abs(), tol);
    EXPECT_LT((r1.m0->m0 - r2.m0->m0).max_abs(), tol);
    EXPECT_LT((r1.F[0].F - r2.F[0].F).max_abs(), tol * std::max(1.0, r1.F[0].F.max_abs()));
    EXPECT_LT((*r2.u0 - *r1.u0 - ScalarField::constant(t.A.grid_ptr(), 0.75)).max_abs(), tol);
}

TEST(Gate, IdenticalAndSeparatedConfigs)
{
    const Truth t1 = reference(17, 16);
    const Battery b = make_battery(t1.A.grid_ptr(), 0, 1);
    GateOptions opt;
    opt.solver.tol_fp = 1e-12;
    const GateReport same = uniqueness_gate(t1, t1, b, opt);
    EXPECT_TRUE(same.configs_equal);
    EXPECT_LE(same.measurement_distance, 1e-9);
    EXPECT_TRUE(same.pass_forward);

    Truth t2 = t1;
    const GridPtr& g = t1.A.grid_ptr();
    t2.F = t1.F.with_coefficients({t1.F.coefficient(2) + ScalarField::from_function(g, [](const Point& x) { return std::sin(pi * x[0]); }),
                                   t1.F.coefficient(3)});
    const GateReport diff = uniqueness_gate(t1, t2, b, opt);
    EXPECT_FALSE(diff.configs_equal);
    EXPECT_GT(diff.separation, 10.0 * diff.noise_floor);
    EXPECT_TRUE(diff.pass_inverse);
}

TEST(Gate, GaugeShiftLeavesFluxes)
{
    const Truth t1 = reference(17, 16);
    Truth t2 = t1;
    t2.state.u0 = t1.state.u0 + 0.4;
    const Battery b = make_battery(t1.A.grid_ptr(), 0, 1);
    GateOptions opt;
    opt.solver.tol_fp = 1e-12;
    const GateReport r = uniqueness_gate(t1, t2, b, opt);
    EXPECT_LT(r.measurement[1], 1e-9);
    EXPECT_LT(r.measurement[3], 1e-9);
    EXPECT_NEAR(r.measurement[0], 0.4, 1e-9);
}
