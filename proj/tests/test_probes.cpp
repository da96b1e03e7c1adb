#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include <mfgdecode/probes.hpp>
#include <mfgdecode/scenario.hpp>

using namespace mfg;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

CGOParams params(double rho, Point zeta, Point xi, double tau)
{
    CGOParams p;
    p.rho = rho;
    p.zeta = zeta;
    p.xi = xi;
    p.tau = tau;
    return p;
}

// Composite Simpson on a fine grid: int_0^T chi(t)^2 dt.
double chi_square_integral(const CGOParams& p, double T)
{
    const int n = 20000;
    const double h = T / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double c = p.chi(i * h, T);
        acc += (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * c * c;
    }
    return acc * h / 3.0;
}

}  // namespace

TEST(Cutoff, BumpSupportAndPeak)
{
    EXPECT_DOUBLE_EQ(bump(0.5, 0.5, 0.3), 1.0);
    EXPECT_EQ(bump(0.2, 0.5, 0.3), 0.0);
    EXPECT_EQ(bump(0.8, 0.5, 0.3), 0.0);
    const CGOParams p;
    EXPECT_EQ(p.chi(0.0, 1.0), 0.0);
    EXPECT_EQ(p.chi(1.0, 1.0), 0.0);
    // exp(1 - 1/(1 - 1/4)) at s = 1/2
    EXPECT_NEAR(bump(0.65, 0.5, 0.3), std::exp(-1.0 / 3.0), 1e-15);
}

TEST(Cutoff, Validation)
{
    const GridPtr g1 = make_grid({{0.0, 1.0}}, {9}, 1.0, 8);
    const GridPtr g2 = make_grid({{0.0, 1.0}, {0.0, 1.0}}, {9, 9}, 1.0, 8);
    EXPECT_NO_THROW(validate(params(4.0, {1.0, 0.0}, {0.0, 3.0}, 0.0), *g2));
    EXPECT_THROW(validate(params(0.0, {1.0, 0.0}, {0.0, 0.0}, 0.0), *g1), PreconditionViolated);
    EXPECT_THROW(validate(params(4.0, {0.6, 0.6}, {0.0, 0.0}, 0.0), *g2), PreconditionViolated);
    EXPECT_THROW(validate(params(4.0, {1.0, 0.0}, {1.0, 1.0}, 0.0), *g2), PreconditionViolated);
    EXPECT_THROW(validate(params(4.0, {1.0, 0.0}, {1.0, 0.0}, 0.0), *g1), PreconditionViolated);
    EXPECT_THROW(validate(params(30.0, {1.0, 0.0}, {0.0, 0.0}, 0.0), *g1), OverflowRisk);
}

TEST(Rays, ConstantFieldIntegral)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {9}, 1.0, 2);
    const VectorField phi = VectorField::constant(g, {2.0, 0.0});
    EXPECT_NEAR(ray_integral(phi, {0.25, 0.0}, {1.0, 0.0}), 1.5, 1e-14);
    EXPECT_NEAR(ray_integral(phi, {0.25, 0.0}, {-1.0, 0.0}), -0.5, 1e-14);
    EXPECT_THROW(ray_integral(phi, {0.25, 0.0}, {0.0, 0.0}), ZeroDirection);
}

TEST(Probes, DegenerateCutoffGivesZeroProbe)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {17}, 1.0, 16);
    CGOParams p = params(4.0, {1.0, 0.0}, {0.0, 0.0}, two_pi);
    p.chi_zero = true;
    const CGOResult r = cgo_forward(p, VectorField::zeros(g), ScalarField::zeros(g));
    EXPECT_EQ(r.ansatz.max_abs(), 0.0);
    EXPECT_EQ(r.remainder.max_abs(), 0.0);
}

TEST(Probes, RemainderHonorsHomogeneousData)
{
    const GridPtr g = make_grid({{0.0, 1.0}, {0.0, 1.0}}, {13, 13}, 1.0, 12);
    const VectorField phi = VectorField::from_function(g, [](const Point& x) { return Point{0.3 * x[1], -0.2 * x[0]}; });
    const CGOParams p = params(4.0, {1.0, 0.0}, {0.0, two_pi}, 0.0);
    const CGOResult f = cgo_forward(p, phi, adjoint_potential(phi));
    const CGOResult b = cgo_backward(p, phi, ScalarField::zeros(g));
    EXPECT_EQ(f.remainder.level_field(0).max_abs(), 0.0);
    EXPECT_EQ(b.remainder.level_field(g->n_time()).max_abs(), 0.0);
    EXPECT_EQ(trace(f.remainder.real_part()).max_abs(), 0.0);
    EXPECT_EQ(trace(f.remainder.imag_part()).max_abs(), 0.0);
    EXPECT_EQ(trace(b.remainder.real_part()).max_abs(), 0.0);
}

TEST(Probes, RemainderDecaysWithRho1D)
{
    const GridPtr g = make_grid({{0.0, 1.0}}, {65}, 1.0, 64);
    double prev = std::numeric_limits<double>::infinity();
    for (double rho : {4.0, 8.0, 16.0}) {
        const CGOResult r = cgo_forward(params(rho, {1.0, 0.0}, {0.0, 0.0}, two_pi), VectorField::zeros(g), ScalarField::zeros(g));
        EXPECT_LT(r.remainder_norm, prev);
        prev = r.remainder_norm;
    }
}

TEST(Probes, RemainderDecaysWithRho2D)
{
    const GridPtr g = make_grid({{0.0, 1.0}, {0.0, 1.0}}, {17, 17}, 1.0, 16);
    const CGOParams p4 = params(4.0, {1.0, 0.0}, {0.0, two_pi}, 0.0), p16 = params(16.0, {1.0, 0.0}, {0.0, two_pi}, 0.0);
    const auto phi = VectorField::zeros(g);
    const auto pot = ScalarField::zeros(g);
    EXPECT_LE(cgo_forward(p16, phi, pot).remainder_norm, 0.7 * cgo_forward(p4, phi, pot).remainder_norm);
    EXPECT_LE(cgo_backward(p16, phi, pot).remainder_norm, 0.7 * cgo_backward(p4, phi, pot).remainder_norm);
}

TEST(Pairing, UnitIntegrandGivesVolume)
{
    const GridPtr g = make_grid({{0.0, 2.0}, {0.0, 1.0}}, {9, 7}, 0.5, 6);
    const auto one = SpaceTimeField::constant_in_time(ScalarField::constant(g, 1.0));
    const Complex v = pairing(one, one);
    EXPECT_NEAR(v.real(), 1.0, 1e-14);
    EXPECT_EQ(v.imag(), 0.0);
    EXPECT_EQ(pairing(SpaceTimeField::zeros(g), one), Complex(0.0, 0.0));
}

TEST(Pairing, AmplitudesCancel)
{
    Reference1D r;
    r.n_cells = 33;
    r.n_time = 32;
    const Truth t = make_reference_truth(r);
    const VectorField q = drift(t.state.u0, t.A);
    for (double rho : {4.0, 8.0}) {
        const CGOParams p = params(rho, {1.0, 0.0}, {0.0, 0.0}, 0.0);
        const Vec prod = ray_amplitude(p, q, 1.0).cwiseProduct(ray_amplitude(p, q, -1.0));
        EXPECT_LT((prod.array() - 1.0).abs().maxCoeff(), 1e-14);
    }
}

TEST(Pairing, LeadingTermsReproduceCutoffWeight)
{
    // Leading terms paired against f = 1: int chi^2 e^{-i t tau} dt times |Omega|, independent of rho.
    const GridPtr g = make_grid({{0.0, 1.0}}, {33}, 1.0, 256);
    const VectorField phi = VectorField::from_function(g, [](const Point& x) { return Point{1.0 + x[0], 0.0}; });
    Complex first{};
    for (double rho : {4.0, 8.0, 16.0}) {
        const CGOParams p = params(rho, {1.0, 0.0}, {0.0, 0.0}, 0.0);
        const SpaceTimeField W = cgo_leading(p, phi, 1.0), V = cgo_leading(p, phi, -1.0);
        const Complex v = pairing(W, V.real_part());
        if (rho == 4.0) first = v;
        EXPECT_LT(std::abs(v - first), 1e-13);
        EXPECT_NEAR(v.real(), chi_square_integral(p, g->T()), 1e-6);
        EXPECT_NEAR(v.imag(), 0.0, 1e-14);
    }
}
