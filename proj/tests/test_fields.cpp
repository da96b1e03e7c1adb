#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include <mfgdecode/io.hpp>
#include <mfgdecode/operators.hpp>

using namespace mfg;

namespace {

GridPtr square(int n, int nt = 4) { return make_grid({{0.0, 1.0}, {0.0, 1.0}}, {n, n}, 1.0, nt); }
GridPtr line(int n, int nt = 4) { return make_grid({{0.0, 1.0}}, {n}, 1.0, nt); }

}  // namespace

TEST(Grid, CountsAndSpacing)
{
    const auto g = make_grid({{0.0, 2.0}, {-1.0, 1.0}}, {9, 5}, 0.5, 10);
    EXPECT_EQ(g->dim(), 2);
    EXPECT_EQ(g->node_count(), 9u * 5u);
    EXPECT_EQ(g->boundary_count(), 2u * 9u + 2u * 3u);
    EXPECT_DOUBLE_EQ(g->h(0), 0.25);
    EXPECT_DOUBLE_EQ(g->h(1), 0.5);
    EXPECT_DOUBLE_EQ(g->dt(), 0.05);
    EXPECT_EQ(g->n_levels(), 11);
    EXPECT_DOUBLE_EQ(g->time(10), 0.5);
}

TEST(Grid, RejectsBadShapes)
{
    EXPECT_THROW(make_grid({{0.0, 1.0}}, {1}, 1.0, 4), PreconditionViolated);
    EXPECT_THROW(make_grid({{1.0, 0.0}}, {8}, 1.0, 4), PreconditionViolated);
    EXPECT_THROW(make_grid({{0.0, 1.0}}, {8}, 1.0, 0), PreconditionViolated);
}

TEST(Grid, QuadratureWeightsSumToMeasure)
{
    for (const auto& g : {line(16), square(12)}) {
        double vol = 0.0, bnd = 0.0;
        for (std::size_t i = 0; i < g->node_count(); ++i) {
            vol += g->volume_weight(i);
            if (g->is_boundary(i)) bnd += g->boundary_weight(i);
        }
        EXPECT_NEAR(vol, g->volume(), 1e-12);
        EXPECT_NEAR(bnd, g->dim() == 1 ? 2.0 : 4.0, 1e-12);
    }
}

TEST(Grid, OutwardNormalsAreUnit)
{
    const auto g = square(6);
    for (std::size_t i = 0; i < g->node_count(); ++i) {
        if (!g->is_boundary(i)) continue;
        const Point n = g->outward_normal(i);
        EXPECT_NEAR(std::hypot(n[0], n[1]), 1.0, 1e-14);
        const Point x = g->point(i);
        // Pointing away from the center.
        EXPECT_GT((x[0] - 0.5) * n[0] + (x[1] - 0.5) * n[1], 0.0);
    }
}

TEST(Fields, RejectNonFinite)
{
    const auto g = line(4);
    EXPECT_THROW(ScalarField(g, std::vector<double>(5, std::nan(""))), PreconditionViolated);
    EXPECT_THROW(ScalarField(g, std::vector<double>(3, 0.0)), PreconditionViolated);
}

TEST(Fields, MetricRejectsNonPositiveKappa)
{
    const auto g = line(4);
    EXPECT_THROW(MetricField::identity(g, ScalarField::constant(g, 0.0)), PreconditionViolated);
    std::vector<double> base(g->node_count(), -1.0);
    EXPECT_THROW(MetricField(g, base, ScalarField::constant(g, 1.0)), PreconditionViolated);
}

TEST(Fields, BoundaryCombineIsLinear)
{
    const auto g = square(5);
    const auto a = BoundaryData::from_function(g, [](const Point& x, double t) { return x[0] + t; });
    const auto b = BoundaryData::from_function(g, [](const Point& x, double t) { return x[1] * t; });
    const auto c = BoundaryData::combine(a, b, 2.0, -3.0);
    for (int k = 0; k < g->n_levels(); ++k)
        for (std::size_t s = 0; s < g->boundary_count(); ++s)
            EXPECT_NEAR(c.at(k, s), 2.0 * a.at(k, s) - 3.0 * b.at(k, s), 1e-15);
}

TEST(Operators, ExactOnQuadratics)
{
    const auto g = square(10);
    const auto f = ScalarField::from_function(g, [](const Point& x) { return 1.0 + 2.0 * x[0] - x[1] + x[0] * x[0] + 3.0 * x[0] * x[1]; });
    const VectorField df = gradient(f);
    const ScalarField lap = laplacian(f);
    for (std::size_t i = 0; i < g->node_count(); ++i) {
        const Point x = g->point(i);
        EXPECT_NEAR(df.at(i, 0), 2.0 + 2.0 * x[0] + 3.0 * x[1], 1e-11);
        EXPECT_NEAR(df.at(i, 1), -1.0 + 3.0 * x[0], 1e-11);
        EXPECT_NEAR(lap[i], 2.0, 1e-9);
    }
}

TEST(Operators, SecondOrderConvergence)
{
    auto err = [](int n) {
        const auto g = line(n);
        const auto f = ScalarField::from_function(g, [](const Point& x) { return std::sin(std::numbers::pi * x[0]); });
        const VectorField df = gradient(f);
        double e = 0.0;
        for (std::size_t i = 0; i < g->node_count(); ++i)
            e = std::max(e, std::abs(df.at(i, 0) - std::numbers::pi * std::cos(std::numbers::pi * g->point(i)[0])));
        return e;
    };
    const double rate = std::log2(err(65) / err(129));
    EXPECT_NEAR(rate, 2.0, 0.15);
}

TEST(Operators, DivergenceTheoremOnAffineField)
{
    const auto g = square(8);
    const auto v = VectorField::from_function(g, [](const Point& x) { return Point{1.0 + x[0], 2.0 * x[1]}; });
    const auto one = ScalarField::constant(g, 1.0);
    // Integral of div v over the square equals the boundary flux: 3.
    EXPECT_NEAR(inner_product(divergence(v), one), 3.0, 1e-12);
    EXPECT_NEAR(boundary_flux(one, v), 3.0, 1e-12);
}

TEST(Operators, QuadraticFormIsSymmetricForSymmetricMetric)
{
    const auto g = square(6);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<double> base;
    for (std::size_t i = 0; i < g->node_count(); ++i) {
        const double o = 0.2 * U(rng);
        base.insert(base.end(), {1.5 + 0.3 * U(rng), o, o, 1.5 + 0.3 * U(rng)});
    }
    const MetricField A(g, base, ScalarField::constant(g, 1.3));
    const auto p = VectorField::from_function(g, [](const Point& x) { return Point{x[0], -x[1]}; });
    const auto r = VectorField::from_function(g, [](const Point& x) { return Point{std::sin(x[1]), 1.0}; });
    EXPECT_LT((quadratic_form(A, p, r) - quadratic_form(A, r, p)).max_abs(), 1e-14);
}

TEST(Io, ContainerRoundTrip)
{
    const auto dir = std::filesystem::temp_directory_path() / "mfgdecode_io_test";
    std::filesystem::create_directories(dir);
    const auto g = square(5, 3);
    const RunStamp stamp{"abc", 11};
    const auto f = ScalarField::from_function(g, [](const Point& x) { return std::exp(x[0]) - x[1]; });
    save(dir / "f.bin", f, stamp, "f");
    const ScalarField f2 = load_scalar(dir / "f.bin");
    EXPECT_EQ(f2.values(), f.values());
    EXPECT_EQ(f2.grid().node_count(), g->node_count());

    const auto b = BoundaryData::from_function(g, [](const Point& x, double t) { return x[0] * t; });
    save(dir / "b.bin", b, stamp);
    EXPECT_EQ(load_boundary(dir / "b.bin").values(), b.values());

    const auto c = read_container(dir / "f.bin");
    EXPECT_EQ(c.meta.at("config_hash"), "abc");
    EXPECT_EQ(c.meta.at("seed"), 11);
    EXPECT_THROW(load_vector(dir / "f.bin"), IoError);
    EXPECT_THROW(read_container(dir / "missing.bin"), IoError);
}

TEST(Io, ConfigHashIgnoresKeyOrder)
{
    const json a = json::parse(R"({"x": 1, "y": [1, 2]})");
    const json b = json::parse(R"({"y": [1, 2], "x": 1})");
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(json::parse(R"({"x": 2, "y": [1, 2]})")));
}
