#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "mfg_solver.hpp"

namespace mfg {

/// sin^2(pi t / T) cos(k pi t / T): vanishes with its time derivative at t = T.
inline double terminal_profile(double t, double T, int k)
{
    const double s = std::sin(std::numbers::pi * (T - t) / T);  // exactly zero at t = T
    return s * s * std::cos(k * std::numbers::pi * t / T);
}

/// sin^2(pi t / 2T) cos(k pi t / T): vanishes with its time derivative at t = 0.
inline double initial_profile(double t, double T, int k)
{
    const double s = std::sin(std::numbers::pi * t / (2.0 * T));
    return s * s * std::cos(k * std::numbers::pi * t / T);
}

/// Weight concentrated on one face of the box: affine in the normal coordinate, equal to 1 on that face.
inline double face_weight(const Grid& g, const Point& x, int face)
{
    const int axis = face / 2;
    const bool upper = face % 2 == 1;
    const double s = (x[axis] - g.extent(axis).lo) / g.extent(axis).length();
    return upper ? s : 1.0 - s;
}

/// Perturbations acting on u only: one per face and time frequency k = 0..n_freq-1.
inline std::vector<PerturbationSpec> u_battery(const GridPtr& g, int n_freq)
{
    std::vector<PerturbationSpec> out;
    const double T = g->T();
    for (int k = 0; k < n_freq; ++k)
        for (int face = 0; face < 2 * g->dim(); ++face) {
            PerturbationSpec p{static_cast<int>(out.size()) + 1,
                               BoundaryData::from_function(g, [&](const Point& x, double t) {
                                   return face_weight(*g, x, face) * terminal_profile(t, T, k);
                               }),
                               BoundaryData::zeros(g), 0.0};
            out.push_back(std::move(p));
        }
    return out;
}

/// Perturbations acting on m only: one per face and time frequency k = 0..n_freq-1.
inline std::vector<PerturbationSpec> m_battery(const GridPtr& g, int n_freq)
{
    std::vector<PerturbationSpec> out;
    const double T = g->T();
    for (int k = 0; k < n_freq; ++k)
        for (int face = 0; face < 2 * g->dim(); ++face) {
            PerturbationSpec p{static_cast<int>(out.size()) + 1, BoundaryData::zeros(g),
                               BoundaryData::from_function(g, [&](const Point& x, double t) {
                                   return face_weight(*g, x, face) * initial_profile(t, T, k);
                               }),
                               0.0};
            out.push_back(std::move(p));
        }
    return out;
}

/// Stationary pair of a 1D problem with A = kappa(x):
///   u0' = v0 / (1 - v0 K(x)),  K(x) = int_lo^x kappa,
///   m0 = (v0/u0')^2 (m_left + c int_lo^x (u0'/v0)^2),
/// evaluated by cumulative Simpson quadrature on a fine grid.
class StationaryFamily1D {
public:
    StationaryFamily1D(std::function<double(double)> kappa, Interval extent, double v0, double u_left, double m_left,
                       double c, int fine = 20000)
        : lo_(extent.lo), hi_(extent.hi), fine_(fine)
    {
        const int n = 2 * fine_;
        const double hf = (hi_ - lo_) / n;
        std::vector<double> xs(n + 1), kap(n + 1);
        for (int i = 0; i <= n; ++i) {
            xs[i] = lo_ + i * hf;
            kap[i] = kappa(xs[i]);
        }
        auto cumulative = [&](const std::vector<double>& f, double start) {
            // Simpson on pairs of panels; midpoints by the trapezoid-corrected rule.
            std::vector<double> F(n + 1, start);
            for (int i = 0; i + 2 <= n; i += 2) {
                F[i + 1] = F[i] + hf / 12.0 * (5.0 * f[i] + 8.0 * f[i + 1] - f[i + 2]);
                F[i + 2] = F[i] + hf / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
            }
            return F;
        };
        const auto K = cumulative(kap, 0.0);
        std::vector<double> v(n + 1), w(n + 1);
        for (int i = 0; i <= n; ++i) {
            const double den = 1.0 - v0 * K[i];
            if (!(den > 0.0)) throw PreconditionViolated("closed-form stationary family blows up inside the domain");
            v[i] = v0 / den;
            w[i] = (v[i] / v0) * (v[i] / v0);
        }
        const auto U = cumulative(v, u_left);
        const auto W = cumulative(w, 0.0);
        xs_ = xs;
        u_ = U;
        du_ = v;
        m_.resize(n + 1);
        for (int i = 0; i <= n; ++i) m_[i] = (m_left + c * W[i]) / w[i];
    }

    double u0(double x) const { return interp(u_, x); }
    double du0(double x) const { return interp(du_, x); }
    double m0(double x) const { return interp(m_, x); }

private:
    double interp(const std::vector<double>& f, double x) const
    {
        const double hf = (hi_ - lo_) / (2.0 * fine_);
        double s = (x - lo_) / hf;
        int i = static_cast<int>(std::floor(s));
        i = std::clamp(i, 0, 2 * fine_ - 1);
        const double t = s - i;
        // Cubic Lagrange interpolation on four neighbouring fine nodes.
        int b = std::clamp(i - 1, 0, 2 * fine_ - 3);
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) {
            double l = 1.0;
            const double xj = b + j;
            for (int m = 0; m < 4; ++m)
                if (m != j) l *= (i + t - (b + m)) / (xj - (b + m));
            acc += l * f[static_cast<std::size_t>(b + j)];
        }
        return acc;
    }

    double lo_, hi_;
    int fine_;
    std::vector<double> xs_, u_, du_, m_;
};

/// Ground truth of an experiment.
struct Truth {
    MetricField A;
    RunningCost F;
    StationaryState state;
};

/// The 1D reference configuration: kappa = 1 + a sin(2 pi x) on [0,1], closed-form stationary family,
/// F2 = sin(pi x), F3 = cos(pi x).
struct Reference1D {
    int n_cells = 129;
    int n_time = 128;
    double T = 1.0;
    double kappa_amplitude = 0.5;
    double v0 = 0.5;
    double u_left = 0.0;
    double m_left = 1.0;
    double flux = -0.3;
    double f2_scale = 1.0;
    double f3_scale = 1.0;
};

inline Truth make_reference_truth(const Reference1D& r)
{
    auto grid = make_grid({{0.0, 1.0}}, {r.n_cells}, r.T, r.n_time);
    const double a = r.kappa_amplitude;
    auto kappa_fn = [a](double x) { return 1.0 + a * std::sin(2.0 * std::numbers::pi * x); };
    const MetricField A =
        MetricField::identity(grid, ScalarField::from_function(grid, [&](const Point& p) { return kappa_fn(p[0]); }));
    const StationaryFamily1D fam(kappa_fn, {0.0, 1.0}, r.v0, r.u_left, r.m_left, r.flux);
    const StationaryState seed{ScalarField::from_function(grid, [&](const Point& p) { return fam.u0(p[0]); }),
                               ScalarField::from_function(grid, [&](const Point& p) { return fam.m0(p[0]); })};
    const StationaryState state = solve_stationary(A, boundary_values(seed.u0), boundary_values(seed.m0), seed);
    std::vector<ScalarField> coef{
        ScalarField::from_function(grid, [&](const Point& p) { return r.f2_scale * std::sin(std::numbers::pi * p[0]); }),
        ScalarField::from_function(grid, [&](const Point& p) { return r.f3_scale * std::cos(std::numbers::pi * p[0]); })};
    return Truth{A, RunningCost(state.m0, coef), state};
}

}  // namespace mfg
