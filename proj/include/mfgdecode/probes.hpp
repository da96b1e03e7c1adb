#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <complex>
#include <functional>
#include <vector>

#include "linalg.hpp"

namespace mfg {

using Complex = std::complex<double>;

/// Smooth bump exp(1 - 1/(1 - s^2)) on |s| < 1 with s = (t - center)/half_width.
inline double bump(double t, double center, double half_width)
{
    const double s = (t - center) / half_width;
    if (std::abs(s) >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - s * s));
}

enum class RayChoice { Zeta, Xi };

struct CGOParams {
    double rho = 4.0;
    Point zeta{1.0, 0.0};
    Point xi{0.0, 0.0};
    double tau = 0.0;
    double chi_center = 0.5;      ///< in units of T
    double chi_half_width = 0.3;  ///< in units of T
    RayChoice ray = RayChoice::Zeta;
    bool chi_zero = false;        ///< use chi = 0 (degenerate probe)

    double chi(double t, double T) const
    {
        return chi_zero ? 0.0 : bump(t, chi_center * T, chi_half_width * T);
    }
};

/// Exponent budget of exp(+-psi).
inline constexpr double cgo_exponent_cap = 650.0;

inline void validate(const CGOParams& p, const Grid& g)
{
    if (!(p.rho > 0.0)) throw PreconditionViolated("rho must be positive");
    double zz = 0.0, zx = 0.0;
    for (int a = 0; a < g.dim(); ++a) {
        zz += p.zeta[a] * p.zeta[a];
        zx += p.zeta[a] * p.xi[a];
    }
    if (std::abs(zz - 1.0) > 1e-12) throw PreconditionViolated("zeta must be a unit vector");
    if (std::abs(zx) > 1e-12 * (1.0 + std::abs(p.xi[0]) + std::abs(p.xi[1])))
        throw PreconditionViolated("zeta must be orthogonal to xi");
    if (g.dim() == 1 && p.xi[0] != 0.0) throw PreconditionViolated("in 1D the spatial frequency must vanish");
    if (p.chi_center - p.chi_half_width <= 0.0 || p.chi_center + p.chi_half_width >= 1.0)
        throw PreconditionViolated("temporal cutoff must be supported inside (0, T)");
    const double expo = p.rho * p.rho * g.T() + p.rho * g.diameter();
    if (expo > cgo_exponent_cap)
        throw OverflowRisk("rho^2 T + rho diam = " + std::to_string(expo) + " exceeds the exponent budget");
}

/// Multilinear interpolation of nodal values, zero outside the closed box.
inline Point interpolate(const VectorField& f, const Point& x)
{
    const Grid& g = f.grid();
    Point out{0.0, 0.0};
    int i0[2] = {0, 0};
    double t[2] = {0.0, 0.0};
    const double slack = 1e-12;
    for (int a = 0; a < g.dim(); ++a) {
        const double lo = g.extent(a).lo, hi = g.extent(a).hi;
        if (x[a] < lo - slack * (hi - lo) || x[a] > hi + slack * (hi - lo)) return out;
        double s = (std::clamp(x[a], lo, hi) - lo) / g.h(a);
        int i = std::min(static_cast<int>(std::floor(s)), g.n_cells(a) - 2);
        i0[a] = i;
        t[a] = s - i;
    }
    if (g.dim() == 1) {
        out[0] = (1.0 - t[0]) * f.at(static_cast<std::size_t>(i0[0]), 0) + t[0] * f.at(static_cast<std::size_t>(i0[0] + 1), 0);
        return out;
    }
    for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj) {
            const double w = (di ? t[0] : 1.0 - t[0]) * (dj ? t[1] : 1.0 - t[1]);
            const std::size_t node = g.node({i0[0] + di, i0[1] + dj});
            for (int a = 0; a < 2; ++a) out[a] += w * f.at(node, a);
        }
    return out;
}

/// int_0^inf projection . phi(x + s direction) ds with phi extended by zero outside the box.
/// Composite trapezoid with steps of at most min(h)/2 in x, broken at grid-line crossings.
/// The projection defaults to the direction itself.
inline double ray_integral(const VectorField& phi, const Point& x, const Point& direction,
                           std::optional<Point> projection = std::nullopt)
{
    const Grid& g = phi.grid();
    double len = 0.0;
    for (int a = 0; a < g.dim(); ++a) len += direction[a] * direction[a];
    len = std::sqrt(len);
    if (!(len > 0.0)) throw ZeroDirection("ray direction must be nonzero");
    const Point proj = projection.value_or(direction);

    // Exit parameter of the ray from the box.
    double s_exit = std::numeric_limits<double>::infinity();
    for (int a = 0; a < g.dim(); ++a) {
        if (direction[a] > 0.0) s_exit = std::min(s_exit, (g.extent(a).hi - x[a]) / direction[a]);
        else if (direction[a] < 0.0) s_exit = std::min(s_exit, (g.extent(a).lo - x[a]) / direction[a]);
    }
    if (!(s_exit > 0.0)) return 0.0;

    // Breakpoints where the ray crosses grid lines.
    std::vector<double> brk{0.0, s_exit};
    for (int a = 0; a < g.dim(); ++a) {
        if (direction[a] == 0.0) continue;
        for (int i = 0; i < g.n_cells(a); ++i) {
            const double s = (g.extent(a).lo + i * g.h(a) - x[a]) / direction[a];
            if (s > 0.0 && s < s_exit) brk.push_back(s);
        }
    }
    std::sort(brk.begin(), brk.end());
    auto integrand = [&](double s) {
        Point p{x[0] + s * direction[0], x[1] + s * direction[1]};
        for (int a = 0; a < g.dim(); ++a) p[a] = std::clamp(p[a], g.extent(a).lo, g.extent(a).hi);
        const Point v = interpolate(phi, p);
        double acc = 0.0;
        for (int a = 0; a < g.dim(); ++a) acc += proj[a] * v[a];
        return acc;
    };
    const double ds_max = 0.5 * g.min_h() / len;
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < brk.size(); ++j) {
        const double a = brk[j], b = brk[j + 1];
        if (b - a <= 0.0) continue;
        const int steps = std::max(1, static_cast<int>(std::ceil((b - a) / ds_max)));
        const double ds = (b - a) / steps;
        double seg = 0.5 * (integrand(a) + integrand(b));
        for (int k = 1; k < steps; ++k) seg += integrand(a + k * ds);
        total += seg * ds;
    }
    return total;
}

/// Probe fields stored without the exponential weight: the physical probe is exp(+psi) (leading + remainder)
/// for the forward probe and exp(-psi) (leading + remainder) for the backward probe.
struct CGOResult {
    SpaceTimeField ansatz;     ///< leading term, complex
    SpaceTimeField remainder;  ///< z, complex, zero on the boundary and at the initial/terminal level
    double remainder_norm = 0.0;
    double sign = 1.0;         ///< +1 forward, -1 backward
};

namespace detail {

/// Real matrix of the conjugated operator at one level:
/// forward:  I/dt - lap - (2 rho zeta + phi).D - rho (zeta.phi) + pot
/// backward: I/dt - lap + (2 rho zeta + phi).D - rho (zeta.phi) + pot
inline SpMat conjugated_matrix(const DiscreteOperators& ops, const Grid& g, const CGOParams& p, const VectorField& phi,
                               const ScalarField& pot, double sign)
{
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());
    StepAssembler as(ops);
    as.reset(1.0 / g.dt(), 1.0);
    Vec zphi = Vec::Zero(n);
    for (int a = 0; a < g.dim(); ++a) {
        const Vec c = phi.component(a);
        zphi += p.zeta[a] * c;
        as.add_left_weighted_derivative(a, Vec(-sign * (2.0 * p.rho * p.zeta[a] * Vec::Ones(n) + c)));
    }
    SpMat m = as.matrix();
    m += diag(Vec(-p.rho * zphi + pot.vec()));
    return with_dirichlet_rows(m, g);
}

inline Vec apply_conjugated(const DiscreteOperators& ops, const Grid& g, const CGOParams& p, const VectorField& phi,
                            const ScalarField& pot, double sign, const Vec& x)
{
    Vec out = -(ops.lap * x);
    Vec zphi = Vec::Zero(x.size());
    for (int a = 0; a < g.dim(); ++a) {
        const Vec c = phi.component(a);
        zphi += p.zeta[a] * c;
        out -= sign * (2.0 * p.rho * p.zeta[a] * Vec::Ones(x.size()) + c).cwiseProduct(ops.d[a] * x);
    }
    out += (-p.rho * zphi + pot.vec()).cwiseProduct(x);
    return out;
}

}  // namespace detail

/// Leading amplitude exp(sign/2 * R(x)) with R the ray integral of zeta.phi.
inline Vec ray_amplitude(const CGOParams& p, const VectorField& phi, double sign)
{
    const Grid& g = phi.grid();
    Vec amp(static_cast<Eigen::Index>(g.node_count()));
    const Point dir = p.ray == RayChoice::Zeta ? p.zeta : p.xi;
    for (std::size_t k = 0; k < g.node_count(); ++k) {
        const double R = ray_integral(phi, g.point(k), dir, p.zeta);
        amp[static_cast<Eigen::Index>(k)] = std::exp(0.5 * sign * R);
    }
    return amp;
}

/// Leading terms of the forward (sign = +1, with phase) or backward (sign = -1, no phase) probe.
inline SpaceTimeField cgo_leading(const CGOParams& p, const VectorField& phi, double sign)
{
    const Grid& g = phi.grid();
    const Vec amp = ray_amplitude(p, phi, sign);
    std::vector<Vec> re, im;
    for (int k = 0; k < g.n_levels(); ++k) {
        const double t = g.time(k);
        const double c = p.chi(t, g.T());
        Vec r(amp.size()), i(amp.size());
        for (std::size_t node = 0; node < g.node_count(); ++node) {
            const Point x = g.point(node);
            double phase = 0.0;
            if (sign > 0.0) phase = -(x[0] * p.xi[0] + x[1] * p.xi[1] + t * p.tau);
            const Eigen::Index j = static_cast<Eigen::Index>(node);
            r[j] = c * amp[j] * std::cos(phase);
            i[j] = c * amp[j] * std::sin(phase);
        }
        re.push_back(r);
        im.push_back(i);
    }
    return SpaceTimeField::from_levels(phi.grid_ptr(), re, im);
}

namespace detail {

inline CGOResult cgo_solve(const CGOParams& p, const VectorField& phi, const ScalarField& pot, double sign)
{
    const Grid& g = phi.grid();
    validate(p, g);
    const GridPtr& gp = phi.grid_ptr();
    const DiscreteOperators ops(g);
    const SpaceTimeField lead = cgo_leading(p, phi, sign);
    const SparseSolver solver(conjugated_matrix(ops, g, p, phi, pot, sign), "probe remainder");
    const int N = g.n_time();
    const double dt = g.dt();
    std::vector<Vec> zr(N + 1, Vec::Zero(static_cast<Eigen::Index>(g.node_count()))), zi = zr;
    // Remainder equation: L z = -L a with z = 0 on the boundary and at the start level.
    auto step = [&](int k, int prev) {
        for (int part = 0; part < 2; ++part) {
            const Vec ak = part == 0 ? Vec(lead.level_vec(k)) : Vec(lead.level_imag_vec(k));
            const Vec ap = part == 0 ? Vec(lead.level_vec(prev)) : Vec(lead.level_imag_vec(prev));
            Vec La = (ak - ap) / dt + apply_conjugated(ops, g, p, phi, pot, sign, ak);
            std::vector<Vec>& z = part == 0 ? zr : zi;
            Vec rhs = (z[prev] / dt - La).cwiseProduct(ops.interior);
            z[k] = solver.solve_vec(rhs).cwiseProduct(ops.interior);
        }
    };
    if (sign > 0.0)
        for (int k = 1; k <= N; ++k) step(k, k - 1);
    else
        for (int k = N - 1; k >= 0; --k) step(k, k + 1);
    CGOResult out{lead, SpaceTimeField::from_levels(gp, zr, zi), 0.0, sign};
    out.remainder_norm = out.remainder.l2_norm();
    return out;
}

}  // namespace detail

/// Forward probe for w_t - lap w - phi.grad w + pot w = 0, w(0) = 0.
inline CGOResult cgo_forward(const CGOParams& p, const VectorField& phi, const ScalarField& pot)
{
    return detail::cgo_solve(p, phi, pot, 1.0);
}

/// Backward probe for -v_t - lap v + phi.grad v + pot v = 0, v(T) = 0.
inline CGOResult cgo_backward(const CGOParams& p, const VectorField& phi, const ScalarField& pot)
{
    return detail::cgo_solve(p, phi, pot, -1.0);
}

/// Backward conjugated solve -U_t - lap U + (2 rho zeta + phi).grad U - rho (zeta.phi) U + pot U = 0
/// with U = trace on the boundary and U(T) = 0 inside.
inline SpaceTimeField solve_conjugated_backward(const CGOParams& p, const VectorField& phi, const ScalarField& pot,
                                                const BoundaryData& trace)
{
    const Grid& g = phi.grid();
    validate(p, g);
    detail::require_same_grid(g, trace.grid());
    const DiscreteOperators ops(g);
    const SparseSolver solver(detail::conjugated_matrix(ops, g, p, phi, pot, -1.0), "conjugated response");
    const int N = g.n_time();
    std::vector<Vec> U(N + 1, Vec::Zero(static_cast<Eigen::Index>(g.node_count())));
    auto set = [&](int k, Vec& x) {
        for (std::size_t s = 0; s < g.boundary_count(); ++s)
            x[static_cast<Eigen::Index>(g.boundary_nodes()[s])] = trace.at(k, s);
    };
    set(N, U[N]);
    for (int k = N - 1; k >= 0; --k) {
        Vec rhs = (U[k + 1] / g.dt()).cwiseProduct(ops.interior);
        set(k, rhs);
        U[k] = solver.solve_vec(rhs);
    }
    return SpaceTimeField::from_levels(phi.grid_ptr(), U);
}

/// Space-time trapezoid integral of w f (complex product when either is complex).
inline Complex pairing(const SpaceTimeField& w, const SpaceTimeField& f)
{
    detail::require_same_grid(w.grid(), f.grid());
    const Grid& g = w.grid();
    Complex acc{0.0, 0.0};
    for (int k = 0; k < g.n_levels(); ++k) {
        const double wt = g.time_weight(k);
        const auto wr = w.level(k), fr = f.level(k);
        for (std::size_t i = 0; i < g.node_count(); ++i) {
            const Complex a(wr[i], w.is_complex() ? w.level_imag(k)[i] : 0.0);
            const Complex b(fr[i], f.is_complex() ? f.level_imag(k)[i] : 0.0);
            acc += wt * g.volume_weight(i) * a * b;
        }
    }
    return acc;
}

/// Physical probes exp(+psi) W and exp(-psi) V paired through a drift difference:
/// (1/rho) int w dq.grad v = (1/rho) int W dq.(grad V - rho zeta V).
inline Complex normalized_drift_pairing(const CGOParams& p, const SpaceTimeField& W, const SpaceTimeField& V,
                                        const VectorField& dq)
{
    const Grid& g = W.grid();
    std::vector<Vec> re, im;
    for (int k = 0; k < g.n_levels(); ++k) {
        Vec fr = Vec::Zero(static_cast<Eigen::Index>(g.node_count())), fi = fr;
        const Vec vr = V.level_vec(k), vi = V.is_complex() ? Vec(V.level_imag_vec(k)) : Vec(Vec::Zero(vr.size()));
        for (int a = 0; a < g.dim(); ++a) {
            const Vec c = dq.component(a);
            fr += c.cwiseProduct(partial(g, a, vr.data()) - p.rho * p.zeta[a] * vr);
            fi += c.cwiseProduct(partial(g, a, vi.data()) - p.rho * p.zeta[a] * vi);
        }
        re.push_back(fr);
        im.push_back(fi);
    }
    return pairing(W, SpaceTimeField::from_levels(W.grid_ptr(), re, im)) / p.rho;
}

/// Full conjugated probe (leading term plus remainder).
inline SpaceTimeField full_probe(const CGOResult& r) { return r.ansatz + r.remainder; }

/// int chi(t)^2 exp(-i t tau) dt by the time trapezoid rule.
inline Complex chi_weight(const CGOParams& p, const Grid& g)
{
    Complex acc{0.0, 0.0};
    for (int k = 0; k < g.n_levels(); ++k) {
        const double t = g.time(k), c = p.chi(t, g.T());
        acc += g.time_weight(k) * c * c * std::exp(Complex(0.0, -t * p.tau));
    }
    return acc;
}

/// Adjoint potential -div(phi) used by forward probes that pair with the drift equation.
inline ScalarField adjoint_potential(const VectorField& phi) { return -1.0 * divergence(phi); }

}  // namespace mfg
