#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stationary.hpp"

namespace mfg {

/// Boundary perturbation u|S = u0|S + eps g, m|S = m0|S + eps h.
struct PerturbationSpec {
    int index = 0;
    BoundaryData g;
    BoundaryData h;
    double amplitude = 0.0;
};

struct CompatibilityReport {
    double terminal_g = 0.0;  ///< max |g(., T)|
    double initial_h = 0.0;   ///< max |h(., 0)|
    double pde_g = 0.0;       ///< linearized HJB residual of the lifted g at t = T on the boundary
    double pde_h = 0.0;       ///< linearized KFP residual of the lifted h at t = 0 on the boundary
    double tol_algebraic = 1e-8;
    double tol_pde = 0.0;
    bool pass = false;
};

namespace detail {

/// Level-wise discrete harmonic lifting of trace data into the domain.
inline std::vector<Vec> lift_levels(const BoundaryData& b, const std::vector<int>& levels)
{
    const Grid& g = b.grid();
    const DiscreteOperators ops(g);
    const SparseSolver solver(with_dirichlet_rows(SpMat(-ops.lap), g), "boundary lifting");
    std::vector<Vec> out;
    for (int k : levels) {
        Vec rhs = Vec::Zero(static_cast<Eigen::Index>(g.node_count()));
        for (std::size_t s = 0; s < g.boundary_count(); ++s)
            rhs[static_cast<Eigen::Index>(g.boundary_nodes()[s])] = b.at(k, s);
        out.push_back(solver.solve_vec(rhs));
    }
    return out;
}

}  // namespace detail

/// Checks g(., T) = 0, h(., 0) = 0 and the two linearized PDE relations at the space-time corners.
/// The PDE relations use the harmonic lifting of the boundary data and second-order one-sided time
/// differences, so exact compatibility shows up as an O(h^2 + dt^2) residual.
inline CompatibilityReport check_compatibility(const PerturbationSpec& spec, const StationaryState& state,
                                               const MetricField& A, double tol_algebraic = 1e-8,
                                               double pde_factor = 10.0)
{
    const Grid& g = A.grid();
    const int N = g.n_time();
    CompatibilityReport r;
    r.tol_algebraic = tol_algebraic;
    for (std::size_t s = 0; s < g.boundary_count(); ++s) {
        r.terminal_g = std::max(r.terminal_g, std::abs(spec.g.at(N, s)));
        r.initial_h = std::max(r.initial_h, std::abs(spec.h.at(0, s)));
    }

    const DiscreteOperators ops(g);
    const auto adu0 = apply_metric(A, apply_gradient(ops, state.u0.vec()));
    const double dt = g.dt();

    const auto G = detail::lift_levels(spec.g, {N, N - 1, N - 2, 0});
    const auto H = detail::lift_levels(spec.h, {0, 1, 2});
    const Vec dtG = (3.0 * G[0] - 4.0 * G[1] + G[2]) / (2.0 * dt);
    Vec rg = -dtG - ops.lap * G[0];
    for (std::size_t a = 0; a < ops.d.size(); ++a) rg += 2.0 * adu0[a].cwiseProduct(ops.d[a] * G[0]);

    const Vec dtH = (-3.0 * H[0] + 4.0 * H[1] - H[2]) / (2.0 * dt);
    Vec rh = dtH - ops.lap * H[0];
    const auto adg0 = apply_metric(A, apply_gradient(ops, G[3]));
    for (std::size_t a = 0; a < ops.d.size(); ++a) {
        rh -= 2.0 * (ops.d[a] * Vec(state.m0.vec().cwiseProduct(adg0[a])));
        rh -= 2.0 * (ops.d[a] * Vec(H[0].cwiseProduct(adu0[a])));
    }
    for (std::size_t node : g.boundary_nodes()) {
        r.pde_g = std::max(r.pde_g, std::abs(rg[static_cast<Eigen::Index>(node)]));
        r.pde_h = std::max(r.pde_h, std::abs(rh[static_cast<Eigen::Index>(node)]));
    }
    double h2 = 0.0;
    for (int a = 0; a < g.dim(); ++a) h2 = std::max(h2, g.h(a) * g.h(a));
    const double scale = std::max({1.0, spec.g.max_abs(), spec.h.max_abs()});
    r.tol_pde = pde_factor * scale * (h2 + dt * dt);
    r.pass = r.terminal_g <= r.tol_algebraic && r.initial_h <= r.tol_algebraic && r.pde_g <= r.tol_pde &&
             r.pde_h <= r.tol_pde;
    return r;
}

}  // namespace mfg
