#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace mfg {

struct StationaryState {
    ScalarField u0;
    ScalarField m0;
};

struct StationaryOptions {
    double tol = 1e-10;
    int max_iter = 50;
    int max_halvings = 30;
};

/// Drift q = 2 A grad u0.
inline VectorField drift(const ScalarField& u0, const MetricField& A)
{
    const DiscreteOperators ops(u0.grid());
    const auto p = apply_metric(A, apply_gradient(ops, u0.vec()));
    std::vector<Vec> q;
    for (const auto& c : p) q.push_back(2.0 * c);
    return VectorField::from_components(u0.grid_ptr(), q);
}

namespace detail {

inline std::pair<Vec, Vec> stationary_residual_vec(const DiscreteOperators& ops, const MetricField& A, const Vec& u,
                                                   const Vec& m)
{
    const auto du = apply_gradient(ops, u);
    const auto adu = apply_metric(A, du);
    Vec ru = -(ops.lap * u);
    Vec rm = -(ops.lap * m);
    for (std::size_t a = 0; a < du.size(); ++a) {
        ru += du[a].cwiseProduct(adu[a]);
        rm -= 2.0 * (ops.d[a] * Vec(m.cwiseProduct(adu[a])));
    }
    return {ru.cwiseProduct(ops.interior), rm.cwiseProduct(ops.interior)};
}

inline void require_boundary_size(const Grid& g, const std::vector<double>& v, const char* what)
{
    if (v.size() != g.boundary_count()) throw PreconditionViolated(std::string(what) + " must have one value per boundary node");
    for (double x : v)
        if (!std::isfinite(x)) throw PreconditionViolated(std::string(what) + " contains non-finite values");
}

}  // namespace detail

/// Interior residuals of -lap u + grad u^T A grad u = 0 and -lap m - 2 div(m A grad u) = 0.
/// Boundary entries are zero.
inline std::pair<ScalarField, ScalarField> stationary_residual(const StationaryState& s, const MetricField& A)
{
    detail::require_same_grid(s.u0.grid(), A.grid());
    const DiscreteOperators ops(A.grid());
    auto [ru, rm] = detail::stationary_residual_vec(ops, A, s.u0.vec(), s.m0.vec());
    return {ScalarField(A.grid_ptr(), ru), ScalarField(A.grid_ptr(), rm)};
}

/// Dirichlet solve of -lap f = 0, used to build seeds from boundary values.
inline ScalarField harmonic_extension(const GridPtr& grid, const std::vector<double>& boundary)
{
    detail::require_boundary_size(*grid, boundary, "boundary values");
    const DiscreteOperators ops(*grid);
    const SpMat M = with_dirichlet_rows(SpMat(-ops.lap), *grid);
    Vec rhs = Vec::Zero(static_cast<Eigen::Index>(grid->node_count()));
    for (std::size_t s = 0; s < grid->boundary_count(); ++s)
        rhs[static_cast<Eigen::Index>(grid->boundary_nodes()[s])] = boundary[s];
    return ScalarField(grid, SparseSolver(M, "harmonic extension").solve_vec(rhs));
}

/// Damped Newton iteration on the coupled stationary system with the full Jacobian.
inline StationaryState solve_stationary(const MetricField& A, const std::vector<double>& u_boundary,
                                        const std::vector<double>& m_boundary, const StationaryState& seed,
                                        const StationaryOptions& opt = {})
{
    const Grid& g = A.grid();
    detail::require_boundary_size(g, u_boundary, "u0 boundary data");
    detail::require_boundary_size(g, m_boundary, "m0 boundary data");
    for (double x : m_boundary)
        if (x < 0.0) throw PreconditionViolated("m0 boundary data must be nonnegative");
    detail::require_same_grid(g, seed.u0.grid());
    detail::require_same_grid(g, seed.m0.grid());

    const DiscreteOperators ops(g);
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());
    Vec u = seed.u0.vec(), m = seed.m0.vec();
    for (std::size_t s = 0; s < g.boundary_count(); ++s) {
        u[static_cast<Eigen::Index>(g.boundary_nodes()[s])] = u_boundary[s];
        m[static_cast<Eigen::Index>(g.boundary_nodes()[s])] = m_boundary[s];
    }
    auto norm = [](const std::pair<Vec, Vec>& r) { return std::max(r.first.lpNorm<Eigen::Infinity>(), r.second.lpNorm<Eigen::Infinity>()); };

    // Metric entries as diagonal matrices, A_ab.
    std::vector<std::vector<Vec>> Aab(g.dim(), std::vector<Vec>(g.dim(), Vec(n)));
    for (Eigen::Index k = 0; k < n; ++k)
        for (int a = 0; a < g.dim(); ++a)
            for (int b = 0; b < g.dim(); ++b) Aab[a][b][k] = A.entry(static_cast<std::size_t>(k), a, b);

    const SpMat bdiag = diag(Vec(Vec::Ones(n) - ops.interior));
    const SpMat idiag = diag(ops.interior);
    SparseSolver solver;
    auto res = detail::stationary_residual_vec(ops, A, u, m);
    double r = norm(res);
    for (int it = 0; it < opt.max_iter && r > opt.tol; ++it) {
        const auto du = apply_gradient(ops, u);
        const auto adu = apply_metric(A, du);
        SpMat Juu = -ops.lap, Jmm = -ops.lap, Jmu(n, n);
        for (int a = 0; a < g.dim(); ++a) {
            Juu += 2.0 * diag(adu[a]) * ops.d[a];
            Jmm -= 2.0 * ops.d[a] * diag(adu[a]);
            for (int b = 0; b < g.dim(); ++b)
                Jmu -= 2.0 * ops.d[a] * diag(Vec(m.cwiseProduct(Aab[a][b]))) * ops.d[b];
        }
        Juu = idiag * Juu + bdiag;
        Jmm = idiag * Jmm + bdiag;
        Jmu = idiag * Jmu;
        std::vector<Triplet> t;
        auto put = [&](const SpMat& blk, int ro, int co) {
            for (int k = 0; k < blk.outerSize(); ++k)
                for (SpMat::InnerIterator e(blk, k); e; ++e)
                    t.emplace_back(static_cast<int>(e.row()) + ro, static_cast<int>(e.col()) + co, e.value());
        };
        put(Juu, 0, 0);
        put(Jmu, static_cast<int>(n), 0);
        put(Jmm, static_cast<int>(n), static_cast<int>(n));
        SpMat J(2 * n, 2 * n);
        J.setFromTriplets(t.begin(), t.end());
        Vec rhs(2 * n);
        rhs << -res.first, -res.second;
        try {
            solver.factorize(J, "stationary Jacobian");
        } catch (const SingularSystem& e) {
            throw IndefiniteJacobian(e.what());
        }
        Vec step;
        try {
            step = solver.solve_vec(rhs);
        } catch (const SingularSystem& e) {
            throw IndefiniteJacobian(e.what());
        }

        double alpha = 1.0;
        bool accepted = false;
        for (int hlv = 0; hlv <= opt.max_halvings; ++hlv, alpha *= 0.5) {
            const Vec ut = u + alpha * step.head(n), mt = m + alpha * step.tail(n);
            auto rt = detail::stationary_residual_vec(ops, A, ut, mt);
            const double nr = norm(rt);
            if (std::isfinite(nr) && (nr < r || nr <= opt.tol)) {
                u = ut;
                m = mt;
                res = std::move(rt);
                r = nr;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    if (!(r <= opt.tol))
        throw NonConvergence("stationary Newton stagnated with residual " + std::to_string(r));
    if (m.minCoeff() < -opt.tol) throw NonConvergence("stationary density became negative");
    return {ScalarField(A.grid_ptr(), u), ScalarField(A.grid_ptr(), m)};
}

/// Convenience overload taking boundary values from the first level of trace data.
inline StationaryState solve_stationary(const MetricField& A, const BoundaryData& u_trace, const BoundaryData& m_trace,
                                        const StationaryState& seed, const StationaryOptions& opt = {})
{
    std::vector<double> ub, mb;
    for (std::size_t s = 0; s < A.grid().boundary_count(); ++s) {
        ub.push_back(u_trace.at(0, s));
        mb.push_back(m_trace.at(0, s));
    }
    return solve_stationary(A, ub, mb, seed, opt);
}

/// Boundary values of a nodal field in slot order.
inline std::vector<double> boundary_values(const ScalarField& f)
{
    std::vector<double> v;
    for (std::size_t node : f.grid().boundary_nodes()) v.push_back(f[node]);
    return v;
}

}  // namespace mfg
