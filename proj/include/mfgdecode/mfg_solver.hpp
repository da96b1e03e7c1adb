#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "perturbation.hpp"
#include "running_cost.hpp"

namespace mfg {

struct MfgSolverOptions {
    double theta = 0.5;              ///< under-relaxation of the density update
    double tol_fp = 1e-9;            ///< sup-norm increment tolerance of the fixed point
    int max_iter = 500;
    int patience = 8;                ///< consecutive growing increments tolerated
    int stall_window = 40;           ///< iterations without a new smallest increment before giving up
    double divergence_bound = 1e8;   ///< increments above this count as divergence
    double tol_newton = 1e-12;       ///< relative update tolerance of the per-step Newton solve
    int max_newton = 50;
    double amplitude_factor = 0.1;   ///< perturbation budget relative to the state scale
    bool enforce_amplitude_bound = true;
};

/// Time-dependent coupled problem with Dirichlet data on the boundary.
struct ForwardProblem {
    MetricField A;
    RunningCost F;
    BoundaryData u_boundary;
    BoundaryData m_boundary;
    ScalarField u_T;
    ScalarField f;
    std::optional<SpaceTimeField> source_u;
    std::optional<SpaceTimeField> source_m;
};

struct MFGProblem {
    MetricField A;
    RunningCost F;
    StationaryState base;
    std::vector<PerturbationSpec> perturbations;
    ScalarField u_T;
    ScalarField f;

    const Grid& grid() const { return A.grid(); }
    const GridPtr& grid_ptr() const { return A.grid_ptr(); }
};

/// Problem with u_T = u0 and f = m0, the data consistent with compatible perturbations.
inline MFGProblem make_problem(const MetricField& A, const RunningCost& F, const StationaryState& base,
                               std::vector<PerturbationSpec> perturbations = {})
{
    return MFGProblem{A, F, base, std::move(perturbations), base.u0, base.m0};
}

/// Copy of a problem with the amplitudes replaced.
inline MFGProblem with_amplitudes(const MFGProblem& p, const std::vector<double>& eps)
{
    if (eps.size() != p.perturbations.size()) throw PreconditionViolated("one amplitude per perturbation required");
    MFGProblem q = p;
    for (std::size_t l = 0; l < eps.size(); ++l) q.perturbations[l].amplitude = eps[l];
    return q;
}

struct MfgSolution {
    SpaceTimeField u;
    SpaceTimeField m;
    int iterations = 0;
    double increment = 0.0;
    double min_density = 0.0;
    bool negative_density = false;
};

namespace detail {

inline BoundaryData perturbed_trace(const ScalarField& base, const std::vector<PerturbationSpec>& perts, bool use_g)
{
    const Grid& g = base.grid();
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(g.n_levels()) * g.boundary_count());
    for (int k = 0; k < g.n_levels(); ++k)
        for (std::size_t s = 0; s < g.boundary_count(); ++s) {
            double x = base[g.boundary_nodes()[s]];
            for (const auto& p : perts) x += p.amplitude * (use_g ? p.g.at(k, s) : p.h.at(k, s));
            v.push_back(x);
        }
    return BoundaryData(base.grid_ptr(), BoundaryKind::Trace, std::move(v));
}

inline void set_boundary(const Grid& g, const BoundaryData& b, int level, Vec& x)
{
    for (std::size_t s = 0; s < g.boundary_count(); ++s) x[static_cast<Eigen::Index>(g.boundary_nodes()[s])] = b.at(level, s);
}

inline double sup_diff(const std::vector<Vec>& a, const std::vector<Vec>& b)
{
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, (a[k] - b[k]).lpNorm<Eigen::Infinity>());
    return m;
}

/// Backward and forward sweeps of the coupled system on a fixed grid.
class MfgSweeper {
public:
    MfgSweeper(const ForwardProblem& p, const MfgSolverOptions& opt)
        : p_(p), g_(p.A.grid()), opt_(opt), ops_(g_), asm_(ops_), n_(static_cast<Eigen::Index>(g_.node_count()))
    {
        for (int a = 0; a < g_.dim(); ++a) {
            std::vector<Vec> row;
            for (int b = 0; b < g_.dim(); ++b) {
                Vec e(n_);
                for (Eigen::Index k = 0; k < n_; ++k) e[k] = p.A.entry(static_cast<std::size_t>(k), a, b);
                row.push_back(e);
            }
            Aab_.push_back(row);
        }
    }

    std::vector<Vec> metric_gradient(const Vec& u) const
    {
        std::vector<Vec> du = apply_gradient(ops_, u), out(g_.dim(), Vec::Zero(n_));
        for (int a = 0; a < g_.dim(); ++a)
            for (int b = 0; b < g_.dim(); ++b) out[a] += Aab_[a][b].cwiseProduct(du[b]);
        return out;
    }

    /// Implicit Euler backward in time with Newton per step.
    std::vector<Vec> solve_hjb(const std::vector<Vec>& M)
    {
        const int N = g_.n_time();
        const double dt = g_.dt();
        std::vector<Vec> U(N + 1);
        U[N] = p_.u_T.vec();
        set_boundary(g_, p_.u_boundary, N, U[N]);
        for (int k = N - 1; k >= 0; --k) {
            Vec rhs_const = U[k + 1] / dt + p_.F.evaluate(M[k].data());
            if (p_.source_u) rhs_const += p_.source_u->level_vec(k);
            Vec u = U[k + 1];
            set_boundary(g_, p_.u_boundary, k, u);
            bool converged = false;
            for (int it = 0; it < opt_.max_newton; ++it) {
                const auto du = apply_gradient(ops_, u);
                const auto adu = metric_gradient(u);
                Vec G = u / dt - ops_.lap * u - rhs_const;
                asm_.reset(1.0 / dt, 1.0);
                for (int a = 0; a < g_.dim(); ++a) {
                    G += du[a].cwiseProduct(adu[a]);
                    asm_.add_left_weighted_derivative(a, 2.0 * adu[a]);
                }
                G = G.cwiseProduct(ops_.interior);
                asm_.apply_dirichlet_rows();
                hjb_solver_.factorize(asm_.matrix(), "HJB Newton step");
                const Vec step = hjb_solver_.solve_vec(-G);
                u += step;
                if (step.lpNorm<Eigen::Infinity>() <= opt_.tol_newton * (1.0 + u.lpNorm<Eigen::Infinity>())) {
                    converged = true;
                    break;
                }
            }
            if (!converged) throw NonConvergence("HJB Newton did not converge at level " + std::to_string(k));
            U[k] = std::move(u);
        }
        return U;
    }

    /// Implicit Euler forward in time, linear in m at each level.
    std::vector<Vec> solve_kfp(const std::vector<Vec>& U)
    {
        const int N = g_.n_time();
        const double dt = g_.dt();
        std::vector<Vec> M(N + 1);
        M[0] = p_.f.vec();
        set_boundary(g_, p_.m_boundary, 0, M[0]);
        for (int k = 1; k <= N; ++k) {
            const auto adu = metric_gradient(U[k]);
            asm_.reset(1.0 / dt, 1.0);
            for (int a = 0; a < g_.dim(); ++a) asm_.add_right_weighted_derivative(a, -2.0 * adu[a]);
            asm_.apply_dirichlet_rows();
            Vec rhs = M[k - 1] / dt;
            if (p_.source_m) rhs += p_.source_m->level_vec(k);
            rhs = rhs.cwiseProduct(ops_.interior);
            set_boundary(g_, p_.m_boundary, k, rhs);
            kfp_solver_.factorize(asm_.matrix(), "KFP step");
            M[k] = kfp_solver_.solve_vec(rhs);
        }
        return M;
    }

    /// Initial density iterate: f inside, boundary data on the boundary.
    std::vector<Vec> initial_density() const
    {
        std::vector<Vec> M(g_.n_levels(), p_.f.vec());
        for (int k = 0; k < g_.n_levels(); ++k) set_boundary(g_, p_.m_boundary, k, M[k]);
        return M;
    }

private:
    const ForwardProblem& p_;
    const Grid& g_;
    MfgSolverOptions opt_;
    DiscreteOperators ops_;
    StepAssembler asm_;
    Eigen::Index n_;
    std::vector<std::vector<Vec>> Aab_;
    SparseSolver hjb_solver_, kfp_solver_;
};

}  // namespace detail

/// Damped backward-forward fixed point for the coupled system with Dirichlet data.
inline MfgSolution solve_mfg(const ForwardProblem& p, const MfgSolverOptions& opt = {})
{
    const Grid& g = p.A.grid();
    if (!(opt.theta > 0.0 && opt.theta <= 1.0)) throw PreconditionViolated("relaxation factor must lie in (0, 1]");
    detail::MfgSweeper sweep(p, opt);
    std::vector<Vec> M = sweep.initial_density();
    std::vector<Vec> U;
    double inc = 0.0, prev_inc = std::numeric_limits<double>::infinity();
    int growth = 0, it = 0, since_best = 0;
    double best = std::numeric_limits<double>::infinity();
    bool done = false;
    for (it = 1; it <= opt.max_iter; ++it) {
        std::vector<Vec> Uj = sweep.solve_hjb(M);
        std::vector<Vec> Mj = sweep.solve_kfp(Uj);
        inc = detail::sup_diff(Mj, M);
        if (!U.empty()) inc = std::max(inc, detail::sup_diff(Uj, U));
        U = std::move(Uj);
        if (!std::isfinite(inc) || inc > opt.divergence_bound)
            throw FixedPointDivergence("fixed-point increment blew up at iteration " + std::to_string(it));
        growth = inc > prev_inc ? growth + 1 : 0;
        if (growth >= opt.patience)
            throw FixedPointDivergence("fixed-point increments grew for " + std::to_string(growth) + " iterations");
        prev_inc = inc;
        if (inc < best) {
            best = inc;
            since_best = 0;
        } else if (++since_best >= opt.stall_window) {
            throw NonConvergence("fixed-point increments stalled at " + std::to_string(best) +
                                 " above the tolerance " + std::to_string(opt.tol_fp));
        }
        for (std::size_t k = 0; k < M.size(); ++k) M[k] = opt.theta * Mj[k] + (1.0 - opt.theta) * M[k];
        if (inc <= opt.tol_fp) {
            done = true;
            break;
        }
    }
    if (!done) throw NonConvergence("fixed point not reached within " + std::to_string(opt.max_iter) + " iterations");
    U = sweep.solve_hjb(M);
    M = sweep.solve_kfp(U);

    MfgSolution out{SpaceTimeField::from_levels(p.A.grid_ptr(), U), SpaceTimeField::from_levels(p.A.grid_ptr(), M)};
    out.iterations = it;
    out.increment = inc;
    out.min_density = out.m.min();
    out.negative_density = out.min_density < -opt.tol_fp;
    (void)g;
    return out;
}

/// Lowers an MFG problem with boundary perturbations to a Dirichlet problem.
inline ForwardProblem to_forward_problem(const MFGProblem& p)
{
    return ForwardProblem{p.A,
                          p.F,
                          detail::perturbed_trace(p.base.u0, p.perturbations, true),
                          detail::perturbed_trace(p.base.m0, p.perturbations, false),
                          p.u_T,
                          p.f,
                          std::nullopt,
                          std::nullopt};
}

inline MfgSolution solve_mfg(const MFGProblem& p, const MfgSolverOptions& opt = {})
{
    const Grid& g = p.grid();
    if (opt.enforce_amplitude_bound) {
        double size = 0.0;
        for (const auto& q : p.perturbations) size += std::abs(q.amplitude) * std::max(q.g.max_abs(), q.h.max_abs());
        const double budget = opt.amplitude_factor * std::max({1.0, p.base.u0.max_abs(), p.base.m0.max_abs()});
        if (size > budget)
            throw PreconditionViolated("total perturbation amplitude " + std::to_string(size) +
                                       " exceeds the fixed-point budget " + std::to_string(budget));
    }
    const ForwardProblem fp = to_forward_problem(p);
    const double scale = 1e-10 * std::max({1.0, p.base.u0.max_abs(), p.base.m0.max_abs()});
    for (std::size_t s = 0; s < g.boundary_count(); ++s) {
        const std::size_t node = g.boundary_nodes()[s];
        if (std::abs(fp.u_boundary.at(g.n_time(), s) - p.u_T[node]) > scale)
            throw PreconditionViolated("terminal data disagrees with the perturbed boundary trace at t = T");
        if (std::abs(fp.m_boundary.at(0, s) - p.f[node]) > scale)
            throw PreconditionViolated("initial data disagrees with the perturbed boundary trace at t = 0");
    }
    return solve_mfg(fp, opt);
}

/// Interior residuals of the discrete HJB and KFP equations at every level.
inline std::pair<SpaceTimeField, SpaceTimeField> mfg_residual(const ForwardProblem& p, const SpaceTimeField& u,
                                                              const SpaceTimeField& m)
{
    const Grid& g = p.A.grid();
    const DiscreteOperators ops(g);
    const int N = g.n_time();
    const double dt = g.dt();
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());
    std::vector<Vec> ru(N + 1, Vec::Zero(n)), rm(N + 1, Vec::Zero(n));
    for (int k = 0; k < N; ++k) {
        const Vec uk = u.level_vec(k);
        const auto du = apply_gradient(ops, uk);
        const auto adu = apply_metric(p.A, du);
        Vec r = (uk - u.level_vec(k + 1)) / dt - ops.lap * uk - p.F.evaluate(m.level(k).data());
        for (std::size_t a = 0; a < du.size(); ++a) r += du[a].cwiseProduct(adu[a]);
        if (p.source_u) r -= p.source_u->level_vec(k);
        ru[k] = r.cwiseProduct(ops.interior);
    }
    for (int k = 1; k <= N; ++k) {
        const Vec mk = m.level_vec(k);
        const auto adu = apply_metric(p.A, apply_gradient(ops, Vec(u.level_vec(k))));
        Vec r = (mk - m.level_vec(k - 1)) / dt - ops.lap * mk;
        for (std::size_t a = 0; a < adu.size(); ++a) r -= 2.0 * (ops.d[a] * Vec(mk.cwiseProduct(adu[a])));
        if (p.source_m) r -= p.source_m->level_vec(k);
        rm[k] = r.cwiseProduct(ops.interior);
    }
    return {SpaceTimeField::from_levels(p.A.grid_ptr(), ru), SpaceTimeField::from_levels(p.A.grid_ptr(), rm)};
}

}  // namespace mfg
