#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfg_solver.hpp"

namespace mfg {

/// Multiset of perturbation labels, kept sorted. Repeated labels denote repeated differentiation.
using MultiIndex = std::vector<int>;

inline MultiIndex make_index(std::vector<int> labels)
{
    std::sort(labels.begin(), labels.end());
    return labels;
}

inline std::string to_string(const MultiIndex& a)
{
    std::string s = "(";
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
    return s + ")";
}

/// Labels at the positions selected by a bit mask, sorted.
inline MultiIndex sub_index(const MultiIndex& a, unsigned mask)
{
    MultiIndex out;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (mask & (1u << i)) out.push_back(a[i]);
    return out;
}

/// All set partitions of {0..n-1}; blocks are ordered by their smallest element.
inline std::vector<std::vector<unsigned>> set_partitions(int n)
{
    std::vector<std::vector<unsigned>> out;
    std::vector<int> code(static_cast<std::size_t>(n), 0);
    // Restricted growth strings enumerate each partition once.
    std::function<void(int, int)> rec = [&](int i, int blocks) {
        if (i == n) {
            std::vector<unsigned> part(static_cast<std::size_t>(blocks), 0u);
            for (int j = 0; j < n; ++j) part[static_cast<std::size_t>(code[j])] |= 1u << j;
            out.push_back(part);
            return;
        }
        for (int b = 0; b <= blocks && b < n; ++b) {
            code[static_cast<std::size_t>(i)] = b;
            rec(i + 1, std::max(blocks, b + 1));
        }
    };
    if (n > 0) rec(0, 0);
    return out;
}

struct LinearizedSolution {
    MultiIndex order;
    SpaceTimeField u;
    SpaceTimeField m;
};

using LinearizedFamily = std::map<MultiIndex, LinearizedSolution>;

/// Linearized operators around a stationary state. The u- and m-matrices are time independent and are
/// factorized once.
class LinearizedSystem {
public:
    static constexpr int max_order = 5;

    LinearizedSystem(const StationaryState& state, const MetricField& A)
        : state_(state), A_(A), g_(A.grid()), ops_(g_), n_(static_cast<Eigen::Index>(g_.node_count()))
    {
        detail::require_same_grid(g_, state.u0.grid());
        du0_ = apply_gradient(ops_, state.u0.vec());
        adu0_ = apply_metric(A, du0_);
        for (const auto& c : adu0_) q_.push_back(2.0 * c);
        const double dt = g_.dt();
        StepAssembler as(ops_);
        as.reset(1.0 / dt, 1.0);
        for (int a = 0; a < g_.dim(); ++a) as.add_left_weighted_derivative(a, q_[a]);
        as.apply_dirichlet_rows();
        u_matrix_ = as.matrix();
        u_solver_.factorize(u_matrix_, "linearized u-equation");
        as.reset(1.0 / dt, 1.0);
        for (int a = 0; a < g_.dim(); ++a) as.add_right_weighted_derivative(a, Vec(-2.0 * adu0_[a]));
        as.apply_dirichlet_rows();
        m_matrix_ = as.matrix();
        m_solver_.factorize(m_matrix_, "linearized m-equation");
    }

    const Grid& grid() const { return g_; }
    const MetricField& metric() const { return A_; }
    const StationaryState& state() const { return state_; }
    const DiscreteOperators& operators() const { return ops_; }
    /// Drift q = 2 A grad u0 as assembled into the u-equation.
    VectorField drift() const { return VectorField::from_components(A_.grid_ptr(), q_); }
    const std::vector<Vec>& drift_components() const { return q_; }
    /// Drift term q . grad w of the assembled u-equation applied to a nodal field.
    Vec apply_drift(const Vec& w) const
    {
        Vec out = Vec::Zero(n_);
        for (int a = 0; a < g_.dim(); ++a) out += q_[a].cwiseProduct(ops_.d[a] * w);
        return out;
    }

    /// Backward solve of (u^k - u^{k+1})/dt - lap u^k + q.D u^k = s^k, u^N = 0, u = g on the boundary.
    /// source holds levels 0..N-1 (or is empty).
    std::vector<Vec> solve_u(const BoundaryData* g, const std::vector<Vec>& source) const
    {
        const int N = g_.n_time();
        std::vector<Vec> U(N + 1, Vec::Zero(n_));
        if (g) detail::set_boundary(g_, *g, N, U[N]);
        for (int k = N - 1; k >= 0; --k) {
            Vec rhs = U[k + 1] / g_.dt();
            if (!source.empty()) rhs += source[k];
            rhs = rhs.cwiseProduct(ops_.interior);
            if (g) detail::set_boundary(g_, *g, k, rhs);
            U[k] = u_solver_.solve_vec(rhs);
        }
        return U;
    }

    /// Forward solve of (m^k - m^{k-1})/dt - lap m^k - 2 D.(m^k A D u0) = s^k, m^0 = 0, m = h on the boundary.
    /// source holds levels 0..N (level 0 unused).
    std::vector<Vec> solve_m(const BoundaryData* h, const std::vector<Vec>& source) const
    {
        const int N = g_.n_time();
        std::vector<Vec> M(N + 1, Vec::Zero(n_));
        if (h) detail::set_boundary(g_, *h, 0, M[0]);
        for (int k = 1; k <= N; ++k) {
            Vec rhs = M[k - 1] / g_.dt();
            if (!source.empty()) rhs += source[k];
            rhs = rhs.cwiseProduct(ops_.interior);
            if (h) detail::set_boundary(g_, *h, k, rhs);
            M[k] = m_solver_.solve_vec(rhs);
        }
        return M;
    }

    /// Solve of the linearized u-step matrix for a block of right-hand sides.
    Eigen::MatrixXd solve_u_matrix(const Eigen::MatrixXd& rhs) const { return u_solver_.solve_mat(rhs); }

    /// Density coupling 2 D.(m0 A D w) of a u-part into the m-equation.
    Vec coupling(const Vec& m_base, const Vec& w) const
    {
        const auto aw = apply_metric(A_, apply_gradient(ops_, w));
        Vec out = Vec::Zero(n_);
        for (int a = 0; a < g_.dim(); ++a) out += ops_.d[a] * Vec(m_base.cwiseProduct(aw[a]));
        return 2.0 * out;
    }

    LinearizedSolution first_order(const BoundaryData& g, const BoundaryData& h, int label = 1) const
    {
        check_trace(g);
        check_trace(h);
        const auto U = solve_u(&g, {});
        std::vector<Vec> sm(U.size(), Vec::Zero(n_));
        for (std::size_t k = 1; k < U.size(); ++k) sm[k] = coupling(state_.m0.vec(), U[k]);
        const auto M = solve_m(&h, sm);
        return {MultiIndex{label}, SpaceTimeField::from_levels(A_.grid_ptr(), U),
                SpaceTimeField::from_levels(A_.grid_ptr(), M)};
    }

    /// Order-|target| solution from the lower-order family (homogeneous boundary data for |target| >= 2).
    LinearizedSolution order_n(const RunningCost& F, const LinearizedFamily& lower, const MultiIndex& target,
                               const BoundaryData* g = nullptr, const BoundaryData* h = nullptr) const
    {
        const int N = static_cast<int>(target.size());
        if (N < 1 || N > max_order) throw PreconditionViolated("linearization order must lie in 1..5");
        if (!std::is_sorted(target.begin(), target.end())) throw PreconditionViolated("multi-index must be sorted");
        if (N == 1) {
            const BoundaryData zero = BoundaryData::zeros(A_.grid_ptr());
            return first_order(g ? *g : zero, h ? *h : zero, target[0]);
        }
        const auto sources = cascade_sources(F, lower, target);
        const auto U = solve_u(nullptr, sources.first);
        std::vector<Vec> sm = sources.second;
        for (std::size_t k = 1; k < U.size(); ++k) sm[k] += coupling(state_.m0.vec(), U[k]);
        const auto M = solve_m(nullptr, sm);
        return {target, SpaceTimeField::from_levels(A_.grid_ptr(), U), SpaceTimeField::from_levels(A_.grid_ptr(), M)};
    }

    /// Second-order solution written out for a pair of first-order solutions.
    LinearizedSolution second_order(const ScalarField& F2, const LinearizedSolution& s1,
                                    const LinearizedSolution& s2) const
    {
        const int N = g_.n_time();
        std::vector<Vec> su(N + 1, Vec::Zero(n_)), sm(N + 1, Vec::Zero(n_));
        for (int k = 0; k <= N; ++k) {
            const Vec u1 = s1.u.level_vec(k), u2 = s2.u.level_vec(k);
            const Vec m1 = s1.m.level_vec(k), m2 = s2.m.level_vec(k);
            const auto du1 = apply_gradient(ops_, u1), du2 = apply_gradient(ops_, u2);
            const auto adu1 = apply_metric(A_, du1), adu2 = apply_metric(A_, du2);
            Vec bil = Vec::Zero(n_);
            {
                Vec t = Vec::Zero(n_);
                for (int a = 0; a < g_.dim(); ++a) t += du1[a].cwiseProduct(adu2[a]);
                bil += t;
            }
            {
                Vec t = Vec::Zero(n_);
                for (int a = 0; a < g_.dim(); ++a) t += du2[a].cwiseProduct(adu1[a]);
                bil += t;
            }
            Vec fsrc = Vec::Zero(n_);
            {
                Vec prod = F2.vec();
                prod = prod.cwiseProduct(m1);
                prod = prod.cwiseProduct(m2);
                fsrc += prod;
            }
            su[k] = fsrc - bil;
            Vec div = Vec::Zero(n_);
            div += coupling(m1, u2);
            div += coupling(m2, u1);
            sm[k] = div;
        }
        MultiIndex order = make_index({s1.order.empty() ? 1 : s1.order[0], s2.order.empty() ? 2 : s2.order[0]});
        const auto U = solve_u(nullptr, su);
        for (std::size_t k = 1; k < U.size(); ++k) sm[k] += coupling(state_.m0.vec(), U[k]);
        const auto M = solve_m(nullptr, sm);
        return {order, SpaceTimeField::from_levels(A_.grid_ptr(), U), SpaceTimeField::from_levels(A_.grid_ptr(), M)};
    }

    /// Sources of the order-|target| equations built from lower orders:
    /// u-source = sum over partitions of F_k prod m_B - sum over proper subsets S of D u_S . A D u_{S^c},
    /// m-source = sum over proper subsets S of 2 D.(m_S A D u_{S^c}).
    std::pair<std::vector<Vec>, std::vector<Vec>> cascade_sources(const RunningCost& F, const LinearizedFamily& lower,
                                                                  const MultiIndex& target,
                                                                  bool include_cost = true) const
    {
        const int N = static_cast<int>(target.size());
        const unsigned full = (1u << N) - 1u;
        std::vector<const LinearizedSolution*> part(full + 1, nullptr);
        for (unsigned mask = 1; mask < full; ++mask) {
            const MultiIndex key = sub_index(target, mask);
            const auto it = lower.find(key);
            if (it == lower.end()) throw MissingLowerOrder("missing lower-order solution " + to_string(key));
            part[mask] = &it->second;
        }
        const auto partitions = set_partitions(N);
        std::vector<ScalarField> coef;
        for (int k = 0; k <= N; ++k) coef.push_back(F.coefficient(k));

        const int NT = g_.n_time();
        std::vector<Vec> su(NT + 1, Vec::Zero(n_)), sm(NT + 1, Vec::Zero(n_));
        for (int k = 0; k <= NT; ++k) {
            std::vector<std::vector<Vec>> du(full + 1), adu(full + 1);
            for (unsigned mask = 1; mask < full; ++mask) {
                du[mask] = apply_gradient(ops_, Vec(part[mask]->u.level_vec(k)));
                adu[mask] = apply_metric(A_, du[mask]);
            }
            Vec bil = Vec::Zero(n_);
            for (unsigned mask = 1; mask < full; ++mask) {
                const unsigned rest = full & ~mask;
                Vec t = Vec::Zero(n_);
                for (int a = 0; a < g_.dim(); ++a) t += du[mask][a].cwiseProduct(adu[rest][a]);
                bil += t;
            }
            Vec fsrc = Vec::Zero(n_);
            if (include_cost) {
                for (const auto& p : partitions) {
                    const int blocks = static_cast<int>(p.size());
                    if (blocks < 2 || !F.has(blocks)) continue;
                    Vec prod = coef[blocks].vec();
                    for (unsigned b : p) prod = prod.cwiseProduct(part[b]->m.level_vec(k));
                    fsrc += prod;
                }
            }
            su[k] = fsrc - bil;
            Vec div = Vec::Zero(n_);
            for (unsigned mask = 1; mask < full; ++mask) {
                const unsigned rest = full & ~mask;
                div += coupling(part[mask]->m.level_vec(k), part[rest]->u.level_vec(k));
            }
            sm[k] = div;
        }
        return {su, sm};
    }

private:
    void check_trace(const BoundaryData& b) const
    {
        detail::require_same_grid(g_, b.grid());
        if (b.kind() != BoundaryKind::Trace) throw PreconditionViolated("boundary inputs must be trace data");
    }

    StationaryState state_;
    MetricField A_;
    const Grid& g_;
    DiscreteOperators ops_;
    Eigen::Index n_;
    std::vector<Vec> du0_, adu0_, q_;
    SpMat u_matrix_, m_matrix_;
    SparseSolver u_solver_, m_solver_;
};

inline LinearizedSolution solve_first_order(const StationaryState& state, const MetricField& A, const BoundaryData& g,
                                            const BoundaryData& h, int label = 1)
{
    return LinearizedSystem(state, A).first_order(g, h, label);
}

inline LinearizedSolution solve_second_order(const StationaryState& state, const MetricField& A, const ScalarField& F2,
                                             const LinearizedSolution& first1, const LinearizedSolution& first2)
{
    return LinearizedSystem(state, A).second_order(F2, first1, first2);
}

inline LinearizedSolution solve_order_N(const StationaryState& state, const MetricField& A, const RunningCost& F,
                                        const LinearizedFamily& lower, const MultiIndex& target,
                                        const BoundaryData* g = nullptr, const BoundaryData* h = nullptr)
{
    return LinearizedSystem(state, A).order_n(F, lower, target, g, h);
}

/// Solves every multi-index of a family in order of increasing size. first-order boundary data is
/// taken from the perturbations (label l uses perturbations[l-1]).
inline LinearizedFamily solve_cascade(const LinearizedSystem& sys, const RunningCost& F,
                                      const std::vector<PerturbationSpec>& perts, std::vector<MultiIndex> targets)
{
    std::sort(targets.begin(), targets.end(), [](const MultiIndex& a, const MultiIndex& b) {
        return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
    LinearizedFamily fam;
    std::function<void(const MultiIndex&)> need = [&](const MultiIndex& t) {
        if (fam.count(t)) return;
        const int N = static_cast<int>(t.size());
        if (N == 1) {
            const int l = t[0];
            if (l < 1 || l > static_cast<int>(perts.size())) throw PreconditionViolated("label without a perturbation");
            fam.emplace(t, sys.first_order(perts[l - 1].g, perts[l - 1].h, l));
            return;
        }
        const unsigned full = (1u << N) - 1u;
        for (unsigned mask = 1; mask < full; ++mask) need(sub_index(t, mask));
        fam.emplace(t, sys.order_n(F, fam, t));
    };
    for (const auto& t : targets) need(t);
    return fam;
}

struct FrechetReport {
    std::vector<double> ladder;
    /// remainder[n][i]: sup-norm of S(eps_i) minus the order-n Taylor polynomial.
    std::vector<std::vector<double>> remainder;
    /// slopes[n][i]: log-log slope between ladder points i and i+1.
    std::vector<std::vector<double>> slopes;
    std::vector<bool> order_pass;
    bool pass = true;
};

/// Taylor remainders of the solution map along the direction given by the problem's amplitudes.
inline FrechetReport frechet_report(const MFGProblem& problem, int max_order, const std::vector<double>& ladder,
                                    const MfgSolverOptions& opt = {})
{
    if (max_order < 1 || max_order > LinearizedSystem::max_order) throw PreconditionViolated("order must lie in 1..5");
    if (ladder.size() < 2) throw PreconditionViolated("ladder needs at least two amplitudes");
    const Grid& g = problem.grid();
    // Combined direction as a single perturbation label.
    std::vector<double> gv(static_cast<std::size_t>(g.n_levels()) * g.boundary_count(), 0.0), hv(gv.size(), 0.0);
    for (const auto& p : problem.perturbations)
        for (std::size_t i = 0; i < gv.size(); ++i) {
            gv[i] += p.amplitude * p.g.values()[i];
            hv[i] += p.amplitude * p.h.values()[i];
        }
    PerturbationSpec dir{1, BoundaryData(problem.grid_ptr(), BoundaryKind::Trace, gv),
                         BoundaryData(problem.grid_ptr(), BoundaryKind::Trace, hv), 0.0};
    const LinearizedSystem sys(problem.base, problem.A);
    std::vector<MultiIndex> targets;
    for (int n = 1; n <= max_order; ++n) targets.push_back(MultiIndex(static_cast<std::size_t>(n), 1));
    const auto fam = solve_cascade(sys, problem.F, {dir}, targets);

    FrechetReport rep;
    rep.ladder = ladder;
    rep.remainder.assign(static_cast<std::size_t>(max_order), {});
    const SpaceTimeField u0 = SpaceTimeField::constant_in_time(problem.base.u0);
    const SpaceTimeField m0 = SpaceTimeField::constant_in_time(problem.base.m0);
    for (double eps : ladder) {
        MFGProblem pe = problem;
        pe.perturbations = {dir};
        pe.perturbations[0].amplitude = eps;
        const MfgSolution s = solve_mfg(pe, opt);
        SpaceTimeField ru = s.u - u0, rm = s.m - m0;
        double fact = 1.0, pw = 1.0;
        for (int n = 1; n <= max_order; ++n) {
            fact *= n;
            pw *= eps;
            const auto& t = fam.at(MultiIndex(static_cast<std::size_t>(n), 1));
            ru = SpaceTimeField::combine(ru, t.u, 1.0, -pw / fact);
            rm = SpaceTimeField::combine(rm, t.m, 1.0, -pw / fact);
            rep.remainder[static_cast<std::size_t>(n - 1)].push_back(std::max(ru.max_abs(), rm.max_abs()));
        }
    }
    for (int n = 1; n <= max_order; ++n) {
        std::vector<double> sl;
        const auto& r = rep.remainder[static_cast<std::size_t>(n - 1)];
        bool ok = true;
        for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
            const double s = (r[i] > 0.0 && r[i + 1] > 0.0)
                                 ? std::log(r[i] / r[i + 1]) / std::log(ladder[i] / ladder[i + 1])
                                 : std::numeric_limits<double>::quiet_NaN();
            sl.push_back(s);
            const bool zero = r[i] == 0.0 && r[i + 1] == 0.0;
            if (!zero && !(s >= n + 1 - 0.2)) ok = false;
        }
        rep.slopes.push_back(sl);
        rep.order_pass.push_back(ok);
        rep.pass = rep.pass && ok;
    }
    return rep;
}

}  // namespace mfg
