#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "measurement.hpp"
#include "parallel.hpp"
#include "probes.hpp"

namespace mfg {

enum class QMode { Variational, Probe };

inline const char* to_string(QMode m) { return m == QMode::Variational ? "variational" : "probe"; }

struct ReconstructionConfig {
    QMode mode = QMode::Variational;

    // Variational drift recovery.
    double lambda_q = 1e-8;   ///< gradient penalty, relative to the trace of the Gauss-Newton matrix
    int max_gn_iter = 30;
    double tol_gn = 1e-10;
    double condition_cap = 1e14;

    // Probe drift recovery.
    std::vector<double> rho_ladder{4.0, 8.0, 16.0};
    int max_frequency = 2;  ///< lattice |k_a| <= max_frequency (2D)
    int probe_iterations = 4;
    double chi_center = 0.5;
    double chi_half_width = 0.3;
    RayChoice ray = RayChoice::Zeta;

    double nondegeneracy_floor = 1e-6;

    // Running-cost recovery.
    double lambda_F = 1e-5;  ///< gradient penalty, relative
    double l2_weight = 1e-3;  ///< weight of the L2 term against the gradient term
    double discrepancy_factor = 1.0;
    double excitation_floor = 1e-12;

    // Data generation and extraction.
    double eps_first = 1e-3;
    double eps_higher = 1e-2;
    double noise_level = 0.0;
    int max_order = 3;
    int n_freq_u = 3;
    int n_freq_m = 2;
};

inline void validate(const ReconstructionConfig& c, const Grid& g)
{
    if (c.lambda_q < 0.0 || c.lambda_F < 0.0) throw ConfigError("regularization weights must be nonnegative");
    if (!(c.nondegeneracy_floor > 0.0)) throw ConfigError("nondegeneracy floor must be positive");
    if (c.max_frequency < 0) throw ConfigError("frequency lattice radius must be nonnegative");
    for (int a = 0; a < g.dim(); ++a)
        if (2 * c.max_frequency > g.n_cells(a) - 1) throw ConfigError("frequency lattice exceeds the grid Nyquist limit");
    if (c.rho_ladder.size() < 2) throw ConfigError("rho ladder needs at least two values");
    for (std::size_t i = 0; i < c.rho_ladder.size(); ++i)
        if (!(c.rho_ladder[i] > 0.0) || (i && c.rho_ladder[i] <= c.rho_ladder[i - 1]))
            throw ConfigError("rho ladder must be positive and increasing");
    if (!(c.eps_first > 0.0) || !(c.eps_higher > 0.0)) throw ConfigError("extraction steps must be positive");
    if (c.noise_level < 0.0) throw ConfigError("noise level must be nonnegative");
    if (c.max_order < 1 || c.max_order > 4) throw ConfigError("max_order must lie in 1..4");
    if (c.max_gn_iter < 1) throw ConfigError("max_gn_iter must be positive");
}

namespace detail {

/// Rows mapping nodal values to outward normal derivatives at the boundary nodes.
inline SpMat neumann_matrix(const Grid& g, const DiscreteOperators& ops)
{
    std::vector<Triplet> t;
    std::vector<Eigen::SparseMatrix<double, Eigen::RowMajor>> rows(ops.d.begin(), ops.d.end());
    for (std::size_t s = 0; s < g.boundary_count(); ++s) {
        const std::size_t node = g.boundary_nodes()[s];
        const Point nu = g.outward_normal(node);
        for (int a = 0; a < g.dim(); ++a) {
            if (nu[a] == 0.0) continue;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows[static_cast<std::size_t>(a)], static_cast<Eigen::Index>(node)); it; ++it)
                t.emplace_back(static_cast<int>(s), static_cast<int>(it.col()), nu[a] * it.value());
        }
    }
    SpMat b(static_cast<Eigen::Index>(g.boundary_count()), static_cast<Eigen::Index>(g.node_count()));
    b.setFromTriplets(t.begin(), t.end());
    return b;
}

/// Quadrature weights of boundary data laid out as [level][slot].
inline Vec data_weights(const Grid& g)
{
    Vec w(static_cast<Eigen::Index>(g.n_levels() * g.boundary_count()));
    for (int k = 0; k < g.n_levels(); ++k)
        for (std::size_t s = 0; s < g.boundary_count(); ++s)
            w[static_cast<Eigen::Index>(k * g.boundary_count() + s)] = g.time_weight(k) * g.boundary_weight(g.boundary_nodes()[s]);
    return w;
}

inline Vec to_vec(const BoundaryData& b)
{
    return Eigen::Map<const Vec>(b.values().data(), static_cast<Eigen::Index>(b.values().size()));
}

/// Fills boundary nodes by cubic extrapolation along the inward normal axis (axis-0 faces first).
inline void extrapolate_boundary(const Grid& g, Vec& f)
{
    for (int a = 0; a < g.dim(); ++a) {
        const int n = g.n_cells(a);
        for (std::size_t node : g.boundary_nodes()) {
            const Index2 ij = g.multi_index(node);
            if (ij[a] != 0 && ij[a] != n - 1) continue;
            if (a == 0 && g.dim() == 2 && (ij[1] == 0 || ij[1] == g.n_cells(1) - 1)) continue;  // corners in pass 2
            const int dir = ij[a] == 0 ? 1 : -1;
            auto at = [&](int step) {
                Index2 p = ij;
                p[a] += dir * step;
                return f[static_cast<Eigen::Index>(g.node(p))];
            };
            double v;
            if (n >= 5) v = 3.0 * at(1) - 3.0 * at(2) + at(3);
            else if (n == 4) v = 2.0 * at(1) - at(2);
            else v = at(1);
            f[static_cast<Eigen::Index>(node)] = v;
        }
    }
}

inline Vec scatter_interior(const Grid& g, const Vec& inner)
{
    Vec f = Vec::Zero(static_cast<Eigen::Index>(g.node_count()));
    const auto& in = g.interior_nodes();
    for (std::size_t j = 0; j < in.size(); ++j) f[static_cast<Eigen::Index>(in[j])] = inner[static_cast<Eigen::Index>(j)];
    extrapolate_boundary(g, f);
    return f;
}

inline Vec gather_interior(const Grid& g, const Vec& f)
{
    const auto& in = g.interior_nodes();
    Vec out(static_cast<Eigen::Index>(in.size()));
    for (std::size_t j = 0; j < in.size(); ++j) out[static_cast<Eigen::Index>(j)] = f[static_cast<Eigen::Index>(in[j])];
    return out;
}

/// Gradient penalty sum |f_i - f_j|^2 / h^2 * cell volume over adjacent interior pairs.
inline Eigen::MatrixXd gradient_penalty(const Grid& g)
{
    const auto& in = g.interior_nodes();
    std::vector<long> pos(g.node_count(), -1);
    for (std::size_t j = 0; j < in.size(); ++j) pos[in[j]] = static_cast<long>(j);
    double vol = 1.0;
    for (int a = 0; a < g.dim(); ++a) vol *= g.h(a);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in.size()), static_cast<Eigen::Index>(in.size()));
    for (std::size_t j = 0; j < in.size(); ++j) {
        const Index2 ij = g.multi_index(in[j]);
        for (int a = 0; a < g.dim(); ++a) {
            Index2 nb = ij;
            nb[a] += 1;
            if (nb[a] >= g.n_cells(a)) continue;
            const long k = pos[g.node(nb)];
            if (k < 0) continue;
            const double w = vol / (g.h(a) * g.h(a));
            const auto J = static_cast<Eigen::Index>(j), K = static_cast<Eigen::Index>(k);
            R(J, J) += w;
            R(K, K) += w;
            R(J, K) -= w;
            R(K, J) -= w;
        }
    }
    return R;
}

inline Eigen::MatrixXd mass_penalty(const Grid& g)
{
    const auto& in = g.interior_nodes();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in.size()), static_cast<Eigen::Index>(in.size()));
    for (std::size_t j = 0; j < in.size(); ++j)
        M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = g.volume_weight(in[j]);
    return M;
}

inline double condition_number(const Eigen::MatrixXd& H)
{
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double lo = ev.minCoeff(), hi = ev.maxCoeff();
    if (!(hi > 0.0)) return std::numeric_limits<double>::infinity();
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Drift recovery

struct QRecovery {
    VectorField q;
    double residual = 0.0;  ///< relative data misfit (variational) or coefficient spread (probe)
    double condition = 0.0;
    int iterations = 0;
    QMode mode = QMode::Variational;
};

/// First-order u-records with nonzero Dirichlet input; records driven by m-perturbations alone are skipped.
inline std::vector<const CauchyRecord*> u_excited(const std::vector<CauchyRecord>& first)
{
    std::vector<const CauchyRecord*> out;
    for (const auto& r : first)
        if (r.u_trace.rms() > 0.0) out.push_back(&r);
    return out;
}

/// Mean drift from the stationary fluxes in 1D: (ln u0')' = q / 2.
inline double initial_drift_1d(const Grid& g, const CauchyRecord& base)
{
    const BoundaryData flux = base.u_normal();
    const double left = -flux.at(0, 0), right = flux.at(0, 1);
    if (!(left * right > 0.0)) return 0.0;
    return 2.0 * std::log(right / left) / (g.extent(0).hi - g.extent(0).lo);
}

/// Levenberg-Marquardt fit of the drift to first-order Neumann data of the u-equation.
inline QRecovery recover_q_variational(const std::vector<CauchyRecord>& first, const CauchyRecord& base,
                                       const ReconstructionConfig& cfg)
{
    const auto recs = u_excited(first);
    if (recs.empty()) throw InsufficientData("no first-order records with a nonzero u-perturbation");
    const GridPtr gp = base.u_trace.grid_ptr();
    const Grid& g = *gp;
    const int d = g.dim(), N = g.n_time();
    const DiscreteOperators ops(g);
    const SpMat B = detail::neumann_matrix(g, ops);
    const Vec W = detail::data_weights(g);
    const auto& inner = g.interior_nodes();
    const Eigen::Index ni = static_cast<Eigen::Index>(inner.size()), p = ni * d;
    const Eigen::Index nb = static_cast<Eigen::Index>(g.boundary_count());
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());
    const double dt = g.dt();

    std::vector<Vec> data;
    for (const auto* r : recs) data.push_back(detail::to_vec(r->u_normal()));
    double data_norm2 = 0.0;
    for (const auto& v : data) data_norm2 += v.cwiseProduct(W).dot(v);

    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(p, p);
    const Eigen::MatrixXd R1 = detail::gradient_penalty(g);
    for (int a = 0; a < d; ++a) R.block(a * ni, a * ni, ni, ni) = R1;

    Vec x(p);
    x.setZero();
    if (d == 1) x.setConstant(initial_drift_1d(g, base));

    StepAssembler as(ops);
    auto field_of = [&](const Vec& xx) {
        std::vector<Vec> comps;
        for (int a = 0; a < d; ++a) comps.push_back(detail::scatter_interior(g, xx.segment(a * ni, ni)));
        return comps;
    };
    auto factor = [&](const std::vector<Vec>& q, SparseSolver& s) {
        as.reset(1.0 / dt, 1.0);
        for (int a = 0; a < d; ++a) as.add_left_weighted_derivative(a, q[a]);
        as.apply_dirichlet_rows();
        s.factorize(as.matrix(), "drift fit u-equation");
    };
    auto forward = [&](const SparseSolver& s, const CauchyRecord& r) {
        std::vector<Vec> U(N + 1, Vec::Zero(n));
        detail::set_boundary(g, r.u_trace, N, U[N]);
        for (int k = N - 1; k >= 0; --k) {
            Vec rhs = (U[k + 1] / dt).cwiseProduct(ops.interior);
            detail::set_boundary(g, r.u_trace, k, rhs);
            U[k] = s.solve_vec(rhs);
        }
        return U;
    };
    auto residuals = [&](const SparseSolver& s, std::vector<std::vector<Vec>>* states) {
        double misfit = 0.0;
        std::vector<Vec> res;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            auto U = forward(s, *recs[i]);
            Vec r(nb * (N + 1));
            for (int k = 0; k <= N; ++k) r.segment(k * nb, nb) = B * U[k];
            r -= data[i];
            misfit += r.cwiseProduct(W).dot(r);
            res.push_back(std::move(r));
            if (states) states->push_back(std::move(U));
        }
        return std::make_pair(misfit, res);
    };

    double cond = 0.0, misfit = 0.0, trace_ratio = -1.0;
    int it = 0;
    // One regularized Levenberg-Marquardt solve at relative weight lam_rel, warm-started from x.
    auto fit = [&](double lam_rel) {
    double mu = 1e-3;
    SparseSolver solver;
    factor(field_of(x), solver);
    std::vector<std::vector<Vec>> states;
    auto first_eval = residuals(solver, &states);
    misfit = first_eval.first;
    auto res = std::move(first_eval.second);
    double lam = trace_ratio < 0.0 ? -1.0 : lam_rel * trace_ratio;
    int iter = 0;
    for (; iter < cfg.max_gn_iter; ++iter) {
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
        Vec grad = Vec::Zero(p);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto& U = states[i];
            Eigen::MatrixXd J(nb * (N + 1), p);
            J.setZero();
            for (int a = 0; a < d; ++a) {
                Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, ni);
                for (int k = N - 1; k >= 0; --k) {
                    Eigen::MatrixXd rhs = S / dt;
                    for (std::size_t b : g.boundary_nodes()) rhs.row(static_cast<Eigen::Index>(b)).setZero();
                    const Vec du = ops.d[a] * U[k];
                    for (Eigen::Index j = 0; j < ni; ++j) {
                        const Eigen::Index node = static_cast<Eigen::Index>(inner[static_cast<std::size_t>(j)]);
                        rhs(node, j) -= du[node];
                    }
                    S = solver.solve_mat(rhs);
                    J.block(k * nb, a * ni, nb, ni) = B * S;
                }
            }
            H += J.transpose() * W.asDiagonal() * J;
            grad += J.transpose() * W.cwiseProduct(res[i]);
        }
        if (lam < 0.0) {
            const double tr = R.trace();
            trace_ratio = tr > 0.0 ? H.trace() / tr : 0.0;
            lam = lam_rel * trace_ratio;
        }
        const Eigen::MatrixXd Hr = H + lam * R;
        cond = detail::condition_number(Hr);
        const Vec g_full = grad + lam * (R * x);
        const double phi0 = 0.5 * misfit + 0.5 * lam * x.dot(R * x);
        bool accepted = false;
        Vec step;
        for (int tries = 0; tries < 12 && !accepted; ++tries) {
            Eigen::MatrixXd A = Hr;
            A.diagonal() += mu * Hr.diagonal().cwiseMax(1e-300);
            step = -A.ldlt().solve(g_full);
            if (!step.allFinite()) throw SingularSystem("drift fit normal equations");
            const Vec xn = x + step;
            SparseSolver sn;
            factor(field_of(xn), sn);
            std::vector<std::vector<Vec>> st;
            auto [mf, rs] = residuals(sn, &st);
            const double phi = 0.5 * mf + 0.5 * lam * xn.dot(R * xn);
            if (phi <= phi0) {
                x = xn;
                misfit = mf;
                res = std::move(rs);
                states = std::move(st);
                factor(field_of(x), solver);
                mu = std::max(mu / 3.0, 1e-12);
                accepted = true;
            } else {
                mu *= 4.0;
            }
        }
        const double phi_new = 0.5 * misfit + 0.5 * lam * x.dot(R * x);
        if (!accepted || step.norm() <= cfg.tol_gn * (1.0 + x.norm()) || phi0 - phi_new <= 1e-3 * phi0) {
            ++iter;
            break;
        }
    }
    it += iter;
    };

    // Morozov continuation when noise is declared: decrease the weight until the misfit reaches the
    // expected noise energy, otherwise a single solve at the configured weight.
    double noise2 = 0.0;
    for (const auto* r : recs) noise2 += std::pow(cfg.noise_level * r->u_gradient.rms(), 2) * W.sum();
    if (noise2 > 0.0) {
        const double target = cfg.discrepancy_factor * cfg.discrepancy_factor * noise2;
        for (double lr = 1e-1; lr >= cfg.lambda_q * 0.999; lr /= 10.0) {
            fit(lr);
            if (misfit <= target) break;
        }
    } else {
        fit(cfg.lambda_q);
    }
    if (cond > cfg.condition_cap)
        throw IllConditioned("drift normal equations condition " + std::to_string(cond) + " exceeds the cap");
    QRecovery out{VectorField::from_components(gp, field_of(x)), 0.0, cond, it, QMode::Variational};
    out.residual = data_norm2 > 0.0 ? std::sqrt(misfit / data_norm2) : std::sqrt(misfit);
    return out;
}

/// Conjugated normal derivative of the true first-order u-response to a conjugated Dirichlet input.
using ResponseOracle = std::function<BoundaryData(const CGOParams&, const BoundaryData&)>;

/// Response oracle that simulates the linearized u-equation with the given drift in weighted variables.
inline ResponseOracle conjugated_response_oracle(VectorField q)
{
    return [q = std::move(q)](const CGOParams& p, const BoundaryData& trace) {
        return normal_derivative(solve_conjugated_backward(p, q, ScalarField::zeros(q.grid_ptr()), trace));
    };
}

struct ProbeCoefficient {
    Point xi{0.0, 0.0};
    Point zeta{1.0, 0.0};
    std::vector<Complex> ladder;  ///< normalized boundary pairing per rho
    Complex limit;                ///< Richardson limit
    Complex coefficient;          ///< Fourier coefficient of dq.zeta at xi
    double spread = 0.0;
};

/// Normalized boundary pairing (1/rho) int_Sigma W d_nu(U - V) for one probe.
inline Complex boundary_pairing(const CGOParams& p, const VectorField& q_ref, const ResponseOracle& oracle)
{
    const Grid& g = q_ref.grid();
    const ScalarField zero = ScalarField::zeros(q_ref.grid_ptr());
    const SpaceTimeField V = full_probe(cgo_backward(p, q_ref, zero)).real_part();
    const BoundaryData dV = normal_derivative(V);
    const BoundaryData dU = oracle(p, trace(V));
    const SpaceTimeField a = cgo_leading(p, q_ref, 1.0);
    Complex acc{0.0, 0.0};
    for (int k = 0; k < g.n_levels(); ++k) {
        const double wt = g.time_weight(k);
        const auto ar = a.level(k), ai = a.level_imag(k);
        for (std::size_t s = 0; s < g.boundary_count(); ++s) {
            const std::size_t node = g.boundary_nodes()[s];
            acc += wt * g.boundary_weight(node) * Complex(ar[node], ai[node]) * (dU.at(k, s) - dV.at(k, s));
        }
    }
    return acc / p.rho;
}

/// Least-squares fit N(rho) = N_inf + c / rho.
inline Complex richardson_limit(const std::vector<double>& rho, const std::vector<Complex>& v)
{
    double s1 = 0.0, sx = 0.0, sxx = 0.0;
    Complex sy{0.0, 0.0}, sxy{0.0, 0.0};
    for (std::size_t i = 0; i < rho.size(); ++i) {
        const double x = 1.0 / rho[i];
        s1 += 1.0;
        sx += x;
        sxx += x * x;
        sy += v[i];
        sxy += x * v[i];
    }
    const double det = s1 * sxx - sx * sx;
    return (sxx * sy - sx * sxy) / det;
}

/// Probe lattice: (xi, zeta) pairs with zeta orthogonal to xi; both signs of each axis at xi = 0.
inline std::vector<std::pair<Point, Point>> probe_lattice(const Grid& g, int max_frequency)
{
    std::vector<std::pair<Point, Point>> out;
    for (int a = 0; a < g.dim(); ++a)
        for (double s : {1.0, -1.0}) {
            Point z{0.0, 0.0};
            z[a] = s;
            out.push_back({Point{0.0, 0.0}, z});
        }
    if (g.dim() == 2) {
        const double L0 = g.extent(0).hi - g.extent(0).lo, L1 = g.extent(1).hi - g.extent(1).lo;
        for (int k0 = -max_frequency; k0 <= max_frequency; ++k0)
            for (int k1 = -max_frequency; k1 <= max_frequency; ++k1) {
                if (k0 == 0 && k1 == 0) continue;
                const Point xi{2.0 * std::numbers::pi * k0 / L0, 2.0 * std::numbers::pi * k1 / L1};
                const double r = std::hypot(xi[0], xi[1]);
                out.push_back({xi, Point{-xi[1] / r, xi[0] / r}});
            }
    }
    return out;
}

/// Fourier synthesis of the probe coefficients on the grid: axis means from xi = 0, transverse part otherwise.
inline VectorField synthesize_drift(const GridPtr& gp, const std::vector<ProbeCoefficient>& coefs, bool spread = false)
{
    const Grid& g = *gp;
    const double vol = g.volume();
    std::vector<Vec> comps(static_cast<std::size_t>(g.dim()), Vec::Zero(static_cast<Eigen::Index>(g.node_count())));
    for (const auto& c : coefs) {
        const Complex val = spread ? Complex(c.spread, 0.0) : c.coefficient;
        const bool zero_freq = c.xi[0] == 0.0 && c.xi[1] == 0.0;
        for (std::size_t node = 0; node < g.node_count(); ++node) {
            const Point x = g.point(node);
            const Complex e = zero_freq ? Complex(1.0, 0.0) : std::exp(Complex(0.0, x[0] * c.xi[0] + x[1] * c.xi[1]));
            // Each axis mean is measured once per sign of zeta; average the pair.
            const double share = zero_freq ? 0.5 : 1.0;
            for (int a = 0; a < g.dim(); ++a)
                comps[static_cast<std::size_t>(a)][static_cast<Eigen::Index>(node)] +=
                    share * c.zeta[a] * std::real(val * e) / vol;
        }
    }
    return VectorField::from_components(gp, comps);
}

struct ProbeRecovery {
    QRecovery result;
    std::vector<ProbeCoefficient> coefficients;  ///< last iteration
};

/// CGO pairing recovery iterated around a reference drift.
inline ProbeRecovery recover_q_probe(const ResponseOracle& oracle, const VectorField& q_init,
                                     const ReconstructionConfig& cfg, int jobs = 1)
{
    const GridPtr gp = q_init.grid_ptr();
    const Grid& g = *gp;
    const auto lattice = probe_lattice(g, cfg.max_frequency);
    VectorField q = q_init;
    ProbeRecovery out{{q, 0.0, 0.0, 0, QMode::Probe}, {}};
    double update = 0.0;
    for (int it = 0; it < std::max(1, cfg.probe_iterations); ++it) {
        std::vector<ProbeCoefficient> coefs(lattice.size());
        parallel_for(lattice.size(), jobs, [&](std::size_t i) {
            ProbeCoefficient& c = coefs[i];
            c.xi = lattice[i].first;
            c.zeta = lattice[i].second;
            for (double rho : cfg.rho_ladder) {
                CGOParams p;
                p.rho = rho;
                p.zeta = c.zeta;
                p.xi = c.xi;
                p.chi_center = cfg.chi_center;
                p.chi_half_width = cfg.chi_half_width;
                p.ray = cfg.ray;
                c.ladder.push_back(boundary_pairing(p, q, oracle));
            }
            CGOParams p0;
            p0.chi_center = cfg.chi_center;
            p0.chi_half_width = cfg.chi_half_width;
            const Complex C = chi_weight(p0, g);
            c.limit = richardson_limit(cfg.rho_ladder, c.ladder);
            c.coefficient = -c.limit / C;
            c.spread = std::abs(c.limit - c.ladder.back()) / std::abs(C);
        });
        const VectorField dq = synthesize_drift(gp, coefs);
        q = q + dq;
        update = l2_norm(dq);
        out.coefficients = std::move(coefs);
        out.result.iterations = it + 1;
        if (update <= cfg.tol_gn * (1.0 + l2_norm(q))) break;
    }
    out.result.q = q;
    out.result.residual = l2_norm(synthesize_drift(gp, out.coefficients, true)) + update;
    return out;
}

/// Drift recovery in the configured mode. Probe mode needs a response oracle.
inline QRecovery recover_q(const std::vector<CauchyRecord>& first, const CauchyRecord& base, const MetricField& /*g*/,
                           const ReconstructionConfig& cfg, const ResponseOracle* oracle = nullptr, int jobs = 1)
{
    validate(cfg, base.u_trace.grid());
    if (cfg.mode == QMode::Variational) return recover_q_variational(first, base, cfg);
    if (!oracle) throw InsufficientData("probe mode needs a first-order response oracle");
    const GridPtr gp = base.u_trace.grid_ptr();
    VectorField init = VectorField::zeros(gp);
    if (gp->dim() == 1) init = VectorField::constant(gp, Point{initial_drift_1d(*gp, base), 0.0});
    return recover_q_probe(*oracle, init, cfg, jobs).result;
}

// ---------------------------------------------------------------------------------------------
// Stationary state and conformal factor

namespace detail {

inline ScalarField dirichlet_solve(const GridPtr& gp, const SpMat& op, const BoundaryData& trace, const char* what)
{
    const Grid& g = *gp;
    detail::require_same_grid(g, trace.grid());
    const SpMat M = with_dirichlet_rows(op, g);
    Vec rhs = Vec::Zero(static_cast<Eigen::Index>(g.node_count()));
    detail::set_boundary(g, trace, 0, rhs);
    const Vec x = SparseSolver(M, what).solve_vec(rhs);
    const Vec r = M * x - rhs;
    const double scale = std::max({1.0, rhs.lpNorm<Eigen::Infinity>(), x.lpNorm<Eigen::Infinity>()});
    if (r.lpNorm<Eigen::Infinity>() > 1e-10 * scale * std::max(1.0, Eigen::Map<const Vec>(M.valuePtr(), M.nonZeros()).cwiseAbs().maxCoeff()))
        throw SingularSystem(std::string(what) + ": residual above tolerance");
    return ScalarField(gp, x);
}

}  // namespace detail

/// Solves -lap u0 + q.grad u0 / 2 = 0 with the stationary trace.
inline ScalarField recover_u0(const VectorField& q, const BoundaryData& u_trace)
{
    const Grid& g = q.grid();
    const DiscreteOperators ops(g);
    SpMat op = -ops.lap;
    for (int a = 0; a < g.dim(); ++a) op += 0.5 * (diag(q.component(a)) * ops.d[a]);
    return detail::dirichlet_solve(q.grid_ptr(), op, u_trace, "stationary value recovery");
}

struct M0Recovery {
    ScalarField m0;
    double min_value = 0.0;
    bool negative = false;
};

/// Solves -lap m0 - div(q m0) = 0 with the stationary trace.
inline M0Recovery recover_m0(const VectorField& q, const BoundaryData& m_trace, double tol = 1e-10)
{
    for (double v : m_trace.values())
        if (v < 0.0) throw PreconditionViolated("density trace must be nonnegative");
    const Grid& g = q.grid();
    const DiscreteOperators ops(g);
    SpMat op = -ops.lap;
    for (int a = 0; a < g.dim(); ++a) op -= ops.d[a] * diag(q.component(a));
    M0Recovery out{detail::dirichlet_solve(q.grid_ptr(), op, m_trace, "stationary density recovery"), 0.0, false};
    out.min_value = out.m0.min();
    out.negative = out.min_value < -tol;
    return out;
}

struct KappaRecovery {
    ScalarField kappa;
    std::vector<bool> mask;  ///< true where the node was degenerate and filled
    std::size_t masked = 0;
};

/// kappa = q.(g grad u0) / (2 |g grad u0|^2) where |g grad u0| >= floor; degenerate nodes are filled harmonically.
inline KappaRecovery recover_kappa(const VectorField& q, const ScalarField& u0, const MetricField& base, double floor)
{
    if (!(floor > 0.0)) throw PreconditionViolated("nondegeneracy floor must be positive");
    const Grid& g = q.grid();
    const GridPtr gp = q.grid_ptr();
    const DiscreteOperators ops(g);
    const auto du = apply_gradient(ops, u0.vec());
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());
    Vec kappa = Vec::Zero(n);
    std::vector<bool> mask(g.node_count(), false);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        Point p{0.0, 0.0};
        for (int a = 0; a < g.dim(); ++a) p[a] = du[static_cast<std::size_t>(a)][static_cast<Eigen::Index>(i)];
        const Point gp_ = base.apply_base(i, p);
        double nn = 0.0, qq = 0.0;
        for (int a = 0; a < g.dim(); ++a) {
            nn += gp_[a] * gp_[a];
            qq += q.at(i, a) * gp_[a];
        }
        const double k = nn > 0.0 ? qq / (2.0 * nn) : 0.0;
        // Nonpositive estimates are not admissible and are filled like degenerate nodes.
        if (std::sqrt(nn) < floor || !(k > 0.0)) {
            mask[i] = true;
            ++masked;
        } else {
            kappa[static_cast<Eigen::Index>(i)] = k;
        }
    }
    if (masked == g.node_count()) throw DegenerateEverywhere("grad u0 vanishes at every node");
    if (masked > 0) {
        // Graph-Laplacian fill of the masked nodes with the unmasked values as Dirichlet data.
        std::vector<Triplet> t;
        Vec rhs = Vec::Zero(n);
        for (std::size_t i = 0; i < g.node_count(); ++i) {
            const int r = static_cast<int>(i);
            if (!mask[i]) {
                t.emplace_back(r, r, 1.0);
                rhs[r] = kappa[r];
                continue;
            }
            const Index2 ij = g.multi_index(i);
            double deg = 0.0;
            for (int a = 0; a < g.dim(); ++a)
                for (int s : {-1, 1}) {
                    Index2 nb = ij;
                    nb[a] += s;
                    if (nb[a] < 0 || nb[a] >= g.n_cells(a)) continue;
                    const double w = 1.0 / (g.h(a) * g.h(a));
                    t.emplace_back(r, static_cast<int>(g.node(nb)), -w);
                    deg += w;
                }
            t.emplace_back(r, r, deg);
        }
        SpMat L(n, n);
        L.setFromTriplets(t.begin(), t.end());
        kappa = SparseSolver(L, "conformal factor fill").solve_vec(rhs);
    }
    return {ScalarField(gp, kappa), std::move(mask), masked};
}

// ---------------------------------------------------------------------------------------------
// Running-cost coefficients

/// Extracted order-k Cauchy data for one multi-index, with the declared noise standard deviation of its u-flux.
struct OrderData {
    MultiIndex target;
    CauchyRecord record;
    double noise_sigma = 0.0;
};

struct FOptions {
    double lambda = 1e-5;
    double l2_weight = 1e-3;
    bool discrepancy = false;
    double discrepancy_factor = 1.0;
    double excitation_floor = 1e-12;
    double condition_cap = 1e14;
};

struct FRecovery {
    ScalarField F;
    double residual = 0.0;  ///< relative data misfit
    double lambda = 0.0;    ///< relative weight actually used
    double excitation = 0.0;
    double condition = 0.0;
};

/// Order-k coefficient from order-k u-flux data, with lower coefficients held in `known`.
/// Perturbation l of the cascade is perts[l-1]; the order-k coefficient of `known` is ignored.
inline FRecovery recover_Fk(const LinearizedSystem& sys, const RunningCost& known, int k,
                            const std::vector<PerturbationSpec>& perts, const std::vector<OrderData>& data,
                            const FOptions& opt = {})
{
    if (k < 2 || k > 4) throw PreconditionViolated("coefficient order must lie in 2..4");
    if (data.empty()) throw InsufficientData("no order-" + std::to_string(k) + " data");
    if (known.order() < k - 1) throw MissingLowerOrder("lower running-cost coefficients are missing");
    const Grid& g = sys.grid();
    const GridPtr gp = sys.state().u0.grid_ptr();
    const int N = g.n_time();
    const double dt = g.dt();
    const DiscreteOperators& ops = sys.operators();
    const SpMat B = detail::neumann_matrix(g, ops);
    const Vec W = detail::data_weights(g);
    const auto& inner = g.interior_nodes();
    const Eigen::Index ni = static_cast<Eigen::Index>(inner.size());
    const Eigen::Index nb = static_cast<Eigen::Index>(g.boundary_count());
    const Eigen::Index n = static_cast<Eigen::Index>(g.node_count());

    // Lower-order part of the cascade with the order-k coefficient switched off.
    std::vector<ScalarField> lower;
    for (int j = 2; j < k; ++j) lower.push_back(known.coefficient(j));
    if (lower.empty()) lower.push_back(ScalarField::zeros(gp));
    const RunningCost base_cost(known.center(), lower);
    std::vector<MultiIndex> targets;
    for (const auto& d : data) {
        if (static_cast<int>(d.target.size()) != k) throw PreconditionViolated("data order does not match k");
        targets.push_back(d.target);
    }
    const LinearizedFamily fam = solve_cascade(sys, base_cost, perts, targets);

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(ni, ni);
    Vec rhs = Vec::Zero(ni);
    std::vector<Eigen::MatrixXd> Js;
    std::vector<Vec> ds;
    double excitation = 0.0, delta2 = 0.0, data2 = 0.0;
    for (const auto& d : data) {
        const LinearizedSolution& known_sol = fam.at(d.target);
        Vec resid = detail::to_vec(d.record.u_normal()) - detail::to_vec(normal_derivative(known_sol.u));
        // Weight of the order-k coefficient in the source: product of the first-order densities.
        std::vector<Vec> w(static_cast<std::size_t>(N + 1), Vec::Ones(n));
        for (int l : d.target) {
            const auto& m1 = fam.at(MultiIndex{l}).m;
            for (int lev = 0; lev <= N; ++lev) w[static_cast<std::size_t>(lev)] = w[static_cast<std::size_t>(lev)].cwiseProduct(m1.level_vec(lev));
        }
        double ex = 0.0;
        for (int lev = 0; lev <= N; ++lev)
            for (std::size_t i = 0; i < g.node_count(); ++i)
                ex += g.time_weight(lev) * g.volume_weight(i) * std::pow(w[static_cast<std::size_t>(lev)][static_cast<Eigen::Index>(i)], 2);
        excitation = std::max(excitation, std::sqrt(ex));

        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(nb * (N + 1), ni);
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, ni);
        for (int lev = N - 1; lev >= 0; --lev) {
            Eigen::MatrixXd r = S / dt;
            for (std::size_t b : g.boundary_nodes()) r.row(static_cast<Eigen::Index>(b)).setZero();
            for (Eigen::Index j = 0; j < ni; ++j) {
                const Eigen::Index node = static_cast<Eigen::Index>(inner[static_cast<std::size_t>(j)]);
                r(node, j) += w[static_cast<std::size_t>(lev)][node];
            }
            S = sys.solve_u_matrix(r);
            J.block(lev * nb, 0, nb, ni) = B * S;
        }
        H += J.transpose() * W.asDiagonal() * J;
        rhs += J.transpose() * W.cwiseProduct(resid);
        data2 += resid.cwiseProduct(W).dot(resid);
        delta2 += d.noise_sigma * d.noise_sigma * W.sum();
        Js.push_back(std::move(J));
        ds.push_back(std::move(resid));
    }
    if (excitation < opt.excitation_floor)
        throw InsufficientExcitation("products of first-order densities vanish: choose nonzero density perturbations");

    const Eigen::MatrixXd R = detail::gradient_penalty(g) + opt.l2_weight * detail::mass_penalty(g);
    const double scale = R.trace() > 0.0 ? H.trace() / R.trace() : 1.0;
    auto solve_for = [&](double lam_rel) {
        const Eigen::MatrixXd A = H + lam_rel * scale * R;
        Vec f = A.ldlt().solve(rhs);
        if (!f.allFinite()) throw SingularSystem("running-cost normal equations");
        double mis = 0.0;
        for (std::size_t i = 0; i < Js.size(); ++i) {
            const Vec r = Js[i] * f - ds[i];
            mis += r.cwiseProduct(W).dot(r);
        }
        return std::make_pair(f, mis);
    };
    double lam = opt.lambda;
    if (opt.discrepancy && delta2 > 0.0) {
        // Morozov: misfit equal to factor^2 times the expected noise energy; misfit grows with lambda.
        const double target = opt.discrepancy_factor * opt.discrepancy_factor * delta2;
        double lo = std::log10(1e-14), hi = std::log10(1e2);
        if (solve_for(std::pow(10.0, hi)).second < target) lam = std::pow(10.0, hi);
        else if (solve_for(std::pow(10.0, lo)).second > target) lam = opt.lambda;  // target unreachable: model error dominates
        else {
            for (int i = 0; i < 60; ++i) {
                const double mid = 0.5 * (lo + hi);
                (solve_for(std::pow(10.0, mid)).second > target ? hi : lo) = mid;
            }
            lam = std::pow(10.0, 0.5 * (lo + hi));
        }
    }
    const Eigen::MatrixXd A = H + lam * scale * R;
    const double cond = detail::condition_number(A);
    if (cond > opt.condition_cap) throw IllConditioned("running-cost normal equations condition exceeds the cap");
    auto [f, mis] = solve_for(lam);
    FRecovery out{ScalarField(gp, detail::scatter_interior(g, f)), 0.0, lam, excitation, cond};
    out.residual = data2 > 0.0 ? std::sqrt(mis / data2) : std::sqrt(mis);
    return out;
}

/// Order-2 coefficient from second-order data (m-perturbations for labels 1.. in perts).
inline FRecovery recover_F2(const LinearizedSystem& sys, const std::vector<PerturbationSpec>& perts,
                            const std::vector<OrderData>& data, const FOptions& opt = {})
{
    return recover_Fk(sys, RunningCost::zero(sys.state().m0), 2, perts, data, opt);
}

}  // namespace mfg
