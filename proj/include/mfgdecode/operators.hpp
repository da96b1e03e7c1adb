#pragma once

#include <Eigen/SparseCore>
#include <array>
#include <cmath>
#include <vector>

#include "fields.hpp"

namespace mfg {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Coefficients of a 1D stencil: offsets relative to the node index and weights.
struct Stencil {
    std::array<int, 4> offset{};
    std::array<double, 4> coef{};
    int size = 0;
};

/// First derivative: central inside, second-order one-sided at the ends.
inline Stencil first_derivative_stencil(int i, int n, double h)
{
    const double s = 1.0 / (2.0 * h);
    if (i == 0) return {{0, 1, 2, 0}, {-3.0 * s, 4.0 * s, -1.0 * s, 0.0}, 3};
    if (i == n - 1) return {{0, -1, -2, 0}, {3.0 * s, -4.0 * s, 1.0 * s, 0.0}, 3};
    return {{-1, 1, 0, 0}, {-s, s, 0.0, 0.0}, 2};
}

/// Second derivative: three-point inside, four-point one-sided at the ends (three-point when n = 3).
inline Stencil second_derivative_stencil(int i, int n, double h)
{
    const double s = 1.0 / (h * h);
    if (n == 3 && (i == 0 || i == 2)) {
        const int o = i == 0 ? 0 : -2;
        return {{o, o + 1, o + 2, 0}, {s, -2.0 * s, s, 0.0}, 3};
    }
    if (i == 0) return {{0, 1, 2, 3}, {2.0 * s, -5.0 * s, 4.0 * s, -1.0 * s}, 4};
    if (i == n - 1) return {{0, -1, -2, -3}, {2.0 * s, -5.0 * s, 4.0 * s, -1.0 * s}, 4};
    return {{-1, 0, 1, 0}, {s, -2.0 * s, s, 0.0}, 3};
}

namespace detail {

template <class StencilFn>
inline void apply_axis(const Grid& g, int axis, const double* f, double* out, StencilFn stencil)
{
    const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(g.stride(axis));
    for (std::size_t k = 0; k < g.node_count(); ++k) {
        const int i = g.multi_index(k)[axis];
        const Stencil st = stencil(i, g.n_cells(axis), g.h(axis));
        double acc = 0.0;
        for (int j = 0; j < st.size; ++j) acc += st.coef[j] * f[static_cast<std::ptrdiff_t>(k) + st.offset[j] * stride];
        out[k] = acc;
    }
}

template <class StencilFn>
inline SpMat axis_matrix(const Grid& g, int axis, StencilFn stencil)
{
    std::vector<Triplet> t;
    t.reserve(g.node_count() * 4);
    const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(g.stride(axis));
    for (std::size_t k = 0; k < g.node_count(); ++k) {
        const int i = g.multi_index(k)[axis];
        const Stencil st = stencil(i, g.n_cells(axis), g.h(axis));
        for (int j = 0; j < st.size; ++j)
            t.emplace_back(static_cast<int>(k), static_cast<int>(static_cast<std::ptrdiff_t>(k) + st.offset[j] * stride),
                           st.coef[j]);
    }
    const int n = static_cast<int>(g.node_count());
    SpMat m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

}  // namespace detail

/// Sparse matrix of the first derivative along one axis.
inline SpMat gradient_matrix(const Grid& g, int axis)
{
    return detail::axis_matrix(g, axis, first_derivative_stencil);
}

inline SpMat laplacian_matrix(const Grid& g)
{
    SpMat m = detail::axis_matrix(g, 0, second_derivative_stencil);
    if (g.dim() == 2) m += detail::axis_matrix(g, 1, second_derivative_stencil);
    return m;
}

/// Derivative along one axis of raw nodal values.
inline Vec partial(const Grid& g, int axis, const double* f)
{
    Vec out(static_cast<Eigen::Index>(g.node_count()));
    detail::apply_axis(g, axis, f, out.data(), first_derivative_stencil);
    return out;
}

inline VectorField gradient(const ScalarField& f)
{
    std::vector<Vec> comps;
    for (int a = 0; a < f.grid().dim(); ++a) comps.push_back(partial(f.grid(), a, f.values().data()));
    return VectorField::from_components(f.grid_ptr(), comps);
}

inline VectorField gradient(const SpaceTimeField& f, int level)
{
    std::vector<Vec> comps;
    for (int a = 0; a < f.grid().dim(); ++a) comps.push_back(partial(f.grid(), a, f.level(level).data()));
    return VectorField::from_components(f.grid_ptr(), comps);
}

inline ScalarField divergence(const VectorField& v)
{
    const Grid& g = v.grid();
    Vec acc = Vec::Zero(static_cast<Eigen::Index>(g.node_count()));
    for (int a = 0; a < g.dim(); ++a) {
        const Vec c = v.component(a);
        acc += partial(g, a, c.data());
    }
    return ScalarField(v.grid_ptr(), acc);
}

inline Vec laplacian(const Grid& g, const double* f)
{
    Vec out = Vec::Zero(static_cast<Eigen::Index>(g.node_count()));
    Vec tmp(out.size());
    for (int a = 0; a < g.dim(); ++a) {
        detail::apply_axis(g, a, f, tmp.data(), second_derivative_stencil);
        out += tmp;
    }
    return out;
}

inline ScalarField laplacian(const ScalarField& f) { return ScalarField(f.grid_ptr(), laplacian(f.grid(), f.values().data())); }

/// Restriction to the boundary nodes at every level.
inline BoundaryData trace(const SpaceTimeField& f)
{
    const Grid& g = f.grid();
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(g.n_levels()) * g.boundary_count());
    for (int k = 0; k < g.n_levels(); ++k) {
        const auto lv = f.level(k);
        for (std::size_t node : g.boundary_nodes()) v.push_back(lv[node]);
    }
    return BoundaryData(f.grid_ptr(), BoundaryKind::Trace, std::move(v));
}

/// Full gradient at the boundary nodes: one-sided across the boundary, along-boundary differences of the trace.
inline BoundaryData boundary_gradient(const SpaceTimeField& f)
{
    const Grid& g = f.grid();
    const int d = g.dim();
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(g.n_levels()) * g.boundary_count() * d);
    for (int k = 0; k < g.n_levels(); ++k) {
        const double* lv = f.level(k).data();
        for (std::size_t node : g.boundary_nodes()) {
            const Index2 ij = g.multi_index(node);
            for (int a = 0; a < d; ++a) {
                const Stencil st = first_derivative_stencil(ij[a], g.n_cells(a), g.h(a));
                double acc = 0.0;
                for (int j = 0; j < st.size; ++j)
                    acc += st.coef[j] * lv[static_cast<std::ptrdiff_t>(node) +
                                           st.offset[j] * static_cast<std::ptrdiff_t>(g.stride(a))];
                v.push_back(acc);
            }
        }
    }
    return BoundaryData(f.grid_ptr(), BoundaryKind::Gradient, std::move(v));
}

/// Outward normal component of gradient-kind boundary data.
inline BoundaryData normal_component(const BoundaryData& grad)
{
    if (grad.kind() != BoundaryKind::Gradient) throw PreconditionViolated("normal_component expects gradient data");
    const Grid& g = grad.grid();
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(g.n_levels()) * g.boundary_count());
    for (int k = 0; k < g.n_levels(); ++k)
        for (std::size_t s = 0; s < g.boundary_count(); ++s) {
            const Point nu = g.outward_normal(g.boundary_nodes()[s]);
            double acc = 0.0;
            for (int a = 0; a < g.dim(); ++a) acc += nu[a] * grad.at(k, s, a);
            v.push_back(acc);
        }
    return BoundaryData(grad.grid_ptr(), BoundaryKind::NormalDerivative, std::move(v));
}

inline BoundaryData normal_derivative(const SpaceTimeField& f) { return normal_component(boundary_gradient(f)); }

/// Pointwise p^T A r.
inline ScalarField quadratic_form(const MetricField& A, const VectorField& p, const VectorField& r)
{
    detail::require_same_grid(A.grid(), p.grid());
    detail::require_same_grid(A.grid(), r.grid());
    std::vector<double> out(A.grid().node_count());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const Point Ar = A.apply(k, r.at(k));
        double acc = 0.0;
        for (int a = 0; a < A.grid().dim(); ++a) acc += p.at(k, a) * Ar[a];
        out[k] = acc;
    }
    return ScalarField(A.grid_ptr(), std::move(out));
}

/// Trapezoid inner product of nodal arrays.
inline double inner_product(const Grid& g, const double* a, const double* b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < g.node_count(); ++k) s += g.volume_weight(k) * a[k] * b[k];
    return s;
}

inline double inner_product(const ScalarField& a, const ScalarField& b)
{
    detail::require_same_grid(a.grid(), b.grid());
    return inner_product(a.grid(), a.values().data(), b.values().data());
}

inline double inner_product(const VectorField& a, const VectorField& b)
{
    detail::require_same_grid(a.grid(), b.grid());
    double s = 0.0;
    for (int c = 0; c < a.dim(); ++c) {
        const Vec x = a.component(c), y = b.component(c);
        s += inner_product(a.grid(), x.data(), y.data());
    }
    return s;
}

inline double l2_norm(const ScalarField& a) { return std::sqrt(inner_product(a, a)); }
inline double l2_norm(const VectorField& a) { return std::sqrt(inner_product(a, a)); }

/// Relative trapezoid L2 distance ||a - b|| / ||b||.
inline double relative_l2(const ScalarField& a, const ScalarField& b)
{
    const double nb = l2_norm(b);
    return l2_norm(a - b) / (nb > 0.0 ? nb : 1.0);
}
inline double relative_l2(const VectorField& a, const VectorField& b)
{
    const double nb = l2_norm(b);
    return l2_norm(a - b) / (nb > 0.0 ? nb : 1.0);
}

/// Boundary term B(f, v) of the discrete identity <grad f, v> + <f, div v> = B(f, v).
/// Along each grid line the end contribution is
///   nu * [3/2 f0 v0 - 1/2 (f0 v1 + f1 v0) + 1/4 (f0 v2 + f2 v0)]
/// with indices counted inward from the end.
inline double boundary_flux(const ScalarField& f, const VectorField& v)
{
    detail::require_same_grid(f.grid(), v.grid());
    const Grid& g = f.grid();
    double total = 0.0;
    for (int a = 0; a < g.dim(); ++a) {
        const int b = 1 - a;
        const int lines = g.dim() == 2 ? g.n_cells(b) : 1;
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride(a));
        for (int j = 0; j < lines; ++j) {
            double wt = 1.0;
            if (g.dim() == 2) wt = (j == 0 || j == g.n_cells(b) - 1) ? 0.5 * g.h(b) : g.h(b);
            Index2 first{0, 0};
            if (g.dim() == 2) first[b] = j;
            const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(g.node(first));
            Index2 last = first;
            last[a] = g.n_cells(a) - 1;
            const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(g.node(last));
            auto end_term = [&](std::ptrdiff_t e, std::ptrdiff_t step) {
                const double f0 = f[e], f1 = f[e + step], f2 = f[e + 2 * step];
                const double v0 = v.at(e, a), v1 = v.at(e + step, a), v2 = v.at(e + 2 * step, a);
                return 1.5 * f0 * v0 - 0.5 * (f0 * v1 + f1 * v0) + 0.25 * (f0 * v2 + f2 * v0);
            };
            total += wt * (end_term(hi, -s) - end_term(lo, s));
        }
    }
    return total;
}

}  // namespace mfg
