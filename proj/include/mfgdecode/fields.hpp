#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"

namespace mfg {

using Vec = Eigen::VectorXd;

namespace detail {
inline void require_finite(const std::vector<double>& v, const char* what)
{
    for (double x : v)
        if (!std::isfinite(x)) throw PreconditionViolated(std::string(what) + " contains non-finite values");
}
inline void require_same_grid(const Grid& a, const Grid& b)
{
    if (!(&a == &b || a == b)) throw PreconditionViolated("fields live on different grids");
}
inline double max_abs(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}
}  // namespace detail

/// Real value per spatial node.
class ScalarField {
public:
    ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), v_(std::move(values))
    {
        if (v_.size() != grid_->node_count()) throw PreconditionViolated("scalar field size mismatch");
        detail::require_finite(v_, "scalar field");
    }
    ScalarField(GridPtr grid, const Vec& values)
        : ScalarField(std::move(grid), std::vector<double>(values.data(), values.data() + values.size()))
    {
    }

    static ScalarField constant(GridPtr grid, double c)
    {
        const std::size_t n = grid->node_count();
        return ScalarField(std::move(grid), std::vector<double>(n, c));
    }
    static ScalarField zeros(GridPtr grid) { return constant(std::move(grid), 0.0); }
    static ScalarField from_function(GridPtr grid, const std::function<double(const Point&)>& f)
    {
        std::vector<double> v(grid->node_count());
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = f(grid->point(k));
        return ScalarField(std::move(grid), std::move(v));
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    std::size_t size() const { return v_.size(); }
    double operator[](std::size_t k) const { return v_[k]; }
    const std::vector<double>& values() const { return v_; }
    Eigen::Map<const Vec> vec() const { return {v_.data(), static_cast<Eigen::Index>(v_.size())}; }
    double max_abs() const { return detail::max_abs(v_); }
    double min() const { return *std::min_element(v_.begin(), v_.end()); }

    friend ScalarField operator+(const ScalarField& a, const ScalarField& b)
    {
        detail::require_same_grid(a.grid(), b.grid());
        return ScalarField(a.grid_, Vec(a.vec() + b.vec()));
    }
    friend ScalarField operator-(const ScalarField& a, const ScalarField& b)
    {
        detail::require_same_grid(a.grid(), b.grid());
        return ScalarField(a.grid_, Vec(a.vec() - b.vec()));
    }
    friend ScalarField operator*(double s, const ScalarField& a) { return ScalarField(a.grid_, Vec(s * a.vec())); }
    friend ScalarField operator+(const ScalarField& a, double c)
    {
        return ScalarField(a.grid_, Vec(a.vec().array() + c));
    }

private:
    GridPtr grid_;
    std::vector<double> v_;
};

/// Real dim-vector per spatial node, stored node-major.
class VectorField {
public:
    VectorField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), v_(std::move(values))
    {
        if (v_.size() != grid_->node_count() * static_cast<std::size_t>(grid_->dim()))
            throw PreconditionViolated("vector field size mismatch");
        detail::require_finite(v_, "vector field");
    }
    static VectorField zeros(GridPtr grid)
    {
        const std::size_t n = grid->node_count() * static_cast<std::size_t>(grid->dim());
        return VectorField(std::move(grid), std::vector<double>(n, 0.0));
    }
    static VectorField constant(GridPtr grid, const Point& c)
    {
        const int d = grid->dim();
        std::vector<double> v(grid->node_count() * d);
        for (std::size_t k = 0; k < grid->node_count(); ++k)
            for (int a = 0; a < d; ++a) v[k * d + a] = c[a];
        return VectorField(std::move(grid), std::move(v));
    }
    static VectorField from_function(GridPtr grid, const std::function<Point(const Point&)>& f)
    {
        const int d = grid->dim();
        std::vector<double> v(grid->node_count() * d);
        for (std::size_t k = 0; k < grid->node_count(); ++k) {
            const Point p = f(grid->point(k));
            for (int a = 0; a < d; ++a) v[k * d + a] = p[a];
        }
        return VectorField(std::move(grid), std::move(v));
    }
    /// Assemble from one array per component.
    static VectorField from_components(GridPtr grid, const std::vector<Vec>& comps)
    {
        const int d = grid->dim();
        if (static_cast<int>(comps.size()) != d) throw PreconditionViolated("component count must equal dim");
        std::vector<double> v(grid->node_count() * d);
        for (int a = 0; a < d; ++a)
            for (std::size_t k = 0; k < grid->node_count(); ++k) v[k * d + a] = comps[a][static_cast<Eigen::Index>(k)];
        return VectorField(std::move(grid), std::move(v));
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    int dim() const { return grid_->dim(); }
    double at(std::size_t node, int axis) const { return v_[node * dim() + axis]; }
    Point at(std::size_t node) const
    {
        Point p{0.0, 0.0};
        for (int a = 0; a < dim(); ++a) p[a] = at(node, a);
        return p;
    }
    Vec component(int axis) const
    {
        Vec c(static_cast<Eigen::Index>(grid_->node_count()));
        for (std::size_t k = 0; k < grid_->node_count(); ++k) c[static_cast<Eigen::Index>(k)] = at(k, axis);
        return c;
    }
    const std::vector<double>& values() const { return v_; }
    double max_abs() const { return detail::max_abs(v_); }

    friend VectorField operator-(const VectorField& a, const VectorField& b)
    {
        detail::require_same_grid(a.grid(), b.grid());
        std::vector<double> v(a.v_.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.v_[i] - b.v_[i];
        return VectorField(a.grid_, std::move(v));
    }
    friend VectorField operator+(const VectorField& a, const VectorField& b)
    {
        detail::require_same_grid(a.grid(), b.grid());
        std::vector<double> v(a.v_.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.v_[i] + b.v_[i];
        return VectorField(a.grid_, std::move(v));
    }
    friend VectorField operator*(double s, const VectorField& a)
    {
        std::vector<double> v(a.v_);
        for (double& x : v) x *= s;
        return VectorField(a.grid_, std::move(v));
    }

private:
    GridPtr grid_;
    std::vector<double> v_;
};

/// Value per (time level, node), stored level-major. Complex fields carry a second real array.
class SpaceTimeField {
public:
    SpaceTimeField(GridPtr grid, std::vector<double> re, std::vector<double> im = {})
        : grid_(std::move(grid)), re_(std::move(re)), im_(std::move(im))
    {
        const std::size_t n = grid_->node_count() * static_cast<std::size_t>(grid_->n_levels());
        if (re_.size() != n) throw PreconditionViolated("space-time field size mismatch");
        if (!im_.empty() && im_.size() != n) throw PreconditionViolated("space-time imaginary part size mismatch");
        detail::require_finite(re_, "space-time field");
        detail::require_finite(im_, "space-time field");
    }
    /// Assemble from one vector per level.
    static SpaceTimeField from_levels(GridPtr grid, const std::vector<Vec>& re, const std::vector<Vec>& im = {})
    {
        const std::size_t n = grid->node_count();
        auto flatten = [&](const std::vector<Vec>& lv) {
            std::vector<double> out;
            if (lv.empty()) return out;
            if (lv.size() != static_cast<std::size_t>(grid->n_levels()))
                throw PreconditionViolated("level count mismatch");
            out.resize(n * lv.size());
            for (std::size_t k = 0; k < lv.size(); ++k) std::copy(lv[k].data(), lv[k].data() + n, out.begin() + k * n);
            return out;
        };
        return SpaceTimeField(grid, flatten(re), flatten(im));
    }
    static SpaceTimeField zeros(GridPtr grid, bool complex = false)
    {
        const std::size_t n = grid->node_count() * static_cast<std::size_t>(grid->n_levels());
        return SpaceTimeField(std::move(grid), std::vector<double>(n, 0.0),
                              complex ? std::vector<double>(n, 0.0) : std::vector<double>{});
    }
    static SpaceTimeField constant_in_time(const ScalarField& f)
    {
        const auto& g = f.grid();
        std::vector<double> v;
        v.reserve(g.node_count() * g.n_levels());
        for (int k = 0; k < g.n_levels(); ++k) v.insert(v.end(), f.values().begin(), f.values().end());
        return SpaceTimeField(f.grid_ptr(), std::move(v));
    }
    static SpaceTimeField from_function(GridPtr grid, const std::function<double(const Point&, double)>& f)
    {
        std::vector<double> v(grid->node_count() * grid->n_levels());
        for (int k = 0; k < grid->n_levels(); ++k)
            for (std::size_t i = 0; i < grid->node_count(); ++i)
                v[k * grid->node_count() + i] = f(grid->point(i), grid->time(k));
        return SpaceTimeField(std::move(grid), std::move(v));
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    bool is_complex() const { return !im_.empty(); }
    std::span<const double> level(int k) const
    {
        return {re_.data() + static_cast<std::size_t>(k) * grid_->node_count(), grid_->node_count()};
    }
    std::span<const double> level_imag(int k) const
    {
        if (im_.empty()) throw PreconditionViolated("field is real");
        return {im_.data() + static_cast<std::size_t>(k) * grid_->node_count(), grid_->node_count()};
    }
    Eigen::Map<const Vec> level_vec(int k) const
    {
        return {re_.data() + static_cast<std::size_t>(k) * grid_->node_count(),
                static_cast<Eigen::Index>(grid_->node_count())};
    }
    Eigen::Map<const Vec> level_imag_vec(int k) const
    {
        if (im_.empty()) throw PreconditionViolated("field is real");
        return {im_.data() + static_cast<std::size_t>(k) * grid_->node_count(),
                static_cast<Eigen::Index>(grid_->node_count())};
    }
    ScalarField level_field(int k) const { return ScalarField(grid_, Vec(level_vec(k))); }
    double at(int level, std::size_t node) const { return re_[static_cast<std::size_t>(level) * grid_->node_count() + node]; }
    const std::vector<double>& real_values() const { return re_; }
    const std::vector<double>& imag_values() const { return im_; }
    SpaceTimeField real_part() const { return SpaceTimeField(grid_, re_); }
    SpaceTimeField imag_part() const { return SpaceTimeField(grid_, im_.empty() ? std::vector<double>(re_.size(), 0.0) : im_); }
    double max_abs() const { return std::max(detail::max_abs(re_), detail::max_abs(im_)); }
    double min() const { return *std::min_element(re_.begin(), re_.end()); }
    /// Space-time trapezoid L2 norm (modulus for complex fields).
    double l2_norm() const
    {
        double s = 0.0;
        const std::size_t n = grid_->node_count();
        for (int k = 0; k < grid_->n_levels(); ++k) {
            const double wt = grid_->time_weight(k);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = static_cast<std::size_t>(k) * n + i;
                double m2 = re_[j] * re_[j];
                if (!im_.empty()) m2 += im_[j] * im_[j];
                s += wt * grid_->volume_weight(i) * m2;
            }
        }
        return std::sqrt(s);
    }

    friend SpaceTimeField operator-(const SpaceTimeField& a, const SpaceTimeField& b)
    {
        return combine(a, b, 1.0, -1.0);
    }
    friend SpaceTimeField operator+(const SpaceTimeField& a, const SpaceTimeField& b)
    {
        return combine(a, b, 1.0, 1.0);
    }
    friend SpaceTimeField operator*(double s, const SpaceTimeField& a)
    {
        return combine(a, a, s, 0.0);
    }
    /// Returns sa*a + sb*b.
    static SpaceTimeField combine(const SpaceTimeField& a, const SpaceTimeField& b, double sa, double sb)
    {
        detail::require_same_grid(a.grid(), b.grid());
        std::vector<double> re(a.re_.size());
        for (std::size_t i = 0; i < re.size(); ++i) re[i] = sa * a.re_[i] + sb * b.re_[i];
        std::vector<double> im;
        if (a.is_complex() || b.is_complex()) {
            im.assign(re.size(), 0.0);
            for (std::size_t i = 0; i < im.size(); ++i)
                im[i] = (a.is_complex() ? sa * a.im_[i] : 0.0) + (b.is_complex() ? sb * b.im_[i] : 0.0);
        }
        return SpaceTimeField(a.grid_, std::move(re), std::move(im));
    }

private:
    GridPtr grid_;
    std::vector<double> re_;
    std::vector<double> im_;
};

/// A(x) = kappa(x) g(x) with g symmetric positive definite and kappa positive.
class MetricField {
public:
    /// base holds dim*dim row-major entries per node.
    MetricField(GridPtr grid, std::vector<double> base, ScalarField kappa)
        : grid_(std::move(grid)), g_(std::move(base)), kappa_(std::move(kappa))
    {
        const int d = grid_->dim();
        if (g_.size() != grid_->node_count() * d * d) throw PreconditionViolated("base metric size mismatch");
        detail::require_finite(g_, "base metric");
        detail::require_same_grid(*grid_, kappa_.grid());
        for (std::size_t k = 0; k < grid_->node_count(); ++k) {
            const double* m = &g_[k * d * d];
            if (d == 1) {
                if (!(m[0] > 0.0)) throw PreconditionViolated("base metric not positive definite");
            } else {
                const double scale = std::abs(m[1]) + std::abs(m[2]) + 1e-300;
                if (std::abs(m[1] - m[2]) > 1e-12 * scale) throw PreconditionViolated("base metric not symmetric");
                const double tr = m[0] + m[3], det = m[0] * m[3] - m[1] * m[2];
                if (!(det > 0.0 && tr > 0.0)) throw PreconditionViolated("base metric not positive definite");
            }
            if (!(kappa_[k] > 0.0)) throw PreconditionViolated("conformal factor must be positive");
        }
    }
    static MetricField identity(GridPtr grid, ScalarField kappa)
    {
        return MetricField(grid, identity_base(*grid), std::move(kappa));
    }
    static MetricField identity(GridPtr grid) { return identity(grid, ScalarField::constant(grid, 1.0)); }
    static std::vector<double> identity_base(const Grid& grid)
    {
        const int d = grid.dim();
        std::vector<double> g(grid.node_count() * d * d, 0.0);
        for (std::size_t k = 0; k < grid.node_count(); ++k)
            for (int a = 0; a < d; ++a) g[k * d * d + a * d + a] = 1.0;
        return g;
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    const ScalarField& kappa() const { return kappa_; }
    const std::vector<double>& base() const { return g_; }
    double base_entry(std::size_t node, int a, int b) const
    {
        const int d = grid_->dim();
        return g_[node * d * d + a * d + b];
    }
    double entry(std::size_t node, int a, int b) const { return kappa_[node] * base_entry(node, a, b); }
    Point apply_base(std::size_t node, const Point& p) const
    {
        Point r{0.0, 0.0};
        const int d = grid_->dim();
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) r[a] += base_entry(node, a, b) * p[b];
        return r;
    }
    Point apply(std::size_t node, const Point& p) const
    {
        Point r = apply_base(node, p);
        r[0] *= kappa_[node];
        r[1] *= kappa_[node];
        return r;
    }
    MetricField with_kappa(ScalarField kappa) const { return MetricField(grid_, g_, std::move(kappa)); }

private:
    GridPtr grid_;
    std::vector<double> g_;
    ScalarField kappa_;
};

enum class BoundaryKind { Trace, NormalDerivative, Gradient };

inline const char* to_string(BoundaryKind k)
{
    switch (k) {
    case BoundaryKind::Trace: return "trace";
    case BoundaryKind::NormalDerivative: return "normal_derivative";
    case BoundaryKind::Gradient: return "gradient";
    }
    return "?";
}

/// Values on the boundary nodes at every time level, stored [level][slot][component].
class BoundaryData {
public:
    BoundaryData(GridPtr grid, BoundaryKind kind, std::vector<double> values)
        : grid_(std::move(grid)), kind_(kind), v_(std::move(values))
    {
        if (v_.size() != static_cast<std::size_t>(grid_->n_levels()) * grid_->boundary_count() * components())
            throw PreconditionViolated("boundary data size mismatch");
        detail::require_finite(v_, "boundary data");
    }
    static BoundaryData zeros(GridPtr grid, BoundaryKind kind = BoundaryKind::Trace)
    {
        const std::size_t comps = kind == BoundaryKind::Gradient ? grid->dim() : 1;
        const std::size_t n = static_cast<std::size_t>(grid->n_levels()) * grid->boundary_count() * comps;
        return BoundaryData(std::move(grid), kind, std::vector<double>(n, 0.0));
    }
    /// Trace-kind data sampled from a function of (point, time).
    static BoundaryData from_function(GridPtr grid, const std::function<double(const Point&, double)>& f)
    {
        std::vector<double> v;
        v.reserve(static_cast<std::size_t>(grid->n_levels()) * grid->boundary_count());
        for (int k = 0; k < grid->n_levels(); ++k)
            for (std::size_t node : grid->boundary_nodes()) v.push_back(f(grid->point(node), grid->time(k)));
        return BoundaryData(grid, BoundaryKind::Trace, std::move(v));
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    BoundaryKind kind() const { return kind_; }
    int components() const { return kind_ == BoundaryKind::Gradient ? grid_->dim() : 1; }
    double at(int level, std::size_t slot, int comp = 0) const
    {
        return v_[(static_cast<std::size_t>(level) * grid_->boundary_count() + slot) * components() + comp];
    }
    const std::vector<double>& values() const { return v_; }
    double max_abs() const { return detail::max_abs(v_); }
    double rms() const
    {
        double s = 0.0;
        for (double x : v_) s += x * x;
        return v_.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v_.size()));
    }

    /// Returns sa*a + sb*b.
    static BoundaryData combine(const BoundaryData& a, const BoundaryData& b, double sa, double sb)
    {
        detail::require_same_grid(a.grid(), b.grid());
        if (a.kind_ != b.kind_) throw PreconditionViolated("boundary data kinds differ");
        std::vector<double> v(a.v_.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = sa * a.v_[i] + sb * b.v_[i];
        return BoundaryData(a.grid_, a.kind_, std::move(v));
    }
    friend BoundaryData operator-(const BoundaryData& a, const BoundaryData& b) { return combine(a, b, 1.0, -1.0); }
    friend BoundaryData operator+(const BoundaryData& a, const BoundaryData& b) { return combine(a, b, 1.0, 1.0); }
    friend BoundaryData operator*(double s, const BoundaryData& a) { return combine(a, a, s, 0.0); }

private:
    GridPtr grid_;
    BoundaryKind kind_;
    std::vector<double> v_;
};

}  // namespace mfg
