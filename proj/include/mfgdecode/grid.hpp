#pragma once

#include <array>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <sstream>
#include <vector>

#include "errors.hpp"

namespace mfg {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
    double length() const { return hi - lo; }
    bool operator==(const Interval&) const = default;
};

using Index2 = std::array<int, 2>;
using Point = std::array<double, 2>;

/// Node-centered uniform lattice on a box of dimension 1 or 2 with a uniform time grid.
/// Node numbering is row-major with axis 0 slowest.
class Grid {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    Grid(std::vector<Interval> extent, std::vector<int> n_cells, double T, int n_time)
        : extent_(std::move(extent)), n_(std::move(n_cells)), T_(T), n_time_(n_time)
    {
        const int d = static_cast<int>(extent_.size());
        if (d < 1 || d > 2) throw PreconditionViolated("grid dimension must be 1 or 2");
        if (static_cast<int>(n_.size()) != d)
            throw PreconditionViolated("n_cells must have one entry per axis");
        for (int a = 0; a < d; ++a) {
            if (n_[a] < 3) throw PreconditionViolated("n_cells must be at least 3 on every axis");
            if (!(extent_[a].hi > extent_[a].lo))
                throw PreconditionViolated("grid extent must be a nonempty interval");
            h_[a] = (extent_[a].hi - extent_[a].lo) / (n_[a] - 1);
        }
        if (n_time_ < 2) throw PreconditionViolated("n_time must be at least 2");
        if (!(T_ > 0.0)) throw PreconditionViolated("time horizon must be positive");
        dt_ = T_ / n_time_;

        node_count_ = 1;
        for (int a = 0; a < d; ++a) node_count_ *= static_cast<std::size_t>(n_[a]);
        stride_[d - 1] = 1;
        if (d == 2) stride_[0] = static_cast<std::size_t>(n_[1]);

        slot_.assign(node_count_, npos);
        for (std::size_t k = 0; k < node_count_; ++k) {
            if (on_boundary(k)) {
                slot_[k] = boundary_.size();
                boundary_.push_back(k);
            } else {
                interior_.push_back(k);
            }
        }
    }

    int dim() const { return static_cast<int>(extent_.size()); }
    const Interval& extent(int axis) const { return extent_[axis]; }
    const std::vector<Interval>& extents() const { return extent_; }
    int n_cells(int axis) const { return n_[axis]; }
    const std::vector<int>& n_cells() const { return n_; }
    double h(int axis) const { return h_[axis]; }
    double min_h() const { return dim() == 1 ? h_[0] : std::min(h_[0], h_[1]); }
    double T() const { return T_; }
    int n_time() const { return n_time_; }
    int n_levels() const { return n_time_ + 1; }
    double dt() const { return dt_; }
    double time(int level) const { return level == n_time_ ? T_ : level * dt_; }

    std::size_t node_count() const { return node_count_; }
    std::size_t stride(int axis) const { return stride_[axis]; }

    Index2 multi_index(std::size_t node) const
    {
        if (dim() == 1) return {static_cast<int>(node), 0};
        return {static_cast<int>(node / stride_[0]), static_cast<int>(node % stride_[0])};
    }
    std::size_t node(Index2 ij) const
    {
        if (dim() == 1) return static_cast<std::size_t>(ij[0]);
        return static_cast<std::size_t>(ij[0]) * stride_[0] + static_cast<std::size_t>(ij[1]);
    }
    double coord(std::size_t node, int axis) const
    {
        const int i = multi_index(node)[axis];
        return i == n_[axis] - 1 ? extent_[axis].hi : extent_[axis].lo + i * h_[axis];
    }
    Point point(std::size_t node) const
    {
        Point p{0.0, 0.0};
        for (int a = 0; a < dim(); ++a) p[a] = coord(node, a);
        return p;
    }

    const std::vector<std::size_t>& boundary_nodes() const { return boundary_; }
    const std::vector<std::size_t>& interior_nodes() const { return interior_; }
    std::size_t boundary_count() const { return boundary_.size(); }
    bool is_boundary(std::size_t node) const { return slot_[node] != npos; }
    /// Position of a node in the boundary list, or npos for interior nodes.
    std::size_t boundary_slot(std::size_t node) const { return slot_[node]; }

    /// Unit outward normal; at box corners the normalized sum of the face normals.
    Point outward_normal(std::size_t node) const
    {
        Point nu{0.0, 0.0};
        const Index2 ij = multi_index(node);
        double len2 = 0.0;
        for (int a = 0; a < dim(); ++a) {
            if (ij[a] == 0) nu[a] = -1.0;
            else if (ij[a] == n_[a] - 1) nu[a] = 1.0;
            len2 += nu[a] * nu[a];
        }
        if (len2 > 1.0) {
            const double s = 1.0 / std::sqrt(len2);
            nu[0] *= s;
            nu[1] *= s;
        }
        return nu;
    }

    /// Tensor-product trapezoid weight of a node.
    double volume_weight(std::size_t node) const
    {
        const Index2 ij = multi_index(node);
        double w = 1.0;
        for (int a = 0; a < dim(); ++a) w *= axis_weight(ij[a], a);
        return w;
    }
    /// Trapezoid weight of a boundary node for integrals over the boundary.
    /// In 1D the boundary is two points, each with weight 1.
    double boundary_weight(std::size_t node) const
    {
        if (dim() == 1) return 1.0;
        const Index2 ij = multi_index(node);
        double w = 0.0;
        for (int a = 0; a < 2; ++a) {
            if (ij[a] == 0 || ij[a] == n_[a] - 1) w += axis_weight(ij[1 - a], 1 - a);
        }
        return w;
    }
    double time_weight(int level) const
    {
        return (level == 0 || level == n_time_) ? 0.5 * dt_ : dt_;
    }
    double diameter() const
    {
        double s = 0.0;
        for (const auto& e : extent_) s += e.length() * e.length();
        return std::sqrt(s);
    }
    double volume() const
    {
        double v = 1.0;
        for (const auto& e : extent_) v *= e.length();
        return v;
    }

    bool operator==(const Grid& o) const
    {
        return extent_ == o.extent_ && n_ == o.n_ && T_ == o.T_ && n_time_ == o.n_time_;
    }

    std::string describe() const
    {
        std::ostringstream os;
        os << dim() << "D grid ";
        for (int a = 0; a < dim(); ++a) os << (a ? "x" : "") << n_[a];
        os << " nodes, T=" << T_ << ", n_time=" << n_time_;
        return os.str();
    }

private:
    bool on_boundary(std::size_t node) const
    {
        const Index2 ij = multi_index(node);
        for (int a = 0; a < dim(); ++a)
            if (ij[a] == 0 || ij[a] == n_[a] - 1) return true;
        return false;
    }
    double axis_weight(int i, int axis) const
    {
        return (i == 0 || i == n_[axis] - 1) ? 0.5 * h_[axis] : h_[axis];
    }

    std::vector<Interval> extent_;
    std::vector<int> n_;
    double T_;
    int n_time_;
    std::array<double, 2> h_{0.0, 0.0};
    double dt_ = 0.0;
    std::size_t node_count_ = 0;
    std::array<std::size_t, 2> stride_{1, 1};
    std::vector<std::size_t> boundary_;
    std::vector<std::size_t> interior_;
    std::vector<std::size_t> slot_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(std::vector<Interval> extent, std::vector<int> n_cells, double T, int n_time)
{
    return std::make_shared<const Grid>(std::move(extent), std::move(n_cells), T, n_time);
}

}  // namespace mfg
