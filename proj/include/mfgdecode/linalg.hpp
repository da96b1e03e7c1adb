#pragma once

#include <Eigen/SparseLU>
#include <algorithm>
#include <string>
#include <vector>

#include "operators.hpp"

extern "C" {
void dgbtrf_(const int* m, const int* n, const int* kl, const int* ku, double* ab, const int* ldab, int* ipiv, int* info);
void dgbtrs_(const char* trans, const int* n, const int* kl, const int* ku, const int* nrhs, const double* ab,
             const int* ldab, const int* ipiv, double* b, const int* ldb, int* info, std::size_t trans_len);
}

namespace mfg {

/// LU with partial pivoting for narrow-band matrices (LAPACK band storage).
class BandedLU {
public:
    /// Largest |row - col| over the nonzeros.
    static int bandwidth(const SpMat& m)
    {
        int b = 0;
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it) b = std::max(b, static_cast<int>(std::abs(it.row() - it.col())));
        return b;
    }

    bool factorize(const SpMat& m, int band)
    {
        n_ = static_cast<int>(m.rows());
        kl_ = ku_ = band;
        ld_ = 2 * kl_ + ku_ + 1;
        ab_.assign(static_cast<std::size_t>(ld_) * n_, 0.0);
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it) {
                const int i = static_cast<int>(it.row()), j = static_cast<int>(it.col());
                ab_[static_cast<std::size_t>(j) * ld_ + (kl_ + ku_ + i - j)] = it.value();
            }
        ipiv_.assign(static_cast<std::size_t>(n_), 0);
        int info = 0;
        dgbtrf_(&n_, &n_, &kl_, &ku_, ab_.data(), &ld_, ipiv_.data(), &info);
        return info == 0;
    }
    void solve_in_place(double* b, int nrhs) const
    {
        int info = 0;
        const char tr = 'N';
        dgbtrs_(&tr, &n_, &kl_, &ku_, &nrhs, ab_.data(), &ld_, ipiv_.data(), b, &n_, &info, 1);
    }

private:
    int n_ = 0, kl_ = 0, ku_ = 0, ld_ = 0;
    std::vector<double> ab_;
    std::vector<int> ipiv_;
};

/// Diagonal matrix from a vector.
inline SpMat diag(const Vec& d)
{
    SpMat m(d.size(), d.size());
    m.reserve(Eigen::VectorXi::Constant(d.size(), 1));
    for (Eigen::Index i = 0; i < d.size(); ++i) m.insert(i, i) = d[i];
    m.makeCompressed();
    return m;
}

inline SpMat identity_matrix(Eigen::Index n)
{
    SpMat m(n, n);
    m.setIdentity();
    return m;
}

/// 1 on interior nodes, 0 on boundary nodes.
inline Vec interior_mask(const Grid& g)
{
    Vec m = Vec::Ones(static_cast<Eigen::Index>(g.node_count()));
    for (std::size_t node : g.boundary_nodes()) m[static_cast<Eigen::Index>(node)] = 0.0;
    return m;
}

/// Replace the rows of the boundary nodes by identity rows.
inline SpMat with_dirichlet_rows(const SpMat& m, const Grid& g)
{
    const Vec in = interior_mask(g);
    SpMat out = diag(in) * m + diag(Vec(Vec::Ones(in.size()) - in));
    out.prune(0.0);
    out.makeCompressed();
    return out;
}

/// Block-diagonal repetition of a square matrix.
inline SpMat block_repeat(const SpMat& m, int blocks)
{
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(m.nonZeros()) * blocks);
    for (int b = 0; b < blocks; ++b)
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it)
                t.emplace_back(static_cast<int>(it.row() + b * m.rows()), static_cast<int>(it.col() + b * m.cols()),
                               it.value());
    SpMat out(m.rows() * blocks, m.cols() * blocks);
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

/// Sparse LU factorization that reports failure through SingularSystem.
class SparseSolver {
public:
    SparseSolver() = default;
    explicit SparseSolver(const SpMat& m, const std::string& context = "linear system") { factorize(m, context); }

    void factorize(const SpMat& m, const std::string& context = "linear system")
    {
        if (!m.isCompressed()) {
            SpMat c = m;
            c.makeCompressed();
            factorize(c, context);
            return;
        }
        const int band = BandedLU::bandwidth(m);
        if (band <= max_band_) {
            if (!banded_.factorize(m, band)) throw SingularSystem(context + ": banded LU factorization failed");
            use_band_ = true;
            ready_ = true;
            return;
        }
        use_band_ = false;
        if (!same_pattern(m)) {
            lu_.analyzePattern(m);
            outer_.assign(m.outerIndexPtr(), m.outerIndexPtr() + m.outerSize() + 1);
            inner_.assign(m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());
            pattern_ready_ = true;
        }
        lu_.factorize(m);
        if (lu_.info() != Eigen::Success) throw SingularSystem(context + ": sparse LU factorization failed");
        ready_ = true;
    }
    Vec solve_vec(const Vec& b) const
    {
        if (!ready_) throw SingularSystem("solve before factorization");
        Vec x;
        if (use_band_) {
            x = b;
            banded_.solve_in_place(x.data(), 1);
        } else {
            x = lu_.solve(b);
        }
        if (!x.allFinite()) throw SingularSystem("linear solve produced non-finite values");
        return x;
    }
    Eigen::MatrixXd solve_mat(const Eigen::MatrixXd& b) const
    {
        if (!ready_) throw SingularSystem("solve before factorization");
        Eigen::MatrixXd x;
        if (use_band_) {
            x = b;
            banded_.solve_in_place(x.data(), static_cast<int>(x.cols()));
        } else {
            x = lu_.solve(b);
        }
        if (!x.allFinite()) throw SingularSystem("linear solve produced non-finite values");
        return x;
    }

private:
    bool same_pattern(const SpMat& m) const
    {
        if (!pattern_ready_) return false;
        if (outer_.size() != static_cast<std::size_t>(m.outerSize() + 1)) return false;
        if (inner_.size() != static_cast<std::size_t>(m.nonZeros())) return false;
        return std::equal(outer_.begin(), outer_.end(), m.outerIndexPtr()) &&
               std::equal(inner_.begin(), inner_.end(), m.innerIndexPtr());
    }

    static constexpr int max_band_ = 8;
    BandedLU banded_;
    bool use_band_ = false;
    mutable Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
    bool pattern_ready_ = false;
    bool ready_ = false;
    std::vector<int> outer_;
    std::vector<int> inner_;
};

}  // namespace mfg

namespace mfg {

/// Assembled difference matrices of a grid.
struct DiscreteOperators {
    std::vector<SpMat> d;  // first derivative per axis
    SpMat lap;
    Vec interior;          // 1 inside, 0 on the boundary

    explicit DiscreteOperators(const Grid& g) : lap(laplacian_matrix(g)), interior(interior_mask(g))
    {
        for (int a = 0; a < g.dim(); ++a) d.push_back(gradient_matrix(g, a));
    }
};

/// Per-axis arrays of (A p)_a = sum_b A_ab p_b from per-axis arrays p_b.
inline std::vector<Vec> apply_metric(const MetricField& A, const std::vector<Vec>& p)
{
    const int dim = A.grid().dim();
    const Eigen::Index n = static_cast<Eigen::Index>(A.grid().node_count());
    std::vector<Vec> out(dim, Vec::Zero(n));
    for (Eigen::Index k = 0; k < n; ++k)
        for (int a = 0; a < dim; ++a)
            for (int b = 0; b < dim; ++b) out[a][k] += A.entry(static_cast<std::size_t>(k), a, b) * p[b][k];
    return out;
}

inline std::vector<Vec> apply_gradient(const DiscreteOperators& ops, const Vec& f)
{
    std::vector<Vec> out;
    for (const auto& da : ops.d) out.push_back(da * f);
    return out;
}

}  // namespace mfg

namespace mfg {

/// Fixed sparsity pattern covering identity, Laplacian and first derivatives, with value slots that
/// can be refilled without reallocation. Used for the per-step matrices of the time integrators.
class StepAssembler {
public:
    explicit StepAssembler(const DiscreteOperators& ops) : ops_(ops)
    {
        const Eigen::Index n = ops.lap.rows();
        SpMat s = structural(ops.lap) + structural(identity_matrix(n));
        for (const auto& da : ops.d) s += structural(da);
        s.makeCompressed();
        pattern_ = s;
        lap_slot_ = slots(ops.lap);
        for (const auto& da : ops.d) d_slot_.push_back(slots(da));
        for (Eigen::Index i = 0; i < n; ++i) diag_slot_.push_back(find(i, i));
        for (int k = 0; k < pattern_.outerSize(); ++k)
            for (SpMat::InnerIterator it(pattern_, k); it; ++it)
                if (ops.interior[it.row()] == 0.0) boundary_slot_.push_back(&it.valueRef() - pattern_.valuePtr());
    }

    /// c_mass I - c_lap Lap, boundary rows to be replaced later.
    void reset(double c_mass, double c_lap)
    {
        std::fill(pattern_.valuePtr(), pattern_.valuePtr() + pattern_.nonZeros(), 0.0);
        double* v = pattern_.valuePtr();
        for (std::size_t i = 0; i < diag_slot_.size(); ++i) v[diag_slot_[i]] += c_mass;
        add_scaled(ops_.lap, lap_slot_, -c_lap);
    }
    /// Adds diag(w) D_a.
    void add_left_weighted_derivative(int axis, const Vec& w)
    {
        const SpMat& da = ops_.d[axis];
        double* v = pattern_.valuePtr();
        std::size_t j = 0;
        for (int k = 0; k < da.outerSize(); ++k)
            for (SpMat::InnerIterator it(da, k); it; ++it, ++j) v[d_slot_[axis][j]] += w[it.row()] * it.value();
    }
    /// Adds D_a diag(w).
    void add_right_weighted_derivative(int axis, const Vec& w)
    {
        const SpMat& da = ops_.d[axis];
        double* v = pattern_.valuePtr();
        std::size_t j = 0;
        for (int k = 0; k < da.outerSize(); ++k)
            for (SpMat::InnerIterator it(da, k); it; ++it, ++j) v[d_slot_[axis][j]] += it.value() * w[it.col()];
    }
    /// Replaces boundary rows by identity rows.
    void apply_dirichlet_rows()
    {
        double* v = pattern_.valuePtr();
        for (auto s : boundary_slot_) v[s] = 0.0;
        for (Eigen::Index i = 0; i < ops_.interior.size(); ++i)
            if (ops_.interior[i] == 0.0) v[diag_slot_[static_cast<std::size_t>(i)]] = 1.0;
    }
    const SpMat& matrix() const { return pattern_; }

private:
    static SpMat structural(const SpMat& m)
    {
        SpMat s = m;
        for (int k = 0; k < s.outerSize(); ++k)
            for (SpMat::InnerIterator it(s, k); it; ++it) it.valueRef() = 1.0;
        return s;
    }
    std::ptrdiff_t find(Eigen::Index row, Eigen::Index col) const
    {
        const int* inner = pattern_.innerIndexPtr();
        const int* outer = pattern_.outerIndexPtr();
        const int* b = inner + outer[col];
        const int* e = inner + outer[col + 1];
        const int* p = std::lower_bound(b, e, static_cast<int>(row));
        if (p == e || *p != row) throw PreconditionViolated("entry outside the assembly pattern");
        return p - inner;
    }
    std::vector<std::ptrdiff_t> slots(const SpMat& m) const
    {
        std::vector<std::ptrdiff_t> out;
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it) out.push_back(find(it.row(), it.col()));
        return out;
    }
    void add_scaled(const SpMat& m, const std::vector<std::ptrdiff_t>& slot, double c)
    {
        double* v = pattern_.valuePtr();
        std::size_t j = 0;
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it, ++j) v[slot[j]] += c * it.value();
    }

    const DiscreteOperators& ops_;
    SpMat pattern_;
    std::vector<std::ptrdiff_t> lap_slot_;
    std::vector<std::vector<std::ptrdiff_t>> d_slot_;
    std::vector<std::ptrdiff_t> diag_slot_;
    std::vector<std::ptrdiff_t> boundary_slot_;
};

}  // namespace mfg
