#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "linearize.hpp"
#include "parallel.hpp"

namespace mfg {

/// Boundary Cauchy data of one solution pair: traces and full gradients on the boundary at every level.
struct CauchyRecord {
    BoundaryData u_trace;
    BoundaryData u_gradient;
    BoundaryData m_trace;
    BoundaryData m_gradient;
    std::vector<double> amplitudes;

    BoundaryData u_normal() const { return normal_component(u_gradient); }
    BoundaryData m_normal() const { return normal_component(m_gradient); }

    /// Returns sa*a + sb*b record-wise; amplitudes are taken from a.
    static CauchyRecord combine(const CauchyRecord& a, const CauchyRecord& b, double sa, double sb)
    {
        return {BoundaryData::combine(a.u_trace, b.u_trace, sa, sb),
                BoundaryData::combine(a.u_gradient, b.u_gradient, sa, sb),
                BoundaryData::combine(a.m_trace, b.m_trace, sa, sb),
                BoundaryData::combine(a.m_gradient, b.m_gradient, sa, sb), a.amplitudes};
    }
    double max_abs() const
    {
        return std::max({u_trace.max_abs(), u_gradient.max_abs(), m_trace.max_abs(), m_gradient.max_abs()});
    }
};

/// Records of one configuration on a perturbation battery, keyed by amplitude vectors.
struct CauchyDataset {
    std::vector<CauchyRecord> records;

    const CauchyRecord* find(const std::vector<double>& amplitudes, double tol = 1e-14) const
    {
        for (const auto& r : records) {
            if (r.amplitudes.size() != amplitudes.size()) continue;
            bool same = true;
            for (std::size_t i = 0; i < amplitudes.size() && same; ++i)
                same = std::abs(r.amplitudes[i] - amplitudes[i]) <= tol;
            if (same) return &r;
        }
        return nullptr;
    }
};

/// Measurement map of a solution pair.
inline CauchyRecord measure(const SpaceTimeField& u, const SpaceTimeField& m, std::vector<double> amplitudes = {})
{
    return {trace(u), boundary_gradient(u), trace(m), boundary_gradient(m), std::move(amplitudes)};
}

inline CauchyRecord measure(const LinearizedSolution& s) { return measure(s.u, s.m); }

/// Amplitude vectors of the central mixed stencil for d^k / d eps_{l1} ... d eps_{lk}.
inline std::vector<std::pair<std::vector<double>, double>> stencil_points(const MultiIndex& target, std::size_t n_labels,
                                                                           double eps)
{
    const int k = static_cast<int>(target.size());
    std::vector<std::pair<std::vector<double>, double>> out;
    const double denom = std::pow(2.0 * eps, k);
    for (unsigned signs = 0; signs < (1u << k); ++signs) {
        std::vector<double> a(n_labels, 0.0);
        double w = 1.0;
        for (int j = 0; j < k; ++j) {
            const double s = (signs & (1u << j)) ? -1.0 : 1.0;
            w *= s;
            a[static_cast<std::size_t>(target[j] - 1)] += s * eps;
        }
        out.emplace_back(std::move(a), w / denom);
    }
    return out;
}

/// All distinct amplitude vectors needed for a set of targets (plus the zero vector).
inline std::vector<std::vector<double>> required_amplitudes(const std::vector<MultiIndex>& targets, std::size_t n_labels,
                                                            double eps)
{
    std::vector<std::vector<double>> out{std::vector<double>(n_labels, 0.0)};
    auto known = [&](const std::vector<double>& a) {
        for (const auto& b : out) {
            bool same = true;
            for (std::size_t i = 0; i < a.size() && same; ++i) same = std::abs(a[i] - b[i]) <= 1e-14;
            if (same) return true;
        }
        return false;
    };
    for (const auto& t : targets)
        for (auto& [a, w] : stencil_points(t, n_labels, eps))
            if (!known(a)) out.push_back(a);
    return out;
}

/// Solves the problem at every amplitude vector and measures the result.
inline CauchyDataset simulate_dataset(const MFGProblem& problem, const std::vector<std::vector<double>>& amplitudes,
                                      const MfgSolverOptions& opt = {}, int jobs = 1)
{
    CauchyDataset ds;
    ds.records.resize(amplitudes.size(),
                      CauchyRecord{BoundaryData::zeros(problem.grid_ptr()),
                                   BoundaryData::zeros(problem.grid_ptr(), BoundaryKind::Gradient),
                                   BoundaryData::zeros(problem.grid_ptr()),
                                   BoundaryData::zeros(problem.grid_ptr(), BoundaryKind::Gradient),
                                   {}});
    parallel_for(amplitudes.size(), jobs, [&](std::size_t i) {
        const MfgSolution s = solve_mfg(with_amplitudes(problem, amplitudes[i]), opt);
        ds.records[i] = measure(s.u, s.m, amplitudes[i]);
    });
    return ds;
}

/// Mixed central difference of the measured records, approximating the order-|target| linearized data.
inline CauchyRecord extract_derivative(const CauchyDataset& ds, const MultiIndex& target, double eps)
{
    if (ds.records.empty()) throw InsufficientData("dataset is empty");
    const std::size_t n_labels = ds.records.front().amplitudes.size();
    std::optional<CauchyRecord> acc;
    for (auto& [a, w] : stencil_points(target, n_labels, eps)) {
        const CauchyRecord* r = ds.find(a);
        if (!r) throw InsufficientData("dataset lacks the record for stencil point of " + to_string(target));
        acc = acc ? CauchyRecord::combine(*acc, *r, 1.0, w) : CauchyRecord::combine(*r, *r, w, 0.0);
    }
    acc->amplitudes.assign(n_labels, 0.0);
    return *acc;
}

/// Additive Gaussian noise with standard deviation level * RMS of each boundary record.
/// Returns the noisy record and the expected noise norm per record (u-trace, u-gradient, m-trace, m-gradient).
inline std::pair<CauchyRecord, std::array<double, 4>> add_noise(const CauchyRecord& r, double level, std::mt19937_64& rng)
{
    std::array<double, 4> norms{};
    auto noisy = [&](const BoundaryData& b, int slot) {
        const double sd = level * b.rms();
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> v = b.values();
        for (double& x : v) x += sd * dist(rng);
        norms[static_cast<std::size_t>(slot)] = sd * std::sqrt(static_cast<double>(v.size()));
        return BoundaryData(b.grid_ptr(), b.kind(), std::move(v));
    };
    CauchyRecord out{noisy(r.u_trace, 0), noisy(r.u_gradient, 1), noisy(r.m_trace, 2), noisy(r.m_gradient, 3),
                     r.amplitudes};
    return {out, norms};
}

}  // namespace mfg
