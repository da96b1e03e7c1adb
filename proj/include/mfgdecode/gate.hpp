#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "pipeline.hpp"

namespace mfg {

struct GateOptions {
    double eps = 1e-2;
    double forward_tol = 1e-9;       ///< PASS-FORWARD bound on the measurement distance of equal configs
    double config_tol = 1e-12;       ///< configs closer than this count as equal
    double separation_factor = 10.0;
    MfgSolverOptions solver{};
    int jobs = 1;
};

struct GateReport {
    /// Sup distance per measured component (u-trace, u-gradient, m-trace, m-gradient) over all battery records.
    std::array<double, 4> measurement{};
    double measurement_distance = 0.0;
    double config_distance = 0.0;
    double separation = 0.0;   ///< sup distance of the extracted second-order u-gradient data
    double noise_floor = 0.0;  ///< eps versus eps/2 extraction difference for the first config
    bool configs_equal = false;
    bool pass_forward = true;
    bool pass_inverse = true;
};

inline double truth_distance(const Truth& a, const Truth& b)
{
    auto rel = [](const ScalarField& x, const ScalarField& y) {
        const double s = std::max(y.max_abs(), 1.0);
        return (x - y).max_abs() / s;
    };
    double d = std::max({rel(a.A.kappa(), b.A.kappa()), rel(a.state.u0, b.state.u0), rel(a.state.m0, b.state.m0)});
    const int K = std::max(a.F.order(), b.F.order());
    for (int k = 2; k <= K; ++k) d = std::max(d, rel(a.F.coefficient(k), b.F.coefficient(k)));
    return d;
}

namespace detail {

inline std::array<double, 4> record_distance(const CauchyRecord& a, const CauchyRecord& b)
{
    auto diff = [](const BoundaryData& x, const BoundaryData& y) {
        return BoundaryData::combine(x, y, 1.0, -1.0).max_abs();
    };
    return {diff(a.u_trace, b.u_trace), diff(a.u_gradient, b.u_gradient), diff(a.m_trace, b.m_trace),
            diff(a.m_gradient, b.m_gradient)};
}

}  // namespace detail

/// Simulates both configurations on the m-perturbations of the battery (first and second order stencils)
/// and compares the measurement maps.
inline GateReport uniqueness_gate(const Truth& c1, const Truth& c2, const Battery& battery, const GateOptions& opt = {})
{
    const std::size_t L = battery.perts.size();
    std::vector<MultiIndex> first, second;
    for (int l : battery.m_labels) first.push_back({l});
    second = multisets(battery.m_labels, 2);
    auto all = first;
    all.insert(all.end(), second.begin(), second.end());

    auto amps = required_amplitudes(all, L, opt.eps);
    for (const auto& a : required_amplitudes(second, L, 0.5 * opt.eps)) {
        bool dup = false;
        for (const auto& b : amps) dup = dup || a == b;
        if (!dup) amps.push_back(a);
    }
    const auto ds1 = simulate_dataset(make_problem(c1.A, c1.F, c1.state, battery.perts), amps, opt.solver, opt.jobs);
    const auto ds2 = simulate_dataset(make_problem(c2.A, c2.F, c2.state, battery.perts), amps, opt.solver, opt.jobs);

    GateReport rep;
    for (std::size_t i = 0; i < ds1.records.size(); ++i) {
        const auto d = detail::record_distance(ds1.records[i], ds2.records[i]);
        for (std::size_t c = 0; c < 4; ++c) rep.measurement[c] = std::max(rep.measurement[c], d[c]);
    }
    rep.measurement_distance = *std::max_element(rep.measurement.begin(), rep.measurement.end());
    rep.config_distance = truth_distance(c1, c2);
    rep.configs_equal = rep.config_distance <= opt.config_tol;

    for (const auto& t : second) {
        const CauchyRecord a = extract_derivative(ds1, t, opt.eps);
        const CauchyRecord b = extract_derivative(ds2, t, opt.eps);
        const CauchyRecord half = extract_derivative(ds1, t, 0.5 * opt.eps);
        rep.separation = std::max(rep.separation, detail::record_distance(a, b)[1]);
        rep.noise_floor = std::max(rep.noise_floor, detail::record_distance(a, half)[1]);
    }
    rep.pass_forward = !rep.configs_equal || rep.measurement_distance <= opt.forward_tol;
    rep.pass_inverse = rep.configs_equal || rep.measurement_distance > opt.separation_factor * rep.noise_floor;
    return rep;
}

}  // namespace mfg
