#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "inverse.hpp"
#include "scenario.hpp"

namespace mfg {

/// Perturbation battery: u-perturbations first, then m-perturbations; labels start at 1.
struct Battery {
    std::vector<PerturbationSpec> perts;
    std::vector<int> u_labels;
    std::vector<int> m_labels;
};

inline Battery make_battery(const GridPtr& g, int n_freq_u, int n_freq_m)
{
    Battery b;
    for (auto& p : u_battery(g, n_freq_u)) {
        p.index = static_cast<int>(b.perts.size()) + 1;
        b.u_labels.push_back(p.index);
        b.perts.push_back(std::move(p));
    }
    for (auto& p : m_battery(g, n_freq_m)) {
        p.index = static_cast<int>(b.perts.size()) + 1;
        b.m_labels.push_back(p.index);
        b.perts.push_back(std::move(p));
    }
    return b;
}

/// All sorted multi-indices of size k over the given labels.
inline std::vector<MultiIndex> multisets(const std::vector<int>& labels, int k)
{
    std::vector<MultiIndex> out;
    MultiIndex cur;
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (static_cast<int>(cur.size()) == k) {
            out.push_back(cur);
            return;
        }
        for (std::size_t i = start; i < labels.size(); ++i) {
            cur.push_back(labels[i]);
            rec(i);
            cur.pop_back();
        }
    };
    rec(0);
    return out;
}

/// Measured data of one experiment after extraction (and optional noise).
struct PipelineData {
    CauchyRecord base;
    std::vector<CauchyRecord> first;                 ///< one per u-label
    std::map<int, std::vector<OrderData>> higher;    ///< order -> data over m-label multisets
    std::size_t solves = 0;
};

namespace detail {

inline std::map<int, std::vector<MultiIndex>> higher_targets(const Battery& battery, int max_order)
{
    std::map<int, std::vector<MultiIndex>> high;
    for (int k = 2; k <= max_order; ++k) high[k] = multisets(battery.m_labels, k);
    return high;
}

inline std::vector<MultiIndex> first_targets(const Battery& battery)
{
    std::vector<MultiIndex> out;
    for (int l : battery.u_labels) out.push_back(MultiIndex{l});
    return out;
}

}  // namespace detail

/// Solves the truth at every stencil point the pipeline needs.
inline CauchyDataset simulate_battery(const Truth& truth, const Battery& battery, const ReconstructionConfig& cfg,
                                      const MfgSolverOptions& opt = {}, int jobs = 1)
{
    const std::size_t L = battery.perts.size();
    const MFGProblem prob = make_problem(truth.A, truth.F, truth.state, battery.perts);
    auto amps = required_amplitudes(detail::first_targets(battery), L, cfg.eps_first);
    for (const auto& [k, ts] : detail::higher_targets(battery, cfg.max_order))
        for (const auto& a : required_amplitudes(ts, L, cfg.eps_higher)) {
            bool dup = false;
            for (const auto& b : amps) dup = dup || a == b;
            if (!dup) amps.push_back(a);
        }
    return simulate_dataset(prob, amps, opt, jobs);
}

/// Extracts the derivative records used by the pipeline and applies the configured noise.
inline PipelineData extract_data(const CauchyDataset& ds, const Battery& battery, const ReconstructionConfig& cfg,
                                 std::uint64_t seed = 0)
{
    const std::size_t L = battery.perts.size();
    const CauchyRecord* base = ds.find(std::vector<double>(L, 0.0));
    if (!base) throw InsufficientData("dataset lacks the unperturbed record");
    PipelineData out{*base, {}, {}, ds.records.size()};
    std::mt19937_64 rng(seed);
    const bool noisy = cfg.noise_level > 0.0;
    if (noisy) out.base = add_noise(out.base, cfg.noise_level, rng).first;
    for (const auto& t : detail::first_targets(battery)) {
        CauchyRecord r = extract_derivative(ds, t, cfg.eps_first);
        if (noisy) r = add_noise(r, cfg.noise_level, rng).first;
        out.first.push_back(std::move(r));
    }
    for (const auto& [k, ts] : detail::higher_targets(battery, cfg.max_order))
        for (const auto& t : ts) {
            CauchyRecord r = extract_derivative(ds, t, cfg.eps_higher);
            double sigma = 0.0;
            if (noisy) {
                sigma = cfg.noise_level * r.u_gradient.rms();
                r = add_noise(r, cfg.noise_level, rng).first;
            }
            out.higher[k].push_back({t, std::move(r), sigma});
        }
    return out;
}

inline PipelineData generate_data(const Truth& truth, const Battery& battery, const ReconstructionConfig& cfg,
                                  const MfgSolverOptions& opt = {}, int jobs = 1, std::uint64_t seed = 0)
{
    return extract_data(simulate_battery(truth, battery, cfg, opt, jobs), battery, cfg, seed);
}

struct ReconstructionReport {
    std::optional<QRecovery> q;
    std::optional<ScalarField> u0;
    std::optional<KappaRecovery> kappa;
    std::optional<M0Recovery> m0;
    std::vector<FRecovery> F;  ///< orders 2, 3, ...
    std::map<std::string, double> errors;     ///< stage -> relative L2 error against the truth
    std::map<std::string, double> residuals;  ///< stage -> residual
    std::vector<std::string> stages;
};

/// Relative L2 error over the nodes where keep[i] holds.
inline double relative_l2_masked(const ScalarField& a, const ScalarField& b, const std::vector<bool>& drop)
{
    const Grid& g = a.grid();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (drop[i]) continue;
        const double w = g.volume_weight(i);
        num += w * (a[i] - b[i]) * (a[i] - b[i]);
        den += w * b[i] * b[i];
    }
    return std::sqrt(num / (den > 0.0 ? den : 1.0));
}

/// Value function error after removing the mean boundary offset.
inline double gauge_fixed_error(const ScalarField& u, const ScalarField& truth)
{
    const Grid& g = u.grid();
    double off = 0.0;
    for (std::size_t node : g.boundary_nodes()) off += u[node] - truth[node];
    off /= static_cast<double>(g.boundary_count());
    return relative_l2(u + (-off), truth);
}

/// q -> u0 -> kappa -> m0 -> F2..FK. Stages stop at the first failure, which is rethrown.
inline ReconstructionReport run_pipeline(const PipelineData& data, const Battery& battery, const MetricField& base_metric,
                                         const ReconstructionConfig& cfg, const Truth* truth = nullptr,
                                         const ResponseOracle* oracle = nullptr, int jobs = 1)
{
    ReconstructionReport rep;
    const GridPtr gp = data.base.u_trace.grid_ptr();

    // Dirichlet inputs are prescribed by the experiment, so the drift fit uses them instead of measured traces.
    std::vector<CauchyRecord> first = data.first;
    for (std::size_t i = 0; i < first.size() && i < battery.u_labels.size(); ++i) {
        const auto& pert = battery.perts[static_cast<std::size_t>(battery.u_labels[i] - 1)];
        first[i].u_trace = pert.g;
        first[i].m_trace = pert.h;
    }
    rep.q = recover_q(first, data.base, base_metric, cfg, oracle, jobs);
    rep.stages.push_back("q");
    rep.residuals["q"] = rep.q->residual;
    const VectorField& q = rep.q->q;

    rep.u0 = recover_u0(q, data.base.u_trace);
    rep.stages.push_back("u0");
    rep.kappa = recover_kappa(q, *rep.u0, base_metric, cfg.nondegeneracy_floor);
    rep.stages.push_back("kappa");
    rep.m0 = recover_m0(q, data.base.m_trace);
    rep.stages.push_back("m0");

    if (truth) {
        rep.errors["q"] = relative_l2(q, drift(truth->state.u0, truth->A));
        rep.errors["u0"] = gauge_fixed_error(*rep.u0, truth->state.u0);
        rep.errors["kappa"] = relative_l2_masked(rep.kappa->kappa, truth->A.kappa(), rep.kappa->mask);
        rep.errors["m0"] = relative_l2(rep.m0->m0, truth->state.m0);
    }

    if (cfg.max_order >= 2 && !data.higher.empty()) {
        const MetricField A = base_metric.with_kappa(rep.kappa->kappa);
        const StationaryState state{*rep.u0, rep.m0->m0};
        const LinearizedSystem sys(state, A);
        FOptions fo;
        fo.lambda = cfg.lambda_F;
        fo.l2_weight = cfg.l2_weight;
        fo.discrepancy = cfg.noise_level > 0.0;
        fo.discrepancy_factor = cfg.discrepancy_factor;
        fo.excitation_floor = cfg.excitation_floor;
        fo.condition_cap = cfg.condition_cap;
        std::vector<ScalarField> coefs;
        for (int k = 2; k <= cfg.max_order; ++k) {
            const auto it = data.higher.find(k);
            if (it == data.higher.end()) break;
            const RunningCost known = coefs.empty() ? RunningCost::zero(state.m0) : RunningCost(state.m0, coefs);
            FRecovery f = recover_Fk(sys, known, k, battery.perts, it->second, fo);
            const std::string name = "F" + std::to_string(k);
            rep.residuals[name] = f.residual;
            if (truth) rep.errors[name] = relative_l2(f.F, truth->F.coefficient(k));
            coefs.push_back(f.F);
            rep.F.push_back(std::move(f));
            rep.stages.push_back(name);
        }
    }
    return rep;
}

}  // namespace mfg
