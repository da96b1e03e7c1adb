#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <mfgdecode/acceptance.hpp>
#include <mfgdecode/config.hpp>

namespace fs = std::filesystem;
using namespace mfg;

namespace {

enum Exit { Ok = 0, ConfigFailure = 2, SolverFailure = 3, AcceptanceFailure = 4 };

struct Common {
    std::string config;
    std::string out;
    std::int64_t seed = -1;
    int jobs = 0;
    int order = 0;
    std::vector<std::string> only;
};

struct Context {
    ExperimentConfig cfg;
    fs::path out;
    RunStamp stamp;
    int jobs = 1;

    void log(const std::string& s) const
    {
        if (cfg.run.verbosity > 0) std::cerr << s << '\n';
    }
};

Context open(const Common& c)
{
    Context ctx{load_config(c.config), {}, {}, 1};
    if (c.seed >= 0) ctx.cfg.run.seed = static_cast<std::uint64_t>(c.seed);
    if (c.jobs > 0) ctx.cfg.run.jobs = c.jobs;
    ctx.out = c.out.empty() ? ctx.cfg.run.out : fs::path(c.out);
    ctx.jobs = ctx.cfg.run.jobs;
    ctx.stamp = ctx.cfg.stamp();
    fs::create_directories(ctx.out);
    return ctx;
}

void write_json(const fs::path& p, const json& j)
{
    std::ofstream os(p);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed for " + p.string());
}

json stamp_json(const RunStamp& s) { return {{"config_hash", s.config_hash}, {"seed", s.seed}}; }

void save_record(const fs::path& dir, const std::string& stem, const CauchyRecord& r, const RunStamp& s)
{
    save(dir / (stem + "_u_trace.bin"), r.u_trace, s, stem);
    save(dir / (stem + "_u_gradient.bin"), r.u_gradient, s, stem);
    save(dir / (stem + "_m_trace.bin"), r.m_trace, s, stem);
    save(dir / (stem + "_m_gradient.bin"), r.m_gradient, s, stem);
}

int cmd_stationary(const Context& ctx)
{
    const auto& st = ctx.cfg.state;
    save(ctx.out / "u0.bin", st.u0, ctx.stamp, "u0");
    save(ctx.out / "m0.bin", st.m0, ctx.stamp, "m0");
    write_csv(ctx.out / "u0.csv", st.u0, ctx.stamp, "u0");
    write_csv(ctx.out / "m0.csv", st.m0, ctx.stamp, "m0");
    const auto [ru, rm] = stationary_residual(st, ctx.cfg.metric);
    const Grid& g = ctx.cfg.metric.grid();
    std::vector<std::string> header{"x"};
    if (g.dim() == 2) header.push_back("y");
    header.insert(header.end(), {"residual_u", "residual_m"});
    CsvWriter w(ctx.out / "stationary_residual.csv", ctx.stamp, header);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const Point x = g.point(i);
        std::vector<double> row{x[0]};
        if (g.dim() == 2) row.push_back(x[1]);
        row.insert(row.end(), {ru[i], rm[i]});
        w.row(row);
    }
    ctx.log("stationary residual u " + fmt(ru.max_abs()) + " m " + fmt(rm.max_abs()) + ", min m0 " + fmt(st.m0.min()));
    return Ok;
}

int cmd_forward(const Context& ctx)
{
    const auto& c = ctx.cfg;
    const MFGProblem prob = make_problem(c.metric, c.cost, c.state, c.perturbations);
    const std::size_t L = c.perturbations.size();
    // Base solve plus one solve per perturbation at the first-order extraction amplitude.
    std::vector<std::vector<double>> amps{std::vector<double>(L, 0.0)};
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> a(L, 0.0);
        a[l] = c.reconstruction.eps_higher;
        amps.push_back(a);
    }
    fs::create_directories(ctx.out / "dataset");
    CsvWriter summary(ctx.out / "forward.csv", ctx.stamp, {"record", "label", "amplitude", "iterations", "increment", "min_density"});
    for (std::size_t i = 0; i < amps.size(); ++i) {
        const MfgSolution s = solve_mfg(with_amplitudes(prob, amps[i]), c.solver);
        const std::string stem = "record_" + std::to_string(i);
        save(ctx.out / (stem + "_u.bin"), s.u, ctx.stamp, stem);
        save(ctx.out / (stem + "_m.bin"), s.m, ctx.stamp, stem);
        save_record(ctx.out / "dataset", stem, measure(s.u, s.m, amps[i]), ctx.stamp);
        summary.row({static_cast<double>(i), static_cast<double>(i), i ? amps[i][i - 1] : 0.0,
                     static_cast<double>(s.iterations), s.increment, s.min_density});
        if (s.negative_density) ctx.log("warning: negative density " + fmt(s.min_density) + " in " + stem);
        ctx.log(stem + ": " + std::to_string(s.iterations) + " fixed-point iterations");
    }
    return Ok;
}

int cmd_linearize(const Context& ctx, int order_override)
{
    const auto& c = ctx.cfg;
    const int N = order_override > 0 ? order_override : c.linearize.order;
    if (N < 1 || N > LinearizedSystem::max_order) throw ConfigError("/linearize/order must lie in 1..5");
    if (c.perturbations.empty()) throw ConfigError("/perturbations: linearization needs at least one perturbation");
    MFGProblem prob = make_problem(c.metric, c.cost, c.state, c.perturbations);
    for (auto& p : prob.perturbations) p.amplitude = 1.0;

    // Cascade along the combined direction: every perturbation with unit weight.
    const Grid& g = prob.grid();
    std::vector<double> gv(static_cast<std::size_t>(g.n_levels()) * g.boundary_count(), 0.0), hv(gv.size(), 0.0);
    for (const auto& p : prob.perturbations)
        for (std::size_t i = 0; i < gv.size(); ++i) {
            gv[i] += p.g.values()[i];
            hv[i] += p.h.values()[i];
        }
    const PerturbationSpec dir{1, BoundaryData(prob.grid_ptr(), BoundaryKind::Trace, gv),
                               BoundaryData(prob.grid_ptr(), BoundaryKind::Trace, hv), 0.0};
    const LinearizedSystem sys(c.state, c.metric);
    std::vector<MultiIndex> targets;
    for (int n = 1; n <= N; ++n) targets.push_back(MultiIndex(static_cast<std::size_t>(n), 1));
    const LinearizedFamily fam = solve_cascade(sys, c.cost, {dir}, targets);
    for (const auto& t : targets) {
        const auto& s = fam.at(t);
        const std::string tag = to_string(t);
        save(ctx.out / ("linearized_u_order" + std::to_string(t.size()) + ".bin"), s.u, ctx.stamp, tag);
        save(ctx.out / ("linearized_m_order" + std::to_string(t.size()) + ".bin"), s.m, ctx.stamp, tag);
    }
    const FrechetReport rep = frechet_report(prob, std::min(N, 3), c.linearize.ladder, c.solver);
    CsvWriter w(ctx.out / "frechet.csv", ctx.stamp, {"order", "eps", "remainder", "slope_to_next"});
    for (std::size_t n = 0; n < rep.remainder.size(); ++n)
        for (std::size_t i = 0; i < rep.ladder.size(); ++i)
            w.row({static_cast<double>(n + 1), rep.ladder[i], rep.remainder[n][i],
                   i < rep.slopes[n].size() ? rep.slopes[n][i] : std::numeric_limits<double>::quiet_NaN()});
    for (std::size_t n = 0; n < rep.slopes.size(); ++n) {
        std::string s = "order " + std::to_string(n + 1) + " slopes";
        for (double x : rep.slopes[n]) s += " " + fmt(x);
        ctx.log(s + (rep.order_pass[n] ? " pass" : " FAIL"));
    }
    return Ok;
}

int cmd_probe(const Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto& ps = c.probe;
    const GridPtr& g = c.grid;
    const VectorField q = drift(c.state.u0, c.metric);
    const VectorField phi = ps.use_drift ? q : VectorField::zeros(g);
    const ScalarField pot = ps.use_drift ? adjoint_potential(phi) : ScalarField::zeros(g);
    const ScalarField zero = ScalarField::zeros(g);
    CsvWriter w(ctx.out / "probe.csv", ctx.stamp,
                {"rho", "zeta_x", "zeta_y", "xi_x", "xi_y", "tau", "remainder_norm", "remainder_norm_backward",
                 "pairing_re", "pairing_im"});
    for (const Point& xi : ps.xi)
        for (double tau : ps.tau)
            for (double rho : ps.rho) {
                CGOParams p;
                p.rho = rho;
                p.zeta = ps.zeta;
                p.xi = xi;
                p.tau = tau;
                p.chi_center = ps.chi_center;
                p.chi_half_width = ps.chi_half_width;
                p.ray = ps.ray;
                const CGOResult f = cgo_forward(p, phi, pot), b = cgo_backward(p, phi, zero);
                // Pairing of the probes against the stationary drift.
                const Complex pr = normalized_drift_pairing(p, full_probe(f), full_probe(b), q);
                w.row({rho, p.zeta[0], p.zeta[1], xi[0], xi[1], tau, f.remainder_norm, b.remainder_norm, pr.real(), pr.imag()});
                ctx.log("rho " + fmt(rho) + " remainder " + fmt(f.remainder_norm) + " / " + fmt(b.remainder_norm));
            }
    return Ok;
}

json report_json(const ReconstructionReport& rep, const Context& ctx)
{
    json j;
    j["stamp"] = stamp_json(ctx.stamp);
    j["stages"] = rep.stages;
    j["errors"] = rep.errors;
    j["residuals"] = rep.residuals;
    if (rep.q) j["q"] = {{"mode", to_string(rep.q->mode)}, {"iterations", rep.q->iterations}, {"condition", rep.q->condition}};
    if (rep.kappa) j["kappa"] = {{"masked_nodes", rep.kappa->masked}};
    if (rep.m0) j["m0"] = {{"min", rep.m0->min_value}, {"negative", rep.m0->negative}};
    json f = json::array();
    for (std::size_t i = 0; i < rep.F.size(); ++i)
        f.push_back({{"order", i + 2}, {"lambda", rep.F[i].lambda}, {"excitation", rep.F[i].excitation},
                     {"condition", rep.F[i].condition}, {"residual", rep.F[i].residual}});
    j["F"] = f;
    return j;
}

int cmd_reconstruct(const Context& ctx)
{
    const auto& c = ctx.cfg;
    if (c.n_freq_u < 1 && c.reconstruction.mode == QMode::Variational)
        throw ConfigError("/perturbations/u_freq must be at least 1 for reconstruction");
    const Truth truth = c.truth();
    const Battery battery = c.battery();
    ctx.log("simulating the perturbation battery");
    const CauchyDataset ds = simulate_battery(truth, battery, c.reconstruction, c.solver, ctx.jobs);
    const PipelineData data = extract_data(ds, battery, c.reconstruction, c.run.seed);
    ctx.log("running the reconstruction pipeline on " + std::to_string(data.solves) + " solves");
    std::optional<ResponseOracle> oracle;
    if (c.reconstruction.mode == QMode::Probe) oracle = conjugated_response_oracle(drift(truth.state.u0, truth.A));
    ReconstructionReport rep;
    std::string failure;
    try {
        rep = run_pipeline(data, battery, c.base_metric(), c.reconstruction, &truth, oracle ? &*oracle : nullptr, ctx.jobs);
    } catch (const SolverError& e) {
        failure = e.what();
    }
    json j = report_json(rep, ctx);
    if (!failure.empty()) j["failure"] = failure;
    write_json(ctx.out / "report.json", j);
    CsvWriter w(ctx.out / "errors.csv", ctx.stamp, {"stage", "relative_l2_error", "residual"});
    for (const auto& s : rep.stages) {
        const auto e = rep.errors.find(s);
        const auto r = rep.residuals.find(s);
        w.row_strings({s, e == rep.errors.end() ? "" : fmt(e->second), r == rep.residuals.end() ? "" : fmt(r->second)});
    }
    if (rep.q) {
        save(ctx.out / "q.bin", rep.q->q, ctx.stamp, "q");
        write_csv(ctx.out / "q.csv", rep.q->q, ctx.stamp);
    }
    if (rep.u0) save(ctx.out / "u0.bin", *rep.u0, ctx.stamp, "u0");
    if (rep.kappa) {
        save(ctx.out / "kappa.bin", rep.kappa->kappa, ctx.stamp, "kappa");
        write_csv(ctx.out / "kappa.csv", rep.kappa->kappa, ctx.stamp, "kappa");
    }
    if (rep.m0) save(ctx.out / "m0.bin", rep.m0->m0, ctx.stamp, "m0");
    for (std::size_t i = 0; i < rep.F.size(); ++i) {
        const std::string name = "F" + std::to_string(i + 2);
        save(ctx.out / (name + ".bin"), rep.F[i].F, ctx.stamp, name);
        write_csv(ctx.out / (name + ".csv"), rep.F[i].F, ctx.stamp, name);
    }
    for (const auto& s : rep.stages) {
        const auto e = rep.errors.find(s);
        ctx.log(s + (e == rep.errors.end() ? "" : " error " + fmt(e->second)));
    }
    if (!failure.empty()) throw SolverError("reconstruction stopped after stage '" +
                                            (rep.stages.empty() ? std::string("none") : rep.stages.back()) + "': " + failure);
    return Ok;
}

int cmd_verify(const Context& ctx, const std::vector<std::string>& only)
{
    AcceptanceOptions opt;
    opt.jobs = ctx.jobs;
    opt.seed = ctx.cfg.run.seed;
    CsvWriter w(ctx.out / "acceptance.csv", ctx.stamp, {"criterion", "pass", "detail"});
    bool all = true;
    run_acceptance(opt, only, [&](const CriterionResult& r) {
        std::printf("%s %s: %s [%s] (%.1f s)\n", r.pass ? "PASS" : "FAIL", r.id.c_str(), r.title.c_str(), r.detail.c_str(), r.seconds);
        std::fflush(stdout);
        w.row_strings({r.id, r.pass ? "1" : "0", "\"" + r.detail + "\""});
        all = all && r.pass;
    });
    return all ? Ok : AcceptanceFailure;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Simulate quadratic mean-field games and decode their boundary measurements"};
    app.require_subcommand(1);
    Common c;
    auto add = [&](const char* name, const char* desc) {
        CLI::App* s = app.add_subcommand(name, desc);
        s->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        s->add_option("--out", c.out, "output directory (overrides run.out)");
        s->add_option("--seed", c.seed, "noise seed (overrides run.seed)");
        s->add_option("--jobs", c.jobs, "parallel width (overrides run.jobs)");
        return s;
    };
    CLI::App* st = add("stationary", "solve the stationary system");
    CLI::App* fw = add("forward", "solve the time-dependent system for each perturbation");
    CLI::App* li = add("linearize", "linearized cascade and Taylor remainder report");
    li->add_option("--order", c.order, "highest linearization order");
    CLI::App* pr = add("probe", "CGO remainder and pairing sweep");
    CLI::App* rc = add("reconstruct", "full reconstruction pipeline");
    CLI::App* vf = add("verify", "acceptance battery");
    vf->add_option("--only", c.only, "criteria to run, e.g. AC1 AC3");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Ok : ConfigFailure;
    }

    try {
        const Context ctx = open(c);
        if (st->parsed()) return cmd_stationary(ctx);
        if (fw->parsed()) return cmd_forward(ctx);
        if (li->parsed()) return cmd_linearize(ctx, c.order);
        if (pr->parsed()) return cmd_probe(ctx);
        if (rc->parsed()) return cmd_reconstruct(ctx);
        if (vf->parsed()) return cmd_verify(ctx, c.only);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ConfigFailure;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return ConfigFailure;
    } catch (const Error& e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return SolverFailure;
    }
    return Ok;
}
