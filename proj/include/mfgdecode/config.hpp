#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "io.hpp"
#include "pipeline.hpp"
#include "probes.hpp"

namespace mfg {

struct LinearizeSettings {
    int order = 2;
    std::vector<double> ladder{1e-2, 5e-3, 2.5e-3};
};

struct ProbeSettings {
    std::vector<double> rho{4.0, 8.0, 16.0};
    Point zeta{1.0, 0.0};
    std::vector<Point> xi{{0.0, 0.0}};
    std::vector<double> tau{0.0};
    double chi_center = 0.5;
    double chi_half_width = 0.3;
    RayChoice ray = RayChoice::Zeta;
    bool use_drift = true;  ///< probe drift is the stationary q; zero coefficients otherwise
};

struct RunSettings {
    std::filesystem::path out = "out";
    std::uint64_t seed = 0;
    int verbosity = 1;
    int jobs = 1;
};

/// Parsed experiment description.
struct ExperimentConfig {
    json source;
    GridPtr grid;
    MetricField metric;  ///< ground-truth metric
    RunningCost cost;
    StationaryState state;
    std::vector<PerturbationSpec> perturbations;
    int n_freq_u = 0;
    int n_freq_m = 0;
    MfgSolverOptions solver;
    ReconstructionConfig reconstruction;
    LinearizeSettings linearize;
    ProbeSettings probe;
    RunSettings run;

    Truth truth() const { return Truth{metric, cost, state}; }
    MetricField base_metric() const { return metric.with_kappa(ScalarField::constant(grid, 1.0)); }
    Battery battery() const { return make_battery(grid, n_freq_u, n_freq_m); }
    RunStamp stamp() const { return {config_hash(source), run.seed}; }
};

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& path)
{
    if (!j.is_object() || !j.contains(key)) throw ConfigError("missing " + path + "/" + key);
    return j.at(key);
}

template <class T>
T get_or(const json& j, const std::string& key, const std::string& path, T fallback)
{
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type at " + path + "/" + key);
    }
}

inline Point point_from(const json& j, const std::string& path)
{
    if (!j.is_array() || j.empty() || j.size() > 2) throw ConfigError(path + " must be an array of 1 or 2 numbers");
    Point p{0.0, 0.0};
    for (std::size_t a = 0; a < j.size(); ++a) {
        if (!j[a].is_number()) throw ConfigError(path + " must hold numbers");
        p[a] = j[a].get<double>();
    }
    return p;
}

/// Nodal field from a number, {"values": [...]}, or {"type": "sin"|"cos", "k": [...], "amplitude", "offset"}
/// meaning offset + amplitude * f(pi * sum_a k_a x_a).
inline ScalarField field_from(const json& j, const GridPtr& g, const std::string& path)
{
    if (j.is_number()) return ScalarField::constant(g, j.get<double>());
    if (!j.is_object()) throw ConfigError(path + " must be a number or an object");
    if (j.contains("values")) {
        std::vector<double> v;
        try {
            v = j.at("values").get<std::vector<double>>();
        } catch (const json::exception&) {
            throw ConfigError(path + "/values must be an array of numbers");
        }
        if (v.size() != g->node_count()) throw ConfigError(path + "/values must have one entry per node");
        return ScalarField(g, std::move(v));
    }
    const std::string type = get_or<std::string>(j, "type", path, "");
    if (type != "sin" && type != "cos") throw ConfigError(path + "/type must be \"sin\" or \"cos\"");
    Point k{0.0, 0.0};
    if (j.contains("k")) {
        if (j.at("k").is_number()) k[0] = j.at("k").get<double>();
        else k = point_from(j.at("k"), path + "/k");
    }
    const double amp = get_or(j, "amplitude", path, 1.0), off = get_or(j, "offset", path, 0.0);
    const bool sine = type == "sin";
    return ScalarField::from_function(g, [=](const Point& x) {
        const double ph = std::numbers::pi * (k[0] * x[0] + k[1] * x[1]);
        return off + amp * (sine ? std::sin(ph) : std::cos(ph));
    });
}

inline GridPtr parse_grid(const json& j)
{
    const std::string path = "/grid";
    const int dim = get_or(j, "dim", path, 1);
    if (dim != 1 && dim != 2) throw ConfigError(path + "/dim must be 1 or 2");
    std::vector<Interval> ext;
    if (j.contains("extent")) {
        for (const auto& e : j.at("extent")) {
            if (!e.is_array() || e.size() != 2) throw ConfigError(path + "/extent entries must be [lo, hi]");
            ext.push_back({e[0].get<double>(), e[1].get<double>()});
        }
    } else {
        ext.assign(static_cast<std::size_t>(dim), Interval{0.0, 1.0});
    }
    std::vector<int> n;
    const json& nc = require(j, "n_cells", path);
    if (nc.is_number_integer()) n.assign(static_cast<std::size_t>(dim), nc.get<int>());
    else n = get_or<std::vector<int>>(j, "n_cells", path, {});
    if (static_cast<int>(ext.size()) != dim || static_cast<int>(n.size()) != dim)
        throw ConfigError(path + ": extent and n_cells must have dim entries");
    try {
        return make_grid(ext, n, get_or(j, "T", path, 1.0), get_or(j, "n_time", path, 64));
    } catch (const PreconditionViolated& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline MetricField parse_metric(const json& j, const GridPtr& g)
{
    const std::string path = "/metric";
    std::vector<double> base = MetricField::identity_base(*g);
    if (j.contains("base")) {
        const json& b = j.at("base");
        if (b.is_string()) {
            if (b.get<std::string>() != "identity") throw ConfigError(path + "/base: unknown tag " + b.dump());
        } else if (b.is_object() && b.contains("values")) {
            base = b.at("values").get<std::vector<double>>();
            const std::size_t need = g->node_count() * static_cast<std::size_t>(g->dim() * g->dim());
            if (base.size() != need) throw ConfigError(path + "/base/values must hold dim*dim entries per node");
        } else {
            throw ConfigError(path + "/base must be \"identity\" or {\"values\": [...]}");
        }
    }
    const ScalarField kappa = j.contains("kappa") ? field_from(j.at("kappa"), g, path + "/kappa") : ScalarField::constant(g, 1.0);
    try {
        return MetricField(g, std::move(base), kappa);
    } catch (const PreconditionViolated& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline StationaryState parse_stationary(const json& j, const MetricField& A)
{
    const std::string path = "/stationary";
    const GridPtr& g = A.grid_ptr();
    const std::string type = get_or<std::string>(j, "type", path, "boundary");
    if (type == "closed_form_1d") {
        if (g->dim() != 1) throw ConfigError(path + "/type closed_form_1d requires dim = 1");
        const ScalarField& kap = A.kappa();
        // Kappa enters the closed form through its nodal cubic interpolant.
        const Grid& gr = *g;
        auto kfun = [&gr, kap](double x) {
            const double s = std::clamp((x - gr.extent(0).lo) / gr.h(0), 0.0, static_cast<double>(gr.n_cells(0) - 1));
            const int i = std::clamp(static_cast<int>(std::floor(s)), 1, gr.n_cells(0) - 3);
            const double t = s - i;
            const double a = kap[i - 1], b = kap[i], c = kap[i + 1], d = kap[i + 2];
            return b + 0.5 * t * (c - a + t * (2.0 * a - 5.0 * b + 4.0 * c - d + t * (3.0 * (b - c) + d - a)));
        };
        const StationaryFamily1D fam(kfun, g->extent(0), get_or(j, "v0", path, 0.5), get_or(j, "u_left", path, 0.0),
                                     get_or(j, "m_left", path, 1.0), get_or(j, "flux", path, -0.3));
        const StationaryState seed{ScalarField::from_function(g, [&](const Point& p) { return fam.u0(p[0]); }),
                                   ScalarField::from_function(g, [&](const Point& p) { return fam.m0(p[0]); })};
        return solve_stationary(A, boundary_values(seed.u0), boundary_values(seed.m0), seed);
    }
    if (type == "boundary") {
        const ScalarField u = field_from(require(j, "u", path), g, path + "/u");
        const ScalarField m = field_from(require(j, "m", path), g, path + "/m");
        const auto ub = boundary_values(u), mb = boundary_values(m);
        const StationaryState seed{harmonic_extension(g, ub), harmonic_extension(g, mb)};
        return solve_stationary(A, ub, mb, seed);
    }
    throw ConfigError(path + "/type must be \"closed_form_1d\" or \"boundary\"");
}

inline MfgSolverOptions parse_solver(const json& j)
{
    const std::string path = "/solver";
    MfgSolverOptions o;
    o.theta = get_or(j, "theta", path, o.theta);
    o.tol_fp = get_or(j, "tol_fp", path, o.tol_fp);
    o.max_iter = get_or(j, "max_iter", path, o.max_iter);
    o.tol_newton = get_or(j, "tol_newton", path, o.tol_newton);
    o.max_newton = get_or(j, "max_newton", path, o.max_newton);
    o.amplitude_factor = get_or(j, "amplitude_factor", path, o.amplitude_factor);
    if (!(o.theta > 0.0 && o.theta <= 1.0)) throw ConfigError(path + "/theta must lie in (0, 1]");
    if (!(o.tol_fp > 0.0)) throw ConfigError(path + "/tol_fp must be positive");
    return o;
}

inline RayChoice parse_ray(const json& j, const std::string& path)
{
    const std::string r = get_or<std::string>(j, "ray", path, "zeta");
    if (r == "zeta") return RayChoice::Zeta;
    if (r == "xi") return RayChoice::Xi;
    throw ConfigError(path + "/ray must be \"zeta\" or \"xi\"");
}

inline ReconstructionConfig parse_reconstruction(const json& j, const Grid& g)
{
    const std::string path = "/reconstruction";
    ReconstructionConfig c;
    const std::string mode = get_or<std::string>(j, "mode", path, "variational");
    if (mode == "variational") c.mode = QMode::Variational;
    else if (mode == "probe") c.mode = QMode::Probe;
    else throw ConfigError(path + "/mode must be \"variational\" or \"probe\"");
    c.lambda_q = get_or(j, "lambda_q", path, c.lambda_q);
    c.max_gn_iter = get_or(j, "max_gn_iter", path, c.max_gn_iter);
    c.condition_cap = get_or(j, "condition_cap", path, c.condition_cap);
    c.rho_ladder = get_or(j, "rho_ladder", path, c.rho_ladder);
    c.max_frequency = get_or(j, "max_frequency", path, c.max_frequency);
    c.probe_iterations = get_or(j, "probe_iterations", path, c.probe_iterations);
    c.chi_center = get_or(j, "chi_center", path, c.chi_center);
    c.chi_half_width = get_or(j, "chi_half_width", path, c.chi_half_width);
    c.ray = parse_ray(j, path);
    c.nondegeneracy_floor = get_or(j, "nondegeneracy_floor", path, c.nondegeneracy_floor);
    c.lambda_F = get_or(j, "lambda_F", path, c.lambda_F);
    c.l2_weight = get_or(j, "l2_weight", path, c.l2_weight);
    c.discrepancy_factor = get_or(j, "discrepancy_factor", path, c.discrepancy_factor);
    c.eps_first = get_or(j, "eps_first", path, c.eps_first);
    c.eps_higher = get_or(j, "eps_higher", path, c.eps_higher);
    c.noise_level = get_or(j, "noise_level", path, c.noise_level);
    c.max_order = get_or(j, "max_order", path, c.max_order);
    try {
        validate(c, g);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

inline ProbeSettings parse_probe(const json& j, int dim)
{
    const std::string path = "/probe";
    ProbeSettings p;
    p.rho = get_or(j, "rho", path, p.rho);
    if (j.contains("zeta")) p.zeta = point_from(j.at("zeta"), path + "/zeta");
    if (j.contains("xi")) {
        p.xi.clear();
        for (const auto& x : j.at("xi")) p.xi.push_back(point_from(x, path + "/xi"));
    }
    p.tau = get_or(j, "tau", path, p.tau);
    p.chi_center = get_or(j, "chi_center", path, p.chi_center);
    p.chi_half_width = get_or(j, "chi_half_width", path, p.chi_half_width);
    p.ray = parse_ray(j, path);
    p.use_drift = get_or(j, "use_drift", path, p.use_drift);
    if (dim == 1) p.zeta[1] = 0.0;
    for (double r : p.rho)
        if (!(r > 0.0)) throw ConfigError(path + "/rho entries must be positive");
    return p;
}

}  // namespace detail

/// Builds an experiment from a parsed JSON document. Errors name the offending path.
inline ExperimentConfig parse_config(const json& j)
{
    if (!j.is_object()) throw ConfigError("/: config must be a JSON object");
    const json empty = json::object();
    auto block = [&](const char* key, bool required) -> const json& {
        if (!j.contains(key)) {
            if (required) throw ConfigError(std::string("missing /") + key);
            return empty;
        }
        if (!j.at(key).is_object()) throw ConfigError(std::string("/") + key + " must be an object");
        return j.at(key);
    };
    const GridPtr g = detail::parse_grid(block("grid", true));
    const MetricField A = detail::parse_metric(block("metric", true), g);

    std::vector<ScalarField> coefs;
    const json& cost = block("cost", false);
    if (cost.contains("coefficients")) {
        const json& cs = cost.at("coefficients");
        if (!cs.is_array()) throw ConfigError("/cost/coefficients must be an array");
        for (std::size_t i = 0; i < cs.size(); ++i)
            coefs.push_back(detail::field_from(cs[i], g, "/cost/coefficients/" + std::to_string(i)));
    }
    if (coefs.size() > 3) throw ConfigError("/cost/coefficients: at most orders 2..4 are supported");

    StationaryState state = [&] {
        try {
            return detail::parse_stationary(block("stationary", true), A);
        } catch (const PreconditionViolated& e) {
            throw ConfigError(std::string("/stationary: ") + e.what());
        }
    }();
    if (coefs.empty()) coefs.push_back(ScalarField::zeros(g));
    RunningCost F(state.m0, coefs);

    int nu = 0, nm = 0;
    if (j.contains("perturbations")) {
        const json& p = j.at("perturbations");
        if (p.is_object()) {
            nu = detail::get_or(p, "u_freq", "/perturbations", 0);
            nm = detail::get_or(p, "m_freq", "/perturbations", 0);
        } else if (!(p.is_array() && p.empty())) {
            throw ConfigError("/perturbations must be {\"u_freq\", \"m_freq\"} or an empty list");
        }
        if (nu < 0 || nm < 0) throw ConfigError("/perturbations: frequency counts must be nonnegative");
    }

    ExperimentConfig c{j, g, A, std::move(F), std::move(state), {}, nu, nm, {}, {}, {}, {}, {}};
    c.perturbations = c.battery().perts;
    c.solver = detail::parse_solver(block("solver", false));
    c.reconstruction = detail::parse_reconstruction(block("reconstruction", false), *g);
    c.reconstruction.n_freq_u = nu;
    c.reconstruction.n_freq_m = nm;
    const json& lin = block("linearize", false);
    c.linearize.order = detail::get_or(lin, "order", "/linearize", c.linearize.order);
    c.linearize.ladder = detail::get_or(lin, "ladder", "/linearize", c.linearize.ladder);
    if (c.linearize.order < 1 || c.linearize.order > 5) throw ConfigError("/linearize/order must lie in 1..5");
    c.probe = detail::parse_probe(block("probe", false), g->dim());
    const json& run = block("run", false);
    c.run.out = detail::get_or<std::string>(run, "out", "/run", "out");
    c.run.seed = detail::get_or<std::uint64_t>(run, "seed", "/run", 0);
    c.run.verbosity = detail::get_or(run, "verbosity", "/run", 1);
    c.run.jobs = detail::get_or(run, "jobs", "/run", 1);
    if (c.run.jobs < 1) throw ConfigError("/run/jobs must be at least 1");
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

}  // namespace mfg
