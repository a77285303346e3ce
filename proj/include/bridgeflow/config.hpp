#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgeflow/common.hpp"
#include "bridgeflow/core_types.hpp"
#include "bridgeflow/drift_models.hpp"
#include "bridgeflow/field_recovery.hpp"

namespace bridgeflow {

using Json = nlohmann::json;

struct OutputSpec {
    std::vector<double> snapshot_times{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    Vector grid_min, grid_max;
    std::vector<int> grid_counts;
    std::string directory = "out";

    TensorGrid grid() const {
        TensorGrid g{grid_min, grid_max, grid_counts};
        g.validate();
        return g;
    }
};

struct ClassicalSpec {
    double grid_lo = -6.0;
    double grid_hi = 6.0;
    int grid_points = 401;
    double tol = 1e-10;
    int max_iter = 500;
    int num_paths = 100;
    double path_dt = 1e-3;
};

struct SimulateSpec {
    int num_paths = 500;
    double dt = 1e-3;
};

struct RunConfig {
    std::optional<DriftModel> drift;  // absent for the classical command
    GaussianMixture rho0, rho1;
    SbpConfig solver;
    OutputSpec output;
    ClassicalSpec classical;
    SimulateSpec simulate;
    Json raw;  // config echo for the manifest
};

namespace detail {

inline const Json& require(const Json& j, const std::string& key, const std::string& scope) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(scope + key, "missing required key '" + scope + key + "'");
    return *it;
}

inline double positive_number(const Json& j, const std::string& key, const std::string& scope) {
    const Json& v = require(j, key, scope);
    if (!v.is_number()) throw ConfigError(scope + key, "'" + scope + key + "' must be a number");
    double d = v.get<double>();
    if (!(d > 0.0)) throw ConfigError(scope + key, "'" + scope + key + "' must be > 0");
    return d;
}

inline GaussianMixture parse_mixture(const Json& j, const std::string& scope) {
    GaussianMixture gm;
    const Json& weights = require(j, "weights", scope);
    const Json& means = require(j, "means", scope);
    const Json& covs = require(j, "covariances", scope);
    if (!weights.is_array() || !means.is_array() || !covs.is_array())
        throw ConfigError(scope, "mixture lists must be arrays");
    for (const auto& w : weights) gm.weights.push_back(w.get<double>());
    for (const auto& m : means) {
        Vector mu(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) mu(static_cast<Eigen::Index>(i)) = m[i].get<double>();
        gm.means.push_back(std::move(mu));
    }
    for (const auto& c : covs) {
        auto rows = c.size();
        Matrix cov(rows, rows);
        for (std::size_t i = 0; i < rows; ++i) {
            if (c[i].size() != rows) throw ConfigError(scope, "covariance must be square");
            for (std::size_t k = 0; k < rows; ++k)
                cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[i][k].get<double>();
        }
        gm.covariances.push_back(std::move(cov));
    }
    try {
        gm.validate();
    } catch (const std::exception& e) {
        throw ConfigError(scope, scope + ": " + e.what());
    }
    return gm;
}

inline PolynomialPotential parse_potential(const Json& j, int dim, const std::string& scope) {
    PolynomialPotential p{dim, {}};
    if (!j.is_array()) throw ConfigError(scope, "'" + scope + "' must be an array of terms");
    for (const auto& term : j) {
        PolynomialPotential::Term t;
        t.coeff = require(term, "coeff", scope + ".").get<double>();
        const Json& exps = require(term, "exponents", scope + ".");
        for (const auto& e : exps) t.exponents.push_back(e.get<int>());
        p.terms.push_back(std::move(t));
    }
    try {
        p.validate();
    } catch (const std::exception& e) {
        throw ConfigError(scope, scope + ": " + e.what());
    }
    return p;
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
    RunConfig cfg;
    cfg.raw = j;

    if (j.contains("drift")) {
        const Json& d = j["drift"];
        std::string kind = detail::require(d, "kind", "drift.").get<std::string>();
        if (kind == "gradient") {
            int dim = detail::require(d, "dim", "drift.").get<int>();
            if (dim < 1) throw ConfigError("drift.dim", "drift.dim must be >= 1");
            PolynomialPotential p =
                d.contains("potential")
                    ? detail::parse_potential(d["potential"], dim, "drift.potential")
                    : PolynomialPotential::zero(dim);
            cfg.drift = GradientDrift::from_polynomial(std::move(p));
        } else if (kind == "mixed") {
            int half = detail::require(d, "half_dim", "drift.").get<int>();
            if (half < 1) throw ConfigError("drift.half_dim", "drift.half_dim must be >= 1");
            double kappa = detail::positive_number(d, "kappa", "drift.");
            PolynomialPotential p =
                d.contains("potential")
                    ? detail::parse_potential(d["potential"], half, "drift.potential")
                    : PolynomialPotential::zero(half);
            cfg.drift = MixedDrift::from_polynomial(std::move(p), kappa);
        } else {
            throw ConfigError("drift.kind", "drift.kind must be 'gradient' or 'mixed'");
        }
    }

    const Json& e = detail::require(j, "endpoints", "");
    cfg.rho0 = detail::parse_mixture(detail::require(e, "rho0", "endpoints."), "endpoints.rho0");
    cfg.rho1 = detail::parse_mixture(detail::require(e, "rho1", "endpoints."), "endpoints.rho1");

    const Json& s = detail::require(j, "solver", "");
    cfg.solver.epsilon = detail::positive_number(s, "epsilon", "solver.");
    cfg.solver.gamma = s.value("gamma", 0.5);
    cfg.solver.num_steps = s.value("num_steps", 1000);
    cfg.solver.tau = s.value("tau", 1.0 / cfg.solver.num_steps);
    cfg.solver.sigma = s.value("sigma", 1.0 / cfg.solver.num_steps);
    cfg.solver.kappa = s.value("kappa", 0.0);
    cfg.solver.num_samples = s.value("num_samples", 100);
    cfg.solver.tol_sb = s.value("tol_sb", 0.1);
    cfg.solver.tol_pr = s.value("tol_pr", 1e-3);
    cfg.solver.max_iter_sb = s.value("max_iter_sb", 500);
    cfg.solver.max_iter_pr = s.value("max_iter_pr", 500);
    cfg.solver.seed = s.value("seed", 0ULL);
    cfg.solver.log_domain = s.value("log_domain", false);
    cfg.solver.rbf_shape = s.value("rbf_shape", 0.0);
    cfg.solver.validate();

    if (cfg.drift && std::holds_alternative<MixedDrift>(*cfg.drift)) {
        double model_kappa = std::get<MixedDrift>(*cfg.drift).kappa;
        if (cfg.solver.kappa == 0.0) cfg.solver.kappa = model_kappa;
        if (std::abs(cfg.solver.kappa - model_kappa) > 1e-12)
            throw ConfigError("solver.kappa", "solver.kappa disagrees with drift.kappa");
    }

    if (j.contains("output")) {
        const Json& o = j["output"];
        if (o.contains("snapshot_times")) {
            cfg.output.snapshot_times.clear();
            for (const auto& t : o["snapshot_times"]) {
                double tv = t.get<double>();
                if (tv < 0.0 || tv > 1.0)
                    throw ConfigError("output.snapshot_times", "snapshot times must lie in [0,1]");
                cfg.output.snapshot_times.push_back(tv);
            }
        }
        if (o.contains("grid_min")) {
            const auto& gmin = o["grid_min"];
            const auto& gmax = detail::require(o, "grid_max", "output.");
            const auto& gcnt = detail::require(o, "grid_counts", "output.");
            auto dim = gmin.size();
            cfg.output.grid_min.resize(static_cast<Eigen::Index>(dim));
            cfg.output.grid_max.resize(static_cast<Eigen::Index>(dim));
            for (std::size_t i = 0; i < dim; ++i) {
                cfg.output.grid_min(static_cast<Eigen::Index>(i)) = gmin[i].get<double>();
                cfg.output.grid_max(static_cast<Eigen::Index>(i)) = gmax[i].get<double>();
            }
            for (const auto& c : gcnt) cfg.output.grid_counts.push_back(c.get<int>());
            try {
                cfg.output.grid().validate();
            } catch (const std::exception& ex) {
                throw ConfigError("output.grid", ex.what());
            }
        }
        cfg.output.directory = o.value("directory", cfg.output.directory);
    }

    if (j.contains("classical")) {
        const Json& c = j["classical"];
        cfg.classical.grid_lo = c.value("grid_lo", cfg.classical.grid_lo);
        cfg.classical.grid_hi = c.value("grid_hi", cfg.classical.grid_hi);
        cfg.classical.grid_points = c.value("grid_points", cfg.classical.grid_points);
        cfg.classical.tol = c.value("tol", cfg.classical.tol);
        cfg.classical.max_iter = c.value("max_iter", cfg.classical.max_iter);
        cfg.classical.num_paths = c.value("num_paths", cfg.classical.num_paths);
        cfg.classical.path_dt = c.value("path_dt", cfg.classical.path_dt);
        if (cfg.classical.grid_points < 3)
            throw ConfigError("classical.grid_points", "classical.grid_points must be >= 3");
        if (!(cfg.classical.grid_hi > cfg.classical.grid_lo))
            throw ConfigError("classical.grid_hi", "classical grid bounds inverted");
        if (!(cfg.classical.path_dt > 0.0))
            throw ConfigError("classical.path_dt", "classical.path_dt must be > 0");
    }

    if (j.contains("simulate")) {
        const Json& c = j["simulate"];
        cfg.simulate.num_paths = c.value("num_paths", cfg.simulate.num_paths);
        cfg.simulate.dt = c.value("dt", cfg.simulate.dt);
        if (cfg.simulate.num_paths < 1)
            throw ConfigError("simulate.num_paths", "simulate.num_paths must be >= 1");
        if (!(cfg.simulate.dt > 0.0)) throw ConfigError("simulate.dt", "simulate.dt must be > 0");
    }

    // default query grid: bounding box of the endpoint means widened by
    // 4 standard deviations, 101 nodes per axis
    if (cfg.output.grid_counts.empty()) {
        int n = cfg.rho0.dim();
        Vector lo = Vector::Constant(n, std::numeric_limits<double>::infinity());
        Vector hi = Vector::Constant(n, -std::numeric_limits<double>::infinity());
        for (const GaussianMixture* gm : {&cfg.rho0, &cfg.rho1}) {
            for (std::size_t k = 0; k < gm->means.size(); ++k) {
                for (int d = 0; d < n; ++d) {
                    double sd = std::sqrt(gm->covariances[k](d, d));
                    lo(d) = std::min(lo(d), gm->means[k](d) - 4.0 * sd);
                    hi(d) = std::max(hi(d), gm->means[k](d) + 4.0 * sd);
                }
            }
        }
        cfg.output.grid_min = lo;
        cfg.output.grid_max = hi;
        cfg.output.grid_counts.assign(static_cast<std::size_t>(n), 101);
    }

    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config", std::string("config parse error: ") + e.what());
    }
    return parse_config(j);
}

}  // namespace bridgeflow
