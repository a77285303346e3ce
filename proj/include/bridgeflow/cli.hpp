#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bridgeflow/bridge_solver.hpp"
#include "bridgeflow/classical_bridge.hpp"
#include "bridgeflow/config.hpp"
#include "bridgeflow/outputs.hpp"

namespace bridgeflow {

struct CliOptions {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

namespace detail {

inline std::string snapshot_label(double t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", t);
    return buf;
}

class StageTimer {
public:
    explicit StageTimer(RunManifest& manifest) : manifest_(manifest) {}
    void start(const std::string& name) {
        name_ = name;
        t0_ = std::chrono::steady_clock::now();
    }
    void stop() {
        double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
                .count();
        manifest_.add_stage(name_, ms);
    }

private:
    RunManifest& manifest_;
    std::string name_;
    std::chrono::steady_clock::time_point t0_;
};

inline void log_line(bool quiet, const std::string& msg) {
    if (!quiet) std::cout << msg << "\n";
}

inline void apply_overrides(RunConfig& cfg, Json& raw, const CliOptions& opts) {
    if (opts.seed) {
        cfg.solver.seed = *opts.seed;
        raw["solver"]["seed"] = *opts.seed;
        cfg.raw = raw;
    }
    if (opts.out_dir) cfg.output.directory = *opts.out_dir;
}

// marginal CDF of a Gaussian mixture along one coordinate
inline double mixture_marginal_cdf(const GaussianMixture& gm, int axis, double x) {
    double total = 0.0;
    for (std::size_t k = 0; k < gm.weights.size(); ++k) {
        double mu = gm.means[k](axis);
        double sd = std::sqrt(gm.covariances[k](axis, axis));
        total += gm.weights[k] * 0.5 * (1.0 + std::erf((x - mu) / (sd * std::sqrt(2.0))));
    }
    return total;
}

inline double ks_distance(std::vector<double> samples, const GaussianMixture& gm, int axis) {
    std::sort(samples.begin(), samples.end());
    double d = 0.0;
    const auto n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double f = mixture_marginal_cdf(gm, axis, samples[i]);
        d = std::max(d, std::abs((static_cast<double>(i) + 1.0) / n - f));
        d = std::max(d, std::abs(static_cast<double>(i) / n - f));
    }
    return d;
}

// Control snapshots on a tensor grid, looked up nearest-in-time and
// multilinearly in space. Queries outside the grid or touching invalid
// nodes receive zero control.
struct StoredControlField {
    TensorGrid grid;
    std::vector<double> times;
    std::vector<Matrix> controls;            // node-major, per snapshot
    std::vector<std::vector<bool>> valid;    // per snapshot
    int control_dim = 0;
    mutable long zero_fallbacks = 0;

    Vector eval(const Vector& x, double t) const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < times.size(); ++i)
            if (std::abs(times[i] - t) < std::abs(times[best] - t)) best = i;
        const Matrix& u = controls[best];
        const auto& ok = valid[best];

        const int n = grid.dim();
        std::vector<int> base(static_cast<std::size_t>(n));
        std::vector<double> frac(static_cast<std::size_t>(n));
        for (int d = 0; d < n; ++d) {
            int c = grid.counts[static_cast<std::size_t>(d)];
            double pos = (x(d) - grid.mins(d)) / grid.spacing(d);
            if (pos < 0.0 || pos > static_cast<double>(c - 1)) {
                ++zero_fallbacks;
                return Vector::Zero(control_dim);
            }
            int b = std::min(static_cast<int>(pos), c - 2);
            base[static_cast<std::size_t>(d)] = b;
            frac[static_cast<std::size_t>(d)] = pos - b;
        }
        std::vector<Eigen::Index> stride(static_cast<std::size_t>(n));
        {
            Eigen::Index s = 1;
            for (int d = n - 1; d >= 0; --d) {
                stride[static_cast<std::size_t>(d)] = s;
                s *= grid.counts[static_cast<std::size_t>(d)];
            }
        }
        Vector out = Vector::Zero(control_dim);
        for (int corner = 0; corner < (1 << n); ++corner) {
            Eigen::Index idx = 0;
            double weight = 1.0;
            for (int d = 0; d < n; ++d) {
                int hi = (corner >> d) & 1;
                idx += stride[static_cast<std::size_t>(d)] *
                       (base[static_cast<std::size_t>(d)] + hi);
                weight *= hi ? frac[static_cast<std::size_t>(d)]
                             : 1.0 - frac[static_cast<std::size_t>(d)];
            }
            if (!ok[static_cast<std::size_t>(idx)]) {
                ++zero_fallbacks;
                return Vector::Zero(control_dim);
            }
            out += weight * u.row(idx).transpose();
        }
        return out;
    }
};

}  // namespace detail

// solve: run the endpoint fixed point, re-run the transient flows, and write
// density / control snapshots plus diagnostics.
inline int cmd_solve(const std::string& config_path, const CliOptions& opts = {}) {
    namespace fs = std::filesystem;
    try {
        RunConfig cfg = load_config(config_path);
        Json raw = cfg.raw;
        detail::apply_overrides(cfg, raw, opts);
        if (!cfg.drift) throw ConfigError("drift", "solve requires a drift section");

        fs::path dir(cfg.output.directory);
        fs::create_directories(dir);
        RunManifest manifest("solve", cfg.raw);
        detail::StageTimer timer(manifest);

        detail::log_line(opts.quiet, "running endpoint fixed point (N=" +
                                         std::to_string(cfg.solver.num_samples) + ")");
        timer.start("endpoint_fixed_point");
        BridgeResult result = run_endpoint_fixed_point(*cfg.drift, cfg.rho0, cfg.rho1, cfg.solver);
        timer.stop();
        detail::log_line(opts.quiet,
                         "converged in " + std::to_string(result.state.iteration) + " iterations");

        timer.start("transient_factors");
        FactorTrajectory traj = compute_transient_factors(*cfg.drift, result, cfg.solver);
        timer.stop();

        std::ofstream diag(dir / "diagnostics.jsonl");
        for (const auto& rec : result.history) {
            Json row{{"iter", rec.iter}, {"wall_ms", rec.wall_ms}};
            row["residual_phihat0"] = std::isfinite(rec.residual_phihat0)
                                          ? Json(rec.residual_phihat0)
                                          : Json();
            row["residual_p0"] = std::isfinite(rec.residual_p0) ? Json(rec.residual_p0) : Json();
            diag << row.dump() << "\n";
            manifest.add_residual_row(rec.iter, rec.residual_phihat0, rec.residual_p0,
                                      rec.wall_ms);
        }
        manifest.add_file("diagnostics.jsonl");
        for (const auto& w : result.warnings) manifest.add_warning(w);

        const int n = state_dim(*cfg.drift);
        auto cloud_csv = [&](const WeightedCloud& cloud, const std::string& name) {
            Matrix rows(cloud.size(), n + 1);
            rows.leftCols(n) = cloud.states;
            rows.col(n) = cloud.values;
            std::vector<std::string> header;
            for (int d = 1; d <= n; ++d) header.push_back("x" + std::to_string(d));
            header.push_back("value");
            write_csv(dir / name, header, rows);
            manifest.add_file(name);
        };
        cloud_csv(result.state.phihat0, "phihat0.csv");
        cloud_csv(result.state.phi1, "phi1.csv");

        timer.start("snapshots");
        TensorGrid grid = cfg.output.grid();
        Matrix nodes = grid.nodes();
        const int steps = cfg.solver.num_steps;
        for (double t : cfg.output.snapshot_times) {
            auto k = static_cast<long>(std::llround(t / cfg.solver.tau));
            k = std::clamp<long>(k, 0, steps);
            if (std::abs(static_cast<double>(k) * cfg.solver.tau - t) > 1e-9)
                throw ConfigError("output.snapshot_times",
                                  "snapshot time is not a multiple of tau: " +
                                      detail::snapshot_label(t));
            const WeightedCloud& phihat = traj.phihat_seq[static_cast<std::size_t>(k)];
            const WeightedCloud& phi = traj.phi_seq[static_cast<std::size_t>(steps - k)];

            Vector density = compose_density(phi, phihat, nodes, cfg.solver.rbf_shape);
            {
                Matrix rows(nodes.rows(), n + 1);
                rows.leftCols(n) = nodes;
                rows.col(n) = density;
                std::vector<std::string> header;
                for (int d = 1; d <= n; ++d) header.push_back("x" + std::to_string(d));
                header.push_back("value");
                std::string name = "density_t" + detail::snapshot_label(t) + ".csv";
                write_csv(dir / name, header, rows);
                manifest.add_file(name);
            }
            ControlFieldResult ctrl =
                control_field(phi, *cfg.drift, cfg.solver.epsilon, grid, cfg.solver.rbf_shape);
            {
                const auto m = static_cast<int>(ctrl.controls.cols());
                Matrix rows(nodes.rows(), n + m + 1);
                rows.leftCols(n) = nodes;
                rows.block(0, n, nodes.rows(), m) = ctrl.controls;
                for (Eigen::Index i = 0; i < nodes.rows(); ++i)
                    rows(i, n + m) = ctrl.valid[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
                std::vector<std::string> header;
                for (int d = 1; d <= n; ++d) header.push_back("x" + std::to_string(d));
                for (int d = 1; d <= m; ++d) header.push_back("u" + std::to_string(d));
                header.push_back("valid");
                std::string name = "control_t" + detail::snapshot_label(t) + ".csv";
                write_csv(dir / name, header, rows);
                manifest.add_file(name);
                if (ctrl.invalid_count > 0)
                    manifest.add_warning("control at t=" + detail::snapshot_label(t) + ": " +
                                         std::to_string(ctrl.invalid_count) + " invalid nodes");
            }
        }
        timer.stop();

        manifest.write(dir);
        detail::log_line(opts.quiet, "outputs written to " + dir.string());
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << e.key << "): " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "solver did not converge: " << e.what() << "\n";
        std::cerr << "residual history:";
        for (double r : e.residual_history) std::cerr << " " << r;
        std::cerr << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// classical: closed-form heat-kernel Schroedinger system on a 1D grid, plus
// optional closed-loop sample paths.
inline int cmd_classical(const std::string& config_path, const CliOptions& opts = {}) {
    namespace fs = std::filesystem;
    try {
        RunConfig cfg = load_config(config_path);
        Json raw = cfg.raw;
        detail::apply_overrides(cfg, raw, opts);
        if (cfg.rho0.dim() != 1 || cfg.rho1.dim() != 1)
            throw ConfigError("endpoints", "classical command expects 1D endpoint densities");

        fs::path dir(cfg.output.directory);
        fs::create_directories(dir);
        RunManifest manifest("classical", cfg.raw);
        detail::StageTimer timer(manifest);

        const double eps = cfg.solver.epsilon;
        Grid1D grid =
            Grid1D::uniform(cfg.classical.grid_lo, cfg.classical.grid_hi, cfg.classical.grid_points);
        Matrix pts(grid.size(), 1);
        pts.col(0) = grid.points;
        Vector rho0_g = mixture_pdf(cfg.rho0, pts);
        Vector rho1_g = mixture_pdf(cfg.rho1, pts);

        timer.start("schrodinger_system");
        Matrix kernel = heat_kernel_matrix(grid, 1.0, eps);
        ClassicalFactors factors = classical_fixed_point(rho0_g, rho1_g, kernel,
                                                         cfg.classical.tol, cfg.classical.max_iter);
        timer.stop();
        detail::log_line(opts.quiet, "schrodinger system converged in " +
                                         std::to_string(factors.iterations) + " iterations");
        {
            std::ofstream diag(dir / "diagnostics.jsonl");
            int it = 1;
            for (double r : factors.hilbert_residuals) {
                Json row{{"iter", it++}, {"hilbert_residual", r}};
                diag << row.dump() << "\n";
            }
            manifest.add_file("diagnostics.jsonl");
        }

        {
            Matrix rows(grid.size(), 3);
            rows.col(0) = grid.points;
            rows.col(1) = factors.phi1;
            rows.col(2) = factors.phihat0;
            write_csv(dir / "factors.csv", {"x", "phi1", "phihat0"}, rows);
            manifest.add_file("factors.csv");
        }

        timer.start("snapshots");
        for (double t : cfg.output.snapshot_times) {
            Vector phi = classical_propagate_phi(grid, factors.phi1, t, eps);
            Vector phihat = classical_propagate_phihat(grid, factors.phihat0, t, eps);
            Vector density = phi.array() * phihat.array();
            Vector control = classical_control(grid, phi, eps);
            Matrix drows(grid.size(), 2);
            drows.col(0) = grid.points;
            drows.col(1) = density;
            std::string dname = "density_t" + detail::snapshot_label(t) + ".csv";
            write_csv(dir / dname, {"x", "value"}, drows);
            manifest.add_file(dname);
            Matrix crows(grid.size(), 2);
            crows.col(0) = grid.points;
            crows.col(1) = control;
            std::string cname = "control_t" + detail::snapshot_label(t) + ".csv";
            write_csv(dir / cname, {"x", "u1"}, crows);
            manifest.add_file(cname);
        }
        timer.stop();

        if (cfg.classical.num_paths > 0) {
            timer.start("sample_paths");
            const double dt = cfg.classical.path_dt;
            auto steps = static_cast<long>(std::llround(1.0 / dt));
            // control grid per time step
            std::vector<Vector> control_at_step;
            control_at_step.reserve(static_cast<std::size_t>(steps) + 1);
            for (long j = 0; j <= steps; ++j) {
                double t = std::min(1.0, static_cast<double>(j) * dt);
                Vector phi = classical_propagate_phi(grid, factors.phi1, t, eps);
                control_at_step.push_back(classical_control(grid, phi, eps));
            }
            auto control_fn = [&](const Vector& x, double t) -> Vector {
                auto j = static_cast<long>(std::llround(t / dt));
                j = std::clamp<long>(j, 0, steps);
                const Vector& u = control_at_step[static_cast<std::size_t>(j)];
                double pos = (x(0) - grid.points(0)) / grid.spacing;
                Vector out(1);
                if (pos <= 0.0) {
                    out(0) = u(0);
                } else if (pos >= static_cast<double>(grid.size() - 1)) {
                    out(0) = u(grid.size() - 1);
                } else {
                    int b = static_cast<int>(pos);
                    double f = pos - b;
                    out(0) = (1.0 - f) * u(b) + f * u(b + 1);
                }
                return out;
            };

            DriftModel zero_drift = GradientDrift::from_polynomial(PolynomialPotential::zero(1));
            RngStream init = RngStream::named(cfg.solver.seed, "classical-path-init");
            Matrix x0 = mixture_sample(cfg.rho0, cfg.classical.num_paths, init);
            RngStream noise_root = RngStream::named(cfg.solver.seed, "classical-path-noise");
            Matrix rows(static_cast<Eigen::Index>(cfg.classical.num_paths) * (steps + 1), 3);
            for (int p = 0; p < cfg.classical.num_paths; ++p) {
                RngStream stream = noise_root.split(static_cast<std::uint64_t>(p));
                auto path = em_path_controlled(x0.row(p).transpose(), zero_drift, eps, control_fn,
                                               dt, 1.0, stream);
                for (long j = 0; j <= steps; ++j) {
                    Eigen::Index r = static_cast<Eigen::Index>(p) * (steps + 1) + j;
                    rows(r, 0) = p;
                    rows(r, 1) = static_cast<double>(j) * dt;
                    rows(r, 2) = path[static_cast<std::size_t>(j)](0);
                }
            }
            write_csv(dir / "paths.csv", {"path", "t", "x"}, rows);
            manifest.add_file("paths.csv");
            timer.stop();
        }

        manifest.write(dir);
        detail::log_line(opts.quiet, "outputs written to " + dir.string());
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << e.key << "): " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        std::cerr << "solver did not converge: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// simulate: rebuild the stored control field from a solve run and compare
// closed-loop terminal statistics against the target density and against the
// uncontrolled prior.
inline int cmd_simulate(const std::string& config_path, const std::string& solution_dir,
                        const CliOptions& opts = {}) {
    namespace fs = std::filesystem;
    try {
        RunConfig cfg = load_config(config_path);
        Json raw = cfg.raw;
        detail::apply_overrides(cfg, raw, opts);
        if (!cfg.drift) throw ConfigError("drift", "simulate requires a drift section");

        fs::path sol(solution_dir);
        if (!fs::exists(sol / "manifest.json"))
            throw SolverError("missing solution manifest: " + (sol / "manifest.json").string());
        Json sol_manifest;
        {
            std::ifstream in(sol / "manifest.json");
            in >> sol_manifest;
        }

        fs::path dir = opts.out_dir ? fs::path(*opts.out_dir) : sol / "simulate";
        fs::create_directories(dir);
        RunManifest manifest("simulate", cfg.raw);
        if (sol_manifest.value("config_hash", "") != manifest.config_hash())
            manifest.add_warning("config hash differs from the solved run");

        detail::StoredControlField field;
        field.grid = cfg.output.grid();
        const int n = state_dim(*cfg.drift);
        const bool mixed = std::holds_alternative<MixedDrift>(*cfg.drift);
        field.control_dim = mixed ? std::get<MixedDrift>(*cfg.drift).half_dim : n;

        for (const auto& f : sol_manifest["files"]) {
            std::string name = f.get<std::string>();
            if (name.rfind("control_t", 0) != 0 || name.size() < 14) continue;
            double t = std::stod(name.substr(9, name.size() - 13));
            std::vector<std::string> header;
            Matrix rows = read_csv(sol / name, &header);
            if (rows.cols() != n + field.control_dim + 1)
                throw SolverError("unexpected control csv layout: " + name);
            field.times.push_back(t);
            field.controls.push_back(rows.block(0, n, rows.rows(), field.control_dim));
            std::vector<bool> ok(static_cast<std::size_t>(rows.rows()));
            for (Eigen::Index i = 0; i < rows.rows(); ++i)
                ok[static_cast<std::size_t>(i)] = rows(i, n + field.control_dim) > 0.5;
            field.valid.push_back(std::move(ok));
        }
        if (field.times.empty()) throw SolverError("no control snapshots found in solution dir");

        const int M = cfg.simulate.num_paths;
        const double dt = cfg.simulate.dt;
        RngStream init = RngStream::named(cfg.solver.seed, "simulate-init");
        Matrix x0 = mixture_sample(cfg.rho0, M, init);

        auto control_fn = [&](const Vector& x, double t) { return field.eval(x, t); };
        auto zero_fn = [&](const Vector&, double) { return Vector::Zero(field.control_dim); };

        Matrix terminal_c(M, n), terminal_u(M, n);
        RngStream noise_c = RngStream::named(cfg.solver.seed, "simulate-noise");
        RngStream noise_u = RngStream::named(cfg.solver.seed, "simulate-noise-uncontrolled");
        for (int p = 0; p < M; ++p) {
            RngStream sc = noise_c.split(static_cast<std::uint64_t>(p));
            auto path = em_path_controlled(x0.row(p).transpose(), *cfg.drift, cfg.solver.epsilon,
                                           control_fn, dt, 1.0, sc);
            terminal_c.row(p) = path.back().transpose();
            RngStream su = noise_u.split(static_cast<std::uint64_t>(p));
            auto upath = em_path_controlled(x0.row(p).transpose(), *cfg.drift, cfg.solver.epsilon,
                                            zero_fn, dt, 1.0, su);
            terminal_u.row(p) = upath.back().transpose();
        }

        RngStream ref = RngStream::named(cfg.solver.seed, "rho1-reference");
        Matrix target = mixture_sample(cfg.rho1, M, ref);
        Vector uniform = Vector::Ones(M);
        double w2_c = discrete_w2(WeightedCloud(terminal_c, uniform, 1.0),
                                  WeightedCloud(target, uniform, 1.0));
        double w2_u = discrete_w2(WeightedCloud(terminal_u, uniform, 1.0),
                                  WeightedCloud(target, uniform, 1.0));

        Json stats;
        stats["num_paths"] = M;
        stats["terminal_w2_controlled"] = w2_c;
        stats["terminal_w2_uncontrolled"] = w2_u;
        stats["terminal_w2sq_controlled"] = w2_c * w2_c;
        stats["terminal_w2sq_uncontrolled"] = w2_u * w2_u;
        stats["zero_control_fallbacks"] = field.zero_fallbacks;
        {
            Json ks = Json::array();
            for (int d = 0; d < n; ++d) {
                std::vector<double> samples(static_cast<std::size_t>(M));
                for (int p = 0; p < M; ++p) samples[static_cast<std::size_t>(p)] = terminal_c(p, d);
                ks.push_back(detail::ks_distance(samples, cfg.rho1, d));
            }
            stats["ks_per_marginal"] = ks;
            Json mean = Json::array(), stddev = Json::array();
            for (int d = 0; d < n; ++d) {
                double m = terminal_c.col(d).mean();
                double s = std::sqrt((terminal_c.col(d).array() - m).square().mean());
                mean.push_back(m);
                stddev.push_back(s);
            }
            stats["terminal_mean"] = mean;
            stats["terminal_std"] = stddev;
        }
        {
            std::ofstream out(dir / "stats.json");
            out << stats.dump(2) << "\n";
            manifest.add_file("stats.json");
        }
        std::vector<std::string> header;
        for (int d = 1; d <= n; ++d) header.push_back("x" + std::to_string(d));
        write_csv(dir / "terminal_controlled.csv", header, terminal_c);
        manifest.add_file("terminal_controlled.csv");
        write_csv(dir / "terminal_uncontrolled.csv", header, terminal_u);
        manifest.add_file("terminal_uncontrolled.csv");
        manifest.write(dir);

        detail::log_line(opts.quiet,
                         "terminal W2: controlled " + std::to_string(w2_c) + ", uncontrolled " +
                             std::to_string(w2_u));
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error (" << e.key << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace bridgeflow
