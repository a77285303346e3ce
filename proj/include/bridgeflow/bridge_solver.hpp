#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bridgeflow/common.hpp"
#include "bridgeflow/core_types.hpp"
#include "bridgeflow/drift_models.hpp"
#include "bridgeflow/field_recovery.hpp"
#include "bridgeflow/sde_integrator.hpp"
#include "bridgeflow/sinkhorn_prox.hpp"
#include "bridgeflow/transport_metrics.hpp"

namespace bridgeflow {

// p(x, s) = phi(x, 1-s) exp(-V/eps) for gradient drift. For mixed drift the
// flow is additionally velocity-flipped: the p-point (xi, theta) carries the
// phi-point (xi, -theta), and the weight factor uses H = 1/2||eta||^2 + V(xi).
inline WeightedCloud factor_to_p(const DriftModel& model, const WeightedCloud& phi_cloud,
                                 double epsilon) {
    phi_cloud.validate();
    if (phi_cloud.dim() != state_dim(model))
        throw std::invalid_argument("factor_to_p: dimension mismatch");
    Matrix states = phi_cloud.states;
    Vector values(phi_cloud.size());
    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        for (int i = 0; i < phi_cloud.size(); ++i)
            values(i) = phi_cloud.values(i) *
                        std::exp(-g->potential(states.row(i).transpose()) / epsilon);
    } else {
        const auto& m = std::get<MixedDrift>(model);
        for (int i = 0; i < phi_cloud.size(); ++i) {
            double h = hamiltonian(m, states.row(i).transpose());
            values(i) = phi_cloud.values(i) * std::exp(-h / epsilon);
            states.row(i).tail(m.half_dim) = -states.row(i).tail(m.half_dim);
        }
    }
    return WeightedCloud(std::move(states), std::move(values), phi_cloud.time);
}

// Exact inverse of factor_to_p, including the velocity un-flip.
inline WeightedCloud p_to_factor(const DriftModel& model, const WeightedCloud& p_cloud,
                                 double epsilon) {
    p_cloud.validate();
    if (p_cloud.dim() != state_dim(model))
        throw std::invalid_argument("p_to_factor: dimension mismatch");
    Matrix states = p_cloud.states;
    Vector values(p_cloud.size());
    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        for (int i = 0; i < p_cloud.size(); ++i)
            values(i) = p_cloud.values(i) *
                        std::exp(g->potential(states.row(i).transpose()) / epsilon);
    } else {
        const auto& m = std::get<MixedDrift>(model);
        for (int i = 0; i < p_cloud.size(); ++i) {
            states.row(i).tail(m.half_dim) = -states.row(i).tail(m.half_dim);
            double h = hamiltonian(m, states.row(i).transpose());
            values(i) = p_cloud.values(i) * std::exp(h / epsilon);
        }
    }
    return WeightedCloud(std::move(states), std::move(values), p_cloud.time);
}

struct FactorState {
    WeightedCloud phihat0, phi1, phi0, phihat1, p0, p1;
    int iteration = 0;
    double residual_phihat0 = std::numeric_limits<double>::quiet_NaN();
    double residual_p0 = std::numeric_limits<double>::quiet_NaN();
};

struct OuterIterRecord {
    int iter = 0;
    double residual_phihat0 = std::numeric_limits<double>::quiet_NaN();
    double residual_p0 = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

// Euler-Maruyama support trajectories, one per flow, frozen across outer
// iterations so successive iterates share supports.
struct FlowSupports {
    std::vector<Matrix> phihat;  // num_steps + 1 entries, times k*tau
    std::vector<Matrix> p;       // num_steps + 1 entries, s = k*sigma (t = 1 - k*sigma)
};

struct BridgeResult {
    FactorState state;
    std::vector<OuterIterRecord> history;
    FlowSupports supports;
    std::vector<std::string> warnings;
    bool converged = false;
};

struct FactorTrajectory {
    std::vector<WeightedCloud> phihat_seq;  // times k*tau
    std::vector<WeightedCloud> phi_seq;     // times 1 - k*sigma
    SbpConfig config;
};

namespace detail {

inline Vector flow_potential(const DriftModel& model, const Matrix& support) {
    Vector v(support.rows());
    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        for (Eigen::Index i = 0; i < support.rows(); ++i)
            v(i) = g->potential(support.row(i).transpose());
    } else {
        const auto& m = std::get<MixedDrift>(model);
        for (Eigen::Index i = 0; i < support.rows(); ++i)
            v(i) = 0.5 * support.row(i).tail(m.half_dim).squaredNorm();
    }
    return v;
}

inline Matrix flow_cost(const DriftModel& model, const Matrix& prev, const Matrix& next,
                        double step) {
    if (std::holds_alternative<GradientDrift>(model)) return cost_matrix_euclidean(prev, next);
    const auto& m = std::get<MixedDrift>(model);
    return cost_matrix_mixed(prev, next, step, m.potential_gradient);
}

inline double free_energy_step(const DriftModel& model, double step) {
    if (std::holds_alternative<GradientDrift>(model)) return step;
    return std::get<MixedDrift>(model).kappa * step;
}

// Runs one full proximal flow over the frozen supports. Returns the final
// values; optionally records every step.
inline Vector run_flow(const DriftModel& model, const std::vector<Matrix>& supports,
                       const Vector& initial_values, double step, const SbpConfig& config,
                       std::vector<Vector>* sequence_out) {
    Vector values = initial_values;
    if (sequence_out) sequence_out->push_back(values);
    const double h = free_energy_step(model, step);
    for (std::size_t k = 1; k < supports.size(); ++k) {
        ProxProblem problem;
        problem.prev_values = values;
        problem.cost = flow_cost(model, supports[k - 1], supports[k], step);
        problem.potential = flow_potential(model, supports[k - 1]);
        problem.step = h;
        problem.epsilon = config.epsilon;
        problem.gamma = config.gamma;
        problem.log_domain = config.log_domain;
        values = prox_step(problem, config.tol_pr, config.max_iter_pr).next_values;
        if (sequence_out) sequence_out->push_back(values);
    }
    return values;
}

// Interpolates a factor cloud onto another support, flooring nonpositive
// interpolated values at a small positive fraction of the cloud maximum.
inline Vector interp_onto(const WeightedCloud& cloud, const Matrix& target, double rbf_shape,
                          int* floored) {
    Vector vals = rbf_fit_auto(cloud, rbf_shape).evaluate_rows(target);
    double floor = 1e-12 * cloud.values.maxCoeff();
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (!(vals(i) > floor)) {
            vals(i) = floor;
            if (floored) ++(*floored);
        }
    }
    return vals;
}

inline double normalized_w2_sq(const Matrix& support, const Vector& a, const Vector& b,
                               double time) {
    WeightedCloud ca(support, a / a.sum(), time);
    WeightedCloud cb(support, b / b.sum(), time);
    double d = discrete_w2(ca, cb);
    return d * d;
}

// Velocity flip for mixed-drift supports; identity for gradient drift.
inline Matrix p_coordinates(const DriftModel& model, Matrix states) {
    if (const auto* m = std::get_if<MixedDrift>(&model))
        states.rightCols(m->half_dim) = -states.rightCols(m->half_dim);
    return states;
}

}  // namespace detail

// Algorithm: starting from a positive guess for phihat1,
//   (2) phi1 <- rho1 ./ phihat1 on the phihat-flow terminal support
//   (3) p0   <- factor_to_p(phi1), carried onto the p-flow support
//   (4) p1   <- num_steps proximal steps of the p flow
//   (5) phi0 <- p_to_factor(p1)
//   (6) phihat0 <- rho0 ./ phi0 on the phihat-flow initial support
//   (7) phihat1 <- num_steps proximal steps of the phihat flow
//   (8) repeat until the squared Wasserstein residuals of (phihat0, p0),
//       taken between successive normalized iterates, fall below tol_sb.
// Supports are drawn once (phihat flow from rho0, p flow from rho1 with the
// mixed-case velocity flip) and reused across outer iterations; factor
// clouds cross between flows through multiquadric interpolation.
inline BridgeResult run_endpoint_fixed_point(const DriftModel& model, const GaussianMixture& rho0,
                                             const GaussianMixture& rho1, const SbpConfig& config,
                                             const Vector* initial_phihat1 = nullptr) {
    config.validate();
    rho0.validate();
    rho1.validate();
    const int n = state_dim(model);
    if (rho0.dim() != n || rho1.dim() != n)
        throw std::invalid_argument("run_endpoint_fixed_point: endpoint dimension mismatch");
    if (std::holds_alternative<MixedDrift>(model) && !(config.kappa > 0.0))
        throw ConfigError("kappa", "kappa must be > 0 for mixed drift");

    const int N = config.num_samples;
    const int steps = config.num_steps;

    BridgeResult result;
    auto& supports = result.supports;

    {
        RngStream rng_a = RngStream::named(config.seed, "phihat-support");
        supports.phihat.reserve(static_cast<std::size_t>(steps) + 1);
        supports.phihat.push_back(mixture_sample(rho0, N, rng_a));
        for (int k = 0; k < steps; ++k)
            supports.phihat.push_back(
                em_step_prior(supports.phihat.back(), model, config.epsilon, config.tau, rng_a));

        RngStream rng_b = RngStream::named(config.seed, "p-support");
        supports.p.reserve(static_cast<std::size_t>(steps) + 1);
        supports.p.push_back(detail::p_coordinates(model, mixture_sample(rho1, N, rng_b)));
        for (int k = 0; k < steps; ++k)
            supports.p.push_back(
                em_step_prior(supports.p.back(), model, config.epsilon, config.sigma, rng_b));
    }

    const Matrix& a_first = supports.phihat.front();
    const Matrix& a_last = supports.phihat.back();
    const Matrix& b_first = supports.p.front();
    const Matrix& b_last = supports.p.back();

    Vector rho1_at_terminal = mixture_pdf(rho1, a_last);
    Vector rho0_at_initial = mixture_pdf(rho0, a_first);

    Vector phihat1;
    if (initial_phihat1) {
        if (initial_phihat1->size() != N || (initial_phihat1->array() <= 0.0).any())
            throw std::invalid_argument("run_endpoint_fixed_point: bad initial guess");
        phihat1 = *initial_phihat1;
    } else {
        RngStream rng_g = RngStream::named(config.seed, "phihat1-guess");
        phihat1.resize(N);
        for (int i = 0; i < N; ++i) phihat1(i) = rng_g.uniform(0.1, 1.1);
    }

    int floored = 0;
    Vector phihat0, p0, phi1_vals, p1, phi0_on_a;
    WeightedCloud phi0_cloud;
    std::optional<Vector> prev_phihat0, prev_p0;
    bool converged = false;

    for (int iter = 1; iter <= config.max_iter_sb; ++iter) {
        auto t_start = std::chrono::steady_clock::now();

        phi1_vals = rho1_at_terminal.array() / phihat1.array();
        WeightedCloud phi1_cloud(a_last, phi1_vals, 1.0);

        WeightedCloud p0_src = factor_to_p(model, phi1_cloud, config.epsilon);
        p0 = detail::interp_onto(p0_src, b_first, config.rbf_shape, &floored);

        p1 = detail::run_flow(model, supports.p, p0, config.sigma, config, nullptr);

        phi0_cloud = p_to_factor(model, WeightedCloud(b_last, p1, 0.0), config.epsilon);
        phi0_on_a = detail::interp_onto(phi0_cloud, a_first, config.rbf_shape, &floored);
        phihat0 = rho0_at_initial.array() / phi0_on_a.array();

        phihat1 = detail::run_flow(model, supports.phihat, phihat0, config.tau, config, nullptr);
        phihat1 *= static_cast<double>(N) / phihat1.sum();  // gauge fix

        OuterIterRecord rec;
        rec.iter = iter;
        if (prev_phihat0) {
            rec.residual_phihat0 =
                detail::normalized_w2_sq(a_first, phihat0, *prev_phihat0, 0.0);
            rec.residual_p0 = detail::normalized_w2_sq(b_first, p0, *prev_p0, 1.0);
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t_start)
                          .count();
        result.history.push_back(rec);

        prev_phihat0 = phihat0;
        prev_p0 = p0;

        if (prev_phihat0 && rec.iter >= 2 && rec.residual_phihat0 < config.tol_sb &&
            rec.residual_p0 < config.tol_sb) {
            converged = true;
            result.state.iteration = iter;
            result.state.residual_phihat0 = rec.residual_phihat0;
            result.state.residual_p0 = rec.residual_p0;
            break;
        }
    }

    if (!converged) {
        std::vector<double> residuals;
        for (const auto& r : result.history)
            residuals.push_back(std::max(r.residual_phihat0, r.residual_p0));
        throw ConvergenceError("run_endpoint_fixed_point: max_iter_sb exceeded", residuals);
    }

    if (floored > 0)
        result.warnings.push_back("interpolated factor floored at " + std::to_string(floored) +
                                  " points");
    // contraction is guaranteed in the Hilbert metric, not W2; flag rather than fail
    for (std::size_t i = 2; i + 1 < result.history.size(); ++i) {
        if (result.history[i + 1].residual_phihat0 >
                result.history[i].residual_phihat0 * (1.0 + 1e-9) ||
            result.history[i + 1].residual_p0 > result.history[i].residual_p0 * (1.0 + 1e-9)) {
            result.warnings.push_back("W2 residuals not monotone after iteration " +
                                      std::to_string(result.history[i].iter));
            break;
        }
    }

    result.converged = true;
    result.state.phihat0 = WeightedCloud(a_first, phihat0, 0.0);
    result.state.phi1 = WeightedCloud(a_last, phi1_vals, 1.0);
    result.state.phihat1 = WeightedCloud(a_last, phihat1, 1.0);
    result.state.p0 = WeightedCloud(b_first, p0, 1.0);
    result.state.p1 = WeightedCloud(b_last, p1, 0.0);
    result.state.phi0 = phi0_cloud;
    return result;
}

// Re-runs both converged flows, storing every step. The phi sequence is the
// p sequence pushed through p_to_factor; its k-th entry sits at t = 1 - k*sigma.
inline FactorTrajectory compute_transient_factors(const DriftModel& model,
                                                  const BridgeResult& result,
                                                  const SbpConfig& config) {
    if (!result.converged)
        throw std::invalid_argument("compute_transient_factors: needs a converged state");
    const int steps = config.num_steps;

    FactorTrajectory traj;
    traj.config = config;

    std::vector<Vector> phihat_values;
    detail::run_flow(model, result.supports.phihat, result.state.phihat0.values, config.tau,
                     config, &phihat_values);
    std::vector<Vector> p_values;
    detail::run_flow(model, result.supports.p, result.state.p0.values, config.sigma, config,
                     &p_values);

    traj.phihat_seq.reserve(static_cast<std::size_t>(steps) + 1);
    traj.phi_seq.reserve(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        double t_hat = std::min(1.0, static_cast<double>(k) * config.tau);
        double t_p = std::max(0.0, 1.0 - static_cast<double>(k) * config.sigma);
        traj.phihat_seq.emplace_back(result.supports.phihat[static_cast<std::size_t>(k)],
                                     phihat_values[static_cast<std::size_t>(k)], t_hat);
        WeightedCloud p_cloud(result.supports.p[static_cast<std::size_t>(k)],
                              p_values[static_cast<std::size_t>(k)], t_p);
        traj.phi_seq.push_back(p_to_factor(model, p_cloud, config.epsilon));
    }
    return traj;
}

}  // namespace bridgeflow
