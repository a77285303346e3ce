#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "bridgeflow/common.hpp"
#include "bridgeflow/drift_models.hpp"
#include "bridgeflow/rng.hpp"

namespace bridgeflow {

struct EmStepRecord {
    Matrix states_before;
    Matrix states_after;
    Matrix noise_draws;  // N x noise-dim
    double dt = 0.0;
};

// One Euler-Maruyama step of the uncontrolled prior SDE.
// gradient:  x' = x - grad V(x) dt + sqrt(2 eps dt) z,  z ~ N(0, I_n)
// mixed:     xi' = xi + eta dt
//            eta' = eta + (-grad V(xi) - kappa eta) dt + sqrt(2 eps kappa dt) z
// Noise enters the eta block only in the mixed case.
inline EmStepRecord em_step_prior_record(const Matrix& states, const DriftModel& model,
                                         double epsilon, double dt, RngStream& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("em_step_prior: dt must be > 0");
    if (epsilon < 0.0) throw std::invalid_argument("em_step_prior: epsilon must be >= 0");
    if (states.cols() != state_dim(model))
        throw std::invalid_argument("em_step_prior: dimension mismatch");

    EmStepRecord rec;
    rec.states_before = states;
    rec.dt = dt;
    const Eigen::Index n_pts = states.rows();

    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        rec.noise_draws = rng.normal_matrix(static_cast<int>(n_pts), g->dim);
        double amp = std::sqrt(2.0 * epsilon * dt);
        rec.states_after.resize(n_pts, g->dim);
        for (Eigen::Index i = 0; i < n_pts; ++i) {
            Vector x = states.row(i).transpose();
            rec.states_after.row(i) =
                (x - g->potential_gradient(x) * dt + amp * rec.noise_draws.row(i).transpose())
                    .transpose();
        }
        return rec;
    }

    const auto& m = std::get<MixedDrift>(model);
    rec.noise_draws = rng.normal_matrix(static_cast<int>(n_pts), m.half_dim);
    double amp = std::sqrt(2.0 * epsilon * m.kappa * dt);
    rec.states_after.resize(n_pts, m.dim());
    for (Eigen::Index i = 0; i < n_pts; ++i) {
        Vector xi = states.row(i).head(m.half_dim).transpose();
        Vector eta = states.row(i).tail(m.half_dim).transpose();
        rec.states_after.row(i).head(m.half_dim) = (xi + eta * dt).transpose();
        rec.states_after.row(i).tail(m.half_dim) =
            (eta + (-m.potential_gradient(xi) - m.kappa * eta) * dt +
             amp * rec.noise_draws.row(i).transpose())
                .transpose();
    }
    return rec;
}

inline Matrix em_step_prior(const Matrix& states, const DriftModel& model, double epsilon,
                            double dt, RngStream& rng) {
    return em_step_prior_record(states, model, epsilon, dt, rng).states_after;
}

// Feedback control evaluated along a path; throws to signal evaluation
// failure (e.g. a query outside an interpolation hull).
using ControlField = std::function<Vector(const Vector& x, double t)>;

class ControlQueryError : public SolverError {
public:
    ControlQueryError(const Vector& x, double t, const std::string& why)
        : SolverError(format(x, t, why)), state(x), time(t) {}
    Vector state;
    double time;

private:
    static std::string format(const Vector& x, double t, const std::string& why) {
        std::ostringstream os;
        os << "control evaluation failed at t=" << t << ", x=[";
        for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
        os << "]: " << why;
        return os.str();
    }
};

// Closed-loop Euler-Maruyama path. The control enters through the same
// channel as the noise: the full state for gradient drift, the eta block
// for mixed drift.
inline std::vector<Vector> em_path_controlled(const Vector& x0, const DriftModel& model,
                                              double epsilon, const ControlField& control,
                                              double dt, double horizon, RngStream& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("em_path_controlled: dt must be > 0");
    double steps_real = horizon / dt;
    auto steps = static_cast<long>(std::llround(steps_real));
    if (steps < 1 || std::abs(steps_real - static_cast<double>(steps)) > 1e-9)
        throw std::invalid_argument("em_path_controlled: dt must divide horizon");
    if (x0.size() != state_dim(model))
        throw std::invalid_argument("em_path_controlled: dimension mismatch");

    std::vector<Vector> path;
    path.reserve(static_cast<std::size_t>(steps) + 1);
    path.push_back(x0);
    Vector x = x0;

    const auto* g = std::get_if<GradientDrift>(&model);
    const auto* m = std::get_if<MixedDrift>(&model);
    double amp = g ? std::sqrt(2.0 * epsilon * dt) : std::sqrt(2.0 * epsilon * m->kappa * dt);

    for (long k = 0; k < steps; ++k) {
        double t = static_cast<double>(k) * dt;
        Vector u;
        try {
            u = control(x, t);
        } catch (const ControlQueryError&) {
            throw;
        } catch (const std::exception& e) {
            throw ControlQueryError(x, t, e.what());
        }
        if (g) {
            if (u.size() != g->dim) throw ControlQueryError(x, t, "control dimension mismatch");
            x = x - g->potential_gradient(x) * dt + u * dt + amp * rng.normal_vector(g->dim);
        } else {
            if (u.size() != m->half_dim) throw ControlQueryError(x, t, "control dimension mismatch");
            Vector xi = x.head(m->half_dim);
            Vector eta = x.tail(m->half_dim);
            Vector xi_next = xi + eta * dt;
            Vector eta_next = eta + (-m->potential_gradient(xi) - m->kappa * eta + u) * dt +
                              amp * rng.normal_vector(m->half_dim);
            x.head(m->half_dim) = xi_next;
            x.tail(m->half_dim) = eta_next;
        }
        path.push_back(x);
    }
    return path;
}

}  // namespace bridgeflow
