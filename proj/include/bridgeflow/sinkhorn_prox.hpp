#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "bridgeflow/common.hpp"
#include "bridgeflow/drift_models.hpp"

namespace bridgeflow {

// One Wasserstein proximal step in discrete (dual Sinkhorn) form:
//   min_{phi>0} min_{M in Pi(a,phi)} 1/2 <cost, M> + gamma <M, log M>
//                                   + h <v + eps log phi, phi>
// with Pi(a,b) = { M >= 0, M 1 = a, M^T 1 = b }.
struct ProxProblem {
    Vector prev_values;  // a
    Matrix cost;         // C or S_tau / S_sigma
    Vector potential;    // v: V(x^i) or 1/2 ||eta^i||^2 at the previous support
    double step = 0.0;   // h: tau, sigma, kappa*tau or kappa*sigma
    double epsilon = 0.0;
    double gamma = 0.0;
    bool log_domain = false;
};

struct ProxSolution {
    Vector next_values;  // phi
    Matrix coupling;     // M
    Vector dual_u, dual_w;
    int iterations = 0;
    double marginal_residual = 0.0;
    int clamped_inputs = 0;                 // a_i below 1e-300, clamped
    std::vector<double> hilbert_history;    // Hilbert metric between w iterates
};

inline Matrix cost_matrix_euclidean(const Matrix& x_prev, const Matrix& x_next) {
    if (x_prev.rows() != x_next.rows() || x_prev.cols() != x_next.cols())
        throw std::invalid_argument("cost_matrix_euclidean: shape mismatch");
    const Eigen::Index n = x_prev.rows();
    Matrix cost(n, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto ii = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j < n; ++j)
            cost(ii, j) = (x_prev.row(ii) - x_next.row(j)).squaredNorm();
    });
    return cost;
}

// Kinetic ground cost s_h(x, xbar) of the mixed conservative-dissipative flow:
//   || etabar - eta + h grad V(xi) ||^2 + 12 || (xibar - xi)/h - (etabar + eta)/2 ||^2
// with (xi, eta) from the row of x_prev and (xibar, etabar) from x_next.
inline Matrix cost_matrix_mixed(const Matrix& x_prev, const Matrix& x_next, double h,
                                const GradientFn& grad_v) {
    if (!(h > 0.0)) throw std::invalid_argument("cost_matrix_mixed: step must be > 0");
    if (x_prev.rows() != x_next.rows() || x_prev.cols() != x_next.cols())
        throw std::invalid_argument("cost_matrix_mixed: shape mismatch");
    if (x_prev.cols() % 2 != 0)
        throw std::invalid_argument("cost_matrix_mixed: state dimension must be even");
    const Eigen::Index n = x_prev.rows();
    const Eigen::Index m = x_prev.cols() / 2;
    Matrix cost(n, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto ii = static_cast<Eigen::Index>(i);
        Vector xi = x_prev.row(ii).head(m).transpose();
        Vector eta = x_prev.row(ii).tail(m).transpose();
        Vector g = grad_v(xi);
        for (Eigen::Index j = 0; j < n; ++j) {
            Vector xib = x_next.row(j).head(m).transpose();
            Vector etab = x_next.row(j).tail(m).transpose();
            double t1 = (etab - eta + h * g).squaredNorm();
            double t2 = ((xib - xi) / h - 0.5 * (etab + eta)).squaredNorm();
            cost(ii, j) = t1 + 12.0 * t2;
        }
    });
    return cost;
}

inline Matrix gibbs_kernel(const Matrix& cost, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("gibbs_kernel: gamma must be > 0");
    if (!cost.allFinite() || (cost.array() < 0.0).any())
        throw std::invalid_argument("gibbs_kernel: cost entries must be finite and >= 0");
    return (-cost / (2.0 * gamma)).array().exp();
}

namespace detail {

// log-sum-exp of (logK.row(i) + logx) over columns, one entry per row
inline Vector lse_rows(const Matrix& log_kernel, const Vector& logx) {
    const Eigen::Index n = log_kernel.rows();
    Vector out(n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto ii = static_cast<Eigen::Index>(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < log_kernel.cols(); ++j)
            mx = std::max(mx, log_kernel(ii, j) + logx(j));
        double s = 0.0;
        for (Eigen::Index j = 0; j < log_kernel.cols(); ++j)
            s += std::exp(log_kernel(ii, j) + logx(j) - mx);
        out(ii) = mx + std::log(s);
    });
    return out;
}

inline Vector lse_cols(const Matrix& log_kernel, const Vector& logx) {
    const Eigen::Index m = log_kernel.cols();
    Vector out(m);
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t j) {
        auto jj = static_cast<Eigen::Index>(j);
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < log_kernel.rows(); ++i)
            mx = std::max(mx, log_kernel(i, jj) + logx(i));
        double s = 0.0;
        for (Eigen::Index i = 0; i < log_kernel.rows(); ++i)
            s += std::exp(log_kernel(i, jj) + logx(i) - mx);
        out(jj) = mx + std::log(s);
    });
    return out;
}

}  // namespace detail

// Dual fixed point (derived from the KKT conditions of the objective above,
// verified against a direct constrained minimization in the test suite):
//   Gamma = exp(-cost / 2 gamma),  xi = exp(-v/eps - 1 - gamma/(2 h eps))
//   u <- a ./ (Gamma w),  w <- ( xi ./ (Gamma^T u) )^(1 / (1 + gamma/(h eps)))
//   phi = w .* (Gamma^T u),  M = diag(u) Gamma diag(w)
inline ProxSolution prox_step(const ProxProblem& problem, double tol_pr, int max_iter_pr) {
    if (!(problem.step > 0.0)) throw std::invalid_argument("prox_step: step must be > 0");
    if (!(problem.epsilon > 0.0)) throw std::invalid_argument("prox_step: epsilon must be > 0");
    if (!(problem.gamma > 0.0)) throw std::invalid_argument("prox_step: gamma must be > 0");
    if (!(tol_pr > 0.0)) throw std::invalid_argument("prox_step: tol_pr must be > 0");
    if (!problem.cost.allFinite() || (problem.cost.array() < 0.0).any())
        throw std::invalid_argument("prox_step: cost entries must be finite and >= 0");

    const Eigen::Index n = problem.prev_values.size();
    if (problem.cost.rows() != n || problem.cost.cols() != n || problem.potential.size() != n)
        throw std::invalid_argument("prox_step: size mismatch");

    ProxSolution sol;
    Vector a = problem.prev_values;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(a(i) > 0.0) || !std::isfinite(a(i)))
            throw std::invalid_argument("prox_step: prev_values must be finite and > 0");
        if (a(i) < 1e-300) {
            a(i) = 1e-300;
            ++sol.clamped_inputs;
        }
    }

    const double h = problem.step;
    const double eps = problem.epsilon;
    const double gamma = problem.gamma;
    const double power = 1.0 / (1.0 + gamma / (h * eps));
    const Vector log_xi =
        (-problem.potential / eps).array() - 1.0 - gamma / (2.0 * h * eps);

    auto breakdown = [] { return SolverError("numerical breakdown (consider larger gamma)"); };
    std::vector<double> residuals;
    residuals.reserve(static_cast<std::size_t>(max_iter_pr));

    if (!problem.log_domain) {
        Matrix kernel = gibbs_kernel(problem.cost, gamma);
        Vector w = Vector::Ones(n), u = Vector::Ones(n);
        Vector log_w = Vector::Zero(n);
        bool converged = false;
        for (int it = 1; it <= max_iter_pr; ++it) {
            Vector kw = kernel * w;
            if ((kw.array() <= 0.0).any() || !kw.allFinite()) throw breakdown();
            Vector u_new = a.array() / kw.array();
            Vector ktu = kernel.transpose() * u_new;
            if ((ktu.array() <= 0.0).any() || !ktu.allFinite()) throw breakdown();
            Vector log_w_new = power * (log_xi - ktu.array().log().matrix());
            Vector w_new = log_w_new.array().exp();
            if (!w_new.allFinite() || !u_new.allFinite()) throw breakdown();

            double dw = (log_w_new - log_w).cwiseAbs().maxCoeff();
            double du = it == 1 ? dw : (u_new.array() / u.array()).log().cwiseAbs().maxCoeff();
            double delta = std::max(dw, du);
            residuals.push_back(delta);
            sol.hilbert_history.push_back((log_w_new - log_w).maxCoeff() -
                                          (log_w_new - log_w).minCoeff());
            u = u_new;
            w = w_new;
            log_w = log_w_new;
            sol.iterations = it;
            if (delta < tol_pr) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw ConvergenceError("prox_step: max_iter_pr exceeded", residuals);

        Vector kw = kernel * w;
        u = a.array() / kw.array();
        Vector ktu = kernel.transpose() * u;
        sol.next_values = w.array() * ktu.array();
        sol.coupling = u.asDiagonal() * kernel * w.asDiagonal();
        sol.dual_u = u;
        sol.dual_w = w;
    } else {
        Matrix log_kernel = -problem.cost / (2.0 * gamma);
        Vector log_a = a.array().log();
        Vector log_w = Vector::Zero(n), log_u = Vector::Zero(n);
        bool converged = false;
        for (int it = 1; it <= max_iter_pr; ++it) {
            Vector log_u_new = log_a - detail::lse_rows(log_kernel, log_w);
            Vector log_w_new = power * (log_xi - detail::lse_cols(log_kernel, log_u_new));
            if (!log_u_new.allFinite() || !log_w_new.allFinite()) throw breakdown();

            double dw = (log_w_new - log_w).cwiseAbs().maxCoeff();
            double du = it == 1 ? dw : (log_u_new - log_u).cwiseAbs().maxCoeff();
            double delta = std::max(dw, du);
            residuals.push_back(delta);
            sol.hilbert_history.push_back((log_w_new - log_w).maxCoeff() -
                                          (log_w_new - log_w).minCoeff());
            log_u = log_u_new;
            log_w = log_w_new;
            sol.iterations = it;
            if (delta < tol_pr) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw ConvergenceError("prox_step: max_iter_pr exceeded", residuals);

        log_u = log_a - detail::lse_rows(log_kernel, log_w);
        Vector log_ktu = detail::lse_cols(log_kernel, log_u);
        sol.next_values = (log_w + log_ktu).array().exp();
        sol.coupling.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                sol.coupling(i, j) = std::exp(log_u(i) + log_kernel(i, j) + log_w(j));
        sol.dual_u = log_u.array().exp();
        sol.dual_w = log_w.array().exp();
    }

    if (!sol.next_values.allFinite() || (sol.next_values.array() <= 0.0).any())
        throw SolverError("numerical breakdown (consider larger gamma)");

    double row_res = (sol.coupling.rowwise().sum() - a).cwiseAbs().maxCoeff();
    double col_res =
        (sol.coupling.colwise().sum().transpose() - sol.next_values).cwiseAbs().maxCoeff();
    sol.marginal_residual = std::max(row_res, col_res);
    return sol;
}

}  // namespace bridgeflow
