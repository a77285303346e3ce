// Test-only reference implementations, independent of the library code
// paths they are used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Exact squared 2-Wasserstein distance between two weighted 1D point sets
// via the quantile coupling (monotone rearrangement).
inline double w2sq_1d(VectorXd x1, VectorXd w1, VectorXd x2, VectorXd w2) {
    auto order = [](VectorXd& x, VectorXd& w) {
        std::vector<int> idx(static_cast<std::size_t>(x.size()));
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return x(a) < x(b); });
        VectorXd xs(x.size()), ws(w.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            xs(static_cast<Eigen::Index>(i)) = x(idx[i]);
            ws(static_cast<Eigen::Index>(i)) = w(idx[i]);
        }
        x = xs;
        w = ws / ws.sum();
    };
    order(x1, w1);
    order(x2, w2);
    double total = 0.0, q_prev = 0.0;
    Eigen::Index i = 0, j = 0;
    double c1 = w1(0), c2 = w2(0);
    while (true) {
        double q = std::min(c1, c2);
        total += (q - q_prev) * (x1(i) - x2(j)) * (x1(i) - x2(j));
        q_prev = q;
        if (q >= 1.0 - 1e-15) break;
        if (c1 <= c2 && i + 1 < x1.size()) {
            ++i;
            c1 += w1(i);
        } else if (j + 1 < x2.size()) {
            ++j;
            c2 += w2(j);
        } else {
            ++i;
            c1 += w1(i);
        }
    }
    return total;
}

// Direct minimization of the discrete Sinkhorn-prox objective
//   f(M) = 1/2 <C, M> + gamma <M, log M> + h <v + eps log(M^T 1), M^T 1>
// over M >= 0 with row sums fixed to a, via exponentiated-gradient descent
// with backtracking (each row lives on a scaled simplex). Independent of the
// dual fixed-point implementation.
struct KktOracleResult {
    MatrixXd coupling;
    VectorXd phi;
    double objective = 0.0;
};

inline double prox_objective(const MatrixXd& coupling, const MatrixXd& cost, const VectorXd& v,
                             double h, double eps, double gamma) {
    VectorXd phi = coupling.colwise().sum().transpose();
    double f = 0.5 * (cost.array() * coupling.array()).sum();
    f += gamma * (coupling.array() * coupling.array().log()).sum();
    f += h * ((v.array() + eps * phi.array().log()) * phi.array()).sum();
    return f;
}

inline KktOracleResult kkt_bruteforce(const MatrixXd& cost, const VectorXd& a, const VectorXd& v,
                                      double h, double eps, double gamma, int max_iter = 200000,
                                      double tol = 1e-13) {
    const Eigen::Index n = a.size();
    MatrixXd m = MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i).setConstant(a(i) / static_cast<double>(n));

    double f = prox_objective(m, cost, v, h, eps, gamma);
    double step = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        VectorXd phi = m.colwise().sum().transpose();
        MatrixXd grad(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                grad(i, j) = 0.5 * cost(i, j) + gamma * (1.0 + std::log(m(i, j))) +
                             h * (v(j) + eps * std::log(phi(j)) + eps);

        bool improved = false;
        for (int bt = 0; bt < 60; ++bt) {
            MatrixXd trial = (m.array().log() - step * grad.array()).exp();
            for (Eigen::Index i = 0; i < n; ++i) trial.row(i) *= a(i) / trial.row(i).sum();
            double ft = prox_objective(trial, cost, v, h, eps, gamma);
            if (ft < f - 1e-300) {
                double rel = (f - ft) / (std::abs(f) + 1e-30);
                m = trial;
                f = ft;
                improved = true;
                step *= 1.3;
                if (rel < tol && it > 100) it = max_iter;  // converged
                break;
            }
            step *= 0.5;
        }
        if (!improved) break;
    }
    KktOracleResult out;
    out.coupling = m;
    out.phi = m.colwise().sum().transpose();
    out.objective = f;
    return out;
}

// Transient law of the Ornstein-Uhlenbeck SDE dx = -x dt + sqrt(2 eps) dw:
// N(exp(-t) mu0, exp(-2t) S0 + eps (1 - exp(-2t)) I).
struct OuTransient {
    VectorXd mean;
    MatrixXd cov;
};

inline OuTransient ou_transient(const VectorXd& mu0, const MatrixXd& s0, double eps, double t) {
    OuTransient out;
    out.mean = std::exp(-t) * mu0;
    out.cov = std::exp(-2.0 * t) * s0 +
              eps * (1.0 - std::exp(-2.0 * t)) * MatrixXd::Identity(s0.rows(), s0.cols());
    return out;
}

inline double gaussian_pdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    Eigen::LLT<MatrixXd> llt(cov);
    VectorXd d = llt.matrixL().solve(x - mean);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < cov.rows(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double n = static_cast<double>(x.size());
    return std::exp(-0.5 * d.squaredNorm() - 0.5 * log_det - 0.5 * n * std::log(2.0 * M_PI));
}

// Explicit finite-difference marchers on a uniform 1D grid, used as the
// independent oracle for the backward-Kolmogorov / Fokker-Planck transform
// identity. Dirichlet zero boundaries; callers keep the data away from the
// edges.

// backward Kolmogorov TVP  d(phi)/dt = Vx phi_x - eps phi_xx, phi(x,1) given,
// marched from t = 1 down to t_end.
inline VectorXd fd_backward_kolmogorov(const VectorXd& grid, VectorXd phi1, double eps,
                                       const std::function<double(double)>& vx, double t_end,
                                       double dt) {
    const Eigen::Index g = grid.size();
    double dx = grid(1) - grid(0);
    VectorXd phi = std::move(phi1);
    double t = 1.0;
    auto steps = static_cast<long>(std::llround((1.0 - t_end) / dt));
    for (long s = 0; s < steps; ++s) {
        VectorXd next = phi;
        for (Eigen::Index i = 1; i + 1 < g; ++i) {
            double px = (phi(i + 1) - phi(i - 1)) / (2.0 * dx);
            double pxx = (phi(i + 1) - 2.0 * phi(i) + phi(i - 1)) / (dx * dx);
            // d(phi)/dt = vx px - eps pxx; stepping backward in t
            next(i) = phi(i) - dt * (vx(grid(i)) * px - eps * pxx);
        }
        next(0) = 0.0;
        next(g - 1) = 0.0;
        phi = next;
        t -= dt;
    }
    return phi;
}

// FPK IVP  dp/ds = (p Vx)_x + eps p_xx = Vxx p + Vx p_x + eps p_xx,
// p(x, 0) given, marched to s_end.
inline VectorXd fd_fokker_planck(const VectorXd& grid, VectorXd p0, double eps,
                                 const std::function<double(double)>& vx,
                                 const std::function<double(double)>& vxx, double s_end,
                                 double dt) {
    const Eigen::Index g = grid.size();
    double dx = grid(1) - grid(0);
    VectorXd p = std::move(p0);
    auto steps = static_cast<long>(std::llround(s_end / dt));
    for (long s = 0; s < steps; ++s) {
        VectorXd next = p;
        for (Eigen::Index i = 1; i + 1 < g; ++i) {
            double px = (p(i + 1) - p(i - 1)) / (2.0 * dx);
            double pxx = (p(i + 1) - 2.0 * p(i) + p(i - 1)) / (dx * dx);
            next(i) = p(i) + dt * (vxx(grid(i)) * p(i) + vx(grid(i)) * px + eps * pxx);
        }
        next(0) = 0.0;
        next(g - 1) = 0.0;
        p = next;
    }
    return p;
}

// closed form for the OU backward flow started from phi1(y) = exp(-y^2/4):
// q(x, s) = sqrt(2/(2+v)) exp(-m^2 / (2(2+v))), m = x e^{-s}, v = eps(1-e^{-2s})
inline double ou_backward_quartic_free(double x, double s, double eps) {
    double m = x * std::exp(-s);
    double v = eps * (1.0 - std::exp(-2.0 * s));
    return std::sqrt(2.0 / (2.0 + v)) * std::exp(-m * m / (2.0 * (2.0 + v)));
}

}  // namespace oracles
