#pragma once

#include <cmath>
#include <vector>

#include "bridgeflow/common.hpp"
#include "bridgeflow/transport_metrics.hpp"

namespace bridgeflow {

struct Grid1D {
    Vector points;
    double spacing = 0.0;

    static Grid1D uniform(double lo, double hi, int count) {
        if (count < 2) throw std::invalid_argument("Grid1D: need at least 2 points");
        if (!(hi > lo)) throw std::invalid_argument("Grid1D: hi must exceed lo");
        Grid1D g;
        g.points = Vector::LinSpaced(count, lo, hi);
        g.spacing = (hi - lo) / (count - 1);
        g.validate();
        return g;
    }

    int size() const { return static_cast<int>(points.size()); }

    void validate() const {
        if (points.size() < 2) throw std::invalid_argument("Grid1D: need at least 2 points");
        double d0 = points(1) - points(0);
        if (!(d0 > 0)) throw std::invalid_argument("Grid1D: points must be increasing");
        for (Eigen::Index i = 1; i < points.size(); ++i) {
            double d = points(i) - points(i - 1);
            if (std::abs(d - d0) > 1e-12 * std::max(1.0, std::abs(d0)))
                throw std::invalid_argument("Grid1D: spacing not uniform");
        }
    }

    // trapezoid weights
    Vector quadrature_weights() const {
        Vector w = Vector::Constant(points.size(), spacing);
        w(0) *= 0.5;
        w(points.size() - 1) *= 0.5;
        return w;
    }
};

// Heat kernel of dx = sqrt(2 eps) dw between times t and s:
//   (4 pi eps |t-s|)^{-n/2} exp(-||x-y||^2 / (4 eps |t-s|)).
// Symmetric in its two time arguments (the elapsed time is what matters);
// coincident times are rejected.
inline double heat_kernel(double t, const Vector& x, double s, const Vector& y, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("heat_kernel: epsilon must be > 0");
    if (x.size() != y.size()) throw std::invalid_argument("heat_kernel: dimension mismatch");
    double elapsed = std::abs(t - s);
    if (!(elapsed > 0.0)) throw std::invalid_argument("heat_kernel: coincident times");
    double n = static_cast<double>(x.size());
    return std::pow(4.0 * M_PI * epsilon * elapsed, -0.5 * n) *
           std::exp(-(x - y).squaredNorm() / (4.0 * epsilon * elapsed));
}

// G x G kernel matrix over a 1D grid for elapsed time `elapsed`, with the
// trapezoid quadrature weights folded into the columns, so that
// (K v)(x_i) approximates the integral of K(x_i, y) v(y) dy.
inline Matrix heat_kernel_matrix(const Grid1D& grid, double elapsed, double epsilon) {
    if (!(elapsed > 0.0)) throw std::invalid_argument("heat_kernel_matrix: elapsed must be > 0");
    const int g = grid.size();
    Vector w = grid.quadrature_weights();
    Matrix k(g, g);
    double norm = std::pow(4.0 * M_PI * epsilon * elapsed, -0.5);
    double inv = 1.0 / (4.0 * epsilon * elapsed);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            double d = grid.points(i) - grid.points(j);
            k(i, j) = norm * std::exp(-d * d * inv) * w(j);
        }
    return k;
}

struct ClassicalFactors {
    Vector phi1;
    Vector phihat0;
    int iterations = 0;
    std::vector<double> hilbert_residuals;  // between successive phi1 iterates
};

// Fixed point of the discrete Schroedinger system
//   phihat0 <- rho0 ./ (K phi1),  phi1 <- rho1 ./ (K^T phihat0)
// iterated until the Hilbert-metric change of phi1 drops below tol. The
// gauge is fixed afterwards by normalizing sum(phi1) = G.
inline ClassicalFactors classical_fixed_point(const Vector& rho0_vals, const Vector& rho1_vals,
                                              const Matrix& kernel, double tol, int max_iter) {
    const Eigen::Index g = rho0_vals.size();
    if (rho1_vals.size() != g || kernel.rows() != g || kernel.cols() != g)
        throw std::invalid_argument("classical_fixed_point: size mismatch");
    if ((rho0_vals.array() <= 0).any() || (rho1_vals.array() <= 0).any())
        throw std::invalid_argument("classical_fixed_point: marginals must be > 0");
    if ((kernel.array() <= 0).any())
        throw std::invalid_argument("classical_fixed_point: kernel must be entrywise > 0");

    ClassicalFactors out;
    Vector phi1 = Vector::Ones(g);
    Vector phihat0(g);
    for (int it = 1; it <= max_iter; ++it) {
        phihat0 = rho0_vals.array() / (kernel * phi1).array();
        Vector phi1_new = rho1_vals.array() / (kernel.transpose() * phihat0).array();
        double res = hilbert_metric(phi1_new, phi1);
        out.hilbert_residuals.push_back(res);
        phi1 = phi1_new;
        out.iterations = it;
        if (res < tol) {
            double scale = static_cast<double>(g) / phi1.sum();
            out.phi1 = phi1 * scale;
            out.phihat0 = rho0_vals.array() / (kernel * out.phi1).array();
            return out;
        }
    }
    throw ConvergenceError("classical_fixed_point: max_iter exceeded", out.hilbert_residuals);
}

// phi(x, t) = int K(t, x, 1, y) phi1(y) dy; exact passthrough at t = 1.
inline Vector classical_propagate_phi(const Grid1D& grid, const Vector& phi1, double t,
                                      double epsilon) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("classical_propagate: t outside [0,1]");
    if (t == 1.0) return phi1;
    return heat_kernel_matrix(grid, 1.0 - t, epsilon) * phi1;
}

// phihat(x, t) = int K(0, y, t, x) phihat0(y) dy; exact passthrough at t = 0.
inline Vector classical_propagate_phihat(const Grid1D& grid, const Vector& phihat0, double t,
                                         double epsilon) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("classical_propagate: t outside [0,1]");
    if (t == 0.0) return phihat0;
    return heat_kernel_matrix(grid, t, epsilon) * phihat0;
}

// u = 2 eps d/dx log phi on the grid; centered differences inside,
// one-sided at the boundary.
inline Vector classical_control(const Grid1D& grid, const Vector& phi_vals, double epsilon) {
    const Eigen::Index g = phi_vals.size();
    if (g < 3) throw std::invalid_argument("classical_control: grid must have >= 3 points");
    if (grid.points.size() != g) throw std::invalid_argument("classical_control: size mismatch");
    if ((phi_vals.array() <= 0).any())
        throw std::invalid_argument("classical_control: phi values must be > 0");
    Vector logphi = phi_vals.array().log();
    Vector u(g);
    double h = grid.spacing;
    u(0) = (logphi(1) - logphi(0)) / h;
    u(g - 1) = (logphi(g - 1) - logphi(g - 2)) / h;
    for (Eigen::Index i = 1; i < g - 1; ++i) u(i) = (logphi(i + 1) - logphi(i - 1)) / (2.0 * h);
    return 2.0 * epsilon * u;
}

}  // namespace bridgeflow
