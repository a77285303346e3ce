#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <variant>
#include <vector>

#include "bridgeflow/common.hpp"

namespace bridgeflow {

// Multivariate polynomial given as (coefficient, exponent-vector) terms.
// Evaluation and differentiation are exact monomial arithmetic.
struct PolynomialPotential {
    struct Term {
        double coeff;
        std::vector<int> exponents;
    };

    int dim = 0;
    std::vector<Term> terms;

    static PolynomialPotential zero(int dim) { return PolynomialPotential{dim, {}}; }

    // V = 1/2 ||x||^2, the Ornstein-Uhlenbeck potential
    static PolynomialPotential quadratic(int dim) {
        PolynomialPotential p{dim, {}};
        for (int i = 0; i < dim; ++i) {
            std::vector<int> e(dim, 0);
            e[i] = 2;
            p.terms.push_back({0.5, e});
        }
        return p;
    }

    void validate() const {
        if (dim < 1) throw std::invalid_argument("PolynomialPotential: dim must be >= 1");
        for (const auto& t : terms) {
            if (static_cast<int>(t.exponents.size()) != dim)
                throw std::invalid_argument("PolynomialPotential: exponent vector length != dim");
            for (int e : t.exponents)
                if (e < 0) throw std::invalid_argument("PolynomialPotential: negative exponent");
        }
    }

    double value(const Vector& x) const {
        double total = 0.0;
        for (const auto& t : terms) {
            double m = t.coeff;
            for (int j = 0; j < dim; ++j)
                for (int k = 0; k < t.exponents[j]; ++k) m *= x(j);
            total += m;
        }
        return total;
    }

    Vector gradient(const Vector& x) const {
        Vector g = Vector::Zero(dim);
        for (const auto& t : terms) {
            for (int j = 0; j < dim; ++j) {
                int e = t.exponents[j];
                if (e == 0) continue;
                double m = t.coeff * e;
                for (int k = 0; k < e - 1; ++k) m *= x(j);
                for (int l = 0; l < dim; ++l) {
                    if (l == j) continue;
                    for (int k = 0; k < t.exponents[l]; ++k) m *= x(l);
                }
                g(j) += m;
            }
        }
        return g;
    }
};

using PotentialFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

// Prior drift f = -grad V. V is assumed C^2 with inf V > -inf; this is not
// checked symbolically, only via the finite-difference consistency tests.
struct GradientDrift {
    int dim = 0;
    PotentialFn potential;
    GradientFn potential_gradient;

    static GradientDrift from_polynomial(PolynomialPotential p) {
        p.validate();
        auto shared = std::make_shared<PolynomialPotential>(std::move(p));
        GradientDrift d;
        d.dim = shared->dim;
        d.potential = [shared](const Vector& x) { return shared->value(x); };
        d.potential_gradient = [shared](const Vector& x) { return shared->gradient(x); };
        return d;
    }
};

// Langevin-type drift (eta, -grad V(xi) - kappa eta) on x = (xi, eta),
// n = 2m. Control and noise act on the eta block only.
struct MixedDrift {
    int half_dim = 0;
    PotentialFn potential;           // V(xi)
    GradientFn potential_gradient;   // grad_xi V
    double kappa = 0.0;

    int dim() const { return 2 * half_dim; }

    static MixedDrift from_polynomial(PolynomialPotential p, double kappa) {
        p.validate();
        if (!(kappa > 0.0)) throw std::invalid_argument("MixedDrift: kappa must be > 0");
        auto shared = std::make_shared<PolynomialPotential>(std::move(p));
        MixedDrift d;
        d.half_dim = shared->dim;
        d.kappa = kappa;
        d.potential = [shared](const Vector& xi) { return shared->value(xi); };
        d.potential_gradient = [shared](const Vector& xi) { return shared->gradient(xi); };
        return d;
    }
};

using DriftModel = std::variant<GradientDrift, MixedDrift>;

inline int state_dim(const DriftModel& model) {
    if (const auto* g = std::get_if<GradientDrift>(&model)) return g->dim;
    return std::get<MixedDrift>(model).dim();
}

inline Vector drift_eval(const DriftModel& model, const Vector& x) {
    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        if (x.size() != g->dim) throw std::invalid_argument("drift_eval: dimension mismatch");
        return -g->potential_gradient(x);
    }
    const auto& m = std::get<MixedDrift>(model);
    if (x.size() != m.dim()) throw std::invalid_argument("drift_eval: dimension mismatch");
    Vector xi = x.head(m.half_dim);
    Vector eta = x.tail(m.half_dim);
    Vector out(m.dim());
    out.head(m.half_dim) = eta;
    out.tail(m.half_dim) = -m.potential_gradient(xi) - m.kappa * eta;
    return out;
}

inline double hamiltonian(const MixedDrift& model, const Vector& x) {
    if (x.size() != model.dim()) throw std::invalid_argument("hamiltonian: dimension mismatch");
    Vector xi = x.head(model.half_dim);
    Vector eta = x.tail(model.half_dim);
    return 0.5 * eta.squaredNorm() + model.potential(xi);
}

inline double hamiltonian(const DriftModel& model, const Vector& x) {
    if (std::holds_alternative<GradientDrift>(model))
        throw std::invalid_argument("hamiltonian: defined only for mixed drift");
    return hamiltonian(std::get<MixedDrift>(model), x);
}

// Unnormalized log of the stationary density: -V/eps (gradient) or -H/eps (mixed).
inline double stationary_log_density(const DriftModel& model, const Vector& x, double epsilon) {
    if (const auto* g = std::get_if<GradientDrift>(&model)) {
        if (x.size() != g->dim)
            throw std::invalid_argument("stationary_log_density: dimension mismatch");
        return -g->potential(x) / epsilon;
    }
    return -hamiltonian(std::get<MixedDrift>(model), x) / epsilon;
}

}  // namespace bridgeflow
