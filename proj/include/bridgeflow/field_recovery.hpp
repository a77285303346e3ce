#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bridgeflow/common.hpp"
#include "bridgeflow/core_types.hpp"
#include "bridgeflow/drift_models.hpp"

namespace bridgeflow {

// Plain multiquadric interpolant, kernel k(x, c) = sqrt(||x - c||^2 + a^2),
// no polynomial tail.
struct RbfInterpolant {
    Matrix centers;
    Vector coefficients;
    double shape = 0.0;

    double evaluate(const Vector& x) const {
        double s2 = shape * shape;
        double total = 0.0;
        for (Eigen::Index i = 0; i < centers.rows(); ++i)
            total += coefficients(i) *
                     std::sqrt((x.transpose() - centers.row(i)).squaredNorm() + s2);
        return total;
    }

    Vector evaluate_rows(const Matrix& points) const {
        Vector out(points.rows());
        double s2 = shape * shape;
        parallel_for(static_cast<std::size_t>(points.rows()), [&](std::size_t r) {
            auto rr = static_cast<Eigen::Index>(r);
            double total = 0.0;
            for (Eigen::Index i = 0; i < centers.rows(); ++i)
                total += coefficients(i) *
                         std::sqrt((points.row(rr) - centers.row(i)).squaredNorm() + s2);
            out(rr) = total;
        });
        return out;
    }
};

// Median nearest-neighbor distance of the rows; the default shape parameter.
inline double default_rbf_shape(const Matrix& points) {
    const Eigen::Index n = points.rows();
    if (n < 2) return 1.0;
    std::vector<double> nn(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto ii = static_cast<Eigen::Index>(i);
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == ii) continue;
            best = std::min(best, (points.row(ii) - points.row(j)).squaredNorm());
        }
        nn[i] = std::sqrt(best);
    });
    std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
    double med = nn[nn.size() / 2];
    return med > 0.0 ? med : 1.0;
}

// Fits the N x N multiquadric system. Duplicate centers (within 1e-12) are
// merged, averaging their values.
inline RbfInterpolant rbf_fit(const WeightedCloud& cloud, double shape) {
    cloud.validate();
    if (!(shape > 0.0)) throw std::invalid_argument("rbf_fit: shape must be > 0");

    // merge near-duplicate centers
    std::vector<Eigen::Index> keep;
    std::vector<std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < cloud.states.rows(); ++i) {
        bool merged = false;
        for (std::size_t k = 0; k < keep.size(); ++k) {
            if ((cloud.states.row(i) - cloud.states.row(keep[k])).norm() <= 1e-12) {
                groups[k].push_back(i);
                merged = true;
                break;
            }
        }
        if (!merged) {
            keep.push_back(i);
            groups.push_back({i});
        }
    }
    const auto n = static_cast<Eigen::Index>(keep.size());
    Matrix centers(n, cloud.dim());
    Vector values(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        centers.row(k) = cloud.states.row(keep[static_cast<std::size_t>(k)]);
        double acc = 0.0;
        for (Eigen::Index i : groups[static_cast<std::size_t>(k)]) acc += cloud.values(i);
        values(k) = acc / static_cast<double>(groups[static_cast<std::size_t>(k)].size());
    }

    Matrix a(n, n);
    double s2 = shape * shape;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            a(i, j) = std::sqrt((centers.row(i) - centers.row(j)).squaredNorm() + s2);

    Eigen::PartialPivLU<Matrix> lu(a);
    if (lu.rcond() < 1e-12)
        throw SolverError("rbf_fit: interpolation system ill-conditioned; try a different shape");
    Vector coef = lu.solve(values);
    coef += lu.solve(values - a * coef);  // one step of iterative refinement

    RbfInterpolant out{std::move(centers), std::move(coef), shape};
    double resid = (a * out.coefficients - values).cwiseAbs().maxCoeff();
    double scale = values.cwiseAbs().maxCoeff();
    if (!(resid <= 1e-8 * std::max(scale, 1e-30)))
        throw SolverError("rbf_fit: reproduction residual too large; try a different shape");
    return out;
}

// rbf_fit with the documented fallback applied: when the system is too
// ill-conditioned at the requested shape, retry with progressively smaller
// shapes (flatter multiquadrics condition worse, sharper ones better).
inline RbfInterpolant rbf_fit_auto(const WeightedCloud& cloud, double shape) {
    double s = shape > 0.0 ? shape : default_rbf_shape(cloud.states);
    for (int attempt = 0;; ++attempt) {
        try {
            return rbf_fit(cloud, s);
        } catch (const SolverError&) {
            if (attempt >= 8) throw;
            s *= 0.5;
        }
    }
}

// Uniform tensor-product query grid.
struct TensorGrid {
    Vector mins, maxs;
    std::vector<int> counts;

    int dim() const { return static_cast<int>(counts.size()); }

    void validate() const {
        if (counts.empty() || mins.size() != dim() || maxs.size() != dim())
            throw std::invalid_argument("TensorGrid: inconsistent specification");
        for (int d = 0; d < dim(); ++d) {
            if (counts[static_cast<std::size_t>(d)] < 2)
                throw std::invalid_argument("TensorGrid: need >= 2 nodes per axis");
            if (!(maxs(d) > mins(d)))
                throw std::invalid_argument("TensorGrid: max must exceed min");
        }
    }

    double spacing(int axis) const {
        return (maxs(axis) - mins(axis)) / (counts[static_cast<std::size_t>(axis)] - 1);
    }

    Eigen::Index node_count() const {
        Eigen::Index total = 1;
        for (int c : counts) total *= c;
        return total;
    }

    // row-major over axes: the last axis varies fastest
    Matrix nodes() const {
        validate();
        Eigen::Index total = node_count();
        Matrix out(total, dim());
        for (Eigen::Index idx = 0; idx < total; ++idx) {
            Eigen::Index rem = idx;
            for (int d = dim() - 1; d >= 0; --d) {
                int c = counts[static_cast<std::size_t>(d)];
                int i = static_cast<int>(rem % c);
                rem /= c;
                out(idx, d) = mins(d) + spacing(d) * i;
            }
        }
        return out;
    }
};

// rho = (phi interpolant) .* (phihat interpolant) at the query points,
// clamped below at zero. Both clouds must be at the same physical time;
// the caller owns the index pairing.
inline Vector compose_density(const WeightedCloud& phi_cloud, const WeightedCloud& phihat_cloud,
                              const Matrix& query_points, double shape_phi, double shape_phihat) {
    if (phi_cloud.dim() != phihat_cloud.dim() || query_points.cols() != phi_cloud.dim())
        throw std::invalid_argument("compose_density: dimension mismatch");

    // reject queries absurdly far outside the data
    auto hull_guard = [&](const WeightedCloud& c) {
        Vector lo = c.states.colwise().minCoeff();
        Vector hi = c.states.colwise().maxCoeff();
        double diam = (hi - lo).norm();
        for (Eigen::Index r = 0; r < query_points.rows(); ++r) {
            double outside = 0.0;
            for (Eigen::Index d = 0; d < query_points.cols(); ++d) {
                double q = query_points(r, d);
                double excess = std::max({lo(d) - q, q - hi(d), 0.0});
                outside += excess * excess;
            }
            if (std::sqrt(outside) > 3.0 * std::max(diam, 1e-12))
                throw std::invalid_argument(
                    "compose_density: query more than 3 hull diameters outside the data");
        }
    };
    hull_guard(phi_cloud);
    hull_guard(phihat_cloud);

    Vector phi = rbf_fit_auto(phi_cloud, shape_phi).evaluate_rows(query_points);
    Vector phihat = rbf_fit_auto(phihat_cloud, shape_phihat).evaluate_rows(query_points);
    return (phi.array() * phihat.array()).max(0.0);
}

inline Vector compose_density(const WeightedCloud& phi_cloud, const WeightedCloud& phihat_cloud,
                              const Matrix& query_points, double shape) {
    double sp = shape > 0.0 ? shape : default_rbf_shape(phi_cloud.states);
    double sh = shape > 0.0 ? shape : default_rbf_shape(phihat_cloud.states);
    return compose_density(phi_cloud, phihat_cloud, query_points, sp, sh);
}

struct ControlFieldResult {
    Matrix nodes;             // grid nodes, one per row
    Matrix controls;          // control vector per node (dim = n or m)
    std::vector<bool> valid;  // false where log phi could not be formed
    int invalid_count = 0;
};

// u = 2 eps B^T grad log phi on a uniform tensor grid via central
// differences (one-sided at the boundary). B^T is the identity for
// gradient drift and the eta-block selector for mixed drift, so the
// returned control has dimension m in the mixed case. Nodes with
// nonpositive interpolated phi are flagged invalid, as are nodes whose
// difference stencil touches one.
inline ControlFieldResult control_field(const WeightedCloud& phi_cloud, const DriftModel& model,
                                        double epsilon, const TensorGrid& grid, double shape) {
    grid.validate();
    const int n = state_dim(model);
    if (phi_cloud.dim() != n || grid.dim() != n)
        throw std::invalid_argument("control_field: dimension mismatch");

    RbfInterpolant interp = rbf_fit_auto(phi_cloud, shape);

    ControlFieldResult out;
    out.nodes = grid.nodes();
    Eigen::Index total = out.nodes.rows();
    Vector phi = interp.evaluate_rows(out.nodes);

    std::vector<bool> node_ok(static_cast<std::size_t>(total));
    Vector logphi(total);
    for (Eigen::Index i = 0; i < total; ++i) {
        node_ok[static_cast<std::size_t>(i)] = phi(i) > 0.0;
        logphi(i) = phi(i) > 0.0 ? std::log(phi(i)) : 0.0;
    }

    // strides for neighbor lookup (last axis fastest)
    std::vector<Eigen::Index> stride(static_cast<std::size_t>(n));
    {
        Eigen::Index s = 1;
        for (int d = n - 1; d >= 0; --d) {
            stride[static_cast<std::size_t>(d)] = s;
            s *= grid.counts[static_cast<std::size_t>(d)];
        }
    }

    const bool mixed = std::holds_alternative<MixedDrift>(model);
    const int half = mixed ? std::get<MixedDrift>(model).half_dim : 0;
    const int out_dim = mixed ? half : n;
    out.controls = Matrix::Zero(total, out_dim);
    out.valid.assign(static_cast<std::size_t>(total), true);

    for (Eigen::Index idx = 0; idx < total; ++idx) {
        // decode the multi-index
        std::vector<int> mi(static_cast<std::size_t>(n));
        {
            Eigen::Index rem = idx;
            for (int d = n - 1; d >= 0; --d) {
                int c = grid.counts[static_cast<std::size_t>(d)];
                mi[static_cast<std::size_t>(d)] = static_cast<int>(rem % c);
                rem /= c;
            }
        }
        bool ok = node_ok[static_cast<std::size_t>(idx)];
        Vector grad = Vector::Zero(n);
        for (int d = 0; d < n && ok; ++d) {
            int c = grid.counts[static_cast<std::size_t>(d)];
            int i = mi[static_cast<std::size_t>(d)];
            double h = grid.spacing(d);
            Eigen::Index s = stride[static_cast<std::size_t>(d)];
            Eigen::Index lo = idx, hi = idx;
            double denom;
            if (i == 0) {
                hi = idx + s;
                denom = h;
            } else if (i == c - 1) {
                lo = idx - s;
                denom = h;
            } else {
                lo = idx - s;
                hi = idx + s;
                denom = 2.0 * h;
            }
            if (!node_ok[static_cast<std::size_t>(lo)] || !node_ok[static_cast<std::size_t>(hi)]) {
                ok = false;
                break;
            }
            grad(d) = (logphi(hi) - logphi(lo)) / denom;
        }
        if (!ok) {
            out.valid[static_cast<std::size_t>(idx)] = false;
            ++out.invalid_count;
            continue;
        }
        if (mixed)
            out.controls.row(idx) = 2.0 * epsilon * grad.tail(half).transpose();
        else
            out.controls.row(idx) = 2.0 * epsilon * grad.transpose();
    }
    return out;
}

}  // namespace bridgeflow
