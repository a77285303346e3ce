#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "bridgeflow/common.hpp"
#include "bridgeflow/rng.hpp"

namespace bridgeflow {

// N scattered state points carrying strictly positive scalar samples of a
// PDF or Schroedinger factor, tagged with the physical time they belong to.
struct WeightedCloud {
    Matrix states;   // N x n
    Vector values;   // N, all > 0
    double time = 0.0;

    WeightedCloud() = default;
    WeightedCloud(Matrix states_, Vector values_, double time_)
        : states(std::move(states_)), values(std::move(values_)), time(time_) {
        validate();
    }

    int size() const { return static_cast<int>(states.rows()); }
    int dim() const { return static_cast<int>(states.cols()); }

    void validate() const {
        if (states.rows() < 1)
            throw std::invalid_argument("WeightedCloud: need at least one point");
        if (values.size() != states.rows())
            throw std::invalid_argument("WeightedCloud: values/states size mismatch");
        if (!states.allFinite())
            throw std::invalid_argument("WeightedCloud: nonfinite state coordinate");
        if (!values.allFinite() || (values.array() <= 0.0).any())
            throw std::invalid_argument("WeightedCloud: values must be finite and > 0");
        if (time < -1e-12 || time > 1.0 + 1e-12)
            throw std::invalid_argument("WeightedCloud: time outside [0,1]");
    }
};

struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Vector> means;
    std::vector<Matrix> covariances;

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    void validate() const {
        if (weights.empty() || means.size() != weights.size() ||
            covariances.size() != weights.size())
            throw std::invalid_argument("GaussianMixture: inconsistent component lists");
        double sum = 0.0;
        for (double w : weights) {
            if (!(w > 0.0)) throw std::invalid_argument("GaussianMixture: weights must be > 0");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("GaussianMixture: weights must sum to 1");
        int n = dim();
        for (std::size_t i = 0; i < means.size(); ++i) {
            if (means[i].size() != n || covariances[i].rows() != n || covariances[i].cols() != n)
                throw std::invalid_argument("GaussianMixture: dimension mismatch");
            Eigen::SelfAdjointEigenSolver<Matrix> es(covariances[i]);
            if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
                throw std::invalid_argument("degenerate mixture component");
        }
    }

    static GaussianMixture single(Vector mean, Matrix cov) {
        GaussianMixture gm;
        gm.weights = {1.0};
        gm.means = {std::move(mean)};
        gm.covariances = {std::move(cov)};
        gm.validate();
        return gm;
    }
};

namespace detail {

struct MixtureComponentCache {
    Eigen::LLT<Matrix> llt;
    double log_norm;  // -n/2 log(2 pi) - 1/2 log det
};

inline std::vector<MixtureComponentCache> mixture_cache(const GaussianMixture& gm) {
    std::vector<MixtureComponentCache> cache;
    cache.reserve(gm.weights.size());
    int n = gm.dim();
    for (const auto& cov : gm.covariances) {
        MixtureComponentCache c;
        c.llt.compute(cov);
        if (c.llt.info() != Eigen::Success)
            throw std::invalid_argument("degenerate mixture component");
        double log_det = 0.0;
        for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(c.llt.matrixL()(i, i));
        c.log_norm = -0.5 * n * std::log(2.0 * M_PI) - 0.5 * log_det;
        cache.push_back(std::move(c));
    }
    return cache;
}

}  // namespace detail

inline double mixture_pdf(const GaussianMixture& gm, const Vector& x) {
    gm.validate();
    if (x.size() != gm.dim() || !x.allFinite())
        throw std::invalid_argument("mixture_pdf: bad query point");
    auto cache = detail::mixture_cache(gm);
    double total = 0.0;
    for (std::size_t i = 0; i < gm.weights.size(); ++i) {
        Vector d = x - gm.means[i];
        Vector s = cache[i].llt.matrixL().solve(d);
        total += gm.weights[i] * std::exp(cache[i].log_norm - 0.5 * s.squaredNorm());
    }
    return total;
}

// Batched evaluation at the rows of `points`.
inline Vector mixture_pdf(const GaussianMixture& gm, const Matrix& points) {
    gm.validate();
    if (points.cols() != gm.dim())
        throw std::invalid_argument("mixture_pdf: dimension mismatch");
    auto cache = detail::mixture_cache(gm);
    Vector out = Vector::Zero(points.rows());
    for (std::size_t i = 0; i < gm.weights.size(); ++i) {
        const Vector& mu = gm.means[i];
        for (Eigen::Index r = 0; r < points.rows(); ++r) {
            Vector d = points.row(r).transpose() - mu;
            Vector s = cache[i].llt.matrixL().solve(d);
            out(r) += gm.weights[i] * std::exp(cache[i].log_norm - 0.5 * s.squaredNorm());
        }
    }
    return out;
}

inline Matrix mixture_sample(const GaussianMixture& gm, int count, RngStream& rng) {
    gm.validate();
    if (count < 1) throw std::invalid_argument("mixture_sample: count must be >= 1");
    int n = gm.dim();
    std::vector<Matrix> chol;
    chol.reserve(gm.weights.size());
    for (const auto& cov : gm.covariances) {
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("degenerate mixture component");
        chol.push_back(llt.matrixL());
    }
    Matrix out(count, n);
    for (int r = 0; r < count; ++r) {
        double u = rng.uniform();
        std::size_t k = 0;
        double acc = 0.0;
        for (; k < gm.weights.size(); ++k) {
            acc += gm.weights[k];
            if (u < acc) break;
        }
        if (k == gm.weights.size()) k = gm.weights.size() - 1;
        out.row(r) = (gm.means[k] + chol[k] * rng.normal_vector(n)).transpose();
    }
    return out;
}

// Full parameter bundle for one bridge solve. The horizon is [0,1], so the
// per-flow step counts must tile it exactly.
struct SbpConfig {
    double epsilon = 1.0;
    double gamma = 0.5;
    double tau = 1e-3;
    double sigma = 1e-3;
    double kappa = 0.0;  // mixed drift only
    int num_samples = 100;
    int num_steps = 1000;
    double tol_sb = 0.1;
    double tol_pr = 1e-3;
    int max_iter_sb = 500;
    int max_iter_pr = 500;
    std::uint64_t seed = 0;
    bool log_domain = false;
    double rbf_shape = 0.0;  // <= 0 selects the median nearest-neighbor default

    void validate() const {
        auto positive = [](double v, const char* key) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, std::string(key) + " must be > 0");
        };
        positive(epsilon, "epsilon");
        positive(gamma, "gamma");
        positive(tau, "tau");
        positive(sigma, "sigma");
        positive(tol_sb, "tol_sb");
        positive(tol_pr, "tol_pr");
        if (num_samples < 1) throw ConfigError("num_samples", "num_samples must be >= 1");
        if (num_steps < 1) throw ConfigError("num_steps", "num_steps must be >= 1");
        if (max_iter_sb < 1) throw ConfigError("max_iter_sb", "max_iter_sb must be >= 1");
        if (max_iter_pr < 1) throw ConfigError("max_iter_pr", "max_iter_pr must be >= 1");
        if (std::abs(tau * num_steps - 1.0) > 1e-9)
            throw ConfigError("tau", "tau * num_steps must equal 1");
        if (std::abs(sigma * num_steps - 1.0) > 1e-9)
            throw ConfigError("sigma", "sigma * num_steps must equal 1");
    }
};

}  // namespace bridgeflow
