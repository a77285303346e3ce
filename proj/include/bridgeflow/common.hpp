#pragma once

#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace bridgeflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an iterative scheme hits its iteration cap; carries the
// residual trail so callers can report how close it got.
class ConvergenceError : public SolverError {
public:
    ConvergenceError(const std::string& msg, std::vector<double> residuals)
        : SolverError(msg), residual_history(std::move(residuals)) {}
    std::vector<double> residual_history;
    double last_residual() const {
        return residual_history.empty() ? std::nan("") : residual_history.back();
    }
};

// Configuration problems; `key` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key_, const std::string& msg)
        : std::runtime_error(msg), key(std::move(key_)) {}
    std::string key;
};

// Thread budget for internal parallel loops. BRIDGEFLOW_THREADS caps it.
inline int thread_budget() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("BRIDGEFLOW_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1 && cap < hw) hw = cap;
    }
    return hw;
}

// Static row sharding; each index is processed by exactly one thread, so
// results are deterministic for deterministic bodies.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    int nthreads = thread_budget();
    if (nthreads <= 1 || n < 64) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads));
    std::size_t chunk = (n + static_cast<std::size_t>(nthreads) - 1) / static_cast<std::size_t>(nthreads);
    for (int t = 0; t < nthreads; ++t) {
        std::size_t lo = static_cast<std::size_t>(t) * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace bridgeflow
