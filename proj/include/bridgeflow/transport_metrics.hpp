#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "bridgeflow/common.hpp"
#include "bridgeflow/core_types.hpp"

namespace bridgeflow {

// Hilbert projective metric on the positive cone:
// d(u, v) = log( max_i(u_i/v_i) / min_i(u_i/v_i) ).
inline double hilbert_metric(const Vector& u, const Vector& v) {
    if (u.size() != v.size() || u.size() == 0)
        throw std::invalid_argument("hilbert_metric: size mismatch");
    if ((u.array() <= 0.0).any() || (v.array() <= 0.0).any())
        throw std::invalid_argument("hilbert_metric: entries must be > 0");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        double r = u(i) / v(i);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    return std::log(hi / lo);
}

struct DiscreteOtPlan {
    Matrix cost;
    Matrix plan;
    double objective = 0.0;
};

namespace detail {

struct BasicArc {
    int row, col;
    double flow;
};

// Exact transportation LP via the network (MODI) simplex on the spanning
// tree basis. Supplies/demands must balance; costs arbitrary nonnegative.
inline DiscreteOtPlan transportation_simplex(const Matrix& cost, Vector a, Vector b) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (cost.rows() != n || cost.cols() != m)
        throw std::invalid_argument("transport: cost shape mismatch");
    if ((a.array() < 0).any() || (b.array() < 0).any())
        throw std::invalid_argument("transport: negative marginal");
    double sa = a.sum(), sb = b.sum();
    if (sa <= 0 || sb <= 0) throw std::invalid_argument("transport: zero total mass");
    if (std::abs(sa - sb) > 1e-9 * std::max(sa, sb))
        throw std::invalid_argument("transport: unbalanced marginals");
    b *= sa / sb;

    // northwest-corner initial basis: exactly n + m - 1 arcs
    std::vector<BasicArc> basis;
    basis.reserve(static_cast<std::size_t>(n + m - 1));
    {
        Vector ar = a, br = b;
        int i = 0, j = 0;
        for (;;) {
            double f = std::min(ar(i), br(j));
            basis.push_back({i, j, f});
            ar(i) -= f;
            br(j) -= f;
            if (i == n - 1 && j == m - 1) break;
            if (i < n - 1 && (ar(i) <= br(j) || j == m - 1))
                ++i;
            else
                ++j;
        }
    }

    const int n_nodes = n + m;  // rows 0..n-1, cols n..n+m-1
    std::vector<std::vector<int>> adj(n_nodes);    // arc indices
    std::vector<int> parent_node(n_nodes), parent_arc(n_nodes), depth(n_nodes);
    std::vector<char> seen(n_nodes);
    std::vector<double> pot(n_nodes);

    auto rebuild_adj = [&] {
        for (auto& l : adj) l.clear();
        for (int k = 0; k < static_cast<int>(basis.size()); ++k) {
            adj[basis[k].row].push_back(k);
            adj[n + basis[k].col].push_back(k);
        }
    };

    auto bfs = [&] {
        std::fill(seen.begin(), seen.end(), 0);
        std::deque<int> queue{0};
        seen[0] = 1;
        parent_node[0] = -1;
        parent_arc[0] = -1;
        depth[0] = 0;
        pot[0] = 0.0;
        while (!queue.empty()) {
            int v = queue.front();
            queue.pop_front();
            for (int k : adj[v]) {
                const auto& arc = basis[static_cast<std::size_t>(k)];
                int other = (v < n) ? n + arc.col : arc.row;
                if (seen[other]) continue;
                seen[other] = 1;
                parent_node[other] = v;
                parent_arc[other] = k;
                depth[other] = depth[v] + 1;
                pot[other] = cost(arc.row, arc.col) - pot[v];
                queue.push_back(other);
            }
        }
    };

    const double tol = 1e-11 * (1.0 + cost.cwiseAbs().maxCoeff());
    const long max_pivots = 2000L * (n + m) + 10000L;

    for (long pivot = 0;; ++pivot) {
        if (pivot > max_pivots) throw SolverError("transport: pivot limit exceeded");
        rebuild_adj();
        bfs();

        int bi = -1, bj = -1;
        double best = -tol;
        for (int i = 0; i < n; ++i) {
            double ui = pot[i];
            for (int j = 0; j < m; ++j) {
                double r = cost(i, j) - ui - pot[n + j];
                if (r < best) {
                    best = r;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0) break;  // dual feasible: optimal

        // cycle = entering arc + tree path between its endpoints
        int x = bi, y = n + bj;
        std::vector<int> up_x, up_y;  // arc indices toward the LCA
        {
            int cx = x, cy = y;
            while (depth[cx] > depth[cy]) {
                up_x.push_back(parent_arc[cx]);
                cx = parent_node[cx];
            }
            while (depth[cy] > depth[cx]) {
                up_y.push_back(parent_arc[cy]);
                cy = parent_node[cy];
            }
            while (cx != cy) {
                up_x.push_back(parent_arc[cx]);
                up_y.push_back(parent_arc[cy]);
                cx = parent_node[cx];
                cy = parent_node[cy];
            }
        }
        // ordered edge cycle: entering, then path y -> lca, then lca -> x
        std::vector<int> cycle;  // -1 marks the entering arc
        cycle.push_back(-1);
        for (int k : up_y) cycle.push_back(k);
        for (auto it = up_x.rbegin(); it != up_x.rend(); ++it) cycle.push_back(*it);

        double theta = std::numeric_limits<double>::infinity();
        int leave_pos = -1;
        for (std::size_t p = 1; p < cycle.size(); p += 2) {  // odd positions carry -theta
            double f = basis[static_cast<std::size_t>(cycle[p])].flow;
            if (f <= theta) {
                theta = f;
                leave_pos = static_cast<int>(p);
            }
        }
        if (leave_pos < 0) throw SolverError("transport: degenerate cycle");

        for (std::size_t p = 1; p < cycle.size(); ++p) {
            auto& arc = basis[static_cast<std::size_t>(cycle[p])];
            arc.flow += (p % 2 == 1) ? -theta : theta;
        }
        int leaving_arc = cycle[static_cast<std::size_t>(leave_pos)];
        basis[static_cast<std::size_t>(leaving_arc)] = {bi, bj, theta};
    }

    DiscreteOtPlan out;
    out.cost = cost;
    out.plan = Matrix::Zero(n, m);
    double obj = 0.0;
    for (const auto& arc : basis) {
        out.plan(arc.row, arc.col) += arc.flow;
        obj += arc.flow * cost(arc.row, arc.col);
    }
    out.objective = obj;
    return out;
}

}  // namespace detail

inline DiscreteOtPlan solve_transport(const Matrix& cost, const Vector& a, const Vector& b) {
    return detail::transportation_simplex(cost, a, b);
}

// Exact discrete 2-Wasserstein distance between two weighted clouds. Values
// are normalized internally to probability vectors; supports need not match.
inline double discrete_w2(const WeightedCloud& cloud_a, const WeightedCloud& cloud_b) {
    cloud_a.validate();
    cloud_b.validate();
    if (cloud_a.dim() != cloud_b.dim())
        throw std::invalid_argument("discrete_w2: state dimension mismatch");
    if (cloud_a.size() > 2000 || cloud_b.size() > 2000)
        throw std::invalid_argument(
            "discrete_w2: cloud larger than the exact-LP cap (2000); subsample first");

    const int n = cloud_a.size(), m = cloud_b.size();
    Matrix cost(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            cost(i, j) = (cloud_a.states.row(i) - cloud_b.states.row(j)).squaredNorm();

    Vector a = cloud_a.values / cloud_a.values.sum();
    Vector b = cloud_b.values / cloud_b.values.sum();
    DiscreteOtPlan plan = solve_transport(cost, a, b);
    return std::sqrt(std::max(0.0, plan.objective));
}

}  // namespace bridgeflow
