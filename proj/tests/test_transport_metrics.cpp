#include <catch2/catch_amalgamated.hpp>

#include "bridgeflow/transport_metrics.hpp"
#include "support/oracles.hpp"

using namespace bridgeflow;

namespace {

WeightedCloud cloud_1d(std::initializer_list<double> xs, std::initializer_list<double> ws,
                       double t = 0.0) {
    Matrix states(static_cast<Eigen::Index>(xs.size()), 1);
    Vector values(static_cast<Eigen::Index>(ws.size()));
    Eigen::Index i = 0;
    for (double x : xs) states(i++, 0) = x;
    i = 0;
    for (double w : ws) values(i++) = w;
    return WeightedCloud(states, values, t);
}

WeightedCloud random_cloud(int n, int dim, RngStream& rng, double t = 0.0) {
    Matrix states(n, dim);
    Vector values(n);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < dim; ++d) states(i, d) = rng.uniform(-2.0, 2.0);
        values(i) = rng.uniform(0.1, 1.0);
    }
    return WeightedCloud(states, values, t);
}

}  // namespace

TEST_CASE("hilbert metric basic identities") {
    Vector u(2), v(2);
    u << 1.0, 2.0;
    v << 1.0, 1.0;
    REQUIRE(hilbert_metric(u, u) == 0.0);
    REQUIRE(hilbert_metric(2.0 * u, u) == 0.0);
    REQUIRE(hilbert_metric(u, v) == Catch::Approx(std::log(2.0)));
    for (double c : {0.5, 3.0, 100.0})
        REQUIRE(hilbert_metric(c * u, v) == Catch::Approx(hilbert_metric(u, v)));
    Vector bad(2);
    bad << 1.0, 0.0;
    REQUIRE_THROWS_AS(hilbert_metric(bad, v), std::invalid_argument);
}

TEST_CASE("discrete_w2 of identical clouds is zero") {
    RngStream rng(1);
    WeightedCloud c = random_cloud(15, 2, rng);
    REQUIRE(discrete_w2(c, c) == Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("discrete_w2 of two atoms is the distance") {
    WeightedCloud a = cloud_1d({0.5}, {1.0});
    WeightedCloud b = cloud_1d({3.0}, {2.0});
    REQUIRE(discrete_w2(a, b) == Catch::Approx(2.5));
}

TEST_CASE("discrete_w2 of the half-half split") {
    WeightedCloud a = cloud_1d({0.0, 1.0}, {0.5, 0.5});
    WeightedCloud b = cloud_1d({0.0}, {1.0});
    REQUIRE(discrete_w2(a, b) == Catch::Approx(std::sqrt(0.5)).epsilon(1e-9));
}

TEST_CASE("discrete_w2 matches the 1D quantile-coupling oracle") {
    RngStream rng(17);
    for (int trial = 0; trial < 12; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform(0.0, 18.0));
        int m = 2 + static_cast<int>(rng.uniform(0.0, 18.0));
        WeightedCloud a = random_cloud(n, 1, rng);
        WeightedCloud b = random_cloud(m, 1, rng);
        double lp = discrete_w2(a, b);
        double oracle =
            std::sqrt(oracles::w2sq_1d(a.states.col(0), a.values, b.states.col(0), b.values));
        REQUIRE(lp == Catch::Approx(oracle).epsilon(1e-8).margin(1e-10));
    }
}

TEST_CASE("discrete_w2 symmetry and triangle inequality") {
    RngStream rng(23);
    for (int trial = 0; trial < 6; ++trial) {
        WeightedCloud a = random_cloud(8, 2, rng);
        WeightedCloud b = random_cloud(9, 2, rng);
        WeightedCloud c = random_cloud(7, 2, rng);
        double ab = discrete_w2(a, b);
        double ba = discrete_w2(b, a);
        double ac = discrete_w2(a, c);
        double cb = discrete_w2(c, b);
        REQUIRE(ab == Catch::Approx(ba).epsilon(1e-8).margin(1e-10));
        REQUIRE(ab <= ac + cb + 1e-8);
    }
}

TEST_CASE("discrete_w2 is invariant under permutation of one cloud") {
    RngStream rng(29);
    WeightedCloud a = random_cloud(12, 2, rng);
    Matrix perm_states(a.size(), a.dim());
    Vector perm_values(a.size());
    for (int i = 0; i < a.size(); ++i) {
        perm_states.row(i) = a.states.row((i + 5) % a.size());
        perm_values(i) = a.values((i + 5) % a.size());
    }
    WeightedCloud b(perm_states, perm_values, 0.0);
    REQUIRE(discrete_w2(a, b) == Catch::Approx(0.0).margin(1e-7));
}

TEST_CASE("transport plan satisfies its marginals and objective bookkeeping") {
    RngStream rng(31);
    int n = 10, m = 13;
    Matrix cost(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) cost(i, j) = rng.uniform(0.0, 5.0);
    Vector a(n), b(m);
    for (int i = 0; i < n; ++i) a(i) = rng.uniform(0.1, 1.0);
    for (int j = 0; j < m; ++j) b(j) = rng.uniform(0.1, 1.0);
    a /= a.sum();
    b /= b.sum();
    DiscreteOtPlan plan = solve_transport(cost, a, b);
    REQUIRE((plan.plan.rowwise().sum() - a).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((plan.plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE(plan.objective ==
            Catch::Approx((plan.plan.array() * plan.cost.array()).sum()).epsilon(1e-12));
    REQUIRE((plan.plan.array() >= -1e-15).all());
}

TEST_CASE("discrete_w2 enforces the exact-LP size cap") {
    Matrix states = Matrix::Random(2001, 1);
    Vector values = Vector::Ones(2001);
    WeightedCloud big(states, values, 0.0);
    WeightedCloud small = cloud_1d({0.0}, {1.0});
    REQUIRE_THROWS_WITH(discrete_w2(big, small),
                        Catch::Matchers::ContainsSubstring("subsample"));
}
