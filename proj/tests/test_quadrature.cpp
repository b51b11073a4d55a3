#include <catch2/catch_amalgamated.hpp>

#include "mclt/quadrature.hpp"
#include "mclt/rng.hpp"
#include "test_support.hpp"

using Catch::Approx;
using namespace mclt;

TEST_CASE("hermite rule small cases") {
    const auto r1 = hermite_rule(1);
    CHECK(r1.nodes[0] == 0.0);
    CHECK(r1.weights[0] == 1.0);

    const auto r2 = hermite_rule(2);
    CHECK(r2.nodes[0] == Approx(-1.0).epsilon(1e-12));
    CHECK(r2.nodes[1] == Approx(1.0).epsilon(1e-12));
    CHECK(r2.weights[0] == Approx(0.5).epsilon(1e-12));

    const auto r3 = hermite_rule(3);
    CHECK(r3.nodes[0] == Approx(-std::sqrt(3.0)).epsilon(1e-12));
    CHECK(r3.nodes[1] == 0.0);
    CHECK(r3.nodes[2] == Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(r3.weights[0] == Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(r3.weights[1] == Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("hermite rule invariants: symmetry, normalization, moment exactness") {
    for (int k : {1, 2, 3, 5, 8, 13, 21, 40, 64}) {
        const auto rule = hermite_rule(k);
        CHECK(rule.weights.sum() == Approx(1.0).margin(1e-12));
        CHECK(rule.weights.minCoeff() > 0.0);
        for (int i = 0; i < k; ++i)
            CHECK(rule.nodes[i] == Approx(-rule.nodes[k - 1 - i]).margin(0.0));
        // exact standard-normal moments for p <= 2k-1
        double moment = 1.0;   // (p-1)!! running value for even p
        for (int p = 0; p <= std::min(2 * k - 1, 13); ++p) {
            double quad = 0.0;
            for (int i = 0; i < k; ++i) quad += rule.weights[i] * std::pow(rule.nodes[i], p);
            if (p % 2 == 1) {
                CHECK(quad == Approx(0.0).margin(1e-9));
            } else {
                if (p > 0) moment *= (p - 1);
                CHECK(quad == Approx(moment).epsilon(1e-9).margin(1e-9));
            }
        }
    }
    CHECK_THROWS_AS(hermite_rule(0), std::invalid_argument);
    CHECK_THROWS_AS(hermite_rule(65), std::invalid_argument);
}

namespace {

MclmModel random_model(Rng& rng, int G, int d, int M) {
    MclmModel model;
    model.W.resize(M, d);
    for (int m = 0; m < M; ++m)
        for (int j = 0; j < d; ++j) model.W(m, j) = rng.normal();
    Eigen::VectorXd eta(G);
    for (int g = 0; g < G; ++g) eta[g] = 0.2 + rng.uniform();
    model.eta = eta / eta.sum();
    for (int g = 0; g < G; ++g) {
        Eigen::VectorXd mu(d);
        for (int j = 0; j < d; ++j) mu[j] = 1.5 * rng.normal();
        model.mu.push_back(mu);
        model.Sigma.push_back(testsupport::random_spd(rng, d));
    }
    return model;
}

}  // namespace

TEST_CASE("zero slopes give exactly N*M*log(1/2)") {
    Rng rng(3);
    MclmModel model = random_model(rng, 2, 2, 5);
    model.W.setZero();
    BinaryDataset data;
    data.responses = testsupport::random_binary(rng, 40, 5);
    const double got = loglik_quadrature(model, data, 10);
    CHECK(got == Approx(40 * 5 * std::log(0.5)).margin(1e-9));
    CHECK(got == Approx(loglik_quadrature(model, data, 20)).margin(1e-9));
}

TEST_CASE("duplicate components collapse to the single-component value") {
    Rng rng(5);
    MclmModel one = random_model(rng, 1, 2, 6);
    MclmModel two = one;
    two.eta = Eigen::VectorXd::Constant(2, 0.5);
    two.mu.push_back(one.mu[0]);
    two.Sigma.push_back(one.Sigma[0]);
    BinaryDataset data;
    data.responses = testsupport::random_binary(rng, 30, 6);
    CHECK(loglik_quadrature(two, data, 10) ==
          Approx(loglik_quadrature(one, data, 10)).margin(1e-10));
}

TEST_CASE("quadrature agrees with Monte Carlo integration") {
    Rng rng(9);
    for (int trial = 0; trial < 3; ++trial) {
        const int d = 1 + trial % 2;
        MclmModel model = random_model(rng, 1 + trial % 2, d, 3);
        BinaryDataset data;
        data.responses = testsupport::random_binary(rng, 20, 3);
        const double quad = loglik_quadrature(model, data, 20);
        const auto mc = testsupport::mc_loglik(model, data.responses, 100000, 1000 + trial);
        INFO("quad " << quad << " mc " << mc.value << " se " << mc.se);
        CHECK(std::abs(quad - mc.value) <= 3.0 * mc.se + 1e-6);
    }
}

TEST_CASE("node count grows stable: k=10 vs k=20 on small models") {
    Rng rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        MclmModel model = random_model(rng, 2, 2, 5);
        BinaryDataset data;
        data.responses = testsupport::random_binary(rng, 50, 5);
        const double a = loglik_quadrature(model, data, 10);
        const double b = loglik_quadrature(model, data, 20);
        CHECK(std::abs(a - b) < 1e-6 * data.rows());
    }
}

TEST_CASE("grid size guard") {
    Rng rng(17);
    MclmModel model = random_model(rng, 1, 2, 3);
    BinaryDataset data;
    data.responses = testsupport::random_binary(rng, 5, 3);
    CHECK_THROWS_AS(loglik_quadrature(model, data, 2), std::invalid_argument);
    // 64^4 > 1e6 tensor nodes
    MclmModel big = random_model(rng, 1, 4, 6);
    BinaryDataset data4;
    data4.responses = testsupport::random_binary(rng, 5, 6);
    CHECK_THROWS_AS(loglik_quadrature(big, data4, 64), std::invalid_argument);
}
