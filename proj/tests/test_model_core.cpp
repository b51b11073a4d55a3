#include <catch2/catch_amalgamated.hpp>

#include "mclt/model.hpp"
#include "mclt/rng.hpp"

using Catch::Approx;
using namespace mclt;

TEST_CASE("response probability basics") {
    Eigen::Vector2d w(0, 0), y(5, -3);
    CHECK(response_probability(w, y) == 0.5);
    CHECK(response_probability(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 0)) == 0.5);
    // direct evaluation of logistic(2)
    CHECK(response_probability(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1)) ==
          Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK_THROWS_AS(response_probability(Eigen::Vector2d(1, 1), Eigen::Vector3d(1, 1, 1)),
                    std::invalid_argument);
}

TEST_CASE("response probability stays strictly inside (0,1) and is symmetric") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd w(3), y(3);
        const double scale = trial % 3 == 0 ? 500.0 : 3.0;   // force |w.y| > 30 sometimes
        for (int i = 0; i < 3; ++i) {
            w[i] = scale * rng.normal();
            y[i] = rng.normal();
        }
        const double p = response_probability(w, y);
        const double q = response_probability(Eigen::VectorXd(-w), y);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        CHECK(p + q == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("median response") {
    CHECK(median_response(Eigen::Vector2d(1, 2), Eigen::Vector2d(-2, 1)) == 0.5);
    CHECK(median_response(Eigen::Vector2d(2, 0), Eigen::Vector2d(1, 9)) ==
          Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(median_response(Eigen::Vector2d(-3, 0), Eigen::Vector2d(1, 0)) ==
          Approx(1.0 / (1.0 + std::exp(3.0))).epsilon(1e-12));
}

TEST_CASE("block adjusted median response") {
    const Eigen::Vector2d w(0.4, -1.2), mu(0.9, 0.3);
    Eigen::VectorXd b(3);
    b << -0.5, 0.2, 1.4;
    CHECK(block_adjusted_median_response(w, mu, 0.0, b) ==
          Approx(median_response(w, mu)).epsilon(1e-14));
    Eigen::VectorXd one = Eigen::VectorXd::Zero(1);
    CHECK(block_adjusted_median_response(w, mu, 2.0, one) ==
          Approx(median_response(w, mu)).epsilon(1e-14));
    // logistic symmetry around w.mu = 0
    Eigen::VectorXd pm(2);
    pm << -1.0, 1.0;
    CHECK(block_adjusted_median_response(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 5), 1.0,
                                         pm) == Approx(0.5).margin(1e-14));
    CHECK_THROWS_AS(block_adjusted_median_response(w, mu, 1.0, Eigen::VectorXd()),
                    std::invalid_argument);
}

TEST_CASE("free parameter counts reproduce the published table") {
    auto count = [](CovarianceStructure s, int G, int d, int M) {
        return count_free_parameters(ModelConfig{G, d, s, false}, M);
    };
    CHECK(count(CovarianceStructure::EII, 2, 2, 50) == 102);
    CHECK(count(CovarianceStructure::VVV, 2, 2, 50) == 107);
    CHECK(count(CovarianceStructure::EII, 5, 2, 50) == 111);
    CHECK(count(CovarianceStructure::VVV, 5, 2, 50) == 125);
    CHECK(count(CovarianceStructure::EII, 2, 2, 100) == 202);
    CHECK(count(CovarianceStructure::VVV, 2, 2, 100) == 207);
    CHECK(count(CovarianceStructure::EII, 5, 2, 100) == 211);
    CHECK(count(CovarianceStructure::VVV, 5, 2, 100) == 225);
}

TEST_CASE("free parameter count bounds and monotonicity") {
    for (auto s : all_structures) {
        const int at_small = count_free_parameters(ModelConfig{2, 2, s, false}, 50);
        CHECK(at_small >= 102);
        CHECK(at_small <= 107);
        const int at_large = count_free_parameters(ModelConfig{5, 2, s, false}, 100);
        CHECK(at_large >= 211);
        CHECK(at_large <= 225);
        // non-decreasing in G and M
        int prev = 0;
        for (int G = 1; G <= 6; ++G) {
            const int k = count_free_parameters(ModelConfig{G, 2, s, false}, 30);
            CHECK(k >= prev);
            prev = k;
        }
        prev = 0;
        for (int M = 4; M <= 64; M += 10) {
            const int k = count_free_parameters(ModelConfig{3, 2, s, false}, M);
            CHECK(k >= prev);
            prev = k;
        }
    }
}

TEST_CASE("block variant adds M + 2I parameters") {
    const int flat = count_free_parameters(ModelConfig{3, 2, CovarianceStructure::VEI, false}, 40);
    const int blocked =
        count_free_parameters(ModelConfig{3, 2, CovarianceStructure::VEI, true}, 40, 12);
    CHECK(blocked == flat + 40 + 2 * 12);
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(validate(ModelConfig{0, 1, CovarianceStructure::VVV, false}, 5),
                    std::invalid_argument);
    CHECK_THROWS_AS(validate(ModelConfig{1, 6, CovarianceStructure::VVV, false}, 5),
                    std::invalid_argument);
}

TEST_CASE("hard labels break ties toward the lowest component") {
    Eigen::MatrixXd z(2, 3);
    z << 0.4, 0.4, 0.2, 0.1, 0.6, 0.3;
    const auto labels = hard_labels(z);
    CHECK(labels[0] == 0);
    CHECK(labels[1] == 1);
}

TEST_CASE("dataset validation rejects bad entries") {
    BinaryDataset data;
    data.responses.resize(2, 2);
    data.responses << 0, 1, 1, 0.5;
    CHECK_THROWS_AS(validate(data), data_error);
    data.responses(1, 1) = 0;
    CHECK_NOTHROW(validate(data));
    data.block_of = {0};
    data.block_ids = {"a"};
    CHECK_THROWS_AS(validate(data), data_error);
}
