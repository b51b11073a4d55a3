#include <catch2/catch_amalgamated.hpp>

#include "mclt/covariance.hpp"
#include "mclt/rng.hpp"
#include "test_support.hpp"

using Catch::Approx;
using namespace mclt;

namespace {

ScatterSet random_scatter(Rng& rng, int G, int d) {
    ScatterSet s;
    s.n.resize(G);
    for (int g = 0; g < G; ++g) {
        s.S.push_back(testsupport::random_spd(rng, d, 1.0 + rng.uniform()));
        s.n[g] = 5.0 + 40.0 * rng.uniform();
    }
    return s;
}

}  // namespace

TEST_CASE("VVV projection is the identity") {
    Rng rng(11);
    const ScatterSet s = random_scatter(rng, 3, 3);
    const auto out = project_structure(s, CovarianceStructure::VVV);
    for (int g = 0; g < 3; ++g) CHECK(out[g] == s.S[g]);   // bitwise
}

TEST_CASE("VII projects diag(2,4) to 3I") {
    ScatterSet s;
    s.S.push_back(Eigen::Vector2d(2, 4).asDiagonal());
    s.n = Eigen::VectorXd::Constant(1, 10.0);
    const auto out = project_structure(s, CovarianceStructure::VII);
    CHECK(out[0](0, 0) == Approx(3.0).epsilon(1e-14));
    CHECK(out[0](1, 1) == Approx(3.0).epsilon(1e-14));
    CHECK(out[0](0, 1) == 0.0);
}

TEST_CASE("EEE pools with weights") {
    ScatterSet s;
    s.S.push_back(Eigen::MatrixXd::Identity(2, 2));
    s.S.push_back(3.0 * Eigen::MatrixXd::Identity(2, 2));
    s.n.resize(2);
    s.n << 10, 30;
    const auto out = project_structure(s, CovarianceStructure::EEE);
    CHECK(out[0](0, 0) == Approx(2.5).epsilon(1e-14));
    CHECK(out[0] == out[1]);   // shared factor replicated bitwise
}

TEST_CASE("projection satisfies the declared structure") {
    Rng rng(23);
    for (auto structure : all_structures) {
        for (int trial = 0; trial < 4; ++trial) {
            const int d = 2 + trial % 2;
            const ScatterSet s = random_scatter(rng, 3, d);
            const auto out = project_structure(s, structure);
            // symmetric positive-definite outputs
            for (const auto& S : out) {
                CHECK(S.isApprox(S.transpose(), 1e-12));
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
                CHECK(es.eigenvalues().minCoeff() > 0.0);
            }
            // volume/shape split: lambda = |Sigma|^(1/d), |A| = 1
            for (const auto& S : out) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
                const double lambda = std::pow(S.determinant(), 1.0 / d);
                const Eigen::VectorXd shape = es.eigenvalues() / lambda;
                double logdet_shape = 0.0;
                for (int j = 0; j < d; ++j) logdet_shape += std::log(shape[j]);
                CHECK(logdet_shape == Approx(0.0).margin(1e-8));
            }
            if (structure == CovarianceStructure::EEE || structure == CovarianceStructure::EEI ||
                structure == CovarianceStructure::EII) {
                CHECK(out[0] == out[1]);
                CHECK(out[1] == out[2]);
            }
            // diagonal families stay diagonal
            if (structure == CovarianceStructure::EEI || structure == CovarianceStructure::VEI ||
                structure == CovarianceStructure::EVI || structure == CovarianceStructure::VVI ||
                structure == CovarianceStructure::EII || structure == CovarianceStructure::VII) {
                for (const auto& S : out)
                    CHECK((S - Eigen::MatrixXd(S.diagonal().asDiagonal())).cwiseAbs().maxCoeff() ==
                          0.0);
            }
            // spherical families are multiples of I
            if (structure == CovarianceStructure::EII || structure == CovarianceStructure::VII)
                for (const auto& S : out) CHECK(S(0, 0) == S(1, 1));
            // common-volume families share |Sigma|^(1/d)
            if (structure == CovarianceStructure::EVI || structure == CovarianceStructure::EVV ||
                structure == CovarianceStructure::EVE || structure == CovarianceStructure::EEV) {
                const double v0 = std::pow(out[0].determinant(), 1.0 / d);
                for (const auto& S : out)
                    CHECK(std::pow(S.determinant(), 1.0 / d) == Approx(v0).epsilon(1e-7));
            }
        }
    }
}

TEST_CASE("idempotence: projecting a projected set is a fixed point") {
    Rng rng(37);
    for (auto structure : all_structures) {
        const ScatterSet s = random_scatter(rng, 3, 2);
        const auto once = project_structure(s, structure);
        ScatterSet s2;
        s2.S = once;
        s2.n = s.n;
        const auto twice = project_structure(s2, structure);
        for (int g = 0; g < 3; ++g)
            CHECK((twice[g] - once[g]).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-10));
    }
}

TEST_CASE("objective dominance over random feasible candidates") {
    Rng rng(51);
    for (auto structure : all_structures) {
        const ScatterSet s = random_scatter(rng, 2, 2);
        const auto out = project_structure(s, structure);
        const double best = structured_criterion(s, out);
        for (int trial = 0; trial < 1000; ++trial) {
            // random structure-feasible candidate built from random factors
            const double l1 = std::exp(rng.normal()), l2 = std::exp(rng.normal());
            Eigen::VectorXd a(2);
            const double r = std::exp(0.7 * rng.normal());
            a << r, 1.0 / r;
            const double theta = 3.14159 * rng.uniform();
            Eigen::MatrixXd Q(2, 2);
            Q << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
            auto make = [&](double vol, Eigen::VectorXd shape, const Eigen::MatrixXd& orient) {
                return Eigen::MatrixXd(orient * (vol * shape).asDiagonal() *
                                       orient.transpose());
            };
            std::vector<Eigen::MatrixXd> candidate(2);
            const Eigen::VectorXd ident = Eigen::VectorXd::Ones(2);
            const Eigen::MatrixXd id2 = Eigen::MatrixXd::Identity(2, 2);
            const double r2 = std::exp(0.7 * rng.normal());
            Eigen::VectorXd a2(2);
            a2 << r2, 1.0 / r2;
            const double theta2 = 3.14159 * rng.uniform();
            Eigen::MatrixXd Q2(2, 2);
            Q2 << std::cos(theta2), -std::sin(theta2), std::sin(theta2), std::cos(theta2);
            switch (structure) {
                case CovarianceStructure::EEE: candidate = {make(l1, a, Q), make(l1, a, Q)}; break;
                case CovarianceStructure::VEE: candidate = {make(l1, a, Q), make(l2, a, Q)}; break;
                case CovarianceStructure::EVE: candidate = {make(l1, a, Q), make(l1, a2, Q)}; break;
                case CovarianceStructure::VVE: candidate = {make(l1, a, Q), make(l2, a2, Q)}; break;
                case CovarianceStructure::EEV: candidate = {make(l1, a, Q), make(l1, a, Q2)}; break;
                case CovarianceStructure::VEV: candidate = {make(l1, a, Q), make(l2, a, Q2)}; break;
                case CovarianceStructure::EVV: candidate = {make(l1, a, Q), make(l1, a2, Q2)}; break;
                case CovarianceStructure::VVV: candidate = {make(l1, a, Q), make(l2, a2, Q2)}; break;
                case CovarianceStructure::EEI: candidate = {make(l1, a, id2), make(l1, a, id2)}; break;
                case CovarianceStructure::VEI: candidate = {make(l1, a, id2), make(l2, a, id2)}; break;
                case CovarianceStructure::EVI: candidate = {make(l1, a, id2), make(l1, a2, id2)}; break;
                case CovarianceStructure::VVI: candidate = {make(l1, a, id2), make(l2, a2, id2)}; break;
                case CovarianceStructure::EII: candidate = {make(l1, ident, id2), make(l1, ident, id2)}; break;
                case CovarianceStructure::VII: candidate = {make(l1, ident, id2), make(l2, ident, id2)}; break;
            }
            CHECK(structured_criterion(s, candidate) <= best + 1e-9);
        }
    }
}

TEST_CASE("criterion nesting across structure flexibility") {
    Rng rng(65);
    for (int trial = 0; trial < 10; ++trial) {
        const ScatterSet s = random_scatter(rng, 3, 2);
        const double eii = structured_criterion(s, project_structure(s, CovarianceStructure::EII));
        const double vii = structured_criterion(s, project_structure(s, CovarianceStructure::VII));
        const double vvi = structured_criterion(s, project_structure(s, CovarianceStructure::VVI));
        const double vvv = structured_criterion(s, project_structure(s, CovarianceStructure::VVV));
        CHECK(eii <= vii + 1e-10);
        CHECK(vii <= vvi + 1e-10);
        CHECK(vvi <= vvv + 1e-10);
    }
}

TEST_CASE("singular scatter triggers the eigenvalue floor and the flag") {
    ScatterSet s;
    Eigen::MatrixXd rank1 = Eigen::MatrixXd::Zero(2, 2);
    rank1(0, 0) = 4.0;   // second eigenvalue is exactly zero
    s.S.push_back(rank1);
    s.n = Eigen::VectorXd::Constant(1, 8.0);
    ProjectionInfo info;
    const auto out = project_structure(s, CovarianceStructure::VVV, &info);
    CHECK(info.floored);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out[0]);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("structured optimum within 1e-4 of a brute-force search") {
    Rng rng(79);
    ScatterSet s = random_scatter(rng, 2, 2);
    const std::vector<Eigen::MatrixXd>& S = s.S;
    const Eigen::VectorXd& n = s.n;

    auto check_structure = [&](CovarianceStructure structure,
                               const std::function<std::vector<Eigen::MatrixXd>(
                                   const Eigen::VectorXd&)>& decode,
                               Eigen::VectorXd x0) {
        const auto projected = project_structure(s, structure);
        const double impl = testsupport::criterion2(S, n, projected);
        auto objective = [&](const Eigen::VectorXd& x) {
            return testsupport::criterion2(S, n, decode(x));
        };
        const Eigen::VectorXd xbest = testsupport::coordinate_maximize(objective, x0);
        const double oracle = objective(xbest);
        INFO("structure " << to_string(structure) << " impl " << impl << " oracle " << oracle);
        CHECK(impl >= oracle - 1e-4);
    };

    // EII: log lambda
    check_structure(
        CovarianceStructure::EII,
        [&](const Eigen::VectorXd& x) {
            std::vector<Eigen::MatrixXd> out(2, std::exp(x[0]) * Eigen::MatrixXd::Identity(2, 2));
            return out;
        },
        Eigen::VectorXd::Zero(1));
    // VII: log lambda_g
    check_structure(
        CovarianceStructure::VII,
        [&](const Eigen::VectorXd& x) {
            std::vector<Eigen::MatrixXd> out;
            out.push_back(std::exp(x[0]) * Eigen::MatrixXd::Identity(2, 2));
            out.push_back(std::exp(x[1]) * Eigen::MatrixXd::Identity(2, 2));
            return out;
        },
        Eigen::VectorXd::Zero(2));
    // VVI: log diagonal entries
    check_structure(
        CovarianceStructure::VVI,
        [&](const Eigen::VectorXd& x) {
            std::vector<Eigen::MatrixXd> out;
            out.push_back(Eigen::Vector2d(std::exp(x[0]), std::exp(x[1])).asDiagonal());
            out.push_back(Eigen::Vector2d(std::exp(x[2]), std::exp(x[3])).asDiagonal());
            return out;
        },
        Eigen::VectorXd::Zero(4));
    // VEI: log lambda_1, log lambda_2, log b with B = diag(b, 1/b)
    check_structure(
        CovarianceStructure::VEI,
        [&](const Eigen::VectorXd& x) {
            const Eigen::Vector2d B(std::exp(x[2]), std::exp(-x[2]));
            std::vector<Eigen::MatrixXd> out;
            out.push_back((std::exp(x[0]) * B).asDiagonal());
            out.push_back((std::exp(x[1]) * B).asDiagonal());
            return out;
        },
        Eigen::VectorXd::Zero(3));
    // EEE: shared Cholesky factor (log diagonals)
    check_structure(
        CovarianceStructure::EEE,
        [&](const Eigen::VectorXd& x) {
            Eigen::MatrixXd L = Eigen::MatrixXd::Zero(2, 2);
            L(0, 0) = std::exp(x[0]);
            L(1, 0) = x[1];
            L(1, 1) = std::exp(x[2]);
            std::vector<Eigen::MatrixXd> out(2, Eigen::MatrixXd(L * L.transpose()));
            return out;
        },
        Eigen::VectorXd::Zero(3));
}
