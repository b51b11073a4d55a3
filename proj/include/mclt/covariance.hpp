#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mclt/model.hpp"

namespace mclt {

// Weighted per-component scatter matrices entering the Sigma_g update:
// S_g is the responsibility-weighted mean posterior covariance, n_g the
// effective component size.
struct ScatterSet {
    std::vector<Eigen::MatrixXd> S;
    Eigen::VectorXd n;

    int components() const { return static_cast<int>(S.size()); }
    int dim() const { return S.empty() ? 0 : static_cast<int>(S[0].rows()); }
};

struct ProjectionInfo {
    bool floored = false;   // eigenvalue floor was applied somewhere
    int iterations = 0;     // inner iterations spent by the alternating schemes
};

namespace detail {

constexpr double kEigFloorRatio = 1e-8;
constexpr int kMaxInnerIterations = 100;
constexpr double kInnerTolerance = 1e-8;

// sum_g n_g (-log|Sigma_g| - tr(S_g Sigma_g^-1)); larger is better
inline double structured_criterion(const ScatterSet& scatter,
                                   const std::vector<Eigen::MatrixXd>& Sigma) {
    double acc = 0.0;
    for (int g = 0; g < scatter.components(); ++g) {
        Eigen::LLT<Eigen::MatrixXd> llt(Sigma[g]);
        if (llt.info() != Eigen::Success)
            return -std::numeric_limits<double>::infinity();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < Sigma[g].rows(); ++i)
            logdet += 2.0 * std::log(llt.matrixL()(i, i));
        const double tr = llt.solve(scatter.S[g]).trace();
        acc += scatter.n[g] * (-logdet - tr);
    }
    return acc;
}

// Eigen-decomposition with eigenvalues descending and each eigenvector's
// largest-magnitude entry positive, for reproducible orientations.
inline void ordered_eigs(const Eigen::MatrixXd& A, Eigen::VectorXd& values,
                         Eigen::MatrixXd& vectors) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const Eigen::Index d = A.rows();
    values.resize(d);
    vectors.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        values[j] = es.eigenvalues()[d - 1 - j];
        vectors.col(j) = es.eigenvectors().col(d - 1 - j);
        Eigen::Index imax;
        vectors.col(j).cwiseAbs().maxCoeff(&imax);
        if (vectors(imax, j) < 0.0) vectors.col(j) = -vectors.col(j);
    }
}

inline double geometric_mean(const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        acc += std::log(std::max(v[i], std::numeric_limits<double>::min()));
    return std::exp(acc / static_cast<double>(v.size()));
}

// Minimize sum_g c_g tr(S_g Q D_g^-1 Q') over orthogonal Q by a single
// majorization step; the linear surrogate is solved by an SVD.
inline Eigen::MatrixXd orientation_mm_step(const std::vector<Eigen::MatrixXd>& S,
                                           const std::vector<Eigen::VectorXd>& Dinv,
                                           const Eigen::VectorXd& c,
                                           const Eigen::MatrixXd& Q) {
    const Eigen::Index d = Q.rows();
    Eigen::MatrixXd Gmat = Eigen::MatrixXd::Zero(d, d);
    for (size_t g = 0; g < S.size(); ++g) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S[g]);
        const double alpha = es.eigenvalues().maxCoeff() * (1.0 + 1e-10) + 1e-300;
        Gmat += c[g] * Dinv[g].asDiagonal() * Q.transpose() *
                (S[g] - alpha * Eigen::MatrixXd::Identity(d, d));
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(-Gmat.transpose(),
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

// Raise eigenvalues below kEigFloorRatio * max to the floor; returns true if
// anything changed. Leaves healthy matrices untouched bitwise.
inline bool floor_spd(Eigen::MatrixXd& A) {
    Eigen::VectorXd vals;
    Eigen::MatrixXd vecs;
    ordered_eigs(A, vals, vecs);
    const double top = std::max(vals.maxCoeff(), std::numeric_limits<double>::min());
    const double floor = kEigFloorRatio * top;
    bool changed = false;
    for (Eigen::Index i = 0; i < vals.size(); ++i)
        if (vals[i] < floor) {
            vals[i] = floor;
            changed = true;
        }
    if (changed) A = vecs * vals.asDiagonal() * vecs.transpose();
    return changed;
}

}  // namespace detail

// Public alias used by tests and model selection.
inline double structured_criterion(const ScatterSet& scatter,
                                   const std::vector<Eigen::MatrixXd>& Sigma) {
    return detail::structured_criterion(scatter, Sigma);
}

// Maximum-likelihood projection of raw scatters onto one of the fourteen
// covariance families. Shared factors are replicated, so equality across
// components is exact. VVV returns the input unchanged.
inline std::vector<Eigen::MatrixXd> project_structure(const ScatterSet& scatter,
                                                      CovarianceStructure structure,
                                                      ProjectionInfo* info = nullptr) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    namespace d_ = detail;

    const int G = scatter.components();
    if (G < 1) throw std::invalid_argument("project_structure: empty scatter set");
    const int d = scatter.dim();
    const double N = scatter.n.sum();
    for (int g = 0; g < G; ++g) {
        if (scatter.S[g].rows() != d || scatter.S[g].cols() != d)
            throw std::invalid_argument("project_structure: inconsistent dimensions");
        if (scatter.n[g] <= 0.0)
            throw std::invalid_argument("project_structure: nonpositive component count");
    }

    ProjectionInfo local;
    ProjectionInfo& out = info ? *info : local;
    std::vector<MatrixXd> Sigma(G);

    auto pooled = [&] {
        MatrixXd P = MatrixXd::Zero(d, d);
        for (int g = 0; g < G; ++g) P += scatter.n[g] * scatter.S[g];
        return MatrixXd(P / N);
    };

    switch (structure) {
        case CovarianceStructure::VVV:
            for (int g = 0; g < G; ++g) Sigma[g] = scatter.S[g];
            break;

        case CovarianceStructure::EEE: {
            const MatrixXd P = pooled();
            for (int g = 0; g < G; ++g) Sigma[g] = P;
            break;
        }

        case CovarianceStructure::EII: {
            const double lambda = pooled().trace() / d;
            for (int g = 0; g < G; ++g) Sigma[g] = lambda * MatrixXd::Identity(d, d);
            break;
        }

        case CovarianceStructure::VII:
            for (int g = 0; g < G; ++g)
                Sigma[g] = (scatter.S[g].trace() / d) * MatrixXd::Identity(d, d);
            break;

        case CovarianceStructure::EEI: {
            const VectorXd diag = pooled().diagonal();
            for (int g = 0; g < G; ++g) Sigma[g] = diag.asDiagonal();
            break;
        }

        case CovarianceStructure::VVI:
            for (int g = 0; g < G; ++g)
                Sigma[g] = scatter.S[g].diagonal().asDiagonal();
            break;

        case CovarianceStructure::EVI: {
            // B_g = diag(S_g) scaled to unit determinant, lambda = weighted volume
            std::vector<VectorXd> shape(G);
            double lambda = 0.0;
            for (int g = 0; g < G; ++g) {
                VectorXd dg = scatter.S[g].diagonal().cwiseMax(1e-300);
                const double gm = d_::geometric_mean(dg);
                shape[g] = dg / gm;
                lambda += scatter.n[g] * gm;
            }
            lambda /= N;
            for (int g = 0; g < G; ++g)
                Sigma[g] = (lambda * shape[g]).asDiagonal();
            break;
        }

        case CovarianceStructure::VEI: {
            // alternate common diagonal shape B and per-component volumes
            VectorXd lambda(G);
            for (int g = 0; g < G; ++g) lambda[g] = scatter.S[g].diagonal().mean();
            VectorXd B = VectorXd::Ones(d);
            double prev = -std::numeric_limits<double>::infinity();
            for (int it = 0; it < d_::kMaxInnerIterations; ++it) {
                VectorXd acc = VectorXd::Zero(d);
                for (int g = 0; g < G; ++g)
                    acc += (scatter.n[g] / lambda[g]) * scatter.S[g].diagonal();
                acc = acc.cwiseMax(1e-300);
                B = acc / d_::geometric_mean(acc);
                for (int g = 0; g < G; ++g)
                    lambda[g] = (scatter.S[g].diagonal().cwiseQuotient(B)).sum() / d;
                for (int g = 0; g < G; ++g) Sigma[g] = (lambda[g] * B).asDiagonal();
                const double crit = d_::structured_criterion(scatter, Sigma);
                ++out.iterations;
                if (std::abs(crit - prev) <= d_::kInnerTolerance * (std::abs(crit) + 1.0)) break;
                prev = crit;
            }
            break;
        }

        case CovarianceStructure::VEE: {
            // alternate shared normalized matrix C and per-component volumes
            VectorXd lambda(G);
            for (int g = 0; g < G; ++g) lambda[g] = scatter.S[g].trace() / d;
            double prev = -std::numeric_limits<double>::infinity();
            for (int it = 0; it < d_::kMaxInnerIterations; ++it) {
                MatrixXd C = MatrixXd::Zero(d, d);
                for (int g = 0; g < G; ++g) C += (scatter.n[g] / lambda[g]) * scatter.S[g];
                VectorXd vals;
                MatrixXd vecs;
                d_::ordered_eigs(C, vals, vecs);
                vals = vals.cwiseMax(1e-300);
                C = vecs * (vals / d_::geometric_mean(vals)).asDiagonal() * vecs.transpose();
                Eigen::LLT<MatrixXd> llt(C);
                for (int g = 0; g < G; ++g)
                    lambda[g] = llt.solve(scatter.S[g]).trace() / d;
                for (int g = 0; g < G; ++g) Sigma[g] = lambda[g] * C;
                const double crit = d_::structured_criterion(scatter, Sigma);
                ++out.iterations;
                if (std::abs(crit - prev) <= d_::kInnerTolerance * (std::abs(crit) + 1.0)) break;
                prev = crit;
            }
            break;
        }

        case CovarianceStructure::EVV: {
            // per-component shape/orientation, common volume
            std::vector<MatrixXd> C(G);
            double lambda = 0.0;
            for (int g = 0; g < G; ++g) {
                VectorXd vals;
                MatrixXd vecs;
                d_::ordered_eigs(scatter.S[g], vals, vecs);
                vals = vals.cwiseMax(1e-300);
                const double gm = d_::geometric_mean(vals);
                C[g] = vecs * (vals / gm).asDiagonal() * vecs.transpose();
                lambda += scatter.n[g] * gm;
            }
            lambda /= N;
            for (int g = 0; g < G; ++g) Sigma[g] = lambda * C[g];
            break;
        }

        case CovarianceStructure::EEV: {
            // own orientations, pooled ordered eigenvalues
            std::vector<MatrixXd> Q(G);
            VectorXd A = VectorXd::Zero(d);
            for (int g = 0; g < G; ++g) {
                VectorXd vals;
                d_::ordered_eigs(scatter.S[g], vals, Q[g]);
                A += scatter.n[g] * vals;
            }
            A /= N;
            for (int g = 0; g < G; ++g)
                Sigma[g] = Q[g] * A.asDiagonal() * Q[g].transpose();
            break;
        }

        case CovarianceStructure::VEV: {
            // own orientations; alternate shared shape and per-component volumes
            std::vector<MatrixXd> Q(G);
            std::vector<VectorXd> omega(G);
            VectorXd lambda(G);
            for (int g = 0; g < G; ++g) {
                d_::ordered_eigs(scatter.S[g], omega[g], Q[g]);
                omega[g] = omega[g].cwiseMax(1e-300);
                lambda[g] = omega[g].mean();
            }
            VectorXd A = VectorXd::Ones(d);
            double prev = -std::numeric_limits<double>::infinity();
            for (int it = 0; it < d_::kMaxInnerIterations; ++it) {
                VectorXd acc = VectorXd::Zero(d);
                for (int g = 0; g < G; ++g) acc += (scatter.n[g] / lambda[g]) * omega[g];
                acc = acc.cwiseMax(1e-300);
                A = acc / d_::geometric_mean(acc);
                for (int g = 0; g < G; ++g)
                    lambda[g] = omega[g].cwiseQuotient(A).sum() / d;
                for (int g = 0; g < G; ++g)
                    Sigma[g] = Q[g] * (lambda[g] * A).asDiagonal() * Q[g].transpose();
                const double crit = d_::structured_criterion(scatter, Sigma);
                ++out.iterations;
                if (std::abs(crit - prev) <= d_::kInnerTolerance * (std::abs(crit) + 1.0)) break;
                prev = crit;
            }
            break;
        }

        case CovarianceStructure::EVE:
        case CovarianceStructure::VVE: {
            // common orientation: alternate shapes/volumes with MM orientation steps
            const bool common_volume = structure == CovarianceStructure::EVE;
            VectorXd vals;
            MatrixXd Q;
            d_::ordered_eigs(pooled(), vals, Q);
            std::vector<VectorXd> D(G);
            double prev = -std::numeric_limits<double>::infinity();
            for (int it = 0; it < d_::kMaxInnerIterations; ++it) {
                // shapes and volumes given Q
                std::vector<VectorXd> omega(G);
                for (int g = 0; g < G; ++g)
                    omega[g] = (Q.transpose() * scatter.S[g] * Q).diagonal().cwiseMax(1e-300);
                if (common_volume) {
                    double lambda = 0.0;
                    for (int g = 0; g < G; ++g)
                        lambda += scatter.n[g] * d_::geometric_mean(omega[g]);
                    lambda /= N;
                    for (int g = 0; g < G; ++g)
                        D[g] = lambda * omega[g] / d_::geometric_mean(omega[g]);
                } else {
                    for (int g = 0; g < G; ++g) D[g] = omega[g];
                }
                auto assemble = [&](const MatrixXd& Qc) {
                    for (int g = 0; g < G; ++g)
                        Sigma[g] = Qc * D[g].asDiagonal() * Qc.transpose();
                };
                assemble(Q);
                const double crit_shapes = d_::structured_criterion(scatter, Sigma);

                // orientation step, kept only if it improves the criterion
                std::vector<VectorXd> Dinv(G);
                for (int g = 0; g < G; ++g) Dinv[g] = D[g].cwiseInverse();
                const MatrixXd Qnew =
                    d_::orientation_mm_step(scatter.S, Dinv, scatter.n, Q);
                assemble(Qnew);
                const double crit_orient = d_::structured_criterion(scatter, Sigma);
                if (crit_orient >= crit_shapes) {
                    Q = Qnew;
                } else {
                    assemble(Q);
                }
                const double crit = std::max(crit_shapes, crit_orient);
                ++out.iterations;
                if (std::abs(crit - prev) <= d_::kInnerTolerance * (std::abs(crit) + 1.0)) break;
                prev = crit;
            }
            break;
        }
    }

    for (int g = 0; g < G; ++g)
        if (d_::floor_spd(Sigma[g])) out.floored = true;
    return Sigma;
}

}  // namespace mclt
