#pragma once

// Test-only oracles, independent of the library code paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "mclt/model.hpp"
#include "mclt/rng.hpp"

namespace testsupport {

// --- brute-force adjusted Rand index over all pairs ------------------------
inline double brute_force_ari(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    long long tt = 0, tf = 0, ft = 0, ff = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            if (sa && sb) ++tt;
            else if (sa) ++tf;
            else if (sb) ++ft;
            else ++ff;
        }
    const long long num = 2 * (tt * ff - tf * ft);
    const long long den = (tt + tf) * (tf + ff) + (tt + ft) * (ft + ff);
    if (den == 0) return 1.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

// --- independent 2x2-friendly structured criterion -------------------------
// sum_g n_g (-log|Sigma_g| - tr(S_g Sigma_g^-1)) via adjugate inverses.
inline double criterion2(const std::vector<Eigen::MatrixXd>& S, const Eigen::VectorXd& n,
                         const std::vector<Eigen::MatrixXd>& Sigma) {
    double acc = 0.0;
    for (std::size_t g = 0; g < S.size(); ++g) {
        const double det = Sigma[g].determinant();
        if (det <= 0.0) return -std::numeric_limits<double>::infinity();
        const Eigen::MatrixXd inv = Sigma[g].inverse();
        acc += n[g] * (-std::log(det) - (S[g] * inv).trace());
    }
    return acc;
}

// --- derivative-free coordinate maximization --------------------------------
// Golden-section line searches along each coordinate with a shrinking bracket.
inline Eigen::VectorXd coordinate_maximize(
    const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
    int sweeps = 60, double bracket = 2.0) {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        for (Eigen::Index c = 0; c < x.size(); ++c) {
            double lo = x[c] - bracket, hi = x[c] + bracket;
            double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
            Eigen::VectorXd xa = x, xb = x;
            xa[c] = m1;
            xb[c] = m2;
            double f1 = f(xa), f2 = f(xb);
            for (int it = 0; it < 70; ++it) {
                if (f1 < f2) {
                    lo = m1;
                    m1 = m2;
                    f1 = f2;
                    m2 = lo + phi * (hi - lo);
                    xb[c] = m2;
                    f2 = f(xb);
                } else {
                    hi = m2;
                    m2 = m1;
                    f2 = f1;
                    m1 = hi - phi * (hi - lo);
                    xa[c] = m1;
                    f1 = f(xa);
                }
            }
            x[c] = 0.5 * (m1 + m2);
        }
        bracket *= 0.7;
    }
    return x;
}

// --- random SPD matrices ----------------------------------------------------
inline Eigen::MatrixXd random_spd(mclt::Rng& rng, int d, double scale = 1.0) {
    Eigen::MatrixXd A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
    Eigen::MatrixXd S = scale * (A * A.transpose()) / d;
    S += 0.05 * Eigen::MatrixXd::Identity(d, d);
    return S;
}

// --- random binary data with mixture structure ------------------------------
inline Eigen::MatrixXd random_binary(mclt::Rng& rng, int N, int M) {
    Eigen::MatrixXd X(N, M);
    std::vector<double> rate(M);
    for (int m = 0; m < M; ++m) rate[m] = 0.15 + 0.7 * rng.uniform();
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) X(n, m) = rng.uniform() < rate[m] ? 1.0 : 0.0;
    return X;
}

// --- Monte Carlo marginal log-likelihood (flat models) ----------------------
// Component-wise MC with shared draws; returns the estimate and its standard
// error computed from the per-draw aggregate statistic.
struct McLoglik {
    double value = 0.0;
    double se = 0.0;
};

inline McLoglik mc_loglik(const mclt::MclmModel& model, const Eigen::MatrixXd& X,
                          int draws, std::uint64_t seed) {
    const int G = model.components(), d = model.latent_dim();
    const Eigen::Index N = X.rows(), M = X.cols();
    mclt::Rng rng(seed);
    Eigen::MatrixXd phat = Eigen::MatrixXd::Zero(N, G);
    std::vector<Eigen::MatrixXd> q(G);   // per g: draws x N Bernoulli products
    for (int g = 0; g < G; ++g) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.Sigma[g]);
        const Eigen::MatrixXd root = es.eigenvectors() *
                                     es.eigenvalues().cwiseSqrt().asDiagonal() *
                                     es.eigenvectors().transpose();
        q[g].resize(draws, N);
        Eigen::VectorXd z(d), y(d), logits(M);
        for (int k = 0; k < draws; ++k) {
            for (int j = 0; j < d; ++j) z[j] = rng.normal();
            y = model.mu[g] + root * z;
            logits = model.W * y;
            for (Eigen::Index n = 0; n < N; ++n) {
                double lp = 0.0;
                for (Eigen::Index m = 0; m < M; ++m)
                    lp += X(n, m) * logits[m] - mclt::softplus(logits[m]);
                q[g](k, n) = std::exp(lp);
            }
        }
        phat.col(g) = q[g].colwise().mean().transpose();
    }
    McLoglik out;
    Eigen::VectorXd pbar = phat * model.eta;
    for (Eigen::Index n = 0; n < N; ++n) out.value += std::log(pbar[n]);
    // delta method with shared draws: var = sum_g eta_g^2 var_k(sum_n q/pbar)/K
    double var = 0.0;
    for (int g = 0; g < G; ++g) {
        Eigen::VectorXd U = Eigen::VectorXd::Zero(draws);
        for (Eigen::Index n = 0; n < N; ++n) U += q[g].col(n) / pbar[n];
        const double mean = U.mean();
        double v = (U.array() - mean).square().sum() / std::max(draws - 1, 1);
        var += model.eta[g] * model.eta[g] * v / draws;
    }
    out.se = std::sqrt(var);
    return out;
}

inline std::vector<int> random_partition(mclt::Rng& rng, int n, int max_k) {
    const int k = 1 + rng.bounded(max_k);
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) out[i] = rng.bounded(k);
    return out;
}

}  // namespace testsupport
