#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mclt/model.hpp"

namespace mclt {

// Probabilists' Gauss-Hermite rule: integrates against the standard normal
// density, weights sum to 1, nodes symmetric about 0.
struct QuadratureRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

// Golub-Welsch on the Jacobi matrix of the (probabilists') Hermite recurrence.
inline QuadratureRule hermite_rule(int k) {
    if (k < 1) throw std::invalid_argument("hermite_rule: k must be >= 1");
    if (k > 64) throw std::invalid_argument("hermite_rule: k > 64 rejected");
    QuadratureRule rule;
    if (k == 1) {
        rule.nodes = Eigen::VectorXd::Zero(1);
        rule.weights = Eigen::VectorXd::Ones(1);
        return rule;
    }
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
        const double b = std::sqrt(static_cast<double>(i));
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    rule.nodes = es.eigenvalues();
    rule.weights.resize(k);
    for (int i = 0; i < k; ++i) {
        const double v = es.eigenvectors()(0, i);
        rule.weights[i] = v * v;
    }
    // enforce exact symmetry, then renormalize
    for (int i = 0; i < k / 2; ++i) {
        const int j = k - 1 - i;
        const double node = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        rule.nodes[i] = -node;
        rule.nodes[j] = node;
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if (k % 2 == 1) rule.nodes[k / 2] = 0.0;
    rule.weights /= rule.weights.sum();
    return rule;
}

namespace detail {

inline Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& A) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

// Tensor-product grid over dim dimensions; column t is the t-th node vector,
// log_w its log-weight. Node index advances odometer-style, first axis fastest.
struct TensorGrid {
    Eigen::MatrixXd tau;       // dim x T
    Eigen::VectorXd log_w;     // T
};

inline TensorGrid tensor_grid(const QuadratureRule& rule, int dim) {
    const long k = rule.nodes.size();
    double count = std::pow(static_cast<double>(k), dim);
    if (count > 1e6)
        throw std::invalid_argument(
            "quadrature grid would exceed 10^6 nodes; reduce --gh-nodes or d");
    const long T = static_cast<long>(count + 0.5);
    TensorGrid grid;
    grid.tau.resize(dim, T);
    grid.log_w.resize(T);
    std::vector<long> idx(dim, 0);
    for (long t = 0; t < T; ++t) {
        double lw = 0.0;
        for (int j = 0; j < dim; ++j) {
            grid.tau(j, t) = rule.nodes[idx[j]];
            lw += std::log(rule.weights[idx[j]]);
        }
        grid.log_w[t] = lw;
        for (int j = 0; j < dim; ++j) {
            if (++idx[j] < k) break;
            idx[j] = 0;
        }
    }
    return grid;
}

// Per-observation log of sum_t exp(v_t), accumulated in node order.
inline double logsumexp(const Eigen::VectorXd& v) {
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (Eigen::Index t = 0; t < v.size(); ++t) s += std::exp(v[t] - mx);
    return mx + std::log(s);
}

// Deterministic pairwise reduction of per-observation values.
inline double pairwise_sum(std::vector<double>& v, size_t lo, size_t hi) {
    if (hi - lo <= 8) {
        double s = 0.0;
        for (size_t i = lo; i < hi; ++i) s += v[i];
        return s;
    }
    const size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

// log p(x_n | component) for every observation under a grid of latent draws:
// y_t = center + L tau_t, logits Theta = W y_t (+ shift per node for blocks).
// Returns the N-vector of log sum_t w_t prod_m Bern(x_nm | logistic(theta)).
inline Eigen::VectorXd component_log_marginals(const Eigen::MatrixXd& X,
                                               const Eigen::MatrixXd& logits,
                                               const Eigen::VectorXd& log_w) {
    const Eigen::Index T = logits.rows();
    // log Bern factorizes: sum_m [x theta - softplus(theta)]
    Eigen::VectorXd sp(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        double s = 0.0;
        for (Eigen::Index m = 0; m < logits.cols(); ++m) s += softplus(logits(t, m));
        sp[t] = s;
    }
    Eigen::MatrixXd A = logits * X.transpose();   // T x N
    Eigen::VectorXd out(X.rows());
    Eigen::VectorXd v(T);
    for (Eigen::Index n = 0; n < X.rows(); ++n) {
        v = log_w + A.col(n) - sp;
        out[n] = logsumexp(v);
    }
    return out;
}

}  // namespace detail

// Exact marginal log-likelihood sum_n log sum_g eta_g p(x_n | g) by
// tensor-product Gauss-Hermite quadrature after the change of variables
// y = mu_g + Sigma_g^(1/2) tau. Block models integrate the extra channel
// s = b_i + sigma_i tau with logits shifted by beta s.
inline double loglik_quadrature(const MclmModel& model, const BinaryDataset& data,
                                int k_per_dim = 10) {
    if (k_per_dim < 3) throw std::invalid_argument("loglik_quadrature: k_per_dim must be >= 3");
    const int d = model.latent_dim();
    const int G = model.components();
    const int dim = model.block ? d + 1 : d;
    if (dim > 6)
        throw std::invalid_argument("loglik_quadrature: latent dimension too large for a tensor grid");
    if (model.block && !data.has_blocks())
        throw data_error("block model scoring requires block labels");

    const QuadratureRule rule = hermite_rule(k_per_dim);
    const detail::TensorGrid grid = detail::tensor_grid(rule, dim);
    const Eigen::Index N = data.rows();
    const Eigen::VectorXd log_eta = model.eta.array().max(1e-300).log();

    Eigen::MatrixXd per_g(N, G);
    if (!model.block) {
        for (int g = 0; g < G; ++g) {
            const Eigen::MatrixXd root = detail::spd_sqrt(model.Sigma[g]);
            // logits(t, m) = w_m' (mu_g + root tau_t)
            Eigen::MatrixXd Y = (root * grid.tau).colwise() + model.mu[g];
            Eigen::MatrixXd logits = Y.transpose() * model.W.transpose();
            per_g.col(g) = detail::component_log_marginals(data.responses, logits, grid.log_w);
        }
    } else {
        const BlockParams& blk = *model.block;
        for (int g = 0; g < G; ++g) {
            const Eigen::MatrixXd root = detail::spd_sqrt(model.Sigma[g]);
            Eigen::MatrixXd Y = (root * grid.tau.topRows(d)).colwise() + model.mu[g];
            Eigen::MatrixXd base = Y.transpose() * model.W.transpose();   // T x M
            for (int i = 0; i < data.block_count(); ++i) {
                // rows of this block share the (i, g) grid
                std::vector<Eigen::Index> rows;
                for (Eigen::Index n = 0; n < N; ++n)
                    if (data.block_of[n] == i) rows.push_back(n);
                if (rows.empty()) continue;
                Eigen::MatrixXd Xi(rows.size(), data.items());
                for (size_t r = 0; r < rows.size(); ++r) Xi.row(r) = data.responses.row(rows[r]);
                const double sd = std::sqrt(blk.sigma2[i]);
                Eigen::VectorXd s = (sd * grid.tau.row(d).transpose()).array() + blk.b[i];
                Eigen::MatrixXd logits = base + s * blk.beta.transpose();
                Eigen::VectorXd lm = detail::component_log_marginals(Xi, logits, grid.log_w);
                for (size_t r = 0; r < rows.size(); ++r) per_g(rows[r], g) = lm[r];
            }
        }
    }

    std::vector<double> per_obs(N);
    Eigen::VectorXd row(G);
    for (Eigen::Index n = 0; n < N; ++n) {
        row = log_eta + per_g.row(n).transpose();
        per_obs[n] = detail::logsumexp(row);
    }
    return detail::pairwise_sum(per_obs, 0, per_obs.size());
}

}  // namespace mclt
