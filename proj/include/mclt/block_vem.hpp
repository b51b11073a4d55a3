#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mclt/vem.hpp"

namespace mclt {

// Augmented quantities of the block model: slopes with the item loadings
// appended, and the joint (d+1)-dimensional latent prior per (block,
// component), which is exactly block-diagonal because the blocking variate is
// independent of the trait.
struct AugmentedState {
    VariationalState vs;        // dim = d + 1; last coordinate is the block channel
    Eigen::MatrixXd w_hat;      // M x (d+1), last column = beta

    static Eigen::VectorXd mu_hat(const MclmModel& model, int block, int g) {
        const int d = model.latent_dim();
        Eigen::VectorXd m(d + 1);
        m.head(d) = model.mu[g];
        m[d] = model.block->b[block];
        return m;
    }

    static Eigen::MatrixXd sigma_hat(const MclmModel& model, int block, int g) {
        const int d = model.latent_dim();
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d + 1, d + 1);
        S.topLeftCorner(d, d) = model.Sigma[g];
        S(d, d) = model.block->sigma2[block];
        return S;
    }
};

namespace detail {

inline ComponentPrior make_block_prior(const MclmModel& model, int block, int g) {
    const int d = model.latent_dim();
    const ComponentPrior base = make_prior(model.Sigma[g], model.mu[g], g);
    const double s2 = model.block->sigma2[block];
    if (s2 <= 0.0) throw numerical_error("nonpositive block variance");
    const double b = model.block->b[block];
    ComponentPrior p;
    p.sigma_inv = Eigen::MatrixXd::Zero(d + 1, d + 1);
    p.sigma_inv.topLeftCorner(d, d) = base.sigma_inv;
    p.sigma_inv(d, d) = 1.0 / s2;
    p.sigma_inv_mu.resize(d + 1);
    p.sigma_inv_mu.head(d) = base.sigma_inv_mu;
    p.sigma_inv_mu[d] = b / s2;
    p.logdet_sigma = base.logdet_sigma + std::log(s2);
    p.qform = base.qform + b * b / s2;
    return p;
}

inline double block_posterior_pass(const Eigen::MatrixXd& X, const std::vector<int>& block_of,
                                   const MclmModel& model, const Eigen::VectorXd& eta,
                                   AugmentedState& aug) {
    const Eigen::Index N = X.rows();
    const int G = model.components();
    const int I = static_cast<int>(model.block->b.size());
    std::vector<std::vector<ComponentPrior>> priors(G);
    for (int g = 0; g < G; ++g) {
        priors[g].reserve(I);
        for (int i = 0; i < I; ++i) priors[g].push_back(make_block_prior(model, i, g));
    }
    const Eigen::MatrixXd WXH = (X.array() - 0.5).matrix() * aug.w_hat;   // N x (d+1)
    VariationalState& state = aug.vs;
    for (int g = 0; g < G; ++g) {
        for (Eigen::Index n = 0; n < N; ++n) {
            const ComponentPrior& prior = priors[g][block_of[n]];
            auto post = gaussian_posterior(prior, aug.w_hat, WXH.row(n).transpose(),
                                           state.xi[g].row(n));
            state.upsilon[g].row(n) = post.upsilon.transpose();
            Eigen::Map<Eigen::MatrixXd>(state.phi[g].col(n).data(), state.dim, state.dim) =
                post.phi;
            state.L(n, g) = bound_value(prior, post);
        }
    }
    const Eigen::VectorXd log_eta = eta.array().max(1e-300).log();
    double ll = 0.0;
    for (Eigen::Index n = 0; n < N; ++n) {
        Eigen::VectorXd a = log_eta + state.L.row(n).transpose();
        const double mx = a.maxCoeff();
        ll += mx + std::log((a.array() - mx).exp().sum());
    }
    return ll;
}

// Trait-block restriction of the augmented state, used for the frozen-beta
// slope solve; matches the flat fitter's quantities exactly when beta = 0.
inline VariationalState trait_block_view(const AugmentedState& aug, int d) {
    const int G = static_cast<int>(aug.vs.xi.size());
    const Eigen::Index N = aug.vs.xi[0].rows();
    VariationalState v;
    v.dim = d;
    v.xi = aug.vs.xi;
    v.upsilon.resize(G);
    v.phi.assign(G, Eigen::MatrixXd(d * d, N));
    for (int g = 0; g < G; ++g) {
        v.upsilon[g] = aug.vs.upsilon[g].leftCols(d);
        for (Eigen::Index n = 0; n < N; ++n)
            Eigen::Map<Eigen::MatrixXd>(v.phi[g].col(n).data(), d, d) =
                aug.vs.phi_at(g, n).topLeftCorner(d, d);
    }
    v.L = aug.vs.L;
    return v;
}

}  // namespace detail

// Joint (d+1)-dimensional variational E-step of the block model for one
// observation: same algebra as the flat step with the hatted quantities.
inline std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> block_variational_e_step(
    const MclmModel& model, const Eigen::VectorXd& x_ij, int block,
    const Eigen::MatrixXd& xi_n) {
    if (!model.block) throw std::invalid_argument("block_variational_e_step: model has no block part");
    const int G = model.components();
    const int d = model.latent_dim();
    Eigen::MatrixXd w_hat(model.items(), d + 1);
    w_hat.leftCols(d) = model.W;
    w_hat.col(d) = model.block->beta;
    const Eigen::VectorXd wx_half = w_hat.transpose() * (x_ij.array() - 0.5).matrix();
    std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> out;
    out.reserve(G);
    for (int g = 0; g < G; ++g) {
        const auto prior = detail::make_block_prior(model, block, g);
        auto post = detail::gaussian_posterior(prior, w_hat, wx_half, xi_n.col(g).transpose());
        out.emplace_back(std::move(post.phi), std::move(post.upsilon));
    }
    return out;
}

struct BlockMStepResult {
    Eigen::MatrixXd W;
    Eigen::VectorXd beta;
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> Sigma;
    Eigen::VectorXd b;
    Eigen::VectorXd sigma2;
};

// Parameter updates of §2.7.1 step 3c: trait parameters from the y-block of
// the posterior moments, block hyperparameters from the s-coordinate, and the
// augmented slope system solved jointly then split into (w_m, beta_m).
inline BlockMStepResult block_m_step(const Eigen::MatrixXd& z, const AugmentedState& aug,
                                     const Eigen::MatrixXd& X, const std::vector<int>& block_of,
                                     int blocks, CovarianceStructure structure,
                                     const FitOptions& options = {},
                                     ProjectionInfo* info = nullptr) {
    const Eigen::Index N = X.rows();
    const int G = static_cast<int>(z.cols());
    const int d = aug.vs.dim - 1;
    BlockMStepResult out;

    const VariationalState trait = detail::trait_block_view(aug, d);
    auto [mu, Sigma] = m_step_gaussians(z, trait, structure, options.sigma_mean_scatter, info,
                                        options.collapse_floor);
    out.mu = std::move(mu);
    out.Sigma = std::move(Sigma);

    out.b = Eigen::VectorXd::Zero(blocks);
    out.sigma2 = Eigen::VectorXd::Zero(blocks);
    Eigen::VectorXd n_i = Eigen::VectorXd::Zero(blocks);
    for (Eigen::Index n = 0; n < N; ++n) {
        const int i = block_of[n];
        for (int g = 0; g < G; ++g) {
            const double w = z(n, g);
            n_i[i] += w;
            out.b[i] += w * aug.vs.upsilon[g](n, d);
            out.sigma2[i] += w * aug.vs.phi_at(g, n)(d, d);
        }
    }
    for (int i = 0; i < blocks; ++i) {
        if (n_i[i] < options.collapse_floor)
            throw numerical_error("empty block (block " + std::to_string(i + 1) + ")");
        out.b[i] /= n_i[i];
        out.sigma2[i] = std::max(out.sigma2[i] / n_i[i], options.sigma2_floor);
    }

    if (options.freeze_beta) {
        out.W = m_step_slopes(z, trait, X);
        out.beta = Eigen::VectorXd::Zero(X.cols());
        out.sigma2.setConstant(options.sigma2_floor);
    } else {
        const Eigen::MatrixXd w_hat = m_step_slopes(z, aug.vs, X);
        out.W = w_hat.leftCols(d);
        out.beta = w_hat.col(d);
    }
    return out;
}

// Block-model fitter (§2.7.1): identical loop to the flat fitter with the
// (i,j)-indexed augmented posterior. Initialization draws the shared
// parameters in the same stream order as the flat fitter so that a seed-
// matched run with beta frozen reproduces the flat fit.
inline FitResult fit_block(const BinaryDataset& data, const ModelConfig& config,
                           const FitOptions& options) {
    validate(data);
    validate(config, data.items());
    if (!data.has_blocks()) throw data_error("fit_block: dataset has no block labels");
    const Eigen::MatrixXd& X = data.responses;
    const std::vector<int>& block_of = data.block_of;
    const int I = data.block_count();
    const Eigen::Index N = X.rows(), M = X.cols();
    const int G = config.components, d = config.latent_dim;

    auto run_start = [&](int s) {
        Rng rng(Rng::derive(options.seed, static_cast<std::uint64_t>(s)));
        detail::StartOutcome out;
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(N, G);
        for (Eigen::Index n = 0; n < N; ++n) z(n, rng.bounded(G)) = 1.0;
        MclmModel model;
        model.structure = config.structure;
        model.W.resize(M, d);
        for (Eigen::Index m = 0; m < M; ++m)
            for (int j = 0; j < d; ++j) model.W(m, j) = rng.normal();
        model.mu.resize(G);
        model.Sigma.resize(G);
        for (int g = 0; g < G; ++g) {
            model.mu[g].resize(d);
            for (int j = 0; j < d; ++j) model.mu[g][j] = rng.normal();
            model.Sigma[g] = Eigen::MatrixXd::Identity(d, d);
        }
        BlockParams blk;
        blk.beta.resize(M);
        for (Eigen::Index m = 0; m < M; ++m) blk.beta[m] = rng.normal();
        blk.b.resize(I);
        for (int i = 0; i < I; ++i) blk.b[i] = rng.normal();
        blk.sigma2.resize(I);
        for (int i = 0; i < I; ++i)
            blk.sigma2[i] = std::max(std::abs(rng.normal()), options.sigma2_floor);
        if (options.freeze_beta) {
            blk.beta.setZero();
            blk.sigma2.setConstant(options.sigma2_floor);
        }
        model.block = blk;
        model.eta = m_step_weights(z);

        AugmentedState aug;
        aug.vs.dim = d + 1;
        aug.vs.xi.assign(G, Eigen::MatrixXd::Constant(N, M, 20.0));
        aug.vs.upsilon.assign(G, Eigen::MatrixXd::Zero(N, d + 1));
        aug.vs.phi.assign(G, Eigen::MatrixXd::Zero((d + 1) * (d + 1), N));
        aug.w_hat.resize(M, d + 1);
        aug.w_hat.leftCols(d) = model.W;
        aug.w_hat.col(d) = model.block->beta;
        detail::block_posterior_pass(X, block_of, model, model.eta, aug);

        detail::AitkenMonitor aitken(options.tolerance);
        try {
            for (int it = 0; it < options.max_iterations; ++it) {
                if (it > 0) z = e_step_responsibilities(model.eta, aug.vs.L);
                const MclmModel previous = model;
                model.eta = m_step_weights(z);
                detail::xi_update(aug.w_hat, aug.vs);
                ProjectionInfo pinfo;
                BlockMStepResult ms = block_m_step(z, aug, X, block_of, I, config.structure,
                                                   options, &pinfo);
                if (pinfo.floored) out.sigma_floored = true;
                model.W = std::move(ms.W);
                model.mu = std::move(ms.mu);
                model.Sigma = std::move(ms.Sigma);
                model.block->beta = std::move(ms.beta);
                model.block->b = std::move(ms.b);
                model.block->sigma2 = std::move(ms.sigma2);
                aug.w_hat.leftCols(d) = model.W;
                aug.w_hat.col(d) = model.block->beta;
                const double ll =
                    detail::block_posterior_pass(X, block_of, model, model.eta, aug);
                out.trace.push_back(ll);
                if (options.stopping == StoppingRule::Aitken) {
                    if (aitken.update(ll, &out.aitken)) {
                        out.converged = true;
                        break;
                    }
                } else if (detail::max_abs_diff(model, previous) < options.tolerance) {
                    out.converged = true;
                    break;
                }
            }
            out.z = e_step_responsibilities(model.eta, aug.vs.L);
        } catch (const std::exception& e) {
            out.error = e.what();
            return out;
        }
        out.ok = true;
        out.model = std::move(model);
        out.eta = out.model.eta;
        out.state = std::move(aug.vs);
        return out;
    };

    return detail::multi_start(options, N, d, run_start);
}

// Posterior pass under fixed block-model parameters; mirrors compute_posterior.
inline PosteriorSummary compute_block_posterior(const MclmModel& model,
                                                const BinaryDataset& data,
                                                int max_passes = 200, double tol = 1e-9) {
    validate(data);
    if (!model.block) throw std::invalid_argument("compute_block_posterior: flat model");
    if (!data.has_blocks()) throw data_error("block model posterior requires block labels");
    const Eigen::MatrixXd& X = data.responses;
    const Eigen::Index N = X.rows(), M = X.cols();
    const int G = model.components(), d = model.latent_dim();
    AugmentedState aug;
    aug.vs.dim = d + 1;
    aug.vs.xi.assign(G, Eigen::MatrixXd::Constant(N, M, 20.0));
    aug.vs.upsilon.assign(G, Eigen::MatrixXd::Zero(N, d + 1));
    aug.vs.phi.assign(G, Eigen::MatrixXd::Zero((d + 1) * (d + 1), N));
    aug.w_hat.resize(M, d + 1);
    aug.w_hat.leftCols(d) = model.W;
    aug.w_hat.col(d) = model.block->beta;
    double ll = detail::block_posterior_pass(X, data.block_of, model, model.eta, aug);
    for (int pass = 0; pass < max_passes; ++pass) {
        detail::xi_update(aug.w_hat, aug.vs);
        const double next =
            detail::block_posterior_pass(X, data.block_of, model, model.eta, aug);
        const bool done = std::abs(next - ll) <= tol * (std::abs(next) + 1.0);
        ll = next;
        if (done) break;
    }
    PosteriorSummary out;
    Eigen::MatrixXd z = e_step_responsibilities(model.eta, aug.vs.L);
    out.projection = detail::projection_from_state(z, aug.vs, d);
    out.L = aug.vs.L;
    out.loglik_variational = ll;
    return out;
}

}  // namespace mclt
