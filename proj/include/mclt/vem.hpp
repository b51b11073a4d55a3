#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mclt/covariance.hpp"
#include "mclt/model.hpp"
#include "mclt/rng.hpp"

namespace mclt {

// sigma(xi) and the curvature coefficient lambda(xi) = (1/2 - sigma(xi))/(2 xi)
// of the quadratic logistic bound; the removable singularity at 0 is -1/8.
struct JaakkolaCoefficients {
    double sigma;
    double lambda;
};

inline JaakkolaCoefficients jaakkola_coefficients(double xi) {
    if (xi < 0.0) throw std::invalid_argument("jaakkola_coefficients: xi must be nonnegative");
    if (xi < 1e-6) return {logistic(xi), -0.125};
    const double s = logistic(xi);
    return {s, (0.5 - s) / (2.0 * xi)};
}

// Soft assignments z_ng = eta_g exp(L_ng) / sum_g' eta_g' exp(L_ng'), rows
// normalized through log-sum-exp.
inline Eigen::MatrixXd e_step_responsibilities(const Eigen::VectorXd& eta,
                                               const Eigen::MatrixXd& L) {
    if (eta.size() != L.cols())
        throw std::invalid_argument("e_step_responsibilities: eta/L mismatch");
    if (std::abs(eta.sum() - 1.0) > 1e-8)
        throw std::invalid_argument("e_step_responsibilities: eta must sum to 1");
    const Eigen::Index N = L.rows(), G = L.cols();
    Eigen::MatrixXd z(N, G);
    const Eigen::VectorXd log_eta = eta.array().max(1e-300).log();
    for (Eigen::Index n = 0; n < N; ++n) {
        Eigen::VectorXd a = log_eta + L.row(n).transpose();
        const double mx = a.maxCoeff();
        if (!std::isfinite(mx))
            throw numerical_error("degenerate model: no component explains observation " +
                                  std::to_string(n));
        a = (a.array() - mx).exp();
        z.row(n) = a.transpose() / a.sum();
    }
    return z;
}

inline Eigen::VectorXd m_step_weights(const Eigen::MatrixXd& z) {
    return z.colwise().mean().transpose();
}

// Variational parameters and Gaussian posterior moments, one slice per
// component. phi matrices are stored flattened, one observation per column.
struct VariationalState {
    std::vector<Eigen::MatrixXd> xi;        // per g: N x M, nonnegative
    std::vector<Eigen::MatrixXd> upsilon;   // per g: N x dim
    std::vector<Eigen::MatrixXd> phi;       // per g: dim*dim x N
    Eigen::MatrixXd L;                      // N x G
    int dim = 0;

    Eigen::Map<const Eigen::MatrixXd> phi_at(int g, Eigen::Index n) const {
        return {phi[g].col(n).data(), dim, dim};
    }
};

namespace detail {

// Prior pieces of one mixture component, prepared once per outer iteration.
struct ComponentPrior {
    Eigen::MatrixXd sigma_inv;
    Eigen::VectorXd sigma_inv_mu;
    double logdet_sigma = 0.0;
    double qform = 0.0;   // mu' Sigma^-1 mu
};

inline ComponentPrior make_prior(const Eigen::MatrixXd& Sigma, const Eigen::VectorXd& mu,
                                 int component) {
    Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
    if (llt.info() != Eigen::Success)
        throw numerical_error("component covariance not invertible (component " +
                              std::to_string(component + 1) + ")");
    ComponentPrior p;
    const Eigen::Index d = Sigma.rows();
    p.sigma_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    p.sigma_inv_mu = llt.solve(mu);
    p.logdet_sigma = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) p.logdet_sigma += 2.0 * std::log(llt.matrixL()(i, i));
    p.qform = mu.dot(p.sigma_inv_mu);
    return p;
}

// Posterior of the latent variable for one observation under the quadratic
// bound: phi^-1 = Sigma^-1 - 2 sum_m lambda(xi_m) w_m w_m',
// upsilon = phi [Sigma^-1 mu + sum_m (x_m - 1/2) w_m].
// Also returns h = Sigma^-1 mu + W'(x - 1/2) and log|phi| for the bound.
struct PosteriorMoments {
    Eigen::MatrixXd phi;
    Eigen::VectorXd upsilon;
    Eigen::VectorXd h;
    double logdet_phi = 0.0;
    double xi_terms = 0.0;   // sum_m [log sigma(xi) - xi/2 - lambda xi^2]
};

inline PosteriorMoments gaussian_posterior(const ComponentPrior& prior,
                                           const Eigen::MatrixXd& W,
                                           const Eigen::VectorXd& wx_half,
                                           const Eigen::Ref<const Eigen::RowVectorXd>& xi_row) {
    const Eigen::Index d = W.cols(), M = W.rows();
    Eigen::VectorXd lam(M);
    double xi_terms = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
        const auto jc = jaakkola_coefficients(xi_row[m]);
        lam[m] = jc.lambda;
        xi_terms += std::log(jc.sigma) - 0.5 * xi_row[m] - jc.lambda * xi_row[m] * xi_row[m];
    }
    Eigen::MatrixXd P = prior.sigma_inv;
    P.noalias() -= 2.0 * W.transpose() * lam.asDiagonal() * W;
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success)
        throw numerical_error("variational posterior precision not positive-definite");
    PosteriorMoments out;
    out.h = prior.sigma_inv_mu + wx_half;
    out.upsilon = llt.solve(out.h);
    out.phi = llt.solve(Eigen::MatrixXd::Identity(d, d));
    out.logdet_phi = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) out.logdet_phi -= 2.0 * std::log(llt.matrixL()(i, i));
    out.xi_terms = xi_terms;
    return out;
}

inline double bound_value(const ComponentPrior& prior, const PosteriorMoments& post) {
    return post.xi_terms - 0.5 * prior.qform + 0.5 * (post.logdet_phi - prior.logdet_sigma) +
           0.5 * post.h.dot(post.upsilon);
}

// Aitken acceleration stopping monitor: fires when successive accelerated
// estimates l_A move by no more than tol.
class AitkenMonitor {
public:
    explicit AitkenMonitor(double tol) : tol_(tol) {}

    // feed l^(t); returns true when the criterion fires
    bool update(double l, std::vector<double>* aitken_trace) {
        history_[0] = history_[1];
        history_[1] = history_[2];
        history_[2] = l;
        if (++count_ < 3) return false;
        const double den = history_[1] - history_[0];
        if (std::abs(den) < 1e-12) return true;   // flat likelihood
        const double a = (history_[2] - history_[1]) / den;
        if (a >= 1.0 - 1e-12) return false;       // not contracting yet
        const double la = history_[1] + (history_[2] - history_[1]) / (1.0 - a);
        if (aitken_trace) aitken_trace->push_back(la);
        const bool done = have_la_ && std::abs(la - la_prev_) <= tol_;
        la_prev_ = la;
        have_la_ = true;
        return done;
    }

private:
    double tol_;
    double history_[3] = {0, 0, 0};
    double la_prev_ = 0.0;
    bool have_la_ = false;
    int count_ = 0;
};

}  // namespace detail

// Public single-observation form of the variational E-step (step 3a):
// returns (phi, upsilon) for every component of the model.
inline std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> variational_e_step(
    const MclmModel& model, const Eigen::VectorXd& x_n, const Eigen::MatrixXd& xi_n) {
    const int G = model.components();
    if (xi_n.rows() != model.items() || xi_n.cols() != G)
        throw std::invalid_argument("variational_e_step: xi must be M x G");
    const Eigen::VectorXd wx_half =
        model.W.transpose() * (x_n.array() - 0.5).matrix();
    std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> out;
    out.reserve(G);
    for (int g = 0; g < G; ++g) {
        const auto prior = detail::make_prior(model.Sigma[g], model.mu[g], g);
        auto post = detail::gaussian_posterior(prior, model.W, wx_half,
                                               xi_n.col(g).transpose());
        out.emplace_back(std::move(post.phi), std::move(post.upsilon));
    }
    return out;
}

// Variational parameter update (step 3b): xi^2 = w'(phi + upsilon upsilon')w.
inline double variational_m_step_xi(const Eigen::VectorXd& w, const Eigen::MatrixXd& phi,
                                    const Eigen::VectorXd& upsilon) {
    const double t = w.dot(phi * w) + std::pow(w.dot(upsilon), 2);
    return std::sqrt(std::max(t, 0.0));
}

// Slope update (step 3c):
// w_m = -[2 sum_g sum_n z lambda(xi) (phi + uu')]^-1 [sum_g sum_n z (x - 1/2) u].
inline Eigen::MatrixXd m_step_slopes(const Eigen::MatrixXd& z, const VariationalState& state,
                                     const Eigen::MatrixXd& X) {
    const Eigen::Index N = X.rows(), M = X.cols(), G = z.cols();
    const int d = state.dim;
    Eigen::MatrixXd Cacc = Eigen::MatrixXd::Zero(d * d, M);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(M, d);
    Eigen::MatrixXd vecE(d * d, N);
    Eigen::MatrixXd lam_z(N, M);
    for (Eigen::Index g = 0; g < G; ++g) {
        for (Eigen::Index n = 0; n < N; ++n) {
            Eigen::Map<Eigen::MatrixXd> E(vecE.col(n).data(), d, d);
            E = state.phi_at(static_cast<int>(g), n);
            E.noalias() += state.upsilon[g].row(n).transpose() * state.upsilon[g].row(n);
            for (Eigen::Index m = 0; m < M; ++m)
                lam_z(n, m) = z(n, g) * jaakkola_coefficients(state.xi[g](n, m)).lambda;
        }
        Cacc.noalias() += vecE * lam_z;
        R.noalias() += (X.array() - 0.5).matrix().transpose() *
                       (state.upsilon[g].array().colwise() * z.col(g).array()).matrix();
    }
    Eigen::MatrixXd W(M, d);
    for (Eigen::Index m = 0; m < M; ++m) {
        Eigen::Map<const Eigen::MatrixXd> C(Cacc.col(m).data(), d, d);
        Eigen::LLT<Eigen::MatrixXd> llt(-2.0 * C);
        if (llt.info() != Eigen::Success)
            throw numerical_error("singular slope system at item " + std::to_string(m + 1));
        W.row(m) = llt.solve(R.row(m).transpose()).transpose();
    }
    return W;
}

// Gaussian parameter update (step 3c): responsibility-weighted means of the
// posterior moments; the covariance is the weighted mean posterior covariance
// (as printed), optionally augmented with the scatter of upsilon about mu,
// then projected onto the declared structure.
inline std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::MatrixXd>> m_step_gaussians(
    const Eigen::MatrixXd& z, const VariationalState& state, CovarianceStructure structure,
    bool add_mean_scatter = false, ProjectionInfo* info = nullptr,
    double collapse_floor = 1e-6) {
    const Eigen::Index G = z.cols();
    const int d = state.dim;
    ScatterSet scatter;
    scatter.S.resize(G);
    scatter.n = z.colwise().sum().transpose();
    std::vector<Eigen::VectorXd> mu(G);
    for (Eigen::Index g = 0; g < G; ++g) {
        if (scatter.n[g] < collapse_floor)
            throw numerical_error("component collapse (component " + std::to_string(g + 1) + ")");
        mu[g] = (state.upsilon[g].transpose() * z.col(g)) / scatter.n[g];
        Eigen::VectorXd vec_s = (state.phi[g] * z.col(g)) / scatter.n[g];
        Eigen::MatrixXd S = Eigen::Map<Eigen::MatrixXd>(vec_s.data(), d, d);
        if (add_mean_scatter) {
            Eigen::MatrixXd dev = state.upsilon[g].rowwise() - mu[g].transpose();
            S.noalias() += dev.transpose() * (dev.array().colwise() * z.col(g).array()).matrix() /
                           scatter.n[g];
        }
        scatter.S[g] = 0.5 * (S + S.transpose());
    }
    std::vector<Eigen::MatrixXd> Sigma = project_structure(scatter, structure, info);
    return {std::move(mu), std::move(Sigma)};
}

// Per-(n,g) lower bound (step 3d):
// L = sum_m [log sigma(xi) - xi/2 - lambda xi^2] - mu'Sigma^-1 mu / 2
//     + log(|phi|/|Sigma|)/2 + upsilon' phi^-1 upsilon / 2.
inline double lower_bound(const MclmModel& model, const Eigen::VectorXd& x_n,
                          const Eigen::VectorXd& xi_ng, const Eigen::MatrixXd& phi,
                          const Eigen::VectorXd& upsilon, int g) {
    const auto prior = detail::make_prior(model.Sigma[g], model.mu[g], g);
    double xi_terms = 0.0;
    for (Eigen::Index m = 0; m < xi_ng.size(); ++m) {
        const auto jc = jaakkola_coefficients(xi_ng[m]);
        xi_terms += std::log(jc.sigma) - 0.5 * xi_ng[m] - jc.lambda * xi_ng[m] * xi_ng[m];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(phi);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("lower_bound: phi must be positive-definite");
    double logdet_phi = 0.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
        logdet_phi += 2.0 * std::log(llt.matrixL()(i, i));
    return xi_terms - 0.5 * prior.qform + 0.5 * (logdet_phi - prior.logdet_sigma) +
           0.5 * upsilon.dot(llt.solve(upsilon));
}

enum class StoppingRule { Aitken, Parameter };

struct FitOptions {
    int starts = 10;
    std::uint64_t seed = 0;
    StoppingRule stopping = StoppingRule::Aitken;
    double tolerance = 0.01;
    int max_iterations = 2000;
    bool sigma_mean_scatter = false;   // add the upsilon-about-mu scatter to the Sigma update
    int threads = 1;
    double collapse_floor = 1e-6;
    bool freeze_beta = false;          // block model only: pin beta = 0, sigma2 at floor
    double sigma2_floor = 1e-6;
};

struct FitDiagnostics {
    std::vector<double> loglik_trace;
    std::vector<double> aitken_trace;
    int iterations = 0;
    bool converged = false;
    std::uint64_t seed = 0;
    int start_index = -1;
    bool sigma_floored = false;
    std::vector<std::string> start_errors;
};

struct FitResult {
    MclmModel model;
    LatentProjection projection;
    FitDiagnostics diagnostics;
    double loglik_variational = 0.0;
};

namespace detail {

// One consistent evaluation of the bound at the current (theta, xi): updates
// phi, upsilon, L in place and returns the variational log-likelihood
// sum_n log sum_g eta_g exp(L_ng). Serves as step 3d and the next step 3a.
inline double posterior_pass(const Eigen::MatrixXd& X, const MclmModel& model,
                             const Eigen::VectorXd& eta, VariationalState& state) {
    const Eigen::Index N = X.rows();
    const int G = model.components();
    std::vector<ComponentPrior> priors(G);
    for (int g = 0; g < G; ++g) priors[g] = make_prior(model.Sigma[g], model.mu[g], g);
    const Eigen::MatrixXd WXH = (X.array() - 0.5).matrix() * model.W;   // N x d
    for (int g = 0; g < G; ++g) {
        for (Eigen::Index n = 0; n < N; ++n) {
            auto post = gaussian_posterior(priors[g], model.W, WXH.row(n).transpose(),
                                           state.xi[g].row(n));
            state.upsilon[g].row(n) = post.upsilon.transpose();
            Eigen::Map<Eigen::MatrixXd>(state.phi[g].col(n).data(), state.dim, state.dim) =
                post.phi;
            state.L(n, g) = bound_value(priors[g], post);
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

inline void xi_update(const Eigen::MatrixXd& W, VariationalState& state) {
    const int G = static_cast<int>(state.xi.size());
    const int d = state.dim;
    const Eigen::Index N = state.upsilon[0].rows();
    Eigen::MatrixXd E(d, d), T;
    for (int g = 0; g < G; ++g) {
        for (Eigen::Index n = 0; n < N; ++n) {
            E = state.phi_at(g, n);
            E.noalias() += state.upsilon[g].row(n).transpose() * state.upsilon[g].row(n);
            T.noalias() = W * E;
            state.xi[g].row(n) =
                (T.cwiseProduct(W)).rowwise().sum().cwiseMax(0.0).cwiseSqrt().transpose();
        }
    }
}

inline double max_abs_diff(const MclmModel& a, const MclmModel& b) {
    double m = (a.W - b.W).cwiseAbs().maxCoeff();
    m = std::max(m, (a.eta - b.eta).cwiseAbs().maxCoeff());
    for (int g = 0; g < a.components(); ++g) {
        m = std::max(m, (a.mu[g] - b.mu[g]).cwiseAbs().maxCoeff());
        m = std::max(m, (a.Sigma[g] - b.Sigma[g]).cwiseAbs().maxCoeff());
    }
    if (a.block && b.block) {
        m = std::max(m, (a.block->beta - b.block->beta).cwiseAbs().maxCoeff());
        m = std::max(m, (a.block->b - b.block->b).cwiseAbs().maxCoeff());
        m = std::max(m, (a.block->sigma2 - b.block->sigma2).cwiseAbs().maxCoeff());
    }
    return m;
}

struct StartOutcome {
    bool ok = false;
    std::string error;
    MclmModel model;
    VariationalState state;
    Eigen::MatrixXd z;
    Eigen::VectorXd eta;
    std::vector<double> trace;
    std::vector<double> aitken;
    bool converged = false;
    bool sigma_floored = false;
};

// One random start of the flat fitter, §2.7 steps 1-4 with §2.9 initialization.
inline StartOutcome run_flat_start(const Eigen::MatrixXd& X, const ModelConfig& config,
                                   const FitOptions& options, std::uint64_t stream_seed) {
    const Eigen::Index N = X.rows(), M = X.cols();
    const int G = config.components, d = config.latent_dim;
    Rng rng(stream_seed);

    StartOutcome out;
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
    model.eta = m_step_weights(z);

    VariationalState state;
    state.dim = d;
    state.xi.assign(G, Eigen::MatrixXd::Constant(N, M, 20.0));
    state.upsilon.assign(G, Eigen::MatrixXd::Zero(N, d));
    state.phi.assign(G, Eigen::MatrixXd::Zero(d * d, N));
    posterior_pass(X, model, model.eta, state);

    AitkenMonitor aitken(options.tolerance);
    try {
        for (int it = 0; it < options.max_iterations; ++it) {
            if (it > 0) z = e_step_responsibilities(model.eta, state.L);
            const MclmModel previous = model;
            model.eta = m_step_weights(z);
            xi_update(model.W, state);
            ProjectionInfo pinfo;
            auto [mu, Sigma] = m_step_gaussians(z, state, config.structure,
                                                options.sigma_mean_scatter, &pinfo,
                                                options.collapse_floor);
            if (pinfo.floored) out.sigma_floored = true;
            model.W = m_step_slopes(z, state, X);
            model.mu = std::move(mu);
            model.Sigma = std::move(Sigma);
            const double ll = posterior_pass(X, model, model.eta, state);
            out.trace.push_back(ll);
            if (options.stopping == StoppingRule::Aitken) {
                if (aitken.update(ll, &out.aitken)) {
                    out.converged = true;
                    break;
                }
            } else if (max_abs_diff(model, previous) < options.tolerance) {
                out.converged = true;
                break;
            }
        }
        out.z = e_step_responsibilities(model.eta, state.L);
    } catch (const std::exception& e) {
        out.error = e.what();
        return out;
    }
    out.ok = true;
    out.model = std::move(model);
    out.eta = out.model.eta;
    out.state = std::move(state);
    return out;
}

inline LatentProjection projection_from_state(const Eigen::MatrixXd& z,
                                              const VariationalState& state, int latent_dim) {
    LatentProjection proj;
    proj.responsibilities = z;
    proj.hard_label = hard_labels(z);
    const Eigen::Index N = z.rows();
    proj.coords = Eigen::MatrixXd::Zero(N, latent_dim);
    for (Eigen::Index g = 0; g < z.cols(); ++g)
        proj.coords.noalias() +=
            (state.upsilon[g].leftCols(latent_dim).array().colwise() * z.col(g).array())
                .matrix();
    return proj;
}

template <typename StartFn>
inline FitResult multi_start(const FitOptions& options, Eigen::Index rows, int latent_dim,
                             StartFn&& run_start) {
    const int S = std::max(options.starts, 1);
    std::vector<StartOutcome> outcomes(S);
    const int threads = std::max(1, std::min(options.threads, S));
    if (threads == 1) {
        for (int s = 0; s < S; ++s) outcomes[s] = run_start(s);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (int s = next.fetch_add(1); s < S; s = next.fetch_add(1))
                    outcomes[s] = run_start(s);
            });
        for (auto& th : pool) th.join();
    }

    int best = -1;
    FitDiagnostics diag;
    diag.seed = options.seed;
    for (int s = 0; s < S; ++s) {
        if (!outcomes[s].ok) {
            diag.start_errors.push_back("start " + std::to_string(s) + ": " + outcomes[s].error);
            continue;
        }
        if (best < 0 || (!outcomes[s].trace.empty() && !outcomes[best].trace.empty() &&
                         outcomes[s].trace.back() > outcomes[best].trace.back()))
            best = s;
    }
    if (best < 0)
        throw numerical_error("all starts failed: " +
                              (diag.start_errors.empty() ? std::string("no starts run")
                                                         : diag.start_errors.front()));
    StartOutcome& win = outcomes[best];
    diag.loglik_trace = win.trace;
    diag.aitken_trace = win.aitken;
    diag.iterations = static_cast<int>(win.trace.size());
    diag.converged = win.converged;
    diag.start_index = best;
    diag.sigma_floored = win.sigma_floored;

    FitResult result;
    result.model = std::move(win.model);
    result.projection = projection_from_state(win.z, win.state, latent_dim);
    result.loglik_variational = win.trace.empty() ? -std::numeric_limits<double>::infinity()
                                                  : win.trace.back();
    result.diagnostics = std::move(diag);
    return result;
}

}  // namespace detail

// Fit the flat MCLT model by variational EM with multiple random starts.
// Deterministic for a fixed seed regardless of thread count: every start has
// its own derived stream and the best final variational log-likelihood wins
// (ties to the lower start index).
inline FitResult fit(const BinaryDataset& data, const ModelConfig& config,
                     const FitOptions& options) {
    validate(data);
    validate(config, data.items());
    if (config.block_effect)
        throw std::invalid_argument("fit: use fit_block for block-effect models");
    const Eigen::MatrixXd& X = data.responses;
    return detail::multi_start(options, data.rows(), config.latent_dim, [&](int s) {
        return detail::run_flat_start(X, config, options,
                                      Rng::derive(options.seed, static_cast<std::uint64_t>(s)));
    });
}

// Posterior quantities for a dataset under fixed parameters: iterates the
// variational E-steps (3a/3b) from xi = 20 until the bound stabilizes, then
// reports responsibilities, posterior-mean coordinates, and the bound value.
struct PosteriorSummary {
    LatentProjection projection;
    Eigen::MatrixXd L;
    double loglik_variational = 0.0;
};

// Converged variational state at fixed parameters; also returns the bound.
inline std::pair<VariationalState, double> compute_variational_state(
    const MclmModel& model, const BinaryDataset& data, int max_passes = 200,
    double tol = 1e-9) {
    validate(data);
    if (model.block)
        throw std::invalid_argument("compute_variational_state: flat models only; see block_vem");
    const Eigen::MatrixXd& X = data.responses;
    const Eigen::Index N = X.rows(), M = X.cols();
    const int G = model.components(), d = model.latent_dim();
    VariationalState state;
    state.dim = d;
    state.xi.assign(G, Eigen::MatrixXd::Constant(N, M, 20.0));
    state.upsilon.assign(G, Eigen::MatrixXd::Zero(N, d));
    state.phi.assign(G, Eigen::MatrixXd::Zero(d * d, N));
    double ll = detail::posterior_pass(X, model, model.eta, state);
    for (int pass = 0; pass < max_passes; ++pass) {
        detail::xi_update(model.W, state);
        const double next = detail::posterior_pass(X, model, model.eta, state);
        const bool done = std::abs(next - ll) <= tol * (std::abs(next) + 1.0);
        ll = next;
        if (done) break;
    }
    return {std::move(state), ll};
}

inline PosteriorSummary compute_posterior(const MclmModel& model, const BinaryDataset& data,
                                          int max_passes = 200, double tol = 1e-9) {
    auto [state, ll] = compute_variational_state(model, data, max_passes, tol);
    PosteriorSummary out;
    Eigen::MatrixXd z = e_step_responsibilities(model.eta, state.L);
    out.projection = detail::projection_from_state(z, state, model.latent_dim());
    out.L = state.L;
    out.loglik_variational = ll;
    return out;
}

}  // namespace mclt
