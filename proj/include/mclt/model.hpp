#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mclt {

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The fourteen eigen-decomposition covariance families Sigma_g = lambda_g Q_g A_g Q_g',
// letters = volume/shape/orientation, E equal across components, V variable,
// I identity shape (diagonal families drop Q).
enum class CovarianceStructure {
    EEE, VEE, EVE, VVE, EEV, VEV, EVV, VVV, EEI, VEI, EVI, VVI, EII, VII
};

inline constexpr std::array<CovarianceStructure, 14> all_structures = {
    CovarianceStructure::EEE, CovarianceStructure::VEE, CovarianceStructure::EVE,
    CovarianceStructure::VVE, CovarianceStructure::EEV, CovarianceStructure::VEV,
    CovarianceStructure::EVV, CovarianceStructure::VVV, CovarianceStructure::EEI,
    CovarianceStructure::VEI, CovarianceStructure::EVI, CovarianceStructure::VVI,
    CovarianceStructure::EII, CovarianceStructure::VII};

inline const char* to_string(CovarianceStructure s) {
    static constexpr std::array<const char*, 14> names = {
        "EEE", "VEE", "EVE", "VVE", "EEV", "VEV", "EVV",
        "VVV", "EEI", "VEI", "EVI", "VVI", "EII", "VII"};
    return names[static_cast<int>(s)];
}

inline CovarianceStructure parse_structure(const std::string& tag) {
    for (auto s : all_structures)
        if (tag == to_string(s)) return s;
    throw data_error("unknown covariance structure tag: " + tag);
}

// N x M matrix of 0/1 responses, optionally partitioned into blocks for the
// repeated-sampling model. block_of, when present, maps each row to 0..I-1.
struct BinaryDataset {
    Eigen::MatrixXd responses;
    std::vector<int> block_of;             // empty when the data are unblocked
    std::vector<std::string> block_ids;    // original block labels, size I
    std::vector<std::string> row_ids;

    Eigen::Index rows() const { return responses.rows(); }
    Eigen::Index items() const { return responses.cols(); }
    bool has_blocks() const { return !block_of.empty(); }
    int block_count() const { return static_cast<int>(block_ids.size()); }
};

inline void validate(const BinaryDataset& data) {
    if (data.rows() < 1 || data.items() < 1)
        throw data_error("dataset must have at least one row and one item");
    for (Eigen::Index n = 0; n < data.rows(); ++n)
        for (Eigen::Index m = 0; m < data.items(); ++m) {
            const double v = data.responses(n, m);
            if (v != 0.0 && v != 1.0)
                throw data_error("non-binary entry at row " + std::to_string(n) +
                                 ", column " + std::to_string(m));
        }
    if (data.has_blocks()) {
        if (static_cast<Eigen::Index>(data.block_of.size()) != data.rows())
            throw data_error("block assignment must cover every row");
        for (int b : data.block_of)
            if (b < 0 || b >= data.block_count())
                throw data_error("block index out of range");
    }
}

struct ModelConfig {
    int components = 1;    // G
    int latent_dim = 1;    // d
    CovarianceStructure structure = CovarianceStructure::VVV;
    bool block_effect = false;
};

inline void validate(const ModelConfig& config, Eigen::Index items) {
    if (config.components < 1) throw std::invalid_argument("G must be >= 1");
    if (config.latent_dim < 1) throw std::invalid_argument("d must be >= 1");
    if (config.latent_dim > items)
        throw std::invalid_argument("latent dimension exceeds item count");
}

// Random-effect parameters of the block model: per-item loadings beta on the
// blocking variate and per-block (mean, variance) hyperparameters.
struct BlockParams {
    Eigen::VectorXd beta;     // M
    Eigen::VectorXd b;        // I
    Eigen::VectorXd sigma2;   // I, strictly positive
};

struct MclmModel {
    Eigen::MatrixXd W;                     // M x d common slopes, rows w_m'
    Eigen::VectorXd eta;                   // G mixing weights
    std::vector<Eigen::VectorXd> mu;       // G latent means, length d
    std::vector<Eigen::MatrixXd> Sigma;    // G latent covariances, d x d SPD
    CovarianceStructure structure = CovarianceStructure::VVV;
    std::optional<BlockParams> block;

    int components() const { return static_cast<int>(eta.size()); }
    int items() const { return static_cast<int>(W.rows()); }
    int latent_dim() const { return static_cast<int>(W.cols()); }
};

inline void validate(const MclmModel& model) {
    const int G = model.components();
    if (G < 1) throw std::invalid_argument("model has no components");
    if (std::abs(model.eta.sum() - 1.0) > 1e-8 || model.eta.minCoeff() <= 0.0)
        throw std::invalid_argument("mixing weights must be positive and sum to 1");
    if (static_cast<int>(model.mu.size()) != G || static_cast<int>(model.Sigma.size()) != G)
        throw std::invalid_argument("mu/Sigma count does not match G");
    const int d = model.latent_dim();
    for (int g = 0; g < G; ++g) {
        if (model.mu[g].size() != d || model.Sigma[g].rows() != d || model.Sigma[g].cols() != d)
            throw std::invalid_argument("component dimension mismatch");
        if (!model.Sigma[g].isApprox(model.Sigma[g].transpose(), 1e-10))
            throw std::invalid_argument("Sigma must be symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.Sigma[g]);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("Sigma must be positive-definite");
    }
    if (model.block) {
        if (model.block->beta.size() != model.items())
            throw std::invalid_argument("beta length must equal item count");
        if (model.block->b.size() != model.block->sigma2.size())
            throw std::invalid_argument("block mean/variance length mismatch");
        if (model.block->sigma2.minCoeff() <= 0.0)
            throw std::invalid_argument("block variances must be positive");
    }
}

// Posterior summary of a fitted dataset: responsibility-weighted posterior
// latent means, soft responsibilities, and argmax labels (ties to the lowest
// component index).
struct LatentProjection {
    Eigen::MatrixXd coords;             // N x d
    Eigen::MatrixXd responsibilities;   // N x G, rows sum to 1
    std::vector<int> hard_label;        // N, 0-based component indices
};

inline std::vector<int> hard_labels(const Eigen::MatrixXd& responsibilities) {
    std::vector<int> labels(responsibilities.rows());
    for (Eigen::Index n = 0; n < responsibilities.rows(); ++n) {
        int best = 0;
        for (Eigen::Index g = 1; g < responsibilities.cols(); ++g)
            if (responsibilities(n, g) > responsibilities(n, best)) best = static_cast<int>(g);
        labels[n] = best;
    }
    return labels;
}

// logistic(t), stable for all t and clamped strictly inside (0,1)
inline double logistic(double t) {
    double p;
    if (t >= 0.0) {
        p = 1.0 / (1.0 + std::exp(-t));
    } else {
        const double e = std::exp(t);
        p = e / (1.0 + e);
    }
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::min(std::max(p, lo), hi);
}

// log(1 + e^t) without overflow
inline double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

// p(x_m = 1 | y) = logistic(w_m . y)
inline double response_probability(const Eigen::VectorXd& w, const Eigen::VectorXd& y) {
    if (w.size() != y.size())
        throw std::invalid_argument("response_probability: dimension mismatch");
    return logistic(w.dot(y));
}

// positive-response probability of the median individual of a component
inline double median_response(const Eigen::VectorXd& w, const Eigen::VectorXd& mu) {
    if (w.size() != mu.size())
        throw std::invalid_argument("median_response: dimension mismatch");
    return logistic(w.dot(mu));
}

// block-averaged median response: (1/I) sum_i logistic(w.mu + beta * b_i)
inline double block_adjusted_median_response(const Eigen::VectorXd& w,
                                             const Eigen::VectorXd& mu,
                                             double beta,
                                             const Eigen::VectorXd& b) {
    if (w.size() != mu.size())
        throw std::invalid_argument("block_adjusted_median_response: dimension mismatch");
    if (b.size() < 1)
        throw std::invalid_argument("block_adjusted_median_response: empty block list");
    const double base = w.dot(mu);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b.size(); ++i) acc += logistic(base + beta * b[i]);
    return acc / static_cast<double>(b.size());
}

// Free parameters contributed by the covariance family alone.
inline int covariance_free_parameters(CovarianceStructure s, int G, int d) {
    const int full = d * (d + 1) / 2;
    switch (s) {
        case CovarianceStructure::EEE: return full;
        case CovarianceStructure::VEE: return full + G - 1;
        case CovarianceStructure::EVE: return full + (G - 1) * (d - 1);
        case CovarianceStructure::VVE: return full + (G - 1) * d;
        case CovarianceStructure::EEV: return G * full - (G - 1) * d;
        case CovarianceStructure::VEV: return G * full - (G - 1) * (d - 1);
        case CovarianceStructure::EVV: return G * full - (G - 1);
        case CovarianceStructure::VVV: return G * full;
        case CovarianceStructure::EEI: return d;
        case CovarianceStructure::VEI: return G + d - 1;
        case CovarianceStructure::EVI: return G * d - G + 1;
        case CovarianceStructure::VVI: return G * d;
        case CovarianceStructure::EII: return 1;
        case CovarianceStructure::VII: return G;
    }
    throw std::invalid_argument("unknown covariance structure");
}

// Total free parameters: G-1 weights + d(M+G) slopes and means, minus the
// d x d gauge constraints, plus the covariance family; the block variant adds
// M loadings and 2I block hyperparameters.
inline int count_free_parameters(const ModelConfig& config, int items, int blocks = 0) {
    validate(config, items);
    const int G = config.components, d = config.latent_dim;
    int k = G - 1 + d * (items + G) - d * d +
            covariance_free_parameters(config.structure, G, d);
    if (config.block_effect) {
        if (blocks < 1)
            throw std::invalid_argument("block model parameter count needs the block count");
        k += items + 2 * blocks;
    }
    return k;
}

}  // namespace mclt
