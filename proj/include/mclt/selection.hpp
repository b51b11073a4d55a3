#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mclt/block_vem.hpp"
#include "mclt/model.hpp"
#include "mclt/quadrature.hpp"
#include "mclt/vem.hpp"

namespace mclt {

inline double bic(double loglik, int k, Eigen::Index N) {
    if (N < 1) throw std::invalid_argument("bic: N must be >= 1");
    if (k < 0) throw std::invalid_argument("bic: k must be nonnegative");
    return -2.0 * loglik + k * std::log(static_cast<double>(N));
}

// Scores of one fitted model; BIC is computed from the quadrature
// log-likelihood, the variational value is kept for the bound check.
struct ModelScore {
    double loglik_variational = 0.0;
    double loglik_quadrature = 0.0;
    int k = 0;
    Eigen::Index N = 0;
    double bic = 0.0;
};

inline ModelScore score_model(const MclmModel& model, const BinaryDataset& data,
                              double loglik_variational, int gh_nodes = 10) {
    ModelScore score;
    score.loglik_variational = loglik_variational;
    score.loglik_quadrature = loglik_quadrature(model, data, gh_nodes);
    ModelConfig config{model.components(), model.latent_dim(), model.structure,
                       model.block.has_value()};
    score.k = count_free_parameters(config, static_cast<int>(model.items()),
                                    model.block ? static_cast<int>(model.block->b.size()) : 0);
    score.N = data.rows();
    score.bic = bic(score.loglik_quadrature, score.k, score.N);
    return score;
}

// Adjusted Rand index via pair counts derived from the contingency table.
// Exactly matches brute-force pair enumeration: both reduce to the same
// integer counts and the same final division.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: length mismatch");
    const std::size_t N = a.size();
    if (N < 2) throw std::invalid_argument("adjusted_rand_index: need at least two points");
    auto relabel = [](const std::vector<int>& v) {
        std::vector<int> out(v.size());
        std::vector<int> seen;
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::size_t j = 0;
            while (j < seen.size() && seen[j] != v[i]) ++j;
            if (j == seen.size()) seen.push_back(v[i]);
            out[i] = static_cast<int>(j);
        }
        return out;
    };
    const std::vector<int> la = relabel(a), lb = relabel(b);
    int ka = 0, kb = 0;
    for (std::size_t i = 0; i < N; ++i) {
        ka = std::max(ka, la[i] + 1);
        kb = std::max(kb, lb[i] + 1);
    }
    Eigen::MatrixX<long long> table = Eigen::MatrixX<long long>::Zero(ka, kb);
    for (std::size_t i = 0; i < N; ++i) ++table(la[i], lb[i]);
    auto choose2 = [](long long n) { return n * (n - 1) / 2; };
    long long together_both = 0;
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) together_both += choose2(table(i, j));
    long long together_a = 0, together_b = 0;
    for (int i = 0; i < ka; ++i) together_a += choose2(table.row(i).sum());
    for (int j = 0; j < kb; ++j) together_b += choose2(table.col(j).sum());
    const long long total = choose2(static_cast<long long>(N));
    const long long tt = together_both;
    const long long tf = together_a - together_both;
    const long long ft = together_b - together_both;
    const long long ff = total - tt - tf - ft;
    const long long num = 2 * (tt * ff - tf * ft);
    const long long den = (tt + tf) * (tf + ff) + (tt + ft) * (ft + ff);
    if (den == 0) return 1.0;   // only when the partitions agree on every pair
    return static_cast<double>(num) / static_cast<double>(den);
}

// Counts matrix: rows indexed by reference classes, columns by predictions,
// in first-appearance order of the labels.
inline Eigen::MatrixXi classification_table(const std::vector<int>& predicted,
                                            const std::vector<int>& reference) {
    if (predicted.size() != reference.size())
        throw std::invalid_argument("classification_table: length mismatch");
    auto order = [](const std::vector<int>& v) {
        std::vector<int> seen;
        for (int x : v) {
            bool found = false;
            for (int s : seen) found = found || s == x;
            if (!found) seen.push_back(x);
        }
        return seen;
    };
    const std::vector<int> rows = order(reference), cols = order(predicted);
    auto index_of = [](const std::vector<int>& v, int x) {
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == x) return static_cast<int>(i);
        return -1;
    };
    Eigen::MatrixXi table = Eigen::MatrixXi::Zero(rows.size(), cols.size());
    for (std::size_t i = 0; i < predicted.size(); ++i)
        ++table(index_of(rows, reference[i]), index_of(cols, predicted[i]));
    return table;
}

struct GridRow {
    ModelConfig config;
    std::optional<ModelScore> score;
    bool converged = false;
    std::optional<double> ari;
    std::string error;   // nonempty when the fit failed
};

struct GridResult {
    std::vector<GridRow> rows;
    int best = -1;                       // index of the minimum-BIC row
    std::optional<MclmModel> best_model;
    std::optional<FitResult> best_fit;
};

// Fit every (G, d, structure) combination and score it; ties on BIC break by
// smaller k, then smaller G, then smaller d. Rows run on deterministic
// per-row seeds so the grid is reproducible under any thread count.
inline GridResult run_grid(const BinaryDataset& data, const std::vector<int>& G_range,
                           const std::vector<int>& d_range,
                           const std::vector<CovarianceStructure>& structures,
                           const FitOptions& options, bool block_effect = false,
                           int gh_nodes = 10,
                           const std::vector<int>* reference_labels = nullptr) {
    if (G_range.empty() || d_range.empty() || structures.empty())
        throw std::invalid_argument("run_grid: empty range");
    std::vector<ModelConfig> configs;
    for (int G : G_range)
        for (int d : d_range)
            for (auto s : structures) configs.push_back({G, d, s, block_effect});

    GridResult grid;
    grid.rows.resize(configs.size());
    std::vector<std::optional<FitResult>> fits(configs.size());

    auto run_row = [&](std::size_t r) {
        GridRow row;
        row.config = configs[r];
        FitOptions row_options = options;
        row_options.seed = Rng::derive(options.seed, 0x9d1cULL + r);
        row_options.threads = 1;
        try {
            FitResult fit_result = block_effect ? fit_block(data, configs[r], row_options)
                                                : fit(data, configs[r], row_options);
            row.converged = fit_result.diagnostics.converged;
            row.score = score_model(fit_result.model, data, fit_result.loglik_variational,
                                    gh_nodes);
            if (reference_labels)
                row.ari = adjusted_rand_index(fit_result.projection.hard_label,
                                              *reference_labels);
            fits[r] = std::move(fit_result);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        grid.rows[r] = std::move(row);
    };

    const int threads =
        std::max(1, std::min<int>(options.threads, static_cast<int>(configs.size())));
    if (threads == 1) {
        for (std::size_t r = 0; r < configs.size(); ++r) run_row(r);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t r = next.fetch_add(1); r < configs.size();
                     r = next.fetch_add(1))
                    run_row(r);
            });
        for (auto& th : pool) th.join();
    }

    for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        const GridRow& row = grid.rows[r];
        if (!row.score) continue;
        if (grid.best < 0) {
            grid.best = static_cast<int>(r);
            continue;
        }
        const GridRow& incumbent = grid.rows[grid.best];
        const auto key = [](const GridRow& x) {
            return std::make_tuple(x.score->bic, x.score->k, x.config.components,
                                   x.config.latent_dim);
        };
        if (key(row) < key(incumbent)) grid.best = static_cast<int>(r);
    }
    if (grid.best >= 0) {
        grid.best_model = fits[grid.best]->model;
        grid.best_fit = std::move(fits[grid.best]);
    }
    return grid;
}

}  // namespace mclt
