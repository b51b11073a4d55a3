#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mclt/model.hpp"
#include "mclt/selection.hpp"
#include "mclt/vem.hpp"

namespace mclt {

enum class MissingPolicy { Drop, Indicator };

struct IngestResult {
    BinaryDataset data;
    std::vector<int> labels;                // reference labels if a "label" column exists
    std::vector<std::string> label_names;   // original label strings
    std::vector<std::string> item_names;
    bool has_labels = false;
};

namespace detail_io {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        std::size_t start = 0;
        while (start < cell.size() && cell[start] == ' ') ++start;
        cells.push_back(cell.substr(start));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

// shortest decimal that round-trips to the same double
inline std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline int intern(std::vector<std::string>& names, const std::string& s) {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == s) return static_cast<int>(i);
    names.push_back(s);
    return static_cast<int>(names.size() - 1);
}

}  // namespace detail_io

// Write-then-rename so partially written outputs are never observed.
inline void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw data_error("cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

// CSV ingestion: header row, body cells in {0,1} or "NA"; reserved columns
// "block" (block labels) and "label" (reference partition) are excluded from
// the item count. Rows containing NA are dropped or encoded as an all-zeros
// row plus a missing-indicator column, per policy.
inline IngestResult ingest_csv(const std::string& path,
                               MissingPolicy policy = MissingPolicy::Indicator) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("empty file: " + path);
    const std::vector<std::string> header = detail_io::split_csv_line(line);
    int block_col = -1, label_col = -1;
    std::vector<int> item_cols;
    IngestResult out;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "block") {
            block_col = static_cast<int>(c);
        } else if (header[c] == "label") {
            label_col = static_cast<int>(c);
        } else {
            item_cols.push_back(static_cast<int>(c));
            out.item_names.push_back(header[c]);
        }
    }
    if (item_cols.empty()) throw data_error("no item columns in " + path);

    std::vector<std::vector<double>> rows;
    std::vector<bool> row_missing;
    std::vector<int> blocks, labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const std::vector<std::string> cells = detail_io::split_csv_line(line);
        if (cells.size() != header.size())
            throw data_error("ragged row at line " + std::to_string(lineno));
        std::vector<double> values;
        values.reserve(item_cols.size());
        bool missing = false;
        for (int c : item_cols) {
            const std::string& cell = cells[c];
            if (cell == "NA") {
                missing = true;
                values.push_back(0.0);
            } else if (cell == "0" || cell == "1") {
                values.push_back(cell == "1" ? 1.0 : 0.0);
            } else {
                throw data_error("non-binary cell at line " + std::to_string(lineno) +
                                 ", column " + header[c]);
            }
        }
        if (missing && policy == MissingPolicy::Drop) continue;
        rows.push_back(std::move(values));
        row_missing.push_back(missing);
        if (block_col >= 0) blocks.push_back(detail_io::intern(out.data.block_ids, cells[block_col]));
        if (label_col >= 0) labels.push_back(detail_io::intern(out.label_names, cells[label_col]));
    }
    if (rows.empty()) throw data_error("no usable rows in " + path);

    bool any_missing = false;
    for (bool m : row_missing) any_missing = any_missing || m;
    const bool add_indicator = policy == MissingPolicy::Indicator && any_missing;
    const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index M = static_cast<Eigen::Index>(item_cols.size()) + (add_indicator ? 1 : 0);
    out.data.responses.resize(N, M);
    for (Eigen::Index n = 0; n < N; ++n) {
        for (std::size_t m = 0; m < item_cols.size(); ++m)
            out.data.responses(n, static_cast<Eigen::Index>(m)) = rows[n][m];
        if (add_indicator) out.data.responses(n, M - 1) = row_missing[n] ? 1.0 : 0.0;
    }
    if (add_indicator) out.item_names.push_back("missing");
    out.data.block_of = std::move(blocks);
    out.data.row_ids.resize(N);
    for (Eigen::Index n = 0; n < N; ++n) out.data.row_ids[n] = std::to_string(n + 1);
    out.labels = std::move(labels);
    out.has_labels = label_col >= 0;
    validate(out.data);
    return out;
}

inline std::string dataset_to_csv(const BinaryDataset& data,
                                  const std::vector<int>* labels = nullptr,
                                  const std::vector<std::string>* item_names = nullptr) {
    std::ostringstream out;
    for (Eigen::Index m = 0; m < data.items(); ++m) {
        if (m) out << ',';
        if (item_names && static_cast<Eigen::Index>(item_names->size()) == data.items())
            out << (*item_names)[m];
        else
            out << 'v' << (m + 1);
    }
    if (data.has_blocks()) out << ",block";
    if (labels) out << ",label";
    out << '\n';
    for (Eigen::Index n = 0; n < data.rows(); ++n) {
        for (Eigen::Index m = 0; m < data.items(); ++m) {
            if (m) out << ',';
            out << (data.responses(n, m) == 1.0 ? '1' : '0');
        }
        if (data.has_blocks()) out << ',' << data.block_ids[data.block_of[n]];
        if (labels) out << ',' << (*labels)[n] + 1;
        out << '\n';
    }
    return out.str();
}

// model.json: a single self-describing artifact consumable by evaluate and
// project; floats round-trip bitwise.
inline nlohmann::json model_to_json(const MclmModel& model,
                                    const std::optional<ModelScore>& score = std::nullopt) {
    nlohmann::json j;
    j["G"] = model.components();
    j["d"] = model.latent_dim();
    j["structure"] = to_string(model.structure);
    j["eta"] = std::vector<double>(model.eta.data(), model.eta.data() + model.eta.size());
    auto matrix_rows = [](const Eigen::MatrixXd& A) {
        std::vector<std::vector<double>> rows(A.rows());
        for (Eigen::Index r = 0; r < A.rows(); ++r) {
            rows[r].resize(A.cols());
            for (Eigen::Index c = 0; c < A.cols(); ++c) rows[r][c] = A(r, c);
        }
        return rows;
    };
    j["W"] = matrix_rows(model.W);
    std::vector<std::vector<double>> mu;
    for (const auto& m : model.mu) mu.emplace_back(m.data(), m.data() + m.size());
    j["mu"] = mu;
    std::vector<std::vector<std::vector<double>>> sigma;
    for (const auto& S : model.Sigma) sigma.push_back(matrix_rows(S));
    j["Sigma"] = sigma;
    if (model.block) {
        nlohmann::json b;
        b["beta"] = std::vector<double>(model.block->beta.data(),
                                        model.block->beta.data() + model.block->beta.size());
        b["b"] = std::vector<double>(model.block->b.data(),
                                     model.block->b.data() + model.block->b.size());
        b["sigma2"] = std::vector<double>(model.block->sigma2.data(),
                                          model.block->sigma2.data() + model.block->sigma2.size());
        j["block"] = b;
    } else {
        j["block"] = nullptr;
    }
    if (score) {
        j["loglik_variational"] = score->loglik_variational;
        j["loglik_quadrature"] = score->loglik_quadrature;
        j["n_params"] = score->k;
        j["bic"] = score->bic;
    }
    return j;
}

inline MclmModel model_from_json(const nlohmann::json& j) {
    MclmModel model;
    const int G = j.at("G").get<int>();
    const int d = j.at("d").get<int>();
    model.structure = parse_structure(j.at("structure").get<std::string>());
    const auto eta = j.at("eta").get<std::vector<double>>();
    model.eta = Eigen::Map<const Eigen::VectorXd>(eta.data(), eta.size());
    const auto W = j.at("W").get<std::vector<std::vector<double>>>();
    model.W.resize(W.size(), d);
    for (std::size_t r = 0; r < W.size(); ++r)
        for (int c = 0; c < d; ++c) model.W(static_cast<Eigen::Index>(r), c) = W[r][c];
    for (const auto& m : j.at("mu")) {
        const auto v = m.get<std::vector<double>>();
        model.mu.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
    }
    for (const auto& s : j.at("Sigma")) {
        const auto rows = s.get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd S(rows.size(), rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows.size(); ++c)
                S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        model.Sigma.push_back(S);
    }
    if (j.contains("block") && !j.at("block").is_null()) {
        BlockParams blk;
        const auto beta = j.at("block").at("beta").get<std::vector<double>>();
        const auto b = j.at("block").at("b").get<std::vector<double>>();
        const auto s2 = j.at("block").at("sigma2").get<std::vector<double>>();
        blk.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
        blk.b = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
        blk.sigma2 = Eigen::Map<const Eigen::VectorXd>(s2.data(), s2.size());
        model.block = blk;
    }
    if (model.components() != G || model.latent_dim() != d)
        throw data_error("model.json dimensions are inconsistent");
    validate(model);
    return model;
}

inline std::string grid_to_csv(const GridResult& grid) {
    std::ostringstream out;
    out << "G,d,structure,loglik_var,loglik_gh,k,BIC,converged\n";
    for (const auto& row : grid.rows) {
        out << row.config.components << ',' << row.config.latent_dim << ','
            << to_string(row.config.structure) << ',';
        if (row.score) {
            out << detail_io::format_double(row.score->loglik_variational) << ','
                << detail_io::format_double(row.score->loglik_quadrature) << ','
                << row.score->k << ',' << detail_io::format_double(row.score->bic) << ','
                << (row.converged ? "true" : "false");
        } else {
            out << "NA,NA,NA,NA,failed";
        }
        out << '\n';
    }
    return out.str();
}

inline std::string projection_to_csv(const LatentProjection& proj,
                                     const std::vector<std::string>& row_ids) {
    std::ostringstream out;
    const Eigen::Index d = proj.coords.cols(), G = proj.responsibilities.cols();
    out << "row_id";
    for (Eigen::Index j = 0; j < d; ++j) out << ",y" << (j + 1);
    for (Eigen::Index g = 0; g < G; ++g) out << ",resp_" << (g + 1);
    out << ",hard_label\n";
    for (Eigen::Index n = 0; n < proj.coords.rows(); ++n) {
        out << row_ids[n];
        for (Eigen::Index j = 0; j < d; ++j)
            out << ',' << detail_io::format_double(proj.coords(n, j));
        for (Eigen::Index g = 0; g < G; ++g)
            out << ',' << detail_io::format_double(proj.responsibilities(n, g));
        out << ',' << proj.hard_label[n] + 1 << '\n';
    }
    return out.str();
}

inline nlohmann::json diagnostics_to_json(const FitDiagnostics& diag,
                                          const std::string& timestamp) {
    nlohmann::json j;
    j["loglik_trace"] = diag.loglik_trace;
    j["aitken_trace"] = diag.aitken_trace;
    j["iterations"] = diag.iterations;
    j["converged"] = diag.converged;
    j["seed"] = diag.seed;
    j["start_index"] = diag.start_index;
    j["sigma_floored"] = diag.sigma_floored;
    j["start_errors"] = diag.start_errors;
    j["timestamp"] = timestamp;
    return j;
}

}  // namespace mclt
