// Command-line driver: data ingestion, single fits, model grids, simulation,
// evaluation, and projection export. See README.md for the file formats.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mclt/mclt.hpp"

namespace {

using nlohmann::json;

int thread_cap() {
    const char* env = std::getenv("MCLT_THREADS");
    if (env) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// "1..5" or "1,3,5" -> list of ints
std::vector<int> parse_int_range(const std::string& text) {
    std::vector<int> out;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const int lo = std::stoi(text.substr(0, dots));
        const int hi = std::stoi(text.substr(dots + 2));
        if (hi < lo) throw CLI::ValidationError("range", "descending range: " + text);
        for (int v = lo; v <= hi; ++v) out.push_back(v);
        return out;
    }
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    if (out.empty()) throw CLI::ValidationError("range", "empty range: " + text);
    return out;
}

std::vector<mclt::CovarianceStructure> parse_structures(const std::string& text) {
    std::vector<mclt::CovarianceStructure> out;
    if (text == "all") {
        out.assign(mclt::all_structures.begin(), mclt::all_structures.end());
        return out;
    }
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(mclt::parse_structure(tok));
    if (out.empty()) throw CLI::ValidationError("structure", "empty structure list");
    return out;
}

struct CommonFlags {
    std::string input;
    std::string out_dir = ".";
    std::string g_text = "1";
    std::string d_text = "1";
    std::string structure_text = "VVV";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int starts = 10;
    int gh_nodes = 10;
    std::string stop = "aitken";
    std::string missing = "indicator";
    bool block = false;
    bool sigma_scatter = false;
    double tol = 0.01;
    int max_iter = 2000;
};

void add_fit_flags(CLI::App* cmd, CommonFlags& f, bool with_input = true) {
    if (with_input) cmd->add_option("--input", f.input, "input CSV file")->required();
    cmd->add_option("--G", f.g_text, "component count (list or a..b range)");
    cmd->add_option("--d", f.d_text, "latent dimension (list or a..b range)");
    cmd->add_option("--structure", f.structure_text, "covariance structure tags, or 'all'");
    cmd->add_option("--starts", f.starts, "random starts per fit");
    cmd->add_option("--seed", f.seed, "RNG seed (required; no wall-clock seeding)")
        ->required();
    cmd->add_option("--gh-nodes", f.gh_nodes, "Gauss-Hermite nodes per dimension");
    cmd->add_option("--stop", f.stop, "stopping rule: aitken or param")
        ->check(CLI::IsMember({"aitken", "param"}));
    cmd->add_option("--missing", f.missing, "NA policy: drop or indicator")
        ->check(CLI::IsMember({"drop", "indicator"}));
    cmd->add_flag("--block", f.block, "fit the block-effect model (needs a block column)");
    cmd->add_flag("--sigma-scatter", f.sigma_scatter,
                  "add the posterior-mean scatter to the Sigma update");
    cmd->add_option("--tol", f.tol, "stopping tolerance");
    cmd->add_option("--max-iter", f.max_iter, "outer iteration cap");
    cmd->add_option("--out", f.out_dir, "output directory");
}

mclt::FitOptions make_options(const CommonFlags& f) {
    mclt::FitOptions options;
    options.starts = f.starts;
    options.seed = f.seed;
    options.stopping = f.stop == "param" ? mclt::StoppingRule::Parameter
                                         : mclt::StoppingRule::Aitken;
    options.tolerance = f.tol;
    options.max_iterations = f.max_iter;
    options.sigma_mean_scatter = f.sigma_scatter;
    options.threads = thread_cap();
    return options;
}

mclt::IngestResult load(const CommonFlags& f) {
    const auto policy = f.missing == "drop" ? mclt::MissingPolicy::Drop
                                            : mclt::MissingPolicy::Indicator;
    return mclt::ingest_csv(f.input, policy);
}

void ensure_out(const std::string& dir) { std::filesystem::create_directories(dir); }

int single_value(const std::string& text, const char* name) {
    const auto vals = parse_int_range(text);
    if (vals.size() != 1)
        throw CLI::ValidationError(name, "this command takes a single value");
    return vals.front();
}

void cmd_fit(const CommonFlags& f) {
    const auto ingest = load(f);
    mclt::ModelConfig config;
    config.components = single_value(f.g_text, "--G");
    config.latent_dim = single_value(f.d_text, "--d");
    const auto structures = parse_structures(f.structure_text);
    if (structures.size() != 1) throw CLI::ValidationError("--structure", "single tag expected");
    config.structure = structures.front();
    config.block_effect = f.block;
    const mclt::FitOptions options = make_options(f);
    const mclt::FitResult result = f.block ? mclt::fit_block(ingest.data, config, options)
                                           : mclt::fit(ingest.data, config, options);
    const mclt::ModelScore score =
        mclt::score_model(result.model, ingest.data, result.loglik_variational, f.gh_nodes);
    ensure_out(f.out_dir);
    mclt::atomic_write(f.out_dir + "/model.json",
                       mclt::model_to_json(result.model, score).dump(2) + "\n");
    mclt::atomic_write(f.out_dir + "/diagnostics.json",
                       mclt::diagnostics_to_json(result.diagnostics, timestamp_utc()).dump(2) +
                           "\n");
    std::cout << "fit: loglik_gh=" << score.loglik_quadrature << " BIC=" << score.bic
              << " converged=" << (result.diagnostics.converged ? "true" : "false") << "\n";
}

void cmd_grid(const CommonFlags& f) {
    const auto ingest = load(f);
    const auto G_range = parse_int_range(f.g_text);
    const auto d_range = parse_int_range(f.d_text);
    const auto structures = parse_structures(f.structure_text);
    const mclt::FitOptions options = make_options(f);
    const std::vector<int>* labels = ingest.has_labels ? &ingest.labels : nullptr;
    const mclt::GridResult grid = mclt::run_grid(ingest.data, G_range, d_range, structures,
                                                 options, f.block, f.gh_nodes, labels);
    ensure_out(f.out_dir);
    mclt::atomic_write(f.out_dir + "/grid.csv", mclt::grid_to_csv(grid));
    if (grid.best >= 0) {
        mclt::atomic_write(
            f.out_dir + "/model.json",
            mclt::model_to_json(*grid.best_model, grid.rows[grid.best].score).dump(2) + "\n");
        const auto& best = grid.rows[grid.best];
        std::cout << "grid: best G=" << best.config.components << " d=" << best.config.latent_dim
                  << " structure=" << mclt::to_string(best.config.structure)
                  << " BIC=" << best.score->bic << "\n";
    } else {
        throw mclt::numerical_error("every grid row failed");
    }
}

void cmd_simulate(CLI::App* cmd, const CommonFlags& f, const std::string& truth_path,
                  long n, int blocks, int per_block) {
    mclt::SimulationSpec spec;
    if (truth_path.empty()) {
        spec.true_model = mclt::simulation_study_truth();
    } else {
        std::ifstream in(truth_path);
        if (!in) throw mclt::data_error("cannot open " + truth_path);
        spec.true_model = mclt::model_from_json(json::parse(in));
    }
    spec.seed = f.seed;
    spec.n = n;
    spec.blocks = blocks;
    spec.per_block = per_block;
    if (spec.true_model.block && (blocks <= 0 || per_block <= 0))
        throw CLI::ValidationError("--I/--J", "block truth model needs --I and --J");
    if (spec.true_model.block &&
        spec.true_model.block->b.size() != blocks)
        throw mclt::data_error("truth model block count does not match --I");
    (void)cmd;
    const mclt::SimulatedData sim = mclt::generate(spec);
    ensure_out(f.out_dir);
    mclt::atomic_write(f.out_dir + "/data.csv", mclt::dataset_to_csv(sim.data, &sim.labels));
    mclt::atomic_write(f.out_dir + "/truth.json",
                       mclt::model_to_json(spec.true_model).dump(2) + "\n");
    std::cout << "simulate: N=" << sim.data.rows() << " M=" << sim.data.items() << "\n";
}

void cmd_evaluate(const CommonFlags& f, const std::string& model_path,
                  const std::string& truth_path) {
    const auto ingest = load(f);
    std::ifstream in(model_path);
    if (!in) throw mclt::data_error("cannot open " + model_path);
    const mclt::MclmModel model = mclt::model_from_json(json::parse(in));
    const mclt::PosteriorSummary posterior =
        model.block ? mclt::compute_block_posterior(model, ingest.data)
                    : mclt::compute_posterior(model, ingest.data);
    const mclt::ModelScore score =
        mclt::score_model(model, ingest.data, posterior.loglik_variational, f.gh_nodes);
    json report;
    report["n"] = ingest.data.rows();
    report["loglik_variational"] = score.loglik_variational;
    report["loglik_quadrature"] = score.loglik_quadrature;
    report["n_params"] = score.k;
    report["bic"] = score.bic;
    if (ingest.has_labels) {
        report["ari"] = mclt::adjusted_rand_index(posterior.projection.hard_label,
                                                  ingest.labels);
        const Eigen::MatrixXi table =
            mclt::classification_table(posterior.projection.hard_label, ingest.labels);
        std::vector<std::vector<int>> rows(table.rows());
        for (Eigen::Index r = 0; r < table.rows(); ++r)
            for (Eigen::Index c = 0; c < table.cols(); ++c) rows[r].push_back(table(r, c));
        report["classification_table"] = rows;
        report["reference_classes"] = ingest.label_names;
    }
    if (!truth_path.empty()) {
        std::ifstream tin(truth_path);
        if (!tin) throw mclt::data_error("cannot open " + truth_path);
        const mclt::MclmModel truth = mclt::model_from_json(json::parse(tin));
        const mclt::MclmModel aligned = mclt::align_estimates(model, truth);
        json mse;
        Eigen::MatrixXd dW = (aligned.W - truth.W).array().square();
        std::vector<std::vector<double>> mw(dW.rows());
        for (Eigen::Index r = 0; r < dW.rows(); ++r)
            for (Eigen::Index c = 0; c < dW.cols(); ++c) mw[r].push_back(dW(r, c));
        report["se_W"] = mw;
        std::vector<std::vector<double>> mm;
        for (int g = 0; g < truth.components(); ++g) {
            Eigen::VectorXd dmu = (aligned.mu[g] - truth.mu[g]).array().square();
            mm.emplace_back(dmu.data(), dmu.data() + dmu.size());
        }
        report["se_mu"] = mm;
    }
    ensure_out(f.out_dir);
    mclt::atomic_write(f.out_dir + "/report.json", report.dump(2) + "\n");
    std::cout << "evaluate: BIC=" << score.bic;
    if (report.contains("ari")) std::cout << " ARI=" << report["ari"].get<double>();
    std::cout << "\n";
}

void cmd_project(const CommonFlags& f, const std::string& model_path) {
    const auto ingest = load(f);
    std::ifstream in(model_path);
    if (!in) throw mclt::data_error("cannot open " + model_path);
    const mclt::MclmModel model = mclt::model_from_json(json::parse(in));
    const mclt::PosteriorSummary posterior =
        model.block ? mclt::compute_block_posterior(model, ingest.data)
                    : mclt::compute_posterior(model, ingest.data);
    ensure_out(f.out_dir);
    mclt::atomic_write(f.out_dir + "/projection.csv",
                       mclt::projection_to_csv(posterior.projection, ingest.data.row_ids));
    std::cout << "project: wrote " << ingest.data.rows() << " rows\n";
}

int fail(int code, const std::string& message) {
    json err;
    err["error"] = {{"code", code}, {"message", message}};
    std::cerr << err.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCLT clustering for high-dimensional binary data"};
    app.require_subcommand(1);

    CommonFlags fit_flags, grid_flags, sim_flags, eval_flags, proj_flags;
    std::string truth_path, model_path, eval_truth;
    long sim_n = 0;
    int sim_I = 0, sim_J = 0;

    CLI::App* fit_cmd = app.add_subcommand("fit", "fit one model configuration");
    add_fit_flags(fit_cmd, fit_flags);

    CLI::App* grid_cmd = app.add_subcommand("grid", "fit a (G, d, structure) grid");
    add_fit_flags(grid_cmd, grid_flags);

    CLI::App* sim_cmd = app.add_subcommand("simulate", "draw a synthetic dataset");
    sim_cmd->add_option("--truth", truth_path,
                        "generating model JSON (defaults to the built-in study)");
    sim_cmd->add_option("--n", sim_n, "sample size (flat model)");
    sim_cmd->add_option("--I", sim_I, "block count (block model)");
    sim_cmd->add_option("--J", sim_J, "observations per block (block model)");
    sim_cmd->add_option("--seed", sim_flags.seed, "RNG seed")->required();
    sim_cmd->add_option("--out", sim_flags.out_dir, "output directory");

    CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a fitted model on data");
    eval_cmd->add_option("--input", eval_flags.input, "input CSV file")->required();
    eval_cmd->add_option("--model", model_path, "fitted model JSON")->required();
    eval_cmd->add_option("--truth", eval_truth, "true model JSON for MSE reporting");
    eval_cmd->add_option("--gh-nodes", eval_flags.gh_nodes, "Gauss-Hermite nodes per dimension");
    eval_cmd->add_option("--missing", eval_flags.missing, "NA policy: drop or indicator")
        ->check(CLI::IsMember({"drop", "indicator"}));
    eval_cmd->add_option("--out", eval_flags.out_dir, "output directory");

    CLI::App* proj_cmd = app.add_subcommand("project", "export posterior-mean coordinates");
    proj_cmd->add_option("--input", proj_flags.input, "input CSV file")->required();
    proj_cmd->add_option("--model", model_path, "fitted model JSON")->required();
    proj_cmd->add_option("--missing", proj_flags.missing, "NA policy: drop or indicator")
        ->check(CLI::IsMember({"drop", "indicator"}));
    proj_cmd->add_option("--out", proj_flags.out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);   // --help
        app.exit(e);
        return 2;
    }

    try {
        if (fit_cmd->parsed()) cmd_fit(fit_flags);
        if (grid_cmd->parsed()) cmd_grid(grid_flags);
        if (sim_cmd->parsed()) cmd_simulate(sim_cmd, sim_flags, truth_path, sim_n, sim_I, sim_J);
        if (eval_cmd->parsed()) cmd_evaluate(eval_flags, model_path, eval_truth);
        if (proj_cmd->parsed()) cmd_project(proj_flags, model_path);
    } catch (const CLI::ValidationError& e) {
        return fail(2, e.what());
    } catch (const mclt::data_error& e) {
        return fail(3, e.what());
    } catch (const mclt::numerical_error& e) {
        return fail(4, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(2, e.what());
    } catch (const std::exception& e) {
        return fail(4, e.what());
    }
    return 0;
}
