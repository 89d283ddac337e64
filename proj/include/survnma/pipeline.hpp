#pragma once

#include "survnma/data_io.hpp"
#include "survnma/nma.hpp"
#include "survnma/plot.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace survnma::pipeline {

namespace fs = std::filesystem;

/// Lower-case hex SHA-256 of a byte string / file.
std::string sha256(const std::string& bytes);
std::string sha256_file(const fs::path& path);

struct Options {
    fs::path out = "out";
    std::vector<std::string> models;   // empty: the configured model
    bool force = false;                // ignore the manifest and rerun every stage
    std::function<void(const std::string&)> log;
};

struct StageReport {
    std::string id;                    // e.g. "nma/tri-loglogistic"
    bool skipped = false;
    std::vector<std::string> outputs;  // relative to the output directory
    std::vector<std::string> warnings;
    bool convergence_warning = false;
};

struct RunResult {
    std::vector<StageReport> stages;
    bool convergence_warning = false;
    std::vector<std::string> warnings;
};

/// Content-hashed, resumable execution of the stages. Every stage reads only the persisted
/// outputs of its predecessors; a stage is skipped when its input key and output hashes match
/// the manifest.
class Pipeline {
public:
    Pipeline(data_io::RunConfig config, Options options);

    const data_io::RunConfig& config() const { return config_; }
    const std::vector<std::string>& models() const { return models_; }
    const fs::path& out() const { return options_.out; }

    StageReport project_mortality();
    StageReport fit_survival(const std::string& model);
    StageReport extract_contrasts(const std::string& model);
    StageReport nma(const std::string& model);
    StageReport decide(const std::string& model);
    StageReport cea(const std::string& model);
    /// forest.svg for the configured models (dual overlay when two).
    StageReport plot();

    RunResult run();

    /// manifest.json as loaded or last written.
    const nlohmann::ordered_json& manifest() const { return manifest_; }

private:
    data_io::RunConfig config_;
    Options options_;
    std::vector<std::string> models_;
    std::string snapshot_;
    nlohmann::ordered_json manifest_;

    StageReport stage(const std::string& id, const std::vector<std::string>& inputs,
                      const std::function<StageReport()>& body);
    void save_manifest();
    void log(const std::string& message) const;
};

/// Forest rows (treatment vs reference) from a d_summary.csv.
plot::ForestSeries read_forest_series(const fs::path& d_summary, const std::string& name);

/// The per-treatment draws x K matrix from an nma draws.csv (columns in `treatments` order).
Eigen::MatrixXd read_d_matrix(const fs::path& draws_csv, const std::vector<std::string>& treatments);

/// Decision report JSON from d draws (and optional CEA).
nlohmann::ordered_json decision_report(const Eigen::MatrixXd& d_draws, const std::vector<std::string>& treatments,
                                       const data_io::DecisionConfig& config, const std::string& model);

/// Writes d_summary, ranks, sucra and league CSVs plus forest.svg for an NMA fit into `dir`.
std::vector<std::string> write_nma_outputs(const fs::path& dir, const nma::NmaFit& fit);

/// Stable 64-bit FNV-1a hash used to derive per-entity seed streams.
std::uint64_t stream_id(const std::string& name);

} // namespace survnma::pipeline
