#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/fidelity.hpp"
#include "mixdiff/schema.hpp"
#include "mixdiff/structure.hpp"

namespace mixdiff {

// Everything a run needs, loaded from a JSON file. Relative paths resolve
// against the config file's directory; files a command reads but the config
// does not name default to the outputs of the earlier commands inside
// `output_dir`.
struct RunConfig {
    nlohmann::json raw = nlohmann::json::object();
    std::filesystem::path base_dir = ".";
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    bool plots = false;
    int verbosity = 1;  // 0 quiet, 1 normal, 2 verbose

    struct Overrides {
        std::optional<std::uint64_t> seed;
        std::optional<std::filesystem::path> output_dir;
        std::optional<bool> plots;
        std::optional<int> verbosity;
    };

    // Precedence: command-line overrides, then config fields, then the
    // MIXDIFF_OUT_ROOT environment variable (output root only), then
    // built-in defaults.
    static RunConfig from_json(nlohmann::json j, const std::filesystem::path& base_dir, const Overrides& o = {});
    static RunConfig load(const std::filesystem::path& path, const Overrides& o = {});

    // Path named by `key` in the config, or `fallback` inside output_dir.
    std::filesystem::path path(const std::string& key, const std::string& fallback) const;
    nlohmann::json section(const std::string& key) const;
    // Per-stage seed derived from the run seed.
    std::uint64_t stage_seed(const std::string& stage) const;

    void log(int level, const std::string& message) const;
};

struct EvaluationOptions {
    CascadeOptions cascade;
    std::size_t kl_bins = 20;
    LogClusterOptions log_cluster;
    std::vector<QuasiVar> demographics;
};

struct EvaluationReport {
    CascadeResult cascade;
    std::vector<KlEntry> kl;
    CorrelationMatrix static_real, static_syn;
    DynamicCorrelations dynamic_real, dynamic_syn;
    LogClusterResult log_cluster;
    std::optional<double> category_coverage;
    std::optional<CrossTab> demographics;

    nlohmann::json summary() const;
};

EvaluationReport evaluate(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const EvaluationOptions& options = {});

nlohmann::json cmd_toygen(const RunConfig& cfg);
nlohmann::json cmd_train(const RunConfig& cfg);
nlohmann::json cmd_sample(const RunConfig& cfg);
nlohmann::json cmd_evaluate(const RunConfig& cfg);
nlohmann::json cmd_privacy(const RunConfig& cfg);
nlohmann::json cmd_utility(const RunConfig& cfg);

// Dispatches by subcommand name.
nlohmann::json run_command(const std::string& name, const RunConfig& cfg);

std::vector<QuasiVar> parse_quasi(const nlohmann::json& j);

}  // namespace mixdiff
