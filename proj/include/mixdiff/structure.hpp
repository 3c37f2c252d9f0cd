#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixdiff/schema.hpp"

namespace mixdiff {

// Tie-corrected Kendall tau-b in O(n log n). Empty when either sequence is
// constant.
std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b);

struct CorrelationMatrix {
    std::vector<std::string> names;
    std::vector<std::optional<double>> values;  // row-major V x V
    // Number of contributing series per entry (1 for static matrices).
    std::vector<std::size_t> support;

    std::size_t size() const noexcept { return names.size(); }
    std::optional<double> at(std::size_t i, std::size_t j) const { return values.at(i * size() + j); }
    std::string to_csv() const;
};

// Kendall tau between every pair of variables over all rows pooled across
// patients and time; non-numeric variables use level indices.
CorrelationMatrix static_correlations(const RecordTable& table, const DatasetSchema& schema);

struct DecomposedSeries {
    struct Patient {
        std::string id;
        std::vector<std::vector<double>> trend;  // per variable, per time step
        std::vector<std::vector<double>> cycle;
    };
    std::vector<Patient> patients;
    std::size_t excluded = 0;  // episodes of length 1
};

// Least-squares line a + b t per series; returns the fitted values.
std::vector<double> linear_trend(std::span<const double> y);

DecomposedSeries decompose(const RecordTable& table, const DatasetSchema& schema);

struct DynamicCorrelations {
    CorrelationMatrix trend;
    CorrelationMatrix cycle;
    std::size_t patients = 0;
    std::size_t excluded = 0;
};

// Per-patient tau matrices of trends and cycles, averaged entrywise over
// patients with defined entries.
DynamicCorrelations dynamic_correlations(const RecordTable& table, const DatasetSchema& schema);

inline constexpr double kLogClusterFloor = 1e-12;

struct LogClusterResult {
    double mean = 0.0;
    std::vector<double> per_rep;
    std::vector<bool> floored;
    std::vector<std::size_t> clusters_used;
    std::size_t sample_real = 0;
    std::size_t sample_syn = 0;
    bool capped = false;
};

struct LogClusterValue {
    double value = 0.0;
    bool floored = false;
    std::size_t clusters_used = 0;
};

// U = log((1/G) sum_k (n_k^R / n_k - n^R / n)^2) for a given cluster
// assignment; empty clusters are skipped and G reduced accordingly.
LogClusterValue log_cluster_from_assignment(std::span<const std::size_t> labels, const std::vector<bool>& is_real,
                                            std::size_t gamma);

struct LogClusterOptions {
    std::size_t gamma = 20;
    std::size_t reps = 20;
    std::size_t sample_n = 100000;
    std::uint64_t seed = 0;
};

// Rows are encoded time steps (n x dim, row-major). Inputs are put in a
// canonical order first, so row order does not affect the result.
LogClusterResult log_cluster_U(const std::vector<double>& real_rows, std::size_t n_real,
                               const std::vector<double>& syn_rows, std::size_t n_syn, std::size_t dim,
                               const LogClusterOptions& options = {});

// Valid (non-padding) encoded time steps of every episode, row-major.
std::vector<double> encoded_rows(const EpisodeBatch& batch, std::size_t* count);

// Mean over non-numeric variables of |syn levels| / |real levels|, each
// ratio capped at 1. Throws NotApplicableError without non-numeric variables.
double category_coverage(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema);

struct QuasiVar {
    std::string name;
    // Numeric variables must be binned: value -> floor(value / width) * width.
    std::optional<double> bin_width;
};

// Label of the cell a value falls in for one quasi-identifier.
std::string quasi_label(const RecordTable& table, const DatasetSchema& schema, const QuasiVar& q, std::size_t row);

struct CrossTab {
    std::vector<std::string> variables;
    // joint labels -> (real count, synthetic count)
    std::map<std::vector<std::string>, std::pair<std::size_t, std::size_t>> cells;

    std::string to_csv() const;
};

// Joint-level counts over rows (or over patients at time step 0). All level
// combinations of non-numeric variables appear, including zero cells.
CrossTab demographic_coverage(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                              const std::vector<QuasiVar>& quasi, bool per_patient = false);

}  // namespace mixdiff
