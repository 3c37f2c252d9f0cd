#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/schema.hpp"

namespace mixdiff {

struct TestOutcome {
    double statistic = 0.0;
    double p_value = 1.0;
    bool pass = true;
};

double mean_of(std::span<const double> x);
// Unbiased sample variance (n - 1 denominator).
double variance_of(std::span<const double> x);

// Numeric values of a column, or level indices for binary/categorical ones.
std::vector<double> column_values(const RecordTable& table, const DatasetSchema& schema, std::size_t variable);

double ks_statistic(std::span<const double> a, std::span<const double> b);
// Asymptotic two-sample p-value for statistic d with sample sizes n and m.
double ks_p_value(double d, std::size_t n, std::size_t m);
TestOutcome ks_test(std::span<const double> a, std::span<const double> b, double alpha);

// Welch two-sample t-test.
TestOutcome t_test(std::span<const double> a, std::span<const double> b, double alpha);

// Numeric: F = var(a) / var(b), two-sided. Throws DegenerateVarianceError
// when var(b) is zero.
TestOutcome f_test_numeric(std::span<const double> a, std::span<const double> b, double alpha);
// Two-group one-way ANOVA on the indicator of each level; statistic is the
// mean F over levels, p-value the smallest, pass iff every level passes.
TestOutcome f_test_levels(std::span<const double> a, std::span<const double> b, std::size_t levels, double alpha);
TestOutcome f_test(std::span<const double> a, std::span<const double> b, double alpha, const VariableSpec& spec);

struct ThreeSigmaOutcome {
    double fraction = 1.0;
    double lower = 0.0;
    double upper = 0.0;
    bool pass = true;
};

ThreeSigmaOutcome three_sigma_test(std::span<const double> real, std::span<const double> syn, double k = 2.0);
ThreeSigmaOutcome three_sigma_with(double mean, double sd, std::span<const double> syn, double k = 2.0);

struct VariableCascade {
    std::string name;
    VariableKind kind = VariableKind::Numeric;
    std::size_t ks = 0;
    std::size_t t = 0;
    std::size_t f = 0;
    std::size_t three_sigma = 0;
    // Repetitions where the cascade as a whole accepted: KS passed, or KS
    // failed but both the t-test (numeric only) and the F-test passed.
    std::size_t cascade = 0;
    bool has_t = true;
    bool has_three_sigma = true;
};

struct CascadeResult {
    double alpha = 0.05;
    std::size_t repetitions = 100;
    std::size_t batch = 32;
    std::vector<VariableCascade> variables;

    const VariableCascade& at(std::string_view name) const;
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

struct CascadeOptions {
    double alpha = 0.05;
    std::size_t repetitions = 100;
    std::size_t batch = 32;
    double sigma_k = 2.0;
    std::uint64_t seed = 0;
};

CascadeResult run_cascade(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const CascadeOptions& options = {});

inline constexpr double kKlSmoothing = 1e-9;

// sum p_syn log(p_syn / p_real) over cells after adding kKlSmoothing to
// every cell of both count vectors and normalising.
double kl_from_counts(std::span<const double> syn_counts, std::span<const double> real_counts);
// Numeric samples: equal-width bins over the pooled range.
double kl_numeric(std::span<const double> real, std::span<const double> syn, std::size_t bins = 20);
// Level-index samples.
double kl_levels(std::span<const double> real, std::span<const double> syn, std::size_t levels);

struct KlEntry {
    std::string name;
    VariableKind kind = VariableKind::Numeric;
    double kl = 0.0;
};

std::vector<KlEntry> kl_table(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                              std::size_t bins = 20);
std::string kl_table_csv(const std::vector<KlEntry>& table);

}  // namespace mixdiff
