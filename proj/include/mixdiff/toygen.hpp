#pragma once

#include <cstddef>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "mixdiff/schema.hpp"

namespace mixdiff {

// Desk-scale stand-in for a clinical cohort: two phase-shifted sinusoidal
// numerics ("signal", "companion"), a binary flag for signal > 70 and a
// three-level regime that switches with probability `switch_prob` per step
// and shifts the signal level.
struct ToySpec {
    std::size_t patients = 500;
    std::size_t holdout = 100;
    std::size_t length = 16;
    std::size_t min_length = 16;
    double period = 16.0;
    double noise_sd = 0.5;
    double switch_prob = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ToySpec from_json(const nlohmann::json& j);
};

// Schema of the toy data without numeric ranges.
DatasetSchema toy_schema(const ToySpec& spec);

struct ToyData {
    DatasetSchema schema;  // ranges fitted on `train`
    RecordTable train;
    RecordTable holdout;
};

// Patients are generated in one stream: the first `patients` form the
// training table, the next `holdout` the holdout table.
ToyData generate_toy(const ToySpec& spec);

// Toy episodes from a caller-chosen starting id and count.
RecordTable generate_toy_table(const ToySpec& spec, std::size_t count, std::uint64_t stream,
                               const std::string& id_prefix);

}  // namespace mixdiff
