#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/schema.hpp"
#include "mixdiff/structure.hpp"

namespace mixdiff {

// Largest acceptable sample-to-population disclosure risk.
inline constexpr double kDisclosureThreshold = 0.09;

// Minimum L2 distance from any synthetic vector to any real vector.
double min_euclidean_distance(const std::vector<std::vector<double>>& real,
                              const std::vector<std::vector<double>>& syn);
// Same, on encoded, flattened episodes of two batches sharing a schema.
double min_euclidean_distance(const EpisodeBatch& real, const EpisodeBatch& syn);

struct EquivalenceClass {
    std::size_t real = 0;
    std::size_t syn = 0;
    bool joint() const noexcept { return real > 0 && syn > 0; }
};

struct DisclosureReport {
    double risk = 0.0;
    double threshold = kDisclosureThreshold;
    bool pass = true;
    std::size_t synthetic_patients = 0;
    std::map<std::vector<std::string>, EquivalenceClass> classes;

    nlohmann::json to_json() const;
};

// Risk from per-patient class keys: (1/S) sum_s I_s / F_s.
DisclosureReport disclosure_risk(const std::vector<std::vector<std::string>>& real_keys,
                                 const std::vector<std::vector<std::string>>& syn_keys);

// Class keys are read at each patient's first time step.
DisclosureReport disclosure_risk(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                                 const std::vector<QuasiVar>& quasi);

std::vector<std::vector<std::string>> patient_class_keys(const RecordTable& table, const DatasetSchema& schema,
                                                         const std::vector<QuasiVar>& quasi);

}  // namespace mixdiff
