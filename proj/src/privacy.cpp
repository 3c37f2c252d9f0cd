#include "mixdiff/privacy.hpp"

#include <cmath>
#include <limits>

#include "mixdiff/error.hpp"

namespace mixdiff {

double min_euclidean_distance(const std::vector<std::vector<double>>& real,
                              const std::vector<std::vector<double>>& syn) {
    if (real.empty() || syn.empty()) throw ParameterError("distance needs non-empty real and synthetic sets");
    const std::size_t d = real.front().size();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : syn) {
        if (s.size() != d) throw ShapeError("record widths differ");
        for (const auto& r : real) {
            if (r.size() != d) throw ShapeError("record widths differ");
            double acc = 0.0;
            for (std::size_t i = 0; i < d && acc < best; ++i) acc += (s[i] - r[i]) * (s[i] - r[i]);
            best = std::min(best, acc);
        }
    }
    return std::sqrt(best);
}

double min_euclidean_distance(const EpisodeBatch& real, const EpisodeBatch& syn) {
    if (!(real.schema == syn.schema)) throw SchemaError("real and synthetic batches use different schemas");
    return min_euclidean_distance(flatten_episodes(real), flatten_episodes(syn));
}

nlohmann::json DisclosureReport::to_json() const {
    std::size_t joint = 0;
    for (const auto& [k, c] : classes) joint += c.joint();
    nlohmann::json cls = nlohmann::json::array();
    for (const auto& [k, c] : classes) cls.push_back({{"key", k}, {"real", c.real}, {"synthetic", c.syn}});
    return {{"risk", risk},
            {"threshold", threshold},
            {"pass", pass},
            {"synthetic_patients", synthetic_patients},
            {"classes", classes.size()},
            {"joint_classes", joint},
            {"class_table", cls}};
}

DisclosureReport disclosure_risk(const std::vector<std::vector<std::string>>& real_keys,
                                 const std::vector<std::vector<std::string>>& syn_keys) {
    if (syn_keys.empty()) throw ParameterError("disclosure risk needs at least one synthetic patient");
    DisclosureReport rep;
    for (const auto& k : real_keys) ++rep.classes[k].real;
    for (const auto& k : syn_keys) ++rep.classes[k].syn;
    double sum = 0.0;
    for (const auto& k : syn_keys) {
        const auto& c = rep.classes.at(k);
        if (c.joint()) sum += 1.0 / static_cast<double>(c.real);
    }
    rep.synthetic_patients = syn_keys.size();
    rep.risk = sum / static_cast<double>(syn_keys.size());
    rep.pass = rep.risk <= rep.threshold;
    return rep;
}

std::vector<std::vector<std::string>> patient_class_keys(const RecordTable& table, const DatasetSchema& schema,
                                                         const std::vector<QuasiVar>& quasi) {
    check_table_matches(table, schema);
    if (quasi.empty()) throw ParameterError("disclosure risk needs at least one quasi-identifier");
    for (const auto& q : quasi)
        if (!schema.find(q.name)) throw SchemaError("unknown quasi-identifier '" + q.name + "'");
    std::vector<std::vector<std::string>> keys;
    for (const auto& ep : table.episodes()) {
        std::vector<std::string> key;
        for (const auto& q : quasi) key.push_back(quasi_label(table, schema, q, ep.first_row));
        keys.push_back(std::move(key));
    }
    return keys;
}

DisclosureReport disclosure_risk(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                                 const std::vector<QuasiVar>& quasi) {
    return disclosure_risk(patient_class_keys(real, schema, quasi), patient_class_keys(syn, schema, quasi));
}

}  // namespace mixdiff
