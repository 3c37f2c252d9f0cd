#include "mixdiff/toygen.hpp"

#include <cmath>

#include "mixdiff/error.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

void ToySpec::validate() const {
    if (patients == 0) throw ParameterError("toy spec needs at least one patient");
    if (length < 2) throw ParameterError("toy episodes need length >= 2");
    if (min_length < 1 || min_length > length) throw ParameterError("toy min_length must be in 1..length");
    if (!(period > 0.0)) throw ParameterError("toy period must be positive");
    if (!(noise_sd >= 0.0)) throw ParameterError("toy noise_sd must be >= 0");
    if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) throw ParameterError("toy switch_prob must be in [0, 1]");
}

nlohmann::json ToySpec::to_json() const {
    return {{"patients", patients}, {"holdout", holdout}, {"length", length},           {"min_length", min_length},
            {"period", period},     {"noise_sd", noise_sd}, {"switch_prob", switch_prob}, {"seed", seed}};
}

ToySpec ToySpec::from_json(const nlohmann::json& j) {
    ToySpec s;
    s.patients = j.value("patients", s.patients);
    s.holdout = j.value("holdout", s.holdout);
    s.length = j.value("length", s.length);
    s.min_length = j.value("min_length", s.length);
    s.period = j.value("period", s.period);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.switch_prob = j.value("switch_prob", s.switch_prob);
    s.seed = j.value("seed", s.seed);
    return s;
}

DatasetSchema toy_schema(const ToySpec& spec) {
    DatasetSchema s;
    s.name = "toy";
    s.max_length = spec.length;
    s.time_unit = "step";
    s.variables = {VariableSpec::numeric("signal"), VariableSpec::numeric("companion"),
                   VariableSpec::binary("flag", {"False", "True"}),
                   VariableSpec::categorical("regime", {"low", "normal", "high"})};
    return s;
}

RecordTable generate_toy_table(const ToySpec& spec, std::size_t count, std::uint64_t stream,
                               const std::string& id_prefix) {
    spec.validate();
    const auto schema = toy_schema(spec);
    RecordTable table(schema);
    Rng root(Rng::mix(spec.seed) ^ Rng::mix(stream + 1));
    const double two_pi = 2.0 * M_PI;
    const char* regimes[3] = {"low", "normal", "high"};
    std::vector<std::variant<double, std::string>> row(4);
    for (std::size_t p = 0; p < count; ++p) {
        Rng rng = root.split(p);
        const std::size_t len =
            spec.min_length == spec.length ? spec.length : rng.uniform_int(spec.min_length, spec.length);
        const double phase = two_pi * rng.uniform();
        auto regime = static_cast<int>(rng.uniform_int(0, 2));
        for (std::size_t t = 0; t < len; ++t) {
            if (t > 0 && rng.uniform() < spec.switch_prob) regime = (regime + 1 + static_cast<int>(rng.uniform_int(0, 1))) % 3;
            const double angle = two_pi * static_cast<double>(t) / spec.period + phase;
            const double signal = 70.0 + 10.0 * std::sin(angle) + (regime - 1) + spec.noise_sd * rng.normal();
            const double companion = 90.0 + 6.0 * std::sin(angle + M_PI / 4.0) + spec.noise_sd * rng.normal();
            row[0] = signal;
            row[1] = companion;
            row[2] = std::string(signal > 70.0 ? "True" : "False");
            row[3] = std::string(regimes[regime]);
            table.append(id_prefix + std::to_string(p), static_cast<long>(t), row);
        }
    }
    table.normalize();
    return table;
}

ToyData generate_toy(const ToySpec& spec) {
    ToyData d;
    d.train = generate_toy_table(spec, spec.patients, 0, "p");
    d.holdout = spec.holdout ? generate_toy_table(spec, spec.holdout, 1, "h") : RecordTable(toy_schema(spec));
    d.schema = fit_ranges(toy_schema(spec), d.train);
    return d;
}

}  // namespace mixdiff
