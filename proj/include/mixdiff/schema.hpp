#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/tensor.hpp"

namespace mixdiff {

enum class VariableKind { Numeric, Binary, Categorical };

std::string_view to_string(VariableKind kind);
VariableKind parse_kind(std::string_view text);

struct VariableSpec {
    std::string name;
    VariableKind kind = VariableKind::Numeric;
    std::vector<std::string> levels;  // binary / categorical only
    std::optional<double> min;        // numeric only
    std::optional<double> max;
    std::string unit;

    bool is_numeric() const noexcept { return kind == VariableKind::Numeric; }
    std::size_t width() const noexcept { return is_numeric() ? 1 : levels.size(); }
    bool has_range() const noexcept { return min.has_value() && max.has_value(); }

    std::optional<std::size_t> level_index(std::string_view label) const;

    // Structural checks (level counts, uniqueness). Range degeneracy is an
    // encode-time error and is not checked here.
    void validate() const;

    static VariableSpec numeric(std::string name, std::optional<double> lo = {},
                                std::optional<double> hi = {});
    static VariableSpec binary(std::string name, std::vector<std::string> levels);
    static VariableSpec categorical(std::string name, std::vector<std::string> levels);

    bool operator==(const VariableSpec&) const = default;
};

struct DatasetSchema {
    std::string name;
    std::vector<VariableSpec> variables;
    std::size_t max_length = 1;
    std::string time_unit = "step";

    // Encoded feature width: one channel per numeric variable plus one per level.
    std::size_t width() const noexcept;
    // Offset of each variable's first channel in the encoded feature axis.
    std::vector<std::size_t> channel_offsets() const;
    std::size_t index_of(std::string_view variable) const;
    std::optional<std::size_t> find(std::string_view variable) const;
    std::size_t numeric_count() const noexcept;

    void validate() const;

    nlohmann::json to_json() const;
    static DatasetSchema from_json(const nlohmann::json& j);
    static DatasetSchema load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    bool operator==(const DatasetSchema&) const = default;
};

inline constexpr std::string_view kPatientIdColumn = "patient_id";
inline constexpr std::string_view kTimeColumn = "time_index";

// Longitudinal records in native units. Numeric columns hold doubles,
// binary/categorical columns hold level labels. Rows are grouped by patient
// (in first-appearance order) and sorted by time within a patient.
class RecordTable {
public:
    using Column = std::variant<std::vector<double>, std::vector<std::string>>;

    struct Episode {
        std::string patient_id;
        std::size_t first_row = 0;
        std::size_t length = 0;
    };

    RecordTable() = default;
    // Empty table with one column per schema variable, typed by kind.
    explicit RecordTable(const DatasetSchema& schema);

    std::size_t rows() const noexcept { return patient_id_.size(); }
    std::size_t variable_count() const noexcept { return columns_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t v) const { return names_.at(v); }
    std::size_t index_of(std::string_view variable) const;

    const std::vector<std::string>& patient_ids() const noexcept { return patient_id_; }
    const std::vector<long>& time_indices() const noexcept { return time_; }

    bool is_numeric(std::size_t v) const { return std::holds_alternative<std::vector<double>>(columns_.at(v)); }
    const std::vector<double>& numbers(std::size_t v) const;
    const std::vector<std::string>& labels(std::size_t v) const;
    std::vector<double>& numbers(std::size_t v);
    std::vector<std::string>& labels(std::size_t v);

    // Appends a row; `values` holds one entry per column (numbers as
    // double, labels as string).
    void append(std::string patient_id, long time_index,
                const std::vector<std::variant<double, std::string>>& values);

    // Groups rows by patient, sorts by time, and checks that (id, time)
    // is unique and time runs 0..len-1 for every patient.
    void normalize();

    std::vector<Episode> episodes() const;
    std::size_t patient_count() const { return episodes().size(); }

    // Sub-table with the given rows (in the given order), no re-normalization.
    RecordTable select_rows(const std::vector<std::size_t>& rows) const;
    // Sub-table made of whole episodes, patients in the given order.
    RecordTable select_patients(const std::vector<std::size_t>& episode_indices) const;

    bool operator==(const RecordTable&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<Column> columns_;
    std::vector<std::string> patient_id_;
    std::vector<long> time_;
};

// Encoded episodes, tensor shape B x 1 x L x N.
struct EpisodeBatch {
    Tensor data;
    std::vector<std::size_t> lengths;
    std::vector<std::string> patient_ids;
    DatasetSchema schema;

    std::size_t batch() const { return data.dim(0); }
    std::size_t length() const { return data.dim(2); }
    std::size_t width() const { return data.dim(3); }
};

// Sets every numeric variable's range to the observed [min, max] in `table`.
DatasetSchema fit_ranges(DatasetSchema schema, const RecordTable& table);

// Checks that `table` has the schema's columns with the schema's kinds.
void check_table_matches(const RecordTable& table, const DatasetSchema& schema);

EpisodeBatch encode(const RecordTable& table, const DatasetSchema& schema);

// Numeric channels are clamped to [0, 1] before inverse scaling; each
// one-hot group decodes to its argmax level. Rows beyond `lengths` are
// dropped. Missing patient ids are generated as "syn_<index>".
RecordTable decode(const EpisodeBatch& batch);

// Recovers episode lengths from a sampled tensor: trailing timesteps whose
// mean one-hot group mass is below `mass_threshold` are treated as padding.
// Schemas without non-numeric variables always yield full length.
std::vector<std::size_t> infer_lengths(const Tensor& data, const DatasetSchema& schema,
                                       double mass_threshold = 0.5);

// Flattened per-patient encoded episodes (L*N doubles each).
std::vector<std::vector<double>> flatten_episodes(const EpisodeBatch& batch);

RecordTable load_csv(const std::filesystem::path& path, const DatasetSchema& schema);
RecordTable parse_csv(std::string_view text, const DatasetSchema& schema);
void save_csv(const RecordTable& table, const std::filesystem::path& path);
std::string format_csv(const RecordTable& table);

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace mixdiff
