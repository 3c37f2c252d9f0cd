#include "mixdiff/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "mixdiff/error.hpp"
#include "mixdiff/io.hpp"

namespace mixdiff {

std::string_view to_string(VariableKind kind) {
    switch (kind) {
        case VariableKind::Numeric: return "numeric";
        case VariableKind::Binary: return "binary";
        case VariableKind::Categorical: return "categorical";
    }
    return "numeric";
}

VariableKind parse_kind(std::string_view text) {
    if (text == "numeric") return VariableKind::Numeric;
    if (text == "binary") return VariableKind::Binary;
    if (text == "categorical") return VariableKind::Categorical;
    throw SchemaError("unknown variable kind '" + std::string(text) + "'");
}

std::optional<std::size_t> VariableSpec::level_index(std::string_view label) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] == label) return i;
    return std::nullopt;
}

void VariableSpec::validate() const {
    if (name.empty()) throw SchemaError("variable with empty name");
    switch (kind) {
        case VariableKind::Numeric:
            if (!levels.empty()) throw SchemaError("numeric variable '" + name + "' declares levels");
            if (has_range() && !(*min <= *max))
                throw SchemaError("numeric variable '" + name + "' has min > max");
            break;
        case VariableKind::Binary:
            if (levels.size() != 2)
                throw SchemaError("binary variable '" + name + "' must have exactly 2 levels");
            break;
        case VariableKind::Categorical:
            if (levels.size() < 2)
                throw SchemaError("categorical variable '" + name + "' needs at least 2 levels");
            break;
    }
    std::set<std::string> seen;
    for (const auto& l : levels)
        if (!seen.insert(l).second)
            throw SchemaError("variable '" + name + "' repeats level '" + l + "'");
}

VariableSpec VariableSpec::numeric(std::string name, std::optional<double> lo, std::optional<double> hi) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = VariableKind::Numeric;
    v.min = lo;
    v.max = hi;
    return v;
}

VariableSpec VariableSpec::binary(std::string name, std::vector<std::string> levels) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = VariableKind::Binary;
    v.levels = std::move(levels);
    return v;
}

VariableSpec VariableSpec::categorical(std::string name, std::vector<std::string> levels) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = VariableKind::Categorical;
    v.levels = std::move(levels);
    return v;
}

std::size_t DatasetSchema::width() const noexcept {
    std::size_t n = 0;
    for (const auto& v : variables) n += v.width();
    return n;
}

std::vector<std::size_t> DatasetSchema::channel_offsets() const {
    std::vector<std::size_t> off;
    off.reserve(variables.size());
    std::size_t acc = 0;
    for (const auto& v : variables) {
        off.push_back(acc);
        acc += v.width();
    }
    return off;
}

std::optional<std::size_t> DatasetSchema::find(std::string_view variable) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i].name == variable) return i;
    return std::nullopt;
}

std::size_t DatasetSchema::index_of(std::string_view variable) const {
    if (auto i = find(variable)) return *i;
    throw SchemaError("unknown variable '" + std::string(variable) + "'");
}

std::size_t DatasetSchema::numeric_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(variables.begin(), variables.end(), [](const auto& v) { return v.is_numeric(); }));
}

void DatasetSchema::validate() const {
    if (variables.empty()) throw SchemaError("schema has no variables");
    if (max_length == 0) throw SchemaError("max_length must be positive");
    std::set<std::string> names;
    for (const auto& v : variables) {
        v.validate();
        if (!names.insert(v.name).second) throw SchemaError("duplicate variable '" + v.name + "'");
        if (v.name == kPatientIdColumn || v.name == kTimeColumn)
            throw SchemaError("variable name '" + v.name + "' is reserved");
    }
}

nlohmann::json DatasetSchema::to_json() const {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : variables) {
        nlohmann::json jv;
        jv["name"] = v.name;
        jv["kind"] = std::string(to_string(v.kind));
        if (!v.unit.empty()) jv["unit"] = v.unit;
        if (v.is_numeric()) {
            if (v.has_range()) jv["range"] = {*v.min, *v.max};
        } else {
            jv["levels"] = v.levels;
        }
        vars.push_back(std::move(jv));
    }
    nlohmann::json j;
    if (!name.empty()) j["name"] = name;
    j["max_length"] = max_length;
    j["time_unit"] = time_unit;
    j["variables"] = std::move(vars);
    return j;
}

DatasetSchema DatasetSchema::from_json(const nlohmann::json& j) {
    try {
        DatasetSchema s;
        s.name = j.value("name", "");
        s.max_length = j.at("max_length").get<std::size_t>();
        s.time_unit = j.value("time_unit", "step");
        for (const auto& jv : j.at("variables")) {
            VariableSpec v;
            v.name = jv.at("name").get<std::string>();
            v.kind = parse_kind(jv.at("kind").get<std::string>());
            v.unit = jv.value("unit", "");
            if (jv.contains("levels")) v.levels = jv.at("levels").get<std::vector<std::string>>();
            if (jv.contains("range")) {
                const auto& r = jv.at("range");
                if (!r.is_array() || r.size() != 2)
                    throw SchemaError("range of '" + v.name + "' must be [min, max]");
                v.min = r[0].get<double>();
                v.max = r[1].get<double>();
            }
            s.variables.push_back(std::move(v));
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed schema: ") + e.what());
    }
}

DatasetSchema DatasetSchema::load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

void DatasetSchema::save(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// RecordTable

RecordTable::RecordTable(const DatasetSchema& schema) {
    for (const auto& v : schema.variables) {
        names_.push_back(v.name);
        if (v.is_numeric())
            columns_.emplace_back(std::vector<double>{});
        else
            columns_.emplace_back(std::vector<std::string>{});
    }
}

std::size_t RecordTable::index_of(std::string_view variable) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == variable) return i;
    throw SchemaError("table has no column '" + std::string(variable) + "'");
}

const std::vector<double>& RecordTable::numbers(std::size_t v) const {
    if (!is_numeric(v)) throw SchemaError("column '" + names_.at(v) + "' is not numeric");
    return std::get<std::vector<double>>(columns_[v]);
}
std::vector<double>& RecordTable::numbers(std::size_t v) {
    if (!is_numeric(v)) throw SchemaError("column '" + names_.at(v) + "' is not numeric");
    return std::get<std::vector<double>>(columns_[v]);
}
const std::vector<std::string>& RecordTable::labels(std::size_t v) const {
    if (is_numeric(v)) throw SchemaError("column '" + names_.at(v) + "' is numeric");
    return std::get<std::vector<std::string>>(columns_[v]);
}
std::vector<std::string>& RecordTable::labels(std::size_t v) {
    if (is_numeric(v)) throw SchemaError("column '" + names_.at(v) + "' is numeric");
    return std::get<std::vector<std::string>>(columns_[v]);
}

void RecordTable::append(std::string patient_id, long time_index,
                         const std::vector<std::variant<double, std::string>>& values) {
    if (values.size() != columns_.size())
        throw SchemaError("row has " + std::to_string(values.size()) + " values, table has " +
                          std::to_string(columns_.size()) + " columns");
    for (std::size_t v = 0; v < values.size(); ++v) {
        if (is_numeric(v) != std::holds_alternative<double>(values[v]))
            throw SchemaError("value type mismatch for column '" + names_[v] + "'");
    }
    for (std::size_t v = 0; v < values.size(); ++v) {
        if (is_numeric(v))
            numbers(v).push_back(std::get<double>(values[v]));
        else
            labels(v).push_back(std::get<std::string>(values[v]));
    }
    patient_id_.push_back(std::move(patient_id));
    time_.push_back(time_index);
}

void RecordTable::normalize() {
    std::unordered_map<std::string, std::size_t> order;
    for (const auto& id : patient_id_) order.emplace(id, order.size());

    std::vector<std::size_t> perm(rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        const auto oa = order[patient_id_[a]], ob = order[patient_id_[b]];
        if (oa != ob) return oa < ob;
        return time_[a] < time_[b];
    });

    for (std::size_t k = 0; k < perm.size(); ++k) {
        const std::size_t r = perm[k];
        const bool first = k == 0 || patient_id_[perm[k - 1]] != patient_id_[r];
        const long expected = first ? 0 : time_[perm[k - 1]] + 1;
        if (!first && time_[r] == time_[perm[k - 1]])
            throw ParseError("duplicate (patient, time) pair (" + patient_id_[r] + ", " +
                                 std::to_string(time_[r]) + ")",
                             static_cast<long>(r));
        if (time_[r] != expected)
            throw ParseError("time index of patient " + patient_id_[r] + " is not contiguous from 0 (got " +
                                 std::to_string(time_[r]) + ", expected " + std::to_string(expected) + ")",
                             static_cast<long>(r));
    }
    *this = select_rows(perm);
}

std::vector<RecordTable::Episode> RecordTable::episodes() const {
    std::vector<Episode> out;
    for (std::size_t r = 0; r < rows(); ++r) {
        if (out.empty() || out.back().patient_id != patient_id_[r])
            out.push_back({patient_id_[r], r, 0});
        ++out.back().length;
    }
    return out;
}

RecordTable RecordTable::select_rows(const std::vector<std::size_t>& rows) const {
    RecordTable t;
    t.names_ = names_;
    for (const auto& col : columns_) {
        std::visit(
            [&](const auto& src) {
                std::decay_t<decltype(src)> dst;
                dst.reserve(rows.size());
                for (auto r : rows) dst.push_back(src.at(r));
                t.columns_.emplace_back(std::move(dst));
            },
            col);
    }
    t.patient_id_.reserve(rows.size());
    t.time_.reserve(rows.size());
    for (auto r : rows) {
        t.patient_id_.push_back(patient_id_.at(r));
        t.time_.push_back(time_.at(r));
    }
    return t;
}

RecordTable RecordTable::select_patients(const std::vector<std::size_t>& episode_indices) const {
    const auto eps = episodes();
    std::vector<std::size_t> rows;
    for (auto e : episode_indices) {
        const auto& ep = eps.at(e);
        for (std::size_t k = 0; k < ep.length; ++k) rows.push_back(ep.first_row + k);
    }
    return select_rows(rows);
}

// ---------------------------------------------------------------------------
// encode / decode

void check_table_matches(const RecordTable& table, const DatasetSchema& schema) {
    if (table.variable_count() != schema.variables.size())
        throw SchemaError("table has " + std::to_string(table.variable_count()) + " variables, schema has " +
                          std::to_string(schema.variables.size()));
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        const auto& spec = schema.variables[v];
        if (table.name(v) != spec.name)
            throw SchemaError("column " + std::to_string(v) + " is '" + table.name(v) + "', schema expects '" +
                              spec.name + "'");
        if (table.is_numeric(v) != spec.is_numeric())
            throw SchemaError("column '" + spec.name + "' kind differs from schema");
    }
}

DatasetSchema fit_ranges(DatasetSchema schema, const RecordTable& table) {
    check_table_matches(table, schema);
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        auto& spec = schema.variables[v];
        if (!spec.is_numeric()) continue;
        const auto& xs = table.numbers(v);
        if (xs.empty()) throw SchemaError("cannot fit range of '" + spec.name + "' on an empty table");
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        spec.min = *lo;
        spec.max = *hi;
    }
    return schema;
}

EpisodeBatch encode(const RecordTable& table, const DatasetSchema& schema) {
    schema.validate();
    check_table_matches(table, schema);
    for (const auto& spec : schema.variables) {
        if (!spec.is_numeric()) continue;
        if (!spec.has_range()) throw SchemaError("numeric variable '" + spec.name + "' has no range");
        if (!(*spec.min < *spec.max))
            throw DegenerateRangeError("numeric variable '" + spec.name + "' has min == max (" +
                                       format_double(*spec.min) + ")");
    }

    const auto eps = table.episodes();
    const std::size_t L = schema.max_length, N = schema.width();
    EpisodeBatch batch;
    batch.schema = schema;
    batch.data = Tensor({eps.size(), 1, L, N});
    batch.lengths.reserve(eps.size());
    batch.patient_ids.reserve(eps.size());
    const auto offsets = schema.channel_offsets();

    for (std::size_t p = 0; p < eps.size(); ++p) {
        const auto& ep = eps[p];
        if (ep.length > L)
            throw LengthError("patient " + ep.patient_id + " has " + std::to_string(ep.length) +
                              " timesteps, max_length is " + std::to_string(L));
        batch.lengths.push_back(ep.length);
        batch.patient_ids.push_back(ep.patient_id);
        for (std::size_t t = 0; t < ep.length; ++t) {
            const std::size_t r = ep.first_row + t;
            double* row = &batch.data(p, 0, t, 0);
            for (std::size_t v = 0; v < schema.variables.size(); ++v) {
                const auto& spec = schema.variables[v];
                if (spec.is_numeric()) {
                    row[offsets[v]] = (table.numbers(v)[r] - *spec.min) / (*spec.max - *spec.min);
                } else {
                    const auto& label = table.labels(v)[r];
                    const auto idx = spec.level_index(label);
                    if (!idx)
                        throw SchemaError("variable '" + spec.name + "' has unknown level '" + label + "'");
                    row[offsets[v] + *idx] = 1.0;
                }
            }
        }
    }
    return batch;
}

RecordTable decode(const EpisodeBatch& batch) {
    const auto& schema = batch.schema;
    const auto& shape = batch.data.shape();
    if (shape[1] != 1 || shape[2] != schema.max_length || shape[3] != schema.width())
        throw DecodeError("tensor shape " + shape_string(shape) + " does not match schema (L=" +
                          std::to_string(schema.max_length) + ", N=" + std::to_string(schema.width()) + ")");
    if (batch.lengths.size() != shape[0])
        throw DecodeError("lengths has " + std::to_string(batch.lengths.size()) + " entries for batch of " +
                          std::to_string(shape[0]));
    if (!batch.patient_ids.empty() && batch.patient_ids.size() != shape[0])
        throw DecodeError("patient_ids size does not match batch");

    const auto offsets = schema.channel_offsets();
    RecordTable table(schema);
    std::vector<std::variant<double, std::string>> values(schema.variables.size());
    for (std::size_t p = 0; p < shape[0]; ++p) {
        if (batch.lengths[p] > shape[2]) throw DecodeError("episode length exceeds tensor length");
        std::string id = batch.patient_ids.empty() ? "syn_" + std::to_string(p) : batch.patient_ids[p];
        for (std::size_t t = 0; t < batch.lengths[p]; ++t) {
            const double* row = batch.data.data() + batch.data.offset(p, 0, t, 0);
            for (std::size_t v = 0; v < schema.variables.size(); ++v) {
                const auto& spec = schema.variables[v];
                if (spec.is_numeric()) {
                    const double s = std::clamp(row[offsets[v]], 0.0, 1.0);
                    values[v] = *spec.min + s * (*spec.max - *spec.min);
                } else {
                    std::size_t best = 0;
                    for (std::size_t k = 1; k < spec.levels.size(); ++k)
                        if (row[offsets[v] + k] > row[offsets[v] + best]) best = k;
                    values[v] = spec.levels[best];
                }
            }
            table.append(id, static_cast<long>(t), values);
        }
    }
    return table;
}

std::vector<std::size_t> infer_lengths(const Tensor& data, const DatasetSchema& schema, double mass_threshold) {
    const std::size_t B = data.dim(0), L = data.dim(2);
    std::vector<std::size_t> lengths(B, L);
    const auto offsets = schema.channel_offsets();
    std::size_t groups = 0;
    for (const auto& v : schema.variables) groups += v.is_numeric() ? 0 : 1;
    if (groups == 0) return lengths;

    for (std::size_t b = 0; b < B; ++b) {
        std::size_t len = 0;
        for (std::size_t t = 0; t < L; ++t) {
            const double* row = data.data() + data.offset(b, 0, t, 0);
            double mass = 0.0;
            for (std::size_t v = 0; v < schema.variables.size(); ++v) {
                const auto& spec = schema.variables[v];
                if (spec.is_numeric()) continue;
                for (std::size_t k = 0; k < spec.levels.size(); ++k) mass += row[offsets[v] + k];
            }
            if (mass / static_cast<double>(groups) >= mass_threshold) len = t + 1;
        }
        lengths[b] = std::max<std::size_t>(len, 1);
    }
    return lengths;
}

std::vector<std::vector<double>> flatten_episodes(const EpisodeBatch& batch) {
    const std::size_t B = batch.batch(), per = batch.length() * batch.width();
    std::vector<std::vector<double>> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* p = batch.data.slice(b, 0);
        out[b].assign(p, p + per);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line, long row) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", row);
    fields.push_back(std::move(cur));
    return fields;
}

std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

double parse_number(std::string_view s, const std::string& column, long row) {
    double v = 0.0;
    auto first = s.data(), last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last || s.empty())
        throw ParseError("malformed number '" + std::string(s) + "' in column '" + column + "'", row);
    if (!std::isfinite(v)) throw ParseError("non-finite value in column '" + column + "'", row);
    return v;
}

}  // namespace

RecordTable parse_csv(std::string_view text, const DatasetSchema& schema) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        pos = nl + 1;
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw ParseError("missing header row", 0);

    const auto header = split_csv_line(lines[0], 0);
    std::map<std::string, std::size_t> col_of;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (!col_of.emplace(header[c], c).second) throw ParseError("duplicate column '" + header[c] + "'", 0);
    }
    auto column = [&](std::string_view name) {
        auto it = col_of.find(std::string(name));
        if (it == col_of.end()) throw ParseError("missing column '" + std::string(name) + "'", 0);
        return it->second;
    };
    std::vector<std::size_t> var_col;
    for (const auto& v : schema.variables) var_col.push_back(column(v.name));
    const std::size_t id_col = column(kPatientIdColumn), time_col = column(kTimeColumn);

    RecordTable table(schema);
    std::vector<std::variant<double, std::string>> values(schema.variables.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const long row = static_cast<long>(i);
        const auto fields = split_csv_line(lines[i], row);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()),
                             row);
        for (std::size_t v = 0; v < schema.variables.size(); ++v) {
            const auto& spec = schema.variables[v];
            const auto& f = fields[var_col[v]];
            if (f.empty()) throw ParseError("missing value in column '" + spec.name + "'", row);
            if (spec.is_numeric()) {
                values[v] = parse_number(f, spec.name, row);
            } else {
                if (!spec.level_index(f))
                    throw SchemaError("variable '" + spec.name + "' has unknown level '" + f + "' (row " +
                                      std::to_string(row) + ")");
                values[v] = f;
            }
        }
        const auto& id = fields[id_col];
        if (id.empty()) throw ParseError("missing patient id", row);
        const double t = parse_number(fields[time_col], std::string(kTimeColumn), row);
        if (t != std::floor(t) || t < 0) throw ParseError("time index must be a non-negative integer", row);
        table.append(id, static_cast<long>(t), values);
    }

    // Report duplicates against the file's row numbering.
    std::map<std::pair<std::string, long>, std::size_t> seen;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        auto key = std::make_pair(table.patient_ids()[r], table.time_indices()[r]);
        if (!seen.emplace(key, r).second)
            throw ParseError("duplicate (patient, time) pair (" + key.first + ", " + std::to_string(key.second) + ")",
                             static_cast<long>(r + 1));
    }
    table.normalize();
    return table;
}

RecordTable load_csv(const std::filesystem::path& path, const DatasetSchema& schema) {
    return parse_csv(read_file(path), schema);
}

std::string format_csv(const RecordTable& table) {
    std::string out;
    for (std::size_t v = 0; v < table.variable_count(); ++v) {
        out += quote_field(table.name(v));
        out += ',';
    }
    out += std::string(kPatientIdColumn) + "," + std::string(kTimeColumn) + "\n";
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t v = 0; v < table.variable_count(); ++v) {
            out += table.is_numeric(v) ? format_double(table.numbers(v)[r]) : quote_field(table.labels(v)[r]);
            out += ',';
        }
        out += quote_field(table.patient_ids()[r]);
        out += ',';
        out += std::to_string(table.time_indices()[r]);
        out += '\n';
    }
    return out;
}

void save_csv(const RecordTable& table, const std::filesystem::path& path) {
    write_file_atomic(path, format_csv(table));
}

}  // namespace mixdiff
