#include "mixdiff/structure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mixdiff/error.hpp"
#include "mixdiff/fidelity.hpp"
#include "mixdiff/kmeans.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

namespace {

long long tie_pairs(const std::vector<double>& sorted_keys) {
    long long total = 0, run = 1;
    for (std::size_t i = 1; i <= sorted_keys.size(); ++i) {
        if (i < sorted_keys.size() && sorted_keys[i] == sorted_keys[i - 1]) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

// Sorts v ascending and returns the number of strict inversions.
long long merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    long long swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<long long>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<long>(lo), buf.begin() + static_cast<long>(hi),
              v.begin() + static_cast<long>(lo));
    return swaps;
}

}  // namespace

std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ParameterError("kendall_tau needs sequences of equal length");
    const std::size_t n = a.size();
    if (n < 2) throw ParameterError("kendall_tau needs at least two observations");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
    });
    std::vector<double> sa(n), sb(n);
    for (std::size_t i = 0; i < n; ++i) {
        sa[i] = a[idx[i]];
        sb[i] = b[idx[i]];
    }
    const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    const long long n1 = tie_pairs(sa);
    long long n3 = 0, run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i < n && sa[i] == sa[i - 1] && sb[i] == sb[i - 1]) {
            ++run;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    std::vector<double> buf(n);
    const long long swaps = merge_count(sb, buf, 0, n);
    const long long n2 = tie_pairs(sb);
    if (n0 == n1 || n0 == n2) return std::nullopt;
    const double num = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
    const double den = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    return std::clamp(num / den, -1.0, 1.0);
}

std::string CorrelationMatrix::to_csv() const {
    std::ostringstream os;
    os << "variable";
    for (const auto& n : names) os << ",\"" << n << '"';
    os << '\n';
    for (std::size_t i = 0; i < size(); ++i) {
        os << '"' << names[i] << '"';
        for (std::size_t j = 0; j < size(); ++j) {
            os << ',';
            if (const auto v = at(i, j)) os << format_double(*v);
        }
        os << '\n';
    }
    return os.str();
}

namespace {

CorrelationMatrix matrix_from_columns(const std::vector<std::string>& names,
                                      const std::vector<std::vector<double>>& cols) {
    const std::size_t V = cols.size();
    CorrelationMatrix m;
    m.names = names;
    m.values.assign(V * V, std::nullopt);
    m.support.assign(V * V, 0);
    for (std::size_t i = 0; i < V; ++i) {
        for (std::size_t j = i; j < V; ++j) {
            const auto tau = kendall_tau(cols[i], cols[j]);
            m.values[i * V + j] = m.values[j * V + i] = tau;
            m.support[i * V + j] = m.support[j * V + i] = tau ? 1 : 0;
        }
    }
    return m;
}

std::vector<std::string> variable_names(const DatasetSchema& schema) {
    std::vector<std::string> names;
    for (const auto& v : schema.variables) names.push_back(v.name);
    return names;
}

}  // namespace

CorrelationMatrix static_correlations(const RecordTable& table, const DatasetSchema& schema) {
    check_table_matches(table, schema);
    if (table.rows() < 2) throw ParameterError("static correlations need at least two rows");
    std::vector<std::vector<double>> cols;
    for (std::size_t v = 0; v < schema.variables.size(); ++v) cols.push_back(column_values(table, schema, v));
    return matrix_from_columns(variable_names(schema), cols);
}

std::vector<double> linear_trend(std::span<const double> y) {
    const std::size_t n = y.size();
    if (n < 2) throw ParameterError("a trend needs at least two points");
    const double tm = static_cast<double>(n - 1) / 2.0;
    const double ym = mean_of(y);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double dt = static_cast<double>(t) - tm;
        sxy += dt * (y[t] - ym);
        sxx += dt * dt;
    }
    const double slope = sxy / sxx;
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) out[t] = ym + slope * (static_cast<double>(t) - tm);
    return out;
}

DecomposedSeries decompose(const RecordTable& table, const DatasetSchema& schema) {
    check_table_matches(table, schema);
    const std::size_t V = schema.variables.size();
    std::vector<std::vector<double>> cols;
    for (std::size_t v = 0; v < V; ++v) cols.push_back(column_values(table, schema, v));
    DecomposedSeries out;
    for (const auto& ep : table.episodes()) {
        if (ep.length < 2) {
            ++out.excluded;
            continue;
        }
        DecomposedSeries::Patient p;
        p.id = ep.patient_id;
        for (std::size_t v = 0; v < V; ++v) {
            const std::span<const double> y(cols[v].data() + ep.first_row, ep.length);
            auto trend = linear_trend(y);
            std::vector<double> cycle(ep.length);
            // cycle is defined as the exact difference, so trend + cycle
            // reproduces y up to one rounding of the addition
            for (std::size_t t = 0; t < ep.length; ++t) cycle[t] = y[t] - trend[t];
            p.trend.push_back(std::move(trend));
            p.cycle.push_back(std::move(cycle));
        }
        out.patients.push_back(std::move(p));
    }
    return out;
}

DynamicCorrelations dynamic_correlations(const RecordTable& table, const DatasetSchema& schema) {
    const auto series = decompose(table, schema);
    if (series.patients.empty()) throw ParameterError("no patient has at least two time steps");
    const std::size_t V = schema.variables.size();
    std::vector<double> tsum(V * V, 0.0), csum(V * V, 0.0);
    std::vector<std::size_t> tcount(V * V, 0), ccount(V * V, 0);
    for (const auto& p : series.patients) {
        for (std::size_t i = 0; i < V; ++i) {
            for (std::size_t j = i; j < V; ++j) {
                if (const auto t = kendall_tau(p.trend[i], p.trend[j])) {
                    tsum[i * V + j] += *t;
                    ++tcount[i * V + j];
                }
                if (const auto c = kendall_tau(p.cycle[i], p.cycle[j])) {
                    csum[i * V + j] += *c;
                    ++ccount[i * V + j];
                }
            }
        }
    }
    DynamicCorrelations out;
    out.patients = series.patients.size();
    out.excluded = series.excluded;
    for (auto* m : {&out.trend, &out.cycle}) {
        m->names = variable_names(schema);
        m->values.assign(V * V, std::nullopt);
        m->support.assign(V * V, 0);
    }
    for (std::size_t i = 0; i < V; ++i) {
        for (std::size_t j = i; j < V; ++j) {
            const std::size_t k = i * V + j, kt = j * V + i;
            if (tcount[k]) out.trend.values[k] = out.trend.values[kt] = tsum[k] / static_cast<double>(tcount[k]);
            if (ccount[k]) out.cycle.values[k] = out.cycle.values[kt] = csum[k] / static_cast<double>(ccount[k]);
            out.trend.support[k] = out.trend.support[kt] = tcount[k];
            out.cycle.support[k] = out.cycle.support[kt] = ccount[k];
        }
    }
    return out;
}

LogClusterValue log_cluster_from_assignment(std::span<const std::size_t> labels, const std::vector<bool>& is_real,
                                            std::size_t gamma) {
    if (labels.size() != is_real.size() || labels.empty())
        throw ParameterError("log-cluster needs one origin flag per assigned row");
    std::vector<std::size_t> total(gamma, 0), real(gamma, 0);
    std::size_t n_real = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= gamma) throw ParameterError("cluster label out of range");
        ++total[labels[i]];
        if (is_real[i]) {
            ++real[labels[i]];
            ++n_real;
        }
    }
    const double c = static_cast<double>(n_real) / static_cast<double>(labels.size());
    double sum = 0.0;
    LogClusterValue v;
    for (std::size_t k = 0; k < gamma; ++k) {
        if (total[k] == 0) continue;
        const double d = static_cast<double>(real[k]) / static_cast<double>(total[k]) - c;
        sum += d * d;
        ++v.clusters_used;
    }
    const double m = sum / static_cast<double>(v.clusters_used);
    v.floored = !(m > kLogClusterFloor);
    v.value = std::log(v.floored ? kLogClusterFloor : m);
    return v;
}

namespace {

std::vector<double> canonical_order(const std::vector<double>& rows, std::size_t n, std::size_t dim) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return std::lexicographical_compare(rows.begin() + static_cast<long>(i * dim),
                                            rows.begin() + static_cast<long>((i + 1) * dim),
                                            rows.begin() + static_cast<long>(j * dim),
                                            rows.begin() + static_cast<long>((j + 1) * dim));
    });
    std::vector<double> out(n * dim);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(&rows[idx[r] * dim], dim, &out[r * dim]);
    return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[rng.uniform_int(i, n - 1)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

LogClusterResult log_cluster_U(const std::vector<double>& real_rows, std::size_t n_real,
                               const std::vector<double>& syn_rows, std::size_t n_syn, std::size_t dim,
                               const LogClusterOptions& options) {
    if (n_real == 0 || n_syn == 0) throw ParameterError("log-cluster needs non-empty real and synthetic data");
    if (real_rows.size() != n_real * dim || syn_rows.size() != n_syn * dim)
        throw ShapeError("log-cluster row buffers do not match the given counts");
    if (options.gamma == 0 || options.reps == 0) throw ParameterError("log-cluster needs gamma >= 1 and reps >= 1");
    const auto real = canonical_order(real_rows, n_real, dim);
    const auto syn = canonical_order(syn_rows, n_syn, dim);
    LogClusterResult res;
    res.sample_real = std::min(options.sample_n, n_real);
    res.sample_syn = std::min(options.sample_n, n_syn);
    res.capped = res.sample_real < options.sample_n || res.sample_syn < options.sample_n;
    const std::size_t total = res.sample_real + res.sample_syn;
    if (total < options.gamma) throw ParameterError("fewer sampled rows than clusters");

    Rng base(options.seed);
    for (std::size_t rep = 0; rep < options.reps; ++rep) {
        Rng rng = base.split(rep);
        const auto ri = sample_without_replacement(n_real, res.sample_real, rng);
        const auto si = sample_without_replacement(n_syn, res.sample_syn, rng);
        std::vector<double> merged(total * dim);
        std::vector<bool> is_real(total, false);
        std::size_t r = 0;
        for (auto i : ri) {
            std::copy_n(&real[i * dim], dim, &merged[r * dim]);
            is_real[r++] = true;
        }
        for (auto i : si) std::copy_n(&syn[i * dim], dim, &merged[(r++) * dim]);
        const auto km = kmeans(merged, total, dim, options.gamma, rng);
        const auto v = log_cluster_from_assignment(km.labels, is_real, options.gamma);
        res.per_rep.push_back(v.value);
        res.floored.push_back(v.floored);
        res.clusters_used.push_back(v.clusters_used);
    }
    res.mean = mean_of(res.per_rep);
    return res;
}

std::vector<double> encoded_rows(const EpisodeBatch& batch, std::size_t* count) {
    const std::size_t L = batch.length(), N = batch.width();
    std::vector<double> out;
    std::size_t n = 0;
    for (std::size_t b = 0; b < batch.batch(); ++b) {
        for (std::size_t t = 0; t < batch.lengths.at(b); ++t) {
            const double* row = batch.data.data() + (b * L + t) * N;
            out.insert(out.end(), row, row + N);
            ++n;
        }
    }
    if (count) *count = n;
    return out;
}

double category_coverage(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema) {
    check_table_matches(real, schema);
    check_table_matches(syn, schema);
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& spec : schema.variables) {
        if (spec.is_numeric()) continue;
        const auto& rl = real.labels(real.index_of(spec.name));
        const auto& sl = syn.labels(syn.index_of(spec.name));
        const std::set<std::string> rs(rl.begin(), rl.end()), ss(sl.begin(), sl.end());
        if (rs.empty()) continue;
        std::size_t hit = 0;
        for (const auto& l : ss) hit += rs.count(l);
        sum += std::min(1.0, static_cast<double>(hit) / static_cast<double>(rs.size()));
        ++used;
    }
    if (used == 0) throw NotApplicableError("category coverage needs at least one non-numeric variable");
    return sum / static_cast<double>(used);
}

std::string quasi_label(const RecordTable& table, const DatasetSchema& schema, const QuasiVar& q, std::size_t row) {
    const auto& spec = schema.variables.at(schema.index_of(q.name));
    const std::size_t col = table.index_of(q.name);
    if (!spec.is_numeric()) return table.labels(col).at(row);
    if (!q.bin_width || !(*q.bin_width > 0.0))
        throw ParameterError("numeric quasi-identifier '" + q.name + "' needs a positive bin width");
    const double lo = std::floor(table.numbers(col).at(row) / *q.bin_width) * *q.bin_width;
    return "[" + format_double(lo) + "," + format_double(lo + *q.bin_width) + ")";
}

std::string CrossTab::to_csv() const {
    std::ostringstream os;
    for (const auto& v : variables) os << '"' << v << "\",";
    os << "real,synthetic\n";
    for (const auto& [key, counts] : cells) {
        for (const auto& k : key) os << '"' << k << "\",";
        os << counts.first << ',' << counts.second << '\n';
    }
    return os.str();
}

CrossTab demographic_coverage(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                              const std::vector<QuasiVar>& quasi, bool per_patient) {
    check_table_matches(real, schema);
    check_table_matches(syn, schema);
    if (quasi.empty()) throw ParameterError("demographic coverage needs at least one variable");
    CrossTab tab;
    std::vector<std::vector<std::string>> keys{{}};
    bool all_levels = true;
    for (const auto& q : quasi) {
        const auto idx = schema.find(q.name);
        if (!idx) throw SchemaError("unknown quasi-identifier '" + q.name + "'");
        tab.variables.push_back(q.name);
        const auto& spec = schema.variables[*idx];
        if (spec.is_numeric()) {
            all_levels = false;
            continue;
        }
        std::vector<std::vector<std::string>> next;
        for (const auto& k : keys)
            for (const auto& l : spec.levels) {
                auto e = k;
                e.push_back(l);
                next.push_back(std::move(e));
            }
        keys = std::move(next);
    }
    if (all_levels)
        for (const auto& k : keys) tab.cells[k] = {0, 0};

    auto tally = [&](const RecordTable& t, bool is_real) {
        std::vector<std::size_t> rows;
        if (per_patient) {
            for (const auto& ep : t.episodes()) rows.push_back(ep.first_row);
        } else {
            rows.resize(t.rows());
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        for (auto r : rows) {
            std::vector<std::string> key;
            for (const auto& q : quasi) key.push_back(quasi_label(t, schema, q, r));
            auto& cell = tab.cells[key];
            (is_real ? cell.first : cell.second) += 1;
        }
    };
    tally(real, true);
    tally(syn, false);
    return tab;
}

}  // namespace mixdiff
