#include "mixdiff/fidelity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mixdiff/error.hpp"
#include "mixdiff/rng.hpp"

namespace mixdiff {

double mean_of(std::span<const double> x) {
    if (x.empty()) throw ParameterError("mean of an empty sample");
    long double s = 0.0L;
    for (double v : x) s += v;
    return static_cast<double>(s / static_cast<long double>(x.size()));
}

double variance_of(std::span<const double> x) {
    if (x.size() < 2) throw ParameterError("variance needs at least two values");
    const double m = mean_of(x);
    long double s = 0.0L;
    for (double v : x) s += static_cast<long double>(v - m) * (v - m);
    return static_cast<double>(s / static_cast<long double>(x.size() - 1));
}

std::vector<double> column_values(const RecordTable& table, const DatasetSchema& schema, std::size_t variable) {
    const auto& spec = schema.variables.at(variable);
    const std::size_t col = table.index_of(spec.name);
    if (spec.is_numeric()) return table.numbers(col);
    const auto& labels = table.labels(col);
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto idx = spec.level_index(labels[i]);
        if (!idx) throw SchemaError("variable '" + spec.name + "' has unknown level '" + labels[i] + "'");
        out[i] = static_cast<double>(*idx);
    }
    return out;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ParameterError("KS test needs non-empty samples");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    return d;
}

double ks_p_value(double d, std::size_t n, std::size_t m) {
    const double ne = static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m);
    const double en = std::sqrt(ne);
    const double lambda = (en + 0.12 + 0.11 / en) * d;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0, sign = 1.0, prev = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) <= 1e-3 * prev || std::abs(term) <= 1e-10 * sum) return std::clamp(2.0 * sum, 0.0, 1.0);
        sign = -sign;
        prev = std::abs(term);
    }
    return 1.0;  // series did not converge: lambda is tiny
}

TestOutcome ks_test(std::span<const double> a, std::span<const double> b, double alpha) {
    TestOutcome r;
    r.statistic = ks_statistic(a, b);
    r.p_value = ks_p_value(r.statistic, a.size(), b.size());
    r.pass = r.p_value >= alpha;
    return r;
}

TestOutcome t_test(std::span<const double> a, std::span<const double> b, double alpha) {
    if (a.size() < 2 || b.size() < 2) throw ParameterError("t-test needs at least two values per sample");
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = variance_of(a) / static_cast<double>(a.size());
    const double vb = variance_of(b) / static_cast<double>(b.size());
    TestOutcome r;
    const double se2 = va + vb;
    if (se2 == 0.0) {
        r.statistic = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
        r.p_value = ma == mb ? 1.0 : 0.0;
        r.pass = ma == mb;
        return r;
    }
    r.statistic = (ma - mb) / std::sqrt(se2);
    const double df = se2 * se2 /
                      (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    const boost::math::students_t dist(df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
    r.p_value = std::min(r.p_value, 1.0);
    r.pass = r.p_value >= alpha;
    return r;
}

TestOutcome f_test_numeric(std::span<const double> a, std::span<const double> b, double alpha) {
    if (a.size() < 2 || b.size() < 2) throw ParameterError("F-test needs at least two values per sample");
    const double va = variance_of(a), vb = variance_of(b);
    if (vb == 0.0) throw DegenerateVarianceError("F-test denominator sample has zero variance");
    TestOutcome r;
    r.statistic = va / vb;
    const boost::math::fisher_f dist(static_cast<double>(a.size() - 1), static_cast<double>(b.size() - 1));
    const double lower = boost::math::cdf(dist, r.statistic);
    const double upper = boost::math::cdf(boost::math::complement(dist, r.statistic));
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper));
    r.pass = r.p_value >= alpha;
    return r;
}

TestOutcome f_test_levels(std::span<const double> a, std::span<const double> b, std::size_t levels, double alpha) {
    if (a.empty() || b.empty()) throw ParameterError("F-test needs non-empty samples");
    if (a.size() + b.size() < 3) throw ParameterError("ANOVA needs at least three observations");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double dfw = na + nb - 2.0;
    TestOutcome r;
    r.p_value = 1.0;
    double fsum = 0.0;
    for (std::size_t k = 0; k < levels; ++k) {
        const double ka = static_cast<double>(std::count(a.begin(), a.end(), static_cast<double>(k)));
        const double kb = static_cast<double>(std::count(b.begin(), b.end(), static_cast<double>(k)));
        const double ma = ka / na, mb = kb / nb, m = (ka + kb) / (na + nb);
        const double ssb = na * (ma - m) * (ma - m) + nb * (mb - m) * (mb - m);
        // indicator variable: sum of squared deviations within a group is k (1 - mean)
        const double ssw = ka * (1.0 - ma) + kb * (1.0 - mb);
        double f, p;
        if (ssw == 0.0) {
            f = ssb == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            p = ssb == 0.0 ? 1.0 : 0.0;
        } else {
            f = ssb / (ssw / dfw);
            const boost::math::fisher_f dist(1.0, dfw);
            p = boost::math::cdf(boost::math::complement(dist, f));
        }
        fsum += f;
        r.p_value = std::min(r.p_value, p);
        if (p < alpha) r.pass = false;
    }
    r.statistic = levels ? fsum / static_cast<double>(levels) : 0.0;
    return r;
}

TestOutcome f_test(std::span<const double> a, std::span<const double> b, double alpha, const VariableSpec& spec) {
    return spec.is_numeric() ? f_test_numeric(a, b, alpha) : f_test_levels(a, b, spec.levels.size(), alpha);
}

ThreeSigmaOutcome three_sigma_with(double mean, double sd, std::span<const double> syn, double k) {
    ThreeSigmaOutcome r;
    r.lower = mean - k * sd;
    r.upper = mean + k * sd;
    std::size_t inside = 0;
    for (double v : syn)
        if (v >= r.lower && v <= r.upper) ++inside;
    r.fraction = syn.empty() ? 1.0 : static_cast<double>(inside) / static_cast<double>(syn.size());
    r.pass = inside == syn.size();
    return r;
}

ThreeSigmaOutcome three_sigma_test(std::span<const double> real, std::span<const double> syn, double k) {
    if (real.size() < 2) throw ParameterError("three-sigma test needs at least two real values");
    return three_sigma_with(mean_of(real), std::sqrt(variance_of(real)), syn, k);
}

const VariableCascade& CascadeResult::at(std::string_view name) const {
    for (const auto& v : variables)
        if (v.name == name) return v;
    throw ParameterError("no cascade entry for '" + std::string(name) + "'");
}

std::string CascadeResult::to_csv() const {
    std::ostringstream os;
    const auto frac = [&](std::size_t c) { return std::to_string(c) + "/" + std::to_string(repetitions); };
    os << "variable,kind,KS,t_test,F_test,three_sigma,cascade,ks_count,t_count,f_count,three_sigma_count,"
          "cascade_count\n";
    for (const auto& v : variables) {
        os << '"' << v.name << "\"," << to_string(v.kind) << ',' << frac(v.ks) << ','
           << (v.has_t ? frac(v.t) : "-") << ',' << frac(v.f) << ','
           << (v.has_three_sigma ? frac(v.three_sigma) : "-") << ',' << frac(v.cascade) << ',' << v.ks << ','
           << (v.has_t ? std::to_string(v.t) : "") << ',' << v.f << ','
           << (v.has_three_sigma ? std::to_string(v.three_sigma) : "") << ',' << v.cascade << '\n';
    }
    return os.str();
}

nlohmann::json CascadeResult::to_json() const {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : variables) {
        nlohmann::json e = {{"name", v.name}, {"kind", to_string(v.kind)}, {"ks", v.ks}, {"f", v.f},
                            {"cascade", v.cascade}};
        e["t"] = v.has_t ? nlohmann::json(v.t) : nlohmann::json(nullptr);
        e["three_sigma"] = v.has_three_sigma ? nlohmann::json(v.three_sigma) : nlohmann::json(nullptr);
        vars.push_back(e);
    }
    return {{"alpha", alpha}, {"repetitions", repetitions}, {"batch", batch}, {"variables", vars}};
}

namespace {

std::vector<std::size_t> draw_rows(std::size_t rows, std::size_t b, Rng& rng) {
    std::vector<std::size_t> out(b);
    if (rows >= b) {
        std::vector<std::size_t> idx(rows);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < b; ++i) {
            const auto j = rng.uniform_int(i, rows - 1);
            std::swap(idx[i], idx[j]);
            out[i] = idx[i];
        }
    } else {
        for (auto& r : out) r = rng.uniform_int(0, rows - 1);
    }
    return out;
}

std::vector<double> pick(const std::vector<double>& col, const std::vector<std::size_t>& rows) {
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = col[rows[i]];
    return out;
}

}  // namespace

CascadeResult run_cascade(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                          const CascadeOptions& options) {
    check_table_matches(real, schema);
    check_table_matches(syn, schema);
    if (real.rows() < 2 || syn.rows() < 2) throw ParameterError("cascade needs at least two rows in each table");
    if (options.batch < 2 || options.repetitions == 0) throw ParameterError("cascade needs b >= 2 and R >= 1");

    const std::size_t V = schema.variables.size();
    std::vector<std::vector<double>> real_cols(V), syn_cols(V);
    std::vector<double> real_mean(V, 0.0), real_sd(V, 0.0);
    CascadeResult res;
    res.alpha = options.alpha;
    res.repetitions = options.repetitions;
    res.batch = options.batch;
    for (std::size_t v = 0; v < V; ++v) {
        const auto& spec = schema.variables[v];
        real_cols[v] = column_values(real, schema, v);
        syn_cols[v] = column_values(syn, schema, v);
        if (spec.is_numeric()) {
            real_mean[v] = mean_of(real_cols[v]);
            real_sd[v] = std::sqrt(variance_of(real_cols[v]));
        }
        VariableCascade e;
        e.name = spec.name;
        e.kind = spec.kind;
        e.has_t = spec.is_numeric();
        e.has_three_sigma = spec.is_numeric();
        res.variables.push_back(e);
    }

    Rng base(options.seed);
    for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
        // both tables draw from copies of one stream, so equal tables give equal batches
        Rng rng = base.split(rep);
        Rng paired = rng;
        const auto rr = draw_rows(real.rows(), options.batch, rng);
        const auto sr = draw_rows(syn.rows(), options.batch, paired);
        for (std::size_t v = 0; v < V; ++v) {
            const auto& spec = schema.variables[v];
            auto& e = res.variables[v];
            const auto a = pick(real_cols[v], rr);
            const auto b = pick(syn_cols[v], sr);
            const bool ks = ks_test(a, b, options.alpha).pass;
            bool t = true, f;
            if (spec.is_numeric()) t = t_test(a, b, options.alpha).pass;
            try {
                f = f_test(a, b, options.alpha, spec).pass;
            } catch (const DegenerateVarianceError&) {
                // both constant and equal is a match; otherwise the spreads differ
                f = variance_of(a) == 0.0 && mean_of(a) == mean_of(b);
            }
            e.ks += ks;
            e.t += spec.is_numeric() && t;
            e.f += f;
            e.cascade += ks || (t && f);
            if (spec.is_numeric())
                e.three_sigma += three_sigma_with(real_mean[v], real_sd[v], b, options.sigma_k).pass;
        }
    }
    return res;
}

double kl_from_counts(std::span<const double> syn_counts, std::span<const double> real_counts) {
    if (syn_counts.size() != real_counts.size() || syn_counts.empty())
        throw ParameterError("KL needs two count vectors of equal, non-zero length");
    double zs = 0.0, zr = 0.0;
    for (std::size_t i = 0; i < syn_counts.size(); ++i) {
        zs += syn_counts[i] + kKlSmoothing;
        zr += real_counts[i] + kKlSmoothing;
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < syn_counts.size(); ++i) {
        const double p = (syn_counts[i] + kKlSmoothing) / zs;
        const double q = (real_counts[i] + kKlSmoothing) / zr;
        kl += p * std::log(p / q);
    }
    return std::max(kl, 0.0);
}

double kl_numeric(std::span<const double> real, std::span<const double> syn, std::size_t bins) {
    if (real.empty() || syn.empty()) throw ParameterError("KL needs non-empty samples");
    if (bins == 0) throw ParameterError("KL needs at least one bin");
    double lo = real[0], hi = real[0];
    for (double v : real) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : syn) lo = std::min(lo, v), hi = std::max(hi, v);
    std::vector<double> cr(bins, 0.0), cs(bins, 0.0);
    const double width = (hi - lo) / static_cast<double>(bins);
    const auto bin = [&](double v) -> std::size_t {
        if (!(width > 0.0)) return 0;
        return std::min(bins - 1, static_cast<std::size_t>((v - lo) / width));
    };
    for (double v : real) cr[bin(v)] += 1.0;
    for (double v : syn) cs[bin(v)] += 1.0;
    return kl_from_counts(cs, cr);
}

double kl_levels(std::span<const double> real, std::span<const double> syn, std::size_t levels) {
    if (real.empty() || syn.empty()) throw ParameterError("KL needs non-empty samples");
    std::vector<double> cr(levels, 0.0), cs(levels, 0.0);
    for (double v : real) cr.at(static_cast<std::size_t>(v)) += 1.0;
    for (double v : syn) cs.at(static_cast<std::size_t>(v)) += 1.0;
    return kl_from_counts(cs, cr);
}

std::vector<KlEntry> kl_table(const RecordTable& real, const RecordTable& syn, const DatasetSchema& schema,
                              std::size_t bins) {
    check_table_matches(real, schema);
    check_table_matches(syn, schema);
    std::vector<KlEntry> out;
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        const auto& spec = schema.variables[v];
        const auto a = column_values(real, schema, v), b = column_values(syn, schema, v);
        KlEntry e;
        e.name = spec.name;
        e.kind = spec.kind;
        e.kl = spec.is_numeric() ? kl_numeric(a, b, bins) : kl_levels(a, b, spec.levels.size());
        out.push_back(e);
    }
    return out;
}

std::string kl_table_csv(const std::vector<KlEntry>& table) {
    std::ostringstream os;
    os << "variable,kind,kl,smoothing\n";
    for (const auto& e : table)
        os << '"' << e.name << "\"," << to_string(e.kind) << ',' << format_double(e.kl) << ','
           << format_double(kKlSmoothing) << '\n';
    return os.str();
}

}  // namespace mixdiff
