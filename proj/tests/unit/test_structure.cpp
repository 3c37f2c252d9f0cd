#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/structure.hpp"
#include "mixdiff/toygen.hpp"

using namespace mixdiff;

namespace {

// O(n^2) tau-b from concordant/discordant pair counts
std::optional<double> tau_pairs(const std::vector<double>& a, const std::vector<double>& b) {
    long long con = 0, dis = 0, ta = 0, tb = 0;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0 && db == 0) continue;
            if (da == 0) {
                ++ta;
            } else if (db == 0) {
                ++tb;
            } else if ((da > 0) == (db > 0)) {
                ++con;
            } else {
                ++dis;
            }
        }
    const double denom = std::sqrt(static_cast<double>(con + dis + ta) * static_cast<double>(con + dis + tb));
    if (denom == 0) return std::nullopt;
    return static_cast<double>(con - dis) / denom;
}

RecordTable numeric_table(const DatasetSchema& s, const std::vector<std::vector<double>>& rows_per_patient_var,
                          std::size_t patients, std::size_t L) {
    RecordTable t(s);
    for (std::size_t p = 0; p < patients; ++p)
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<std::variant<double, std::string>> row;
            for (std::size_t v = 0; v < s.variables.size(); ++v) row.emplace_back(rows_per_patient_var[v][p * L + i]);
            t.append("p" + std::to_string(p), static_cast<long>(i), row);
        }
    t.normalize();
    return t;
}

}  // namespace

TEST_SUITE("structure") {

TEST_CASE("Kendall tau-b against pair counting") {
    const std::vector<double> inc{1, 2, 3, 4, 5}, dec{5, 4, 3, 2, 1}, flat{2, 2, 2, 2, 2};
    CHECK(*kendall_tau(inc, inc) == doctest::Approx(1.0));
    CHECK(*kendall_tau(inc, dec) == doctest::Approx(-1.0));
    CHECK_FALSE(kendall_tau(inc, flat).has_value());
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng.uniform_int(0, 48);
        std::vector<double> a(n), b(n);
        for (std::size_t k = 0; k < n; ++k) {
            a[k] = static_cast<double>(rng.uniform_int(0, 6));
            b[k] = static_cast<double>(rng.uniform_int(0, 6));
        }
        const auto fast = kendall_tau(a, b), slow = tau_pairs(a, b);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) CHECK(std::fabs(*fast - *slow) <= 1e-12);
    }
}

TEST_CASE("static correlations") {
    DatasetSchema s;
    s.max_length = 10;
    s.variables = {VariableSpec::numeric("a", 0, 1), VariableSpec::numeric("b", 0, 1), VariableSpec::numeric("c", 0, 1)};
    Rng rng(2);
    const std::size_t P = 1000, L = 10;
    std::vector<std::vector<double>> cols(3, std::vector<double>(P * L));
    for (std::size_t i = 0; i < P * L; ++i) {
        cols[0][i] = rng.uniform();
        cols[1][i] = cols[0][i];
        cols[2][i] = rng.uniform();
    }
    const auto m = static_correlations(numeric_table(s, cols, P, L), s);
    CHECK(*m.at(0, 1) == doctest::Approx(1.0));
    CHECK(std::fabs(*m.at(0, 2)) < 0.05);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(*m.at(i, j) - *m.at(j, i)) <= 1e-12);
}

TEST_CASE("trend and cycle decomposition") {
    const std::vector<double> line{1, 3, 5, 7, 9};
    const auto tr = linear_trend(line);
    for (std::size_t i = 0; i < line.size(); ++i) CHECK(tr[i] == doctest::Approx(line[i]));

    // one full period of a sine has a least-squares slope of zero only up to the
    // sampled skew; compare with the closed-form OLS slope
    const std::size_t n = 16;
    std::vector<double> sine(n);
    for (std::size_t i = 0; i < n; ++i) sine[i] = std::sin(2 * std::numbers::pi * static_cast<double>(i) / n);
    const double tbar = (n - 1) / 2.0;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (i - tbar) * sine[i];
        sxx += (i - tbar) * (i - tbar);
    }
    const auto st = linear_trend(sine);
    CHECK(st[1] - st[0] == doctest::Approx(sxy / sxx).epsilon(1e-10));

    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t len = 2 + rng.uniform_int(0, 30);
        std::vector<double> y(len);
        for (auto& v : y) v = rng.normal() * 5 + 3;
        const auto t = linear_trend(y);
        double resid = 0;
        for (std::size_t i = 0; i < len; ++i) {
            const double c = y[i] - t[i];
            CHECK(std::fabs(t[i] + c - y[i]) <= 1e-10);
            resid += c;
        }
        CHECK(std::fabs(resid / static_cast<double>(len)) <= 1e-10);
    }
}

TEST_CASE("dynamic correlations") {
    DatasetSchema s;
    s.max_length = 16;
    s.variables = {VariableSpec::numeric("u", -5, 5), VariableSpec::numeric("v", -5, 5)};
    const std::size_t P = 5, L = 16;
    std::vector<std::vector<double>> cols(2, std::vector<double>(P * L));
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t i = 0; i < L; ++i) {
            const double c = std::sin(2 * std::numbers::pi * i / 8.0 + p);
            cols[0][p * L + i] = 0.1 * i + c;
            cols[1][p * L + i] = -0.3 * i + 2 * c;
        }
    const auto d = dynamic_correlations(numeric_table(s, cols, P, L), s);
    CHECK(d.patients == P);
    CHECK(*d.cycle.at(0, 1) == doctest::Approx(1.0));
    CHECK(*d.trend.at(0, 1) == doctest::Approx(-1.0));

    const auto one = dynamic_correlations(numeric_table(s, cols, 1, L), s);
    const auto dec = decompose(numeric_table(s, cols, 1, L), s);
    std::vector<double> c0 = dec.patients[0].cycle[0], c1 = dec.patients[0].cycle[1];
    CHECK(*one.cycle.at(0, 1) == doctest::Approx(*kendall_tau(c0, c1)));
    for (const auto& v : d.cycle.values)
        if (v) CHECK(std::fabs(*v) <= 1.0);
}

TEST_CASE("log-cluster hand case") {
    const std::vector<std::size_t> labels{0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<bool> real{true, true, true, false, true, false, false, false};
    const auto v = log_cluster_from_assignment(labels, real, 2);
    CHECK(std::fabs(v.value - std::log(0.0625)) <= 1e-9);
    CHECK(v.clusters_used == 2);
    // empty clusters are skipped
    CHECK(log_cluster_from_assignment(labels, real, 5).value == doctest::Approx(v.value));

    const std::vector<bool> even{true, false, true, false, true, false, true, false};
    const auto f = log_cluster_from_assignment(labels, even, 2);
    CHECK(f.floored);
    CHECK(f.value == doctest::Approx(std::log(kLogClusterFloor)));
}

TEST_CASE("log-cluster ranks matched above shifted") {
    ToySpec spec;
    spec.patients = 150;
    spec.holdout = 150;
    spec.seed = 4;
    const auto toy = generate_toy(spec);
    auto shifted = toy.holdout;
    for (auto& v : shifted.numbers(0)) v = std::min(v + 8.0, *toy.schema.variables[0].max);
    const auto er = encode(toy.train, toy.schema), eh = encode(toy.holdout, toy.schema),
               es = encode(shifted, toy.schema);
    std::size_t nr = 0, nh = 0, ns = 0;
    const auto rr = encoded_rows(er, &nr), rh = encoded_rows(eh, &nh), rs = encoded_rows(es, &ns);
    LogClusterOptions o;
    o.reps = 5;
    o.seed = 5;
    const auto matched = log_cluster_U(rr, nr, rh, nh, toy.schema.width(), o);
    const auto off = log_cluster_U(rr, nr, rs, ns, toy.schema.width(), o);
    CHECK(matched.mean < off.mean);
    CHECK(matched.per_rep.size() == 5);

    // canonical ordering: permuting the input rows does not matter
    std::vector<double> rev;
    for (std::size_t i = nr; i-- > 0;)
        rev.insert(rev.end(), rr.begin() + i * toy.schema.width(), rr.begin() + (i + 1) * toy.schema.width());
    CHECK(log_cluster_U(rev, nr, rh, nh, toy.schema.width(), o).mean == matched.mean);
}

TEST_CASE("category coverage") {
    DatasetSchema s;
    s.max_length = 4;
    s.variables = {VariableSpec::numeric("x", 0, 1), VariableSpec::categorical("c", {"a", "b", "c", "d"})};
    RecordTable real(s), syn(s);
    const char* lv[] = {"a", "b", "c", "d"};
    for (long i = 0; i < 4; ++i) real.append("r", i, {0.5, std::string(lv[i])});
    for (long i = 0; i < 4; ++i) syn.append("s", i, {0.5, std::string(lv[i % 2])});
    real.normalize();
    syn.normalize();
    CHECK(category_coverage(real, real, s) == 1.0);
    CHECK(category_coverage(real, syn, s) == 0.5);
    DatasetSchema n;
    n.variables = {VariableSpec::numeric("x", 0, 1)};
    RecordTable nt(n);
    nt.append("a", 0, {0.1});
    nt.normalize();
    CHECK_THROWS_AS(category_coverage(nt, nt, n), NotApplicableError);
}

TEST_CASE("demographic cross-tab") {
    DatasetSchema s;
    s.max_length = 1;
    s.variables = {VariableSpec::numeric("age", 0, 100), VariableSpec::binary("sex", {"F", "M"})};
    const double ages[] = {21, 25, 37, 44, 45, 59, 61, 18, 33, 70};
    const char* sex[] = {"F", "M", "F", "F", "M", "M", "F", "M", "F", "M"};
    RecordTable real(s), syn(s);
    for (int i = 0; i < 10; ++i) real.append("r" + std::to_string(i), 0, {ages[i], std::string(sex[i])});
    for (int i = 0; i < 3; ++i) syn.append("s" + std::to_string(i), 0, {ages[i], std::string(sex[i])});
    real.normalize();
    syn.normalize();
    const std::vector<QuasiVar> q{{"age", 20.0}, {"sex", std::nullopt}};
    const auto tab = demographic_coverage(real, syn, s, q);
    // tally: [0,20) M:1 ; [20,40) F:3 M:1 ; [40,60) F:1 M:2 ; [60,80) F:1 M:1
    auto cell = [&](const std::string& a, const std::string& b) { return tab.cells.at({a, b}); };
    CHECK(cell("[0,20)", "M").first == 1);
    CHECK(cell("[20,40)", "F").first == 3);
    CHECK(cell("[20,40)", "M").first == 1);
    CHECK(cell("[40,60)", "F").first == 1);
    CHECK(cell("[40,60)", "M").first == 2);
    CHECK(cell("[60,80)", "F").first == 1);
    CHECK(cell("[60,80)", "M").first == 1);
    CHECK(cell("[20,40)", "F").second == 2);
    CHECK(cell("[40,60)", "M").second == 0);

    const auto self = demographic_coverage(real, real, s, q);
    for (const auto& [k, c] : self.cells) CHECK(c.first == c.second);

    DatasetSchema cat;
    cat.max_length = 1;
    cat.variables = {VariableSpec::categorical("eth", {"A", "B", "C"}), VariableSpec::binary("sex", {"F", "M"})};
    RecordTable cr(cat), cs(cat);
    cr.append("r", 0, {std::string("A"), std::string("F")});
    cs.append("s", 0, {std::string("A"), std::string("F")});
    cr.normalize();
    cs.normalize();
    const auto full = demographic_coverage(cr, cs, cat, {{"eth", std::nullopt}, {"sex", std::nullopt}});
    CHECK(full.cells.size() == 6);
    CHECK(full.cells.at({"C", "M"}).second == 0);
}

}
