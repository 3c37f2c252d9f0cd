#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/privacy.hpp"

using namespace mixdiff;

TEST_SUITE("privacy") {

TEST_CASE("disclosure risk hand cases") {
    // one synthetic patient shares a class with four real ones, the other is unmatched
    const std::vector<std::vector<std::string>> real{{"A"}, {"A"}, {"A"}, {"A"}, {"C"}};
    const auto r = disclosure_risk(real, {{"A"}, {"B"}});
    CHECK(r.risk == doctest::Approx(0.125).epsilon(1e-15));
    CHECK(r.pass == false);
    CHECK(r.synthetic_patients == 2);
    CHECK(r.classes.at({"A"}).joint());
    CHECK_FALSE(r.classes.at({"B"}).joint());

    CHECK(disclosure_risk(real, {{"X"}, {"Y"}}).risk == 0.0);
    CHECK(disclosure_risk(real, {{"X"}}).pass);
    const std::vector<std::vector<std::string>> unique{{"a"}, {"b"}, {"c"}};
    CHECK(disclosure_risk(unique, unique).risk == doctest::Approx(1.0));
}

TEST_CASE("disclosure risk from tables uses first time steps") {
    const auto s = testing::small_schema(4);
    const auto real = testing::random_table(s, 30, 1, "r");
    const auto syn = testing::random_table(s, 20, 2, "s");
    const std::vector<QuasiVar> q{{"flag", std::nullopt}, {"colour", std::nullopt}};
    const auto rk = patient_class_keys(real, s, q), sk = patient_class_keys(syn, s, q);
    CHECK(rk.size() == 30);
    CHECK(disclosure_risk(real, syn, s, q).risk == doctest::Approx(disclosure_risk(rk, sk).risk));
    const std::vector<QuasiVar> bad{{"x", std::nullopt}};
    CHECK_THROWS_AS(patient_class_keys(real, s, bad), ParameterError);
}

TEST_CASE("minimum Euclidean distance") {
    CHECK(min_euclidean_distance({{0, 0, 0}}, {{1, 0, 0}}) == 1.0);
    Rng rng(3);
    std::vector<std::vector<double>> a(100, std::vector<double>(7)), b(100, std::vector<double>(7));
    for (auto& v : a)
        for (auto& x : v) x = rng.uniform();
    for (auto& v : b)
        for (auto& x : v) x = rng.uniform();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& u : b)
        for (const auto& v : a) {
            double d = 0;
            for (std::size_t k = 0; k < 7; ++k) d += (u[k] - v[k]) * (u[k] - v[k]);
            best = std::min(best, std::sqrt(d));
        }
    CHECK(std::fabs(min_euclidean_distance(a, b) - best) <= 1e-9);

    auto copied = b;
    copied[17] = a[42];
    CHECK(min_euclidean_distance(a, copied) == 0.0);

    const auto s = testing::small_schema(4);
    const auto real = testing::random_table(s, 10, 4, "r");
    const auto er = encode(real, s);
    CHECK(min_euclidean_distance(er, er) == 0.0);
}

}
