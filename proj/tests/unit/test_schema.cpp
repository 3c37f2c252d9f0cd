#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/io.hpp"
#include "mixdiff/schema.hpp"

using namespace mixdiff;

TEST_SUITE("schema") {

TEST_CASE("fixture widths") {
    const auto dir = testing::source_dir() / "fixtures" / "schemas";
    CHECK(DatasetSchema::load(dir / "hiv.json").width() == 37);
    CHECK(DatasetSchema::load(dir / "hypotension.json").width() == 54);
    const auto hyp = DatasetSchema::load(dir / "hypotension.json");
    CHECK(hyp.max_length == 48);
    // values, then patient id and time index
    CHECK(hyp.variables.size() + 2 == 22);
}

TEST_CASE("channel offsets follow variable order") {
    const auto s = testing::small_schema();
    CHECK(s.width() == 6);
    CHECK(s.channel_offsets() == std::vector<std::size_t>{0, 1, 3});
}

TEST_CASE("binary level order fixes the one-hot group") {
    DatasetSchema s;
    s.max_length = 1;
    s.variables = {VariableSpec::binary("Gender", {"Female", "Male"})};
    RecordTable t(s);
    t.append("a", 0, {std::string("Female")});
    t.normalize();
    const auto b = encode(t, s);
    CHECK(b.data(0, 0, 0, 0) == 1.0);
    CHECK(b.data(0, 0, 0, 1) == 0.0);
}

TEST_CASE("hand-built layout with padding") {
    const auto s = testing::small_schema(4);
    RecordTable t(s);
    t.append("a", 0, {0.0, std::string("yes"), std::string("blue")});
    t.append("a", 1, {5.0, std::string("no"), std::string("red")});
    t.normalize();
    const auto b = encode(t, s);
    REQUIRE(b.data.shape() == Tensor::Shape{1, 1, 4, 6});
    const double row0[] = {0.0, 0, 1, 0, 0, 1};
    const double row1[] = {0.5, 1, 0, 1, 0, 0};
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(b.data(0, 0, 0, i) == row0[i]);
        CHECK(b.data(0, 0, 1, i) == row1[i]);
        CHECK(b.data(0, 0, 2, i) == 0.0);
        CHECK(b.data(0, 0, 3, i) == 0.0);
    }
    CHECK(b.lengths == std::vector<std::size_t>{2});
}

TEST_CASE("encode rejects long episodes and degenerate ranges") {
    auto s = testing::small_schema(2);
    RecordTable t(s);
    for (long i = 0; i < 3; ++i) t.append("a", i, {1.0, std::string("no"), std::string("red")});
    t.normalize();
    CHECK_THROWS_AS(encode(t, s), LengthError);
    s.max_length = 3;
    s.variables[0].max = s.variables[0].min;
    CHECK_THROWS_AS(encode(t, s), DegenerateRangeError);
}

TEST_CASE("unknown level is a schema error") {
    const auto s = testing::small_schema();
    CHECK_THROWS_AS(parse_csv("x,flag,colour,patient_id,time_index\n1,no,purple,a,0\n", s), Error);
}

TEST_CASE("decode inverts encode") {
    const auto s = testing::small_schema(6);
    const auto t = testing::random_table(s, 20, 11);
    const auto back = decode(encode(t, s));
    REQUIRE(back.rows() == t.rows());
    CHECK(back.patient_ids() == t.patient_ids());
    CHECK(back.labels(1) == t.labels(1));
    CHECK(back.labels(2) == t.labels(2));
    for (std::size_t r = 0; r < t.rows(); ++r) CHECK(back.numbers(0)[r] == doctest::Approx(t.numbers(0)[r]).epsilon(1e-12));
}

TEST_CASE("decode argmax and clamp") {
    const auto s = testing::small_schema(1);
    EpisodeBatch b;
    b.schema = s;
    b.data = Tensor({1, 1, 1, 6});
    const double row[] = {1.3, 0.4, 0.6, 0.2, 0.9, 0.1};
    for (std::size_t i = 0; i < 6; ++i) b.data(0, 0, 0, i) = row[i];
    b.lengths = {1};
    const auto t = decode(b);
    CHECK(t.numbers(0)[0] == 10.0);
    CHECK(t.labels(1)[0] == "yes");
    CHECK(t.labels(2)[0] == "green");
    CHECK(t.patient_ids()[0] == "syn_0");

    b.data(0, 0, 0, 0) = -0.5;
    CHECK(decode(b).numbers(0)[0] == 0.0);
}

TEST_CASE("csv round trip and layout") {
    const auto s = testing::small_schema(5);
    const auto t = testing::random_table(s, 7, 3);
    const auto text = format_csv(t);
    CHECK(text.substr(0, text.find('\n')) == "x,flag,colour,patient_id,time_index");
    const auto back = parse_csv(text, s);
    CHECK(back == t);
    CHECK(format_csv(back) == text);

    const auto dir = testing::temp_dir("csv");
    save_csv(t, dir / "t.csv");
    CHECK(read_file(dir / "t.csv") == text);
    CHECK(load_csv(dir / "t.csv", s) == t);
}

TEST_CASE("duplicate (id, time) row is reported at that row") {
    const auto s = testing::small_schema();
    const std::string text =
        "x,flag,colour,patient_id,time_index\n"
        "1,no,red,a,0\n"
        "2,no,red,a,1\n"
        "3,no,red,a,1\n";
    try {
        parse_csv(text, s);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        // file line numbering, header on line 0
        CHECK(e.row() == 3);
    }
}

TEST_CASE("schema json round trip") {
    auto s = testing::small_schema();
    CHECK(DatasetSchema::from_json(s.to_json()) == s);
    auto j = s.to_json();
    j["variables"][2]["levels"] = {"only"};
    CHECK_THROWS_AS(DatasetSchema::from_json(j), SchemaError);
}

TEST_CASE("fit ranges and infer lengths") {
    auto s = testing::small_schema(4);
    s.variables[0].min.reset();
    s.variables[0].max.reset();
    RecordTable t(s);
    t.append("a", 0, {2.0, std::string("no"), std::string("red")});
    t.append("a", 1, {8.0, std::string("no"), std::string("red")});
    t.normalize();
    const auto fitted = fit_ranges(s, t);
    CHECK(*fitted.variables[0].min == 2.0);
    CHECK(*fitted.variables[0].max == 8.0);
    const auto b = encode(t, fitted);
    CHECK(infer_lengths(b.data, fitted) == std::vector<std::size_t>{2});
}

}
