#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/toygen.hpp"
#include "mixdiff/training.hpp"

using namespace mixdiff;

namespace {

Tensor random_tensor(const Tensor::Shape& s, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

struct TinySetup {
    DatasetSchema schema;
    EpisodeBatch data;
    Denoiser model;
    NoiseSchedule schedule;
};

TinySetup tiny(std::size_t patients = 40) {
    ToySpec spec;
    spec.patients = patients;
    spec.holdout = 0;
    spec.length = 8;
    spec.min_length = 8;
    spec.seed = 12;
    auto toy = generate_toy(spec);
    DenoiserConfig c;
    c.input_width = toy.schema.width();
    c.latent_width = 8;
    c.lengths = {8, 4, 2};
    auto data = encode(toy.train, toy.schema);
    return {toy.schema, std::move(data), Denoiser(c), build_schedule(50, 1e-4, 0.05)};
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("noise and first reconstruction losses") {
    Rng rng(1);
    const auto a = random_tensor({3, 1, 4, 5}, rng), b = random_tensor({3, 1, 4, 5}, rng);
    CHECK(noise_loss(a, a) == 0.0);
    Tensor zero(a.shape()), one(a.shape());
    one.fill(1.0);
    CHECK(noise_loss(zero, one) == 1.0);
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]) * (a[i] - b[i]);
    const double oracle = static_cast<double>(s / a.size());
    CHECK(std::fabs(noise_loss(a, b) - oracle) <= 1e-12);
    CHECK(std::fabs(recon_loss_1(a, b) - oracle) <= 1e-12);
    Tensor shifted = a;
    for (auto& v : shifted.values()) v += 1.0;
    CHECK(recon_loss_1(a, shifted) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("projected reconstruction loss") {
    Rng rng(2);
    const auto x = random_tensor({2, 1, 3, 2}, rng), y = random_tensor({2, 1, 3, 2}, rng);
    auto proj = RandomProjection::sample(6, 5, 4, rng);
    CHECK(recon_loss_2(x, x, proj) == 0.0);
    auto zeroed = proj;
    std::fill(zeroed.u2.begin(), zeroed.u2.end(), 0.0);
    CHECK(recon_loss_2(x, y, zeroed) == 0.0);

    // identity projections: mean squared difference of the rectified values
    RandomProjection id{2, 2, 2, {1, 0, 0, 1}, {1, 0, 0, 1}};
    Tensor a({1, 1, 2, 1}), b({1, 1, 2, 1});
    a[0] = 0.5, a[1] = -1.0, b[0] = -0.25, b[1] = 2.0;
    const double expect = (0.5 * 0.5 + 2.0 * 2.0) / 2.0;
    CHECK(recon_loss_2(a, b, id) == doctest::Approx(expect).epsilon(1e-15));

    const auto g = recon_loss_2_grad(x, y, proj);
    auto yp = y;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double h = 1e-6, o = yp[i];
        yp[i] = o + h;
        const double lp = recon_loss_2(x, yp, proj);
        yp[i] = o - h;
        const double lm = recon_loss_2(x, yp, proj);
        yp[i] = o;
        CHECK(g[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("projection draw scales") {
    Rng rng(3);
    const auto p = RandomProjection::sample(400, 128, 64, rng);
    double s = 0;
    for (double v : p.u1) s += v * v;
    CHECK(s / static_cast<double>(p.u1.size()) == doctest::Approx(1.0 / 400).epsilon(0.05));
}

TEST_CASE("adam first step") {
    auto t = tiny(4);
    Rng rng(4);
    auto p = t.model.init(rng, false);
    auto g = p.zeros_like();
    for (auto& a : g.arrays)
        for (auto& v : a.values) v = rng.normal();
    TrainConfig c;
    c.learning_rate = 0.01;
    Adam adam(p, c);
    const auto before = p;
    adam.step(p, g);
    for (std::size_t k = 0; k < p.arrays.size(); ++k)
        for (std::size_t i = 0; i < p.arrays[k].values.size(); ++i) {
            const double gv = g.arrays[k].values[i];
            const double expect = before.arrays[k].values[i] - 0.01 * gv / (std::fabs(gv) + 1e-8);
            CHECK(p.arrays[k].values[i] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("total loss is the weighted sum") {
    auto t = tiny(16);
    TrainConfig c;
    c.batch_size = 8;
    c.epochs = 2;
    c.seed = 5;
    Rng rng(6);
    auto p = t.model.init(rng);
    const auto report = train(t.data, t.model, p, t.schedule, c);
    REQUIRE(report.records.size() == 4);
    for (const auto& r : report.records) CHECK(r.total == r.noise + 20 * r.recon1 + 10 * r.recon2);
    const auto csv = report.to_csv();
    CHECK(csv.substr(0, csv.find('\n')) == "iteration,L_Noise,L_Recon1,L_Recon2,L_Tot");
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    auto t = tiny(16);
    TrainConfig c;
    c.learning_rate = 0.0;
    c.batch_size = 8;
    c.seed = 7;
    Rng rng(8);
    auto p = t.model.init(rng, false);
    const auto before = p;
    train(t.data, t.model, p, t.schedule, c);
    CHECK(p == before);
}

TEST_CASE("noise loss falls on toy data and runs are reproducible") {
    auto t = tiny(64);
    TrainConfig c;
    c.batch_size = 16;
    c.epochs = 40;
    c.seed = 9;
    Rng r1(10), r2(10);
    auto p1 = t.model.init(r1), p2 = t.model.init(r2);
    const auto report = train(t.data, t.model, p1, t.schedule, c);
    const std::size_t n = report.records.size(), w = n / 10;
    CHECK(report.mean(n - w, n).noise < report.mean(0, w).noise);
    const auto again = train(t.data, t.model, p2, t.schedule, c);
    CHECK(p1 == p2);
    CHECK(again.to_csv() == report.to_csv());

    const auto a = generate(t.model, p1, t.schedule, t.schema, 5, 77, 2);
    const auto b = generate(t.model, p1, t.schedule, t.schema, 5, 77, 2);
    CHECK(a.data == b.data);
    CHECK(a.data.shape() == Tensor::Shape{5, 1, 8, t.schema.width()});
    CHECK(a.patient_ids.front() == "syn_0");
}

TEST_CASE("checkpoints every tenth of the epochs") {
    auto t = tiny(8);
    TrainConfig c;
    c.batch_size = 8;
    c.epochs = 20;
    Rng rng(11);
    auto p = t.model.init(rng);
    const auto dir = testing::temp_dir("train_ckpt");
    TrainOptions o;
    o.checkpoint_dir = dir;
    train(t.data, t.model, p, t.schedule, c, o);
    std::size_t count = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().filename().string().starts_with("checkpoint_epoch")) ++count;
    CHECK(count == 9);
    CHECK(std::filesystem::exists(dir / "final.bin"));
    CHECK(load_checkpoint(dir / "final.bin").params == p);
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = TrainConfig{};
    c.w_recon2 = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).to_json() == TrainConfig{}.to_json());
}

}
