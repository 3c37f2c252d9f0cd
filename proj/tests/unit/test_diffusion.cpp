#include <doctest.h>

#include <cmath>

#include "mixdiff/diffusion.hpp"
#include "mixdiff/error.hpp"
#include "mixdiff/rng.hpp"

using namespace mixdiff;

namespace {

Tensor filled(std::size_t n, double v) {
    Tensor t({1, 1, 1, n});
    t.fill(v);
    return t;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("single step schedule") {
    const auto s = build_schedule(1, 0.01, 0.01);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.99).epsilon(1e-15));
}

TEST_CASE("alpha bar equals the cumulative product") {
    const std::vector<double> betas{1e-4, 0.0034, 0.0067, 0.01};
    const NoiseSchedule s(betas);
    long double prod = 1.0L;
    for (std::size_t t = 1; t <= 4; ++t) {
        prod *= 1.0L - static_cast<long double>(betas[t - 1]);
        CHECK(s.alpha_bar(t) == doctest::Approx(static_cast<double>(prod)).epsilon(1e-15));
    }
    const auto lin = build_schedule(4, 1e-4, 0.01);
    for (std::size_t t = 1; t <= 4; ++t) CHECK(lin.beta(t) == doctest::Approx(1e-4 + (0.01 - 1e-4) * (t - 1) / 3.0));
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(build_schedule(0, 1e-4, 0.01), ParameterError);
    CHECK_THROWS_AS(build_schedule(10, 0.02, 0.01), ParameterError);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.01), ParameterError);
    CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), ParameterError);
    const auto s = build_schedule(10, 1e-4, 0.01);
    CHECK_THROWS_AS(s.beta(0), StepError);
    CHECK_THROWS_AS(s.beta(11), StepError);
    CHECK(NoiseSchedule::from_json(s.to_json()).betas() == s.betas());
}

TEST_CASE("q_sample closed form") {
    const auto s = build_schedule(10, 1e-4, 0.02);
    const auto x0 = filled(3, 2.0);
    const auto y = q_sample(x0, 5, filled(3, 0.0), s);
    CHECK(y[0] == doctest::Approx(std::sqrt(s.alpha_bar(5)) * 2.0));

    // abar = 0.25 hand case: 0.5 * 1 + sqrt(0.75) * 1
    const NoiseSchedule quarter({0.75});
    CHECK(q_sample(filled(1, 1.0), 1, filled(1, 1.0), quarter)[0] == doctest::Approx(1.3660254037844386));
}

TEST_CASE("posterior parameters") {
    const auto s = build_schedule(3, 0.1, 0.3);
    // direct evaluation of the Gaussian posterior for T = 3
    for (std::size_t t = 1; t <= 3; ++t) {
        const double ab = s.alpha_bar(t), abp = t == 1 ? 1.0 : s.alpha_bar(t - 1), b = s.beta(t);
        const auto p = posterior_params(t, s);
        CHECK(p.coef_x0 == doctest::Approx(std::sqrt(abp) * b / (1 - ab)));
        CHECK(p.coef_xt == doctest::Approx(std::sqrt(1 - b) * (1 - abp) / (1 - ab)));
        CHECK(p.variance == doctest::Approx((1 - abp) / (1 - ab) * b));
        CHECK(p.variance <= b);
        // x0 = xt = c leaves a consistent mean
        const double c = 1.7;
        CHECK(p.coef_x0 * c + p.coef_xt * c == doctest::Approx((std::sqrt(abp) * b + std::sqrt(1 - b) * (1 - abp)) /
                                                                (1 - ab) * c));
    }
    CHECK(posterior_params(1, s).variance == 0.0);
}

TEST_CASE("reconstruction inverts q_sample") {
    const auto s = build_schedule(50, 1e-4, 0.02);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        auto x0 = standard_normal({2, 1, 3, 4}, rng);
        auto eps = standard_normal(x0.shape(), rng);
        const auto t = static_cast<std::size_t>(rng.uniform_int(1, 50));
        const auto back = one_step_reconstruct(q_sample(x0, t, eps, s), t, eps, s);
        for (std::size_t k = 0; k < x0.size(); ++k)
            CHECK(std::fabs(back[k] - x0[k]) <= 1e-9 * std::max(1.0, std::fabs(x0[k])));
    }
    const auto xt = filled(2, 3.0);
    CHECK(one_step_reconstruct(xt, 7, filled(2, 0.0), s)[0] == doctest::Approx(3.0 / std::sqrt(s.alpha_bar(7))));
}

TEST_CASE("reverse step") {
    const auto s = build_schedule(10, 1e-3, 0.05);
    const auto xt = filled(2, 1.5);
    CHECK(reverse_step(xt, 4, filled(2, 0.0), filled(2, 0.0), s)[0] == doctest::Approx(1.5 / std::sqrt(s.alpha(4))));
    CHECK(reverse_step(xt, 4, filled(2, 0.0), filled(2, 1.0), s)[0] ==
          doctest::Approx(1.5 / std::sqrt(s.alpha(4)) + s.sigma(4)));
    CHECK_THROWS_AS(reverse_step(xt, 1, filled(2, 0.0), filled(2, 1.0), s), StepError);
    CHECK_THROWS_AS(reverse_step(xt, 11, filled(2, 0.0), filled(2, 0.0), s), StepError);
}

TEST_CASE("oracle denoiser recovers x0") {
    const auto s = build_schedule(100, 1e-4, 0.1);
    Tensor x0({4, 1, 1, 8});
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 0.1 * static_cast<double>(i % 9);
    const NoisePredictor oracle = [&](const Tensor& xt, std::size_t t) {
        Tensor e(xt.shape());
        const double ab = s.alpha_bar(t);
        for (std::size_t i = 0; i < xt.size(); ++i) e[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
        return e;
    };
    const auto a = sample(oracle, s, x0.shape(), 9);
    const auto b = sample(oracle, s, x0.shape(), 9);
    CHECK(a == b);
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        se += (a[i] - x0[i]) * (a[i] - x0[i]);
        CHECK(a[i] >= -0.2);
        CHECK(a[i] <= 1.2);
    }
    CHECK(std::sqrt(se / static_cast<double>(a.size())) < 0.05);
}

}
