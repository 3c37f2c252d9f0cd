#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/rng.hpp"
#include "mixdiff/tensor.hpp"

namespace mixdiff {

// Variance schedule for steps t = 1..T (stored zero-based internally).
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    // Builds from explicit betas; each must lie in (0, 1).
    explicit NoiseSchedule(std::vector<double> betas);

    std::size_t steps() const noexcept { return beta_.size(); }
    double beta(std::size_t t) const { return beta_.at(check(t)); }
    double alpha(std::size_t t) const { return alpha_.at(check(t)); }
    double alpha_bar(std::size_t t) const { return alpha_bar_.at(check(t)); }
    // alpha_bar at t - 1, with alpha_bar(0) = 1.
    double alpha_bar_prev(std::size_t t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
    double sigma(std::size_t t) const { return sigma_.at(check(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

    double beta_min() const noexcept { return beta_min_; }
    double beta_max() const noexcept { return beta_max_; }

    nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

private:
    std::size_t check(std::size_t t) const;

    std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
    double beta_min_ = 0.0, beta_max_ = 0.0;
};

// Linear schedule, beta increasing from beta_min at t = 1 to beta_max at t = T.
NoiseSchedule build_schedule(std::size_t T, double beta_min, double beta_max);

struct PosteriorParams {
    double coef_x0 = 0.0;
    double coef_xt = 0.0;
    double variance = 0.0;
};

// Mean coefficients and variance of q(x_{t-1} | x_t, x_0). t = 1 yields
// variance 0 (coef_x0 = 1, coef_xt = 0).
PosteriorParams posterior_params(std::size_t t, const NoiseSchedule& schedule);

// One step of the forward kernel: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
Tensor forward_step(const Tensor& x_prev, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);

// Closed-form corruption sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);
// Per-batch-element steps (dimension 0 of x0 indexes `steps`).
Tensor q_sample(const Tensor& x0, std::span<const std::size_t> steps, const Tensor& eps,
                const NoiseSchedule& schedule);

// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor one_step_reconstruct(const Tensor& xt, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& schedule);
Tensor one_step_reconstruct(const Tensor& xt, std::span<const std::size_t> steps, const Tensor& eps_hat,
                            const NoiseSchedule& schedule);

// (1 / sqrt(alpha_t)) (x_t - beta_t / sqrt(1 - abar_t) eps_hat) + sigma_t z.
// At t = 1, z must be all zero.
Tensor reverse_step(const Tensor& xt, std::size_t t, const Tensor& eps_hat, const Tensor& z,
                    const NoiseSchedule& schedule);

// Noise predictor eps(x_t, t); every batch element shares the step t.
using NoisePredictor = std::function<Tensor(const Tensor& xt, std::size_t t)>;

// Ancestral sampling from x_T ~ N(0, I) down to x_0. Deterministic in `seed`.
Tensor sample(const NoisePredictor& predictor, const NoiseSchedule& schedule, const Tensor::Shape& shape,
              std::uint64_t seed);

Tensor standard_normal(const Tensor::Shape& shape, Rng& rng);

}  // namespace mixdiff
