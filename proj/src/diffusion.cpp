#include "mixdiff/diffusion.hpp"

#include <cmath>

#include "mixdiff/error.hpp"

namespace mixdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ParameterError("schedule needs at least one step");
    alpha_.resize(beta_.size());
    alpha_bar_.resize(beta_.size());
    sigma_.resize(beta_.size());
    double acc = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        const double b = beta_[i];
        if (!(b > 0.0 && b < 1.0)) throw ParameterError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
        alpha_[i] = 1.0 - b;
        acc *= alpha_[i];
        alpha_bar_[i] = acc;
        sigma_[i] = std::sqrt(b);
    }
    beta_min_ = beta_.front();
    beta_max_ = beta_.back();
}

std::size_t NoiseSchedule::check(std::size_t t) const {
    if (t < 1 || t > beta_.size())
        throw StepError("step " + std::to_string(t) + " outside 1.." + std::to_string(beta_.size()));
    return t - 1;
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"T", steps()}, {"beta_min", beta_min_}, {"beta_max", beta_max_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
    return build_schedule(j.at("T").get<std::size_t>(), j.at("beta_min").get<double>(),
                          j.at("beta_max").get<double>());
}

NoiseSchedule build_schedule(std::size_t T, double beta_min, double beta_max) {
    if (T < 1) throw ParameterError("T must be at least 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw ParameterError("need 0 < beta_min <= beta_max < 1");
    std::vector<double> betas(T);
    for (std::size_t i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        betas[i] = beta_min + frac * (beta_max - beta_min);
    }
    return NoiseSchedule(std::move(betas));
}

PosteriorParams posterior_params(std::size_t t, const NoiseSchedule& s) {
    const double beta = s.beta(t), abar = s.alpha_bar(t), abar_prev = s.alpha_bar_prev(t);
    PosteriorParams p;
    p.coef_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    p.coef_xt = std::sqrt(s.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
    p.variance = t == 1 ? 0.0 : beta * (1.0 - abar_prev) / (1.0 - abar);
    return p;
}

Tensor forward_step(const Tensor& x_prev, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(x_prev, eps, "forward_step");
    const double a = std::sqrt(1.0 - s.beta(t)), b = std::sqrt(s.beta(t));
    Tensor out(x_prev.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * eps[i];
    return out;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(x0, eps, "q_sample");
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

Tensor q_sample(const Tensor& x0, std::span<const std::size_t> steps, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(x0, eps, "q_sample");
    if (steps.size() != x0.dim(0)) throw ShapeError("q_sample: one step per batch element required");
    Tensor out(x0.shape());
    const std::size_t per = x0.size() / std::max<std::size_t>(x0.dim(0), 1);
    for (std::size_t b = 0; b < steps.size(); ++b) {
        const double a = std::sqrt(s.alpha_bar(steps[b])), c = std::sqrt(1.0 - s.alpha_bar(steps[b]));
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + c * eps[i];
    }
    return out;
}

Tensor one_step_reconstruct(const Tensor& xt, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& s) {
    require_same_shape(xt, eps_hat, "one_step_reconstruct");
    const double abar = s.alpha_bar(t);
    if (!(abar > 0.0)) throw NumericError("alpha_bar is zero at step " + std::to_string(t));
    const double a = 1.0 / std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Tensor out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xt[i] - b * eps_hat[i]) * a;
    return out;
}

Tensor one_step_reconstruct(const Tensor& xt, std::span<const std::size_t> steps, const Tensor& eps_hat,
                            const NoiseSchedule& s) {
    require_same_shape(xt, eps_hat, "one_step_reconstruct");
    if (steps.size() != xt.dim(0)) throw ShapeError("one_step_reconstruct: one step per batch element required");
    Tensor out(xt.shape());
    const std::size_t per = xt.size() / std::max<std::size_t>(xt.dim(0), 1);
    for (std::size_t bi = 0; bi < steps.size(); ++bi) {
        const double abar = s.alpha_bar(steps[bi]);
        if (!(abar > 0.0)) throw NumericError("alpha_bar is zero at step " + std::to_string(steps[bi]));
        const double a = 1.0 / std::sqrt(abar), b = std::sqrt(1.0 - abar);
        for (std::size_t i = bi * per; i < (bi + 1) * per; ++i) out[i] = (xt[i] - b * eps_hat[i]) * a;
    }
    return out;
}

Tensor reverse_step(const Tensor& xt, std::size_t t, const Tensor& eps_hat, const Tensor& z, const NoiseSchedule& s) {
    require_same_shape(xt, eps_hat, "reverse_step");
    require_same_shape(xt, z, "reverse_step");
    if (t == 1) {
        for (double v : z.values())
            if (v != 0.0) throw StepError("reverse_step: z must be zero at t = 1");
    }
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double sigma = s.sigma(t);
    Tensor out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_alpha * (xt[i] - eps_coef * eps_hat[i]) + sigma * z[i];
    return out;
}

Tensor standard_normal(const Tensor::Shape& shape, Rng& rng) {
    Tensor out(shape);
    for (auto& v : out.values()) v = rng.normal();
    return out;
}

Tensor sample(const NoisePredictor& predictor, const NoiseSchedule& schedule, const Tensor::Shape& shape,
              std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = standard_normal(shape, rng);
    Tensor zeros(shape);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
        Tensor eps_hat = predictor(x, t);
        require_same_shape(x, eps_hat, "noise predictor output");
        if (t > 1) {
            Tensor z = standard_normal(shape, rng);
            x = reverse_step(x, t, eps_hat, z, schedule);
        } else {
            x = reverse_step(x, t, eps_hat, zeros, schedule);
        }
    }
    return x;
}

}  // namespace mixdiff
