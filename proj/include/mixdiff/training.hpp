#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/denoiser.hpp"
#include "mixdiff/diffusion.hpp"
#include "mixdiff/rng.hpp"
#include "mixdiff/schema.hpp"
#include "mixdiff/tensor.hpp"

namespace mixdiff {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 1;
    double w_noise = 1.0;
    double w_recon1 = 20.0;
    double w_recon2 = 10.0;
    std::size_t proj_hidden = 128;
    std::size_t proj_out = 64;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRecord {
    std::size_t iteration = 0;
    double noise = 0.0;
    double recon1 = 0.0;
    double recon2 = 0.0;
    double total = 0.0;
};

struct LossReport {
    std::vector<LossRecord> records;

    // Mean of each component over records [first, last).
    LossRecord mean(std::size_t first, std::size_t last) const;
    std::string to_csv() const;
};

// U(v) = relu(v U1) U2 with fresh Gaussian matrices, entries N(0, 1/fan_in).
struct RandomProjection {
    std::size_t in = 0, hidden = 0, out = 0;
    std::vector<double> u1;  // in x hidden, row-major
    std::vector<double> u2;  // hidden x out

    static RandomProjection sample(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
    // rows x in  ->  rows x out
    std::vector<double> apply(const std::vector<double>& x, std::size_t rows) const;
};

double noise_loss(const Tensor& eps, const Tensor& eps_hat);
double recon_loss_1(const Tensor& x0, const Tensor& x0_hat);
// Mean over batch elements and projected features of (U(x0) - U(x0_hat))^2,
// each episode flattened to L*N values.
double recon_loss_2(const Tensor& x0, const Tensor& x0_hat, const RandomProjection& proj);

// Gradient of recon_loss_2 with respect to x0_hat.
Tensor recon_loss_2_grad(const Tensor& x0, const Tensor& x0_hat, const RandomProjection& proj);

// Everything random in one training iteration, drawn up front so a step can
// be replayed exactly.
struct StepNoise {
    std::vector<std::size_t> steps;
    Tensor eps;
    RandomProjection proj;
};

StepNoise draw_step_noise(std::size_t batch, const Tensor::Shape& shape, const NoiseSchedule& schedule,
                          const TrainConfig& config, Rng& rng);

// Loss components for x0 under the given noise; when `grads` is non-null
// the gradient of the weighted total is accumulated into it.
LossRecord loss_and_grad(const Denoiser& model, const DenoiserParameters& params, const NoiseSchedule& schedule,
                         const TrainConfig& config, const Tensor& x0, const StepNoise& noise,
                         DenoiserParameters* grads);

class Adam {
public:
    Adam(const DenoiserParameters& like, const TrainConfig& config);
    void step(DenoiserParameters& params, const DenoiserParameters& grads);
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
    // When set, checkpoints go to <dir>/checkpoint_epoch<k>.bin every 10% of
    // epochs and <dir>/final.bin at the end.
    std::optional<std::filesystem::path> checkpoint_dir;
    nlohmann::json checkpoint_extra = nlohmann::json::object();
    std::function<void(const LossRecord&, std::size_t epoch)> on_iteration;
};

// Trains `params` in place on the encoded episodes in `data`.
LossReport train(const EpisodeBatch& data, const Denoiser& model, DenoiserParameters& params,
                 const NoiseSchedule& schedule, const TrainConfig& config, const TrainOptions& options = {});

// Ancestral sampling with the trained model, `count` episodes generated in
// chunks of `chunk`. Lengths are recovered from the padding pattern.
EpisodeBatch generate(const Denoiser& model, const DenoiserParameters& params, const NoiseSchedule& schedule,
                      const DatasetSchema& schema, std::size_t count, std::uint64_t seed, std::size_t chunk = 128);

}  // namespace mixdiff
