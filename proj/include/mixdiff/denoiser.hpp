#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixdiff/rng.hpp"
#include "mixdiff/tensor.hpp"

namespace mixdiff {

// Shape hyper-parameters of the three-level 1-D U-Net noise predictor.
struct DenoiserConfig {
    std::size_t input_width = 0;                 // N, encoded feature width
    std::size_t latent_width = 256;              // width of the feature-axis projection
    std::array<std::size_t, 3> channels{1, 10, 20};
    std::array<std::size_t, 3> lengths{0, 0, 0};  // sequence length per level, lengths[0] = L
    std::size_t bottleneck_channels = 10;        // squeeze width of the middle bottleneck block
    std::size_t blocks_per_level = 3;
    std::size_t embed_dim = 100;                 // sinusoidal noise-level embedding size
    std::size_t kernel = 3;                      // block convolution kernel along time

    // Stride between level i and i + 1: ceil(lengths[i] / lengths[i + 1]).
    std::size_t stride(std::size_t level) const;
    void validate() const;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);

    // Default ladder {L, ceil(L/4), ceil(L/16)} with the published ladders
    // for L = 48 ({48, 12, 3}), L = 100 ({100, 10, 3}) and L = 20 ({20, 5, 3}).
    static std::array<std::size_t, 3> default_lengths(std::size_t L);

    bool operator==(const DenoiserConfig&) const = default;
};

struct ParamArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    bool operator==(const ParamArray&) const = default;
};

// All learnable arrays of the noise predictor, in a fixed order determined
// by the config.
struct DenoiserParameters {
    DenoiserConfig config;
    std::vector<ParamArray> arrays;

    std::size_t count() const noexcept;
    const ParamArray& get(std::string_view name) const;
    ParamArray& get(std::string_view name);
    // Zero-valued arrays with the same names and shapes.
    DenoiserParameters zeros_like() const;
    bool all_finite() const noexcept;

    bool operator==(const DenoiserParameters&) const = default;
};

// Interleaved sin/cos embedding at geometrically spaced frequencies:
// e[2i] = sin(t w_i), e[2i+1] = cos(t w_i), w_i = 10000^(-2i/dim).
std::vector<double> sinusoidal_embed(std::size_t t, std::size_t dim);

class Denoiser {
public:
    struct Cache;
    struct CacheDeleter {
        void operator()(Cache* c) const noexcept;
    };
    using CachePtr = std::unique_ptr<Cache, CacheDeleter>;

    explicit Denoiser(DenoiserConfig config);
    ~Denoiser();
    Denoiser(Denoiser&&) noexcept;
    Denoiser& operator=(Denoiser&&) noexcept;

    const DenoiserConfig& config() const noexcept { return config_; }

    // Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
    // With `zero_output` the final projection starts at zero.
    DenoiserParameters init(Rng& rng, bool zero_output = true) const;

    std::size_t parameter_count() const;

    // xt has shape B x 1 x L x N; `steps` holds one noise level per batch
    // element. Returns the predicted noise, same shape as xt. When `cache`
    // is non-null the activations needed by backward() are stored in it.
    Tensor forward(const DenoiserParameters& params, const Tensor& xt, std::span<const std::size_t> steps,
                   Cache* cache = nullptr) const;

    // Accumulates d(loss)/d(theta) into `grads` given d(loss)/d(output).
    void backward(const DenoiserParameters& params, const Cache& cache, const Tensor& grad_out,
                  DenoiserParameters& grads) const;

    // Intermediate activation shapes of the last forward pass recorded in
    // `cache`, keyed by stage name (used for shape checks).
    static std::vector<std::pair<std::string, Tensor::Shape>> stage_shapes(const Cache& cache);

    CachePtr make_cache() const;

private:
    struct Layout;
    DenoiserConfig config_;
    std::unique_ptr<Layout> layout_;
};

// Binary checkpoint: magic, version, JSON header (config plus `extra`),
// then named arrays with shapes. Round trip is exact.
void save_checkpoint(const std::filesystem::path& path, const DenoiserParameters& params,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
    DenoiserParameters params;
    nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const DenoiserParameters& params, const nlohmann::json& extra);
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace mixdiff
