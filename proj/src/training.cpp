#include "mixdiff/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "mixdiff/error.hpp"

namespace mixdiff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ParameterError("learning rate must be finite and >= 0");
    if (batch_size == 0) throw ParameterError("batch size must be positive");
    if (epochs == 0) throw ParameterError("epochs must be positive");
    if (!(w_noise > 0.0 && w_recon1 > 0.0 && w_recon2 > 0.0)) throw ParameterError("loss weights must be positive");
    if (proj_hidden == 0 || proj_out == 0) throw ParameterError("projection widths must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
        throw ParameterError("invalid Adam hyper-parameters");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"loss_weights", {w_noise, w_recon1, w_recon2}},
            {"proj_hidden", proj_hidden},
            {"proj_out", proj_out},
            {"adam", {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"eps", adam_eps}}},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("loss_weights")) {
        const auto w = j.at("loss_weights").get<std::vector<double>>();
        if (w.size() != 3) throw ParameterError("loss_weights needs three entries");
        c.w_noise = w[0];
        c.w_recon1 = w[1];
        c.w_recon2 = w[2];
    }
    c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
    c.proj_out = j.value("proj_out", c.proj_out);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam_beta1 = a.value("beta1", c.adam_beta1);
        c.adam_beta2 = a.value("beta2", c.adam_beta2);
        c.adam_eps = a.value("eps", c.adam_eps);
    }
    c.seed = j.value("seed", c.seed);
    return c;
}

LossRecord LossReport::mean(std::size_t first, std::size_t last) const {
    last = std::min(last, records.size());
    LossRecord m;
    if (first >= last) return m;
    for (std::size_t i = first; i < last; ++i) {
        m.noise += records[i].noise;
        m.recon1 += records[i].recon1;
        m.recon2 += records[i].recon2;
        m.total += records[i].total;
    }
    const double n = static_cast<double>(last - first);
    m.noise /= n;
    m.recon1 /= n;
    m.recon2 /= n;
    m.total /= n;
    m.iteration = last;
    return m;
}

std::string LossReport::to_csv() const {
    std::ostringstream os;
    os << "iteration,L_Noise,L_Recon1,L_Recon2,L_Tot\n";
    for (const auto& r : records)
        os << r.iteration << ',' << format_double(r.noise) << ',' << format_double(r.recon1) << ','
           << format_double(r.recon2) << ',' << format_double(r.total) << '\n';
    return os.str();
}

RandomProjection RandomProjection::sample(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    RandomProjection p;
    p.in = in;
    p.hidden = hidden;
    p.out = out;
    p.u1.resize(in * hidden);
    p.u2.resize(hidden * out);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& v : p.u1) v = rng.normal() * s1;
    for (auto& v : p.u2) v = rng.normal() * s2;
    return p;
}

std::vector<double> RandomProjection::apply(const std::vector<double>& x, std::size_t rows) const {
    if (x.size() != rows * in) throw ShapeError("projection input has the wrong width");
    ConstMatMap X(x.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
    ConstMatMap U1(u1.data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(hidden));
    ConstMatMap U2(u2.data(), static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(out));
    RowMat h = (X * U1).cwiseMax(0.0);
    std::vector<double> y(rows * out);
    MatMap(y.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out)) = h * U2;
    return y;
}

double noise_loss(const Tensor& eps, const Tensor& eps_hat) {
    require_same_shape(eps, eps_hat, "noise_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) s += (eps_hat[i] - eps[i]) * (eps_hat[i] - eps[i]);
    return eps.empty() ? 0.0 : s / static_cast<double>(eps.size());
}

double recon_loss_1(const Tensor& x0, const Tensor& x0_hat) { return noise_loss(x0, x0_hat); }

namespace {

std::size_t per_episode(const Tensor& t) { return t.dim(1) * t.dim(2) * t.dim(3); }

void check_projection(const Tensor& x0, const Tensor& x0_hat, const RandomProjection& proj) {
    require_same_shape(x0, x0_hat, "recon_loss_2");
    if (proj.in != per_episode(x0))
        throw ShapeError("projection expects " + std::to_string(proj.in) + " inputs, episode has " +
                         std::to_string(per_episode(x0)));
}

}  // namespace

double recon_loss_2(const Tensor& x0, const Tensor& x0_hat, const RandomProjection& proj) {
    check_projection(x0, x0_hat, proj);
    const std::size_t B = x0.dim(0);
    std::vector<double> a(x0.values().begin(), x0.values().end());
    std::vector<double> b(x0_hat.values().begin(), x0_hat.values().end());
    const auto ya = proj.apply(a, B), yb = proj.apply(b, B);
    double s = 0.0;
    for (std::size_t i = 0; i < ya.size(); ++i) s += (ya[i] - yb[i]) * (ya[i] - yb[i]);
    return ya.empty() ? 0.0 : s / static_cast<double>(ya.size());
}

Tensor recon_loss_2_grad(const Tensor& x0, const Tensor& x0_hat, const RandomProjection& proj) {
    check_projection(x0, x0_hat, proj);
    const auto B = static_cast<Eigen::Index>(x0.dim(0));
    const auto in = static_cast<Eigen::Index>(proj.in), hid = static_cast<Eigen::Index>(proj.hidden),
               out = static_cast<Eigen::Index>(proj.out);
    ConstMatMap X(x0.data(), B, in), Xh(x0_hat.data(), B, in);
    ConstMatMap U1(proj.u1.data(), in, hid), U2(proj.u2.data(), hid, out);
    const RowMat ah = Xh * U1;
    const RowMat diff = (X * U1).cwiseMax(0.0) * U2 - ah.cwiseMax(0.0) * U2;
    // d/dyh of mean (y - yh)^2
    const RowMat dy = diff * (-2.0 / static_cast<double>(B * out));
    RowMat dh = dy * U2.transpose();
    for (Eigen::Index i = 0; i < dh.size(); ++i)
        if (!(ah.data()[i] > 0.0)) dh.data()[i] = 0.0;
    Tensor g(x0.shape());
    MatMap(g.data(), B, in) = dh * U1.transpose();
    return g;
}

StepNoise draw_step_noise(std::size_t batch, const Tensor::Shape& shape, const NoiseSchedule& schedule,
                          const TrainConfig& config, Rng& rng) {
    StepNoise n;
    n.steps.resize(batch);
    for (auto& t : n.steps) t = static_cast<std::size_t>(rng.uniform_int(1, schedule.steps()));
    n.eps = standard_normal(shape, rng);
    n.proj = RandomProjection::sample(shape[1] * shape[2] * shape[3], config.proj_hidden, config.proj_out, rng);
    return n;
}

LossRecord loss_and_grad(const Denoiser& model, const DenoiserParameters& params, const NoiseSchedule& schedule,
                         const TrainConfig& config, const Tensor& x0, const StepNoise& noise,
                         DenoiserParameters* grads) {
    const Tensor xt = q_sample(x0, noise.steps, noise.eps, schedule);
    auto cache = grads ? model.make_cache() : Denoiser::CachePtr{};
    const Tensor eps_hat = model.forward(params, xt, noise.steps, cache.get());
    const Tensor x0_hat = one_step_reconstruct(xt, noise.steps, eps_hat, schedule);

    LossRecord r;
    r.noise = noise_loss(noise.eps, eps_hat);
    r.recon1 = recon_loss_1(x0, x0_hat);
    r.recon2 = recon_loss_2(x0, x0_hat, noise.proj);
    r.total = config.w_noise * r.noise + config.w_recon1 * r.recon1 + config.w_recon2 * r.recon2;
    if (!grads) return r;

    const double n = static_cast<double>(x0.size());
    const Tensor g2 = recon_loss_2_grad(x0, x0_hat, noise.proj);
    Tensor d_eps(x0.shape());
    const std::size_t per = per_episode(x0);
    for (std::size_t b = 0; b < x0.dim(0); ++b) {
        const double abar = schedule.alpha_bar(noise.steps[b]);
        const double chain = -std::sqrt(1.0 - abar) / std::sqrt(abar);
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double d_x0hat = config.w_recon1 * 2.0 * (x0_hat[i] - x0[i]) / n + config.w_recon2 * g2[i];
            d_eps[i] = config.w_noise * 2.0 * (eps_hat[i] - noise.eps[i]) / n + chain * d_x0hat;
        }
    }
    model.backward(params, *cache, d_eps, *grads);
    return r;
}

Adam::Adam(const DenoiserParameters& like, const TrainConfig& config)
    : lr_(config.learning_rate), b1_(config.adam_beta1), b2_(config.adam_beta2), eps_(config.adam_eps) {
    for (const auto& a : like.arrays) {
        m_.emplace_back(a.values.size(), 0.0);
        v_.emplace_back(a.values.size(), 0.0);
    }
}

void Adam::step(DenoiserParameters& params, const DenoiserParameters& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.arrays.size(); ++k) {
        auto& p = params.arrays[k].values;
        const auto& g = grads.arrays[k].values;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

namespace {

Tensor gather(const Tensor& data, const std::vector<std::size_t>& rows) {
    const std::size_t per = per_episode(data);
    Tensor out({rows.size(), data.dim(1), data.dim(2), data.dim(3)});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(data.data() + rows[i] * per, per, out.data() + i * per);
    return out;
}

}  // namespace

LossReport train(const EpisodeBatch& data, const Denoiser& model, DenoiserParameters& params,
                 const NoiseSchedule& schedule, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (data.batch() == 0) throw ParameterError("training set is empty");
    if (!(params.config == model.config())) throw ParameterError("parameters do not match the model config");
    if (data.length() != model.config().lengths[0] || data.width() != model.config().input_width)
        throw ShapeError("training data " + shape_string(data.data.shape()) + " does not match the denoiser config");

    Rng rng(config.seed);
    Adam adam(params, config);
    LossReport report;
    const std::size_t P = data.batch();
    const std::size_t interval = std::max<std::size_t>(1, config.epochs / 10);
    std::vector<std::size_t> order(P);
    std::size_t iteration = 0;

    auto save = [&](const std::string& file, std::size_t epoch) {
        if (!options.checkpoint_dir) return;
        auto extra = options.checkpoint_extra;
        extra["epoch"] = epoch;
        extra["iteration"] = iteration;
        save_checkpoint(*options.checkpoint_dir / file, params, extra);
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < P; start += config.batch_size) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                                order.begin() + static_cast<long>(std::min(P, start + config.batch_size)));
            const Tensor x0 = gather(data.data, rows);
            const StepNoise noise = draw_step_noise(rows.size(), x0.shape(), schedule, config, rng);
            DenoiserParameters grads = params.zeros_like();
            LossRecord r = loss_and_grad(model, params, schedule, config, x0, noise, &grads);
            r.iteration = ++iteration;
            if (!std::isfinite(r.total) || !grads.all_finite()) {
                save("diagnostic.bin", epoch);
                throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
            }
            adam.step(params, grads);
            report.records.push_back(r);
            if (options.on_iteration) options.on_iteration(r, epoch);
        }
        if ((epoch + 1) % interval == 0 && epoch + 1 < config.epochs)
            save("checkpoint_epoch" + std::to_string(epoch + 1) + ".bin", epoch + 1);
    }
    save("final.bin", config.epochs);
    return report;
}

EpisodeBatch generate(const Denoiser& model, const DenoiserParameters& params, const NoiseSchedule& schedule,
                      const DatasetSchema& schema, std::size_t count, std::uint64_t seed, std::size_t chunk) {
    const std::size_t L = model.config().lengths[0], N = model.config().input_width;
    if (schema.width() != N || schema.max_length != L) throw ShapeError("schema does not match the denoiser config");
    if (chunk == 0) throw ParameterError("chunk size must be positive");
    EpisodeBatch out;
    out.schema = schema;
    out.data = Tensor({count, 1, L, N});
    const std::size_t per = L * N;
    for (std::size_t c = 0, start = 0; start < count; ++c, start += chunk) {
        const std::size_t n = std::min(chunk, count - start);
        const NoisePredictor predictor = [&](const Tensor& x, std::size_t t) {
            const std::vector<std::size_t> steps(x.dim(0), t);
            return model.forward(params, x, steps);
        };
        const Tensor x = sample(predictor, schedule, {n, 1, L, N}, Rng::mix(seed ^ Rng::mix(c)));
        std::copy_n(x.data(), n * per, out.data.data() + start * per);
    }
    out.lengths = infer_lengths(out.data, schema);
    out.patient_ids.resize(count);
    for (std::size_t p = 0; p < count; ++p) out.patient_ids[p] = "syn_" + std::to_string(p);
    return out;
}

}  // namespace mixdiff
