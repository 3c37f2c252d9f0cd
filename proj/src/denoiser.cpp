#include "mixdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "mixdiff/error.hpp"
#include "mixdiff/io.hpp"

namespace mixdiff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

// ---------------------------------------------------------------------------
// Config

std::size_t DenoiserConfig::stride(std::size_t level) const {
    return (lengths.at(level) + lengths.at(level + 1) - 1) / lengths.at(level + 1);
}

void DenoiserConfig::validate() const {
    if (input_width == 0) throw ParameterError("denoiser input width must be positive");
    if (latent_width == 0) throw ParameterError("latent width must be positive");
    if (channels[0] != 1) throw ParameterError("level-1 channel count must be 1");
    for (auto c : channels)
        if (c == 0) throw ParameterError("channel counts must be positive");
    if (bottleneck_channels == 0) throw ParameterError("bottleneck channels must be positive");
    if (!(lengths[0] > lengths[1] && lengths[1] > lengths[2] && lengths[2] > 0))
        throw ParameterError("level lengths must be strictly decreasing and positive");
    for (std::size_t i = 0; i < 2; ++i) {
        if (stride(i) * (lengths[i + 1] - 1) >= lengths[i])
            throw ParameterError("length ladder " + std::to_string(lengths[i]) + " -> " +
                                 std::to_string(lengths[i + 1]) + " leaves an output with no input");
    }
    if (embed_dim == 0 || embed_dim % 2 != 0) throw ParameterError("embedding dimension must be even");
    if (kernel == 0 || kernel % 2 == 0) throw ParameterError("block kernel must be odd");
}

nlohmann::json DenoiserConfig::to_json() const {
    return {{"input_width", input_width},
            {"latent_width", latent_width},
            {"channels", channels},
            {"lengths", lengths},
            {"bottleneck_channels", bottleneck_channels},
            {"blocks_per_level", blocks_per_level},
            {"embed_dim", embed_dim},
            {"kernel", kernel}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.input_width = j.value("input_width", c.input_width);
    c.latent_width = j.value("latent_width", c.latent_width);
    if (j.contains("channels")) c.channels = j.at("channels").get<std::array<std::size_t, 3>>();
    if (j.contains("lengths")) c.lengths = j.at("lengths").get<std::array<std::size_t, 3>>();
    c.bottleneck_channels = j.value("bottleneck_channels", c.bottleneck_channels);
    c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.kernel = j.value("kernel", c.kernel);
    return c;
}

std::array<std::size_t, 3> DenoiserConfig::default_lengths(std::size_t L) {
    if (L == 48) return {48, 12, 3};
    if (L == 100) return {100, 10, 3};
    if (L == 20) return {20, 5, 3};
    const std::size_t l2 = std::max<std::size_t>((L + 3) / 4, 2);
    const std::size_t l3 = std::max<std::size_t>((l2 + 3) / 4, 1);
    return {L, l2, std::min(l3, l2 - 1)};
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t DenoiserParameters::count() const noexcept {
    std::size_t n = 0;
    for (const auto& a : arrays) n += a.values.size();
    return n;
}

const ParamArray& DenoiserParameters::get(std::string_view name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw ParameterError("no parameter array '" + std::string(name) + "'");
}

ParamArray& DenoiserParameters::get(std::string_view name) {
    for (auto& a : arrays)
        if (a.name == name) return a;
    throw ParameterError("no parameter array '" + std::string(name) + "'");
}

DenoiserParameters DenoiserParameters::zeros_like() const {
    DenoiserParameters z;
    z.config = config;
    z.arrays.reserve(arrays.size());
    for (const auto& a : arrays) z.arrays.push_back({a.name, a.shape, std::vector<double>(a.values.size(), 0.0)});
    return z;
}

bool DenoiserParameters::all_finite() const noexcept {
    for (const auto& a : arrays)
        for (double v : a.values)
            if (!std::isfinite(v)) return false;
    return true;
}

std::vector<double> sinusoidal_embed(std::size_t t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ParameterError("embedding dimension must be even");
    if (t < 1) throw StepError("noise level must be >= 1");
    std::vector<double> e(dim);
    const double half = static_cast<double>(dim / 2);
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        e[2 * i] = std::sin(static_cast<double>(t) * freq);
        e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Layers. Activations are (batch, length, channel, width).

namespace {

struct Linear {
    std::size_t w = 0, b = 0, in = 0, out = 0;
};
struct Conv {
    std::size_t w = 0, b = 0, cin = 0, cout = 0, kernel = 1, stride = 1, pad = 0;
};
struct Norm {
    std::size_t g = 0, b = 0;
};
struct Block {
    Norm ln;
    Conv c1, c2;
    Linear mix;
};
struct Resample {
    Conv conv;
    Linear nin;
    std::size_t stride = 1, out_len = 0;
};

Tensor::Shape act(std::size_t B, std::size_t L, std::size_t C, std::size_t W) { return {B, L, C, W}; }

bool finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

void check_finite(const Tensor& t, const std::string& stage) {
    if (!finite(t)) throw NumericError("non-finite activation after " + stage);
}

Tensor linear_fwd(const Tensor& x, const Linear& l, const std::vector<ParamArray>& p) {
    const auto& s = x.shape();
    const std::size_t rows = s[0] * s[1] * s[2];
    Tensor y({s[0], s[1], s[2], l.out});
    ConstMatMap X(x.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(l.in));
    ConstMatMap Wm(p[l.w].values.data(), static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(l.out));
    ConstVecMap bias(p[l.b].values.data(), static_cast<Eigen::Index>(l.out));
    MatMap Y(y.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(l.out));
    Y.noalias() = X * Wm;
    Y.rowwise() += bias;
    return y;
}

Tensor linear_bwd(const Tensor& x, const Tensor& dy, const Linear& l, const std::vector<ParamArray>& p,
                  std::vector<ParamArray>& g, bool need_dx = true) {
    const auto& s = x.shape();
    const auto rows = static_cast<Eigen::Index>(s[0] * s[1] * s[2]);
    const auto in = static_cast<Eigen::Index>(l.in), out = static_cast<Eigen::Index>(l.out);
    ConstMatMap X(x.data(), rows, in);
    ConstMatMap dY(dy.data(), rows, out);
    MatMap dW(g[l.w].values.data(), in, out);
    VecMap db(g[l.b].values.data(), out);
    dW.noalias() += X.transpose() * dY;
    // plain loops: Eigen's vectorised reductions depend on buffer alignment
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index o = 0; o < out; ++o) db(o) += dY(r, o);
    Tensor dx;
    if (need_dx) {
        dx = Tensor(s);
        ConstMatMap Wm(p[l.w].values.data(), in, out);
        MatMap dX(dx.data(), rows, in);
        dX.noalias() = dY * Wm.transpose();
    }
    return dx;
}

// Convolutions run one GEMM per kernel tap on a channel-major copy of the
// shifted input: row ci, column block (b, l) holds x[b][l * stride + k - pad][ci].
RowMat gather_tap(const Tensor& x, const Conv& c, std::size_t out_len, std::size_t k) {
    const std::size_t B = x.dim(0), Lin = x.dim(1), W = x.dim(3);
    RowMat g = RowMat::Zero(static_cast<Eigen::Index>(c.cin), static_cast<Eigen::Index>(B * out_len * W));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < out_len; ++l) {
            const long idx = static_cast<long>(l * c.stride + k) - static_cast<long>(c.pad);
            if (idx < 0 || idx >= static_cast<long>(Lin)) continue;
            const double* src = x.slice(b, static_cast<std::size_t>(idx));
            const std::size_t col = (b * out_len + l) * W;
            for (std::size_t ci = 0; ci < c.cin; ++ci)
                std::copy(src + ci * W, src + (ci + 1) * W, g.row(static_cast<Eigen::Index>(ci)).data() + col);
        }
    return g;
}

Tensor conv_fwd(const Tensor& x, const Conv& c, std::size_t out_len, const std::vector<ParamArray>& p) {
    const std::size_t B = x.dim(0), W = x.dim(3);
    const double* wk = p[c.w].values.data();
    const auto cin = static_cast<Eigen::Index>(c.cin), cout = static_cast<Eigen::Index>(c.cout);
    RowMat ycm(cout, static_cast<Eigen::Index>(B * out_len * W));
    for (Eigen::Index co = 0; co < cout; ++co) ycm.row(co).setConstant(p[c.b].values[static_cast<std::size_t>(co)]);
    for (std::size_t k = 0; k < c.kernel; ++k) {
        ConstMatMap K(wk + k * c.cout * c.cin, cout, cin);
        ycm.noalias() += K * gather_tap(x, c, out_len, k);
    }
    Tensor y(act(B, out_len, c.cout, W));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < out_len; ++l) {
            double* dst = y.slice(b, l);
            const std::size_t col = (b * out_len + l) * W;
            for (std::size_t co = 0; co < c.cout; ++co)
                std::copy_n(ycm.row(static_cast<Eigen::Index>(co)).data() + col, W, dst + co * W);
        }
    return y;
}

Tensor conv_bwd(const Tensor& x, const Tensor& dy, const Conv& c, const std::vector<ParamArray>& p,
                std::vector<ParamArray>& g) {
    const std::size_t B = x.dim(0), Lin = x.dim(1), W = x.dim(3), out_len = dy.dim(1);
    const double* wk = p[c.w].values.data();
    double* dwk = g[c.w].values.data();
    const auto cin = static_cast<Eigen::Index>(c.cin), cout = static_cast<Eigen::Index>(c.cout);
    RowMat dycm(cout, static_cast<Eigen::Index>(B * out_len * W));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < out_len; ++l) {
            const double* src = dy.slice(b, l);
            const std::size_t col = (b * out_len + l) * W;
            for (std::size_t co = 0; co < c.cout; ++co)
                std::copy_n(src + co * W, W, dycm.row(static_cast<Eigen::Index>(co)).data() + col);
        }
    VecMap db(g[c.b].values.data(), cout);
    for (Eigen::Index co = 0; co < cout; ++co) {
        const double* row = dycm.row(co).data();
        double acc = 0.0;
        for (Eigen::Index j = 0; j < dycm.cols(); ++j) acc += row[j];
        db(co) += acc;
    }

    Tensor dx(x.shape());
    for (std::size_t k = 0; k < c.kernel; ++k) {
        ConstMatMap K(wk + k * c.cout * c.cin, cout, cin);
        MatMap dK(dwk + k * c.cout * c.cin, cout, cin);
        dK.noalias() += dycm * gather_tap(x, c, out_len, k).transpose();
        const RowMat dxk = K.transpose() * dycm;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < out_len; ++l) {
                const long idx = static_cast<long>(l * c.stride + k) - static_cast<long>(c.pad);
                if (idx < 0 || idx >= static_cast<long>(Lin)) continue;
                double* dst = dx.slice(b, static_cast<std::size_t>(idx));
                const std::size_t col = (b * out_len + l) * W;
                for (std::size_t ci = 0; ci < c.cin; ++ci) {
                    const double* src = dxk.row(static_cast<Eigen::Index>(ci)).data() + col;
                    for (std::size_t w = 0; w < W; ++w) dst[ci * W + w] += src[w];
                }
            }
    }
    return dx;
}

constexpr double kNormEps = 1e-5;

struct NormCache {
    Tensor xhat;
    std::vector<double> rstd;
};

Tensor norm_fwd(const Tensor& x, const Norm& n, const std::vector<ParamArray>& p, NormCache* cache) {
    const std::size_t W = x.dim(3), rows = x.size() / W;
    Tensor y(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> rstd(rows);
    const double* gain = p[n.g].values.data();
    const double* shift = p[n.b].values.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * W;
        double mean = 0.0;
        for (std::size_t i = 0; i < W; ++i) mean += xr[i];
        mean /= static_cast<double>(W);
        double var = 0.0;
        for (std::size_t i = 0; i < W; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(W);
        const double rs = 1.0 / std::sqrt(var + kNormEps);
        rstd[r] = rs;
        double* hr = xhat.data() + r * W;
        double* yr = y.data() + r * W;
        for (std::size_t i = 0; i < W; ++i) {
            hr[i] = (xr[i] - mean) * rs;
            yr[i] = hr[i] * gain[i] + shift[i];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Tensor norm_bwd(const NormCache& c, const Tensor& dy, const Norm& n, const std::vector<ParamArray>& p,
                std::vector<ParamArray>& g) {
    const std::size_t W = dy.dim(3), rows = dy.size() / W;
    Tensor dx(dy.shape());
    const double* gain = p[n.g].values.data();
    double* dgain = g[n.g].values.data();
    double* dshift = g[n.b].values.data();
    std::vector<double> dxhat(W);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy.data() + r * W;
        const double* hr = c.xhat.data() + r * W;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < W; ++i) {
            dshift[i] += dyr[i];
            dgain[i] += dyr[i] * hr[i];
            dxhat[i] = dyr[i] * gain[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * hr[i];
        }
        m1 /= static_cast<double>(W);
        m2 /= static_cast<double>(W);
        double* dxr = dx.data() + r * W;
        for (std::size_t i = 0; i < W; ++i) dxr[i] = c.rstd[r] * (dxhat[i] - m1 - hr[i] * m2);
    }
    return dx;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor silu_fwd(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
    return y;
}

Tensor silu_bwd(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        dx[i] = dy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
    return dx;
}

Tensor stretch_fwd(const Tensor& x, std::size_t stride, std::size_t out_len) {
    const std::size_t B = x.dim(0), Lin = x.dim(1), per = x.dim(2) * x.dim(3);
    Tensor y(act(B, out_len, x.dim(2), x.dim(3)));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < out_len; ++l) {
            const std::size_t src = std::min(l / stride, Lin - 1);
            std::copy_n(x.slice(b, src), per, y.slice(b, l));
        }
    return y;
}

Tensor stretch_bwd(const Tensor::Shape& in_shape, const Tensor& dy, std::size_t stride) {
    const std::size_t B = in_shape[0], Lin = in_shape[1], per = in_shape[2] * in_shape[3];
    Tensor dx(in_shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < dy.dim(1); ++l) {
            const std::size_t src = std::min(l / stride, Lin - 1);
            const double* d = dy.slice(b, l);
            double* o = dx.slice(b, src);
            for (std::size_t i = 0; i < per; ++i) o[i] += d[i];
        }
    return dx;
}

Tensor concat_fwd(const Tensor& a, const Tensor& s) {
    const std::size_t B = a.dim(0), L = a.dim(1), W = a.dim(3);
    Tensor y(act(B, L, a.dim(2) + s.dim(2), W));
    const std::size_t pa = a.dim(2) * W, ps = s.dim(2) * W;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
            std::copy_n(a.slice(b, l), pa, y.slice(b, l));
            std::copy_n(s.slice(b, l), ps, y.slice(b, l) + pa);
        }
    return y;
}

void concat_bwd(const Tensor& dy, std::size_t ca, Tensor& da, Tensor& ds) {
    const std::size_t B = dy.dim(0), L = dy.dim(1), W = dy.dim(3), cs = dy.dim(2) - ca;
    da = Tensor(act(B, L, ca, W));
    ds = Tensor(act(B, L, cs, W));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
            std::copy_n(dy.slice(b, l), ca * W, da.slice(b, l));
            std::copy_n(dy.slice(b, l) + ca * W, cs * W, ds.slice(b, l));
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout and caches

struct Denoiser::Layout {
    Linear in_proj, out_proj;
    std::array<Linear, 5> temb;  // level entries: down1, down2, bottleneck, up2, up1
    std::vector<Block> down1_blocks, down2_blocks, mid_blocks, up2_blocks, up1_blocks;
    Resample down1, down2, up2, up1;
    Conv merge2, merge1;
    std::vector<ParamArray> shapes;  // names and shapes, values empty
};

namespace {

struct BlockCache {
    NormCache ln;
    Tensor a, b1, c1, b2, c2;
};
struct ResampleCache {
    Tensor::Shape in_shape{};
    Tensor conv_in, z, s;
};

}  // namespace

struct Denoiser::Cache {
    std::size_t batch = 0;
    Tensor emb;  // B x 1 x 1 x E
    Tensor x;    // input as B x L x 1 x N
    Tensor h_out;  // input to output projection
    std::vector<BlockCache> down1, down2, mid, up2, up1;
    ResampleCache rd1, rd2, ru2, ru1;
    Tensor cat2, cat1;
    std::vector<std::pair<std::string, Tensor::Shape>> stages;
};

Denoiser::Denoiser(DenoiserConfig config) : config_(std::move(config)), layout_(std::make_unique<Layout>()) {
    config_.validate();
    auto& lay = *layout_;
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        lay.shapes.push_back({std::move(name), std::move(shape), {}});
        return lay.shapes.size() - 1;
    };
    const std::size_t N = config_.input_width, W = config_.latent_width, E = config_.embed_dim;
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = add(name + ".w", {in, out});
        l.b = add(name + ".b", {out});
        return l;
    };
    auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
                    std::size_t stride, std::size_t pad) {
        Conv c;
        c.cin = cin;
        c.cout = cout;
        c.kernel = kernel;
        c.stride = stride;
        c.pad = pad;
        c.w = add(name + ".w", {kernel, cout, cin});
        c.b = add(name + ".b", {cout});
        return c;
    };
    const std::size_t K = config_.kernel, P = config_.kernel / 2;
    auto block = [&](const std::string& name, std::size_t C, std::size_t hidden) {
        Block b;
        b.ln.g = add(name + ".ln.g", {W});
        b.ln.b = add(name + ".ln.b", {W});
        b.c1 = conv(name + ".conv1", C, hidden, K, 1, P);
        b.c2 = conv(name + ".conv2", hidden, C, K, 1, P);
        b.mix = linear(name + ".mix", W, W);
        return b;
    };
    const auto& ch = config_.channels;
    const auto& len = config_.lengths;

    lay.in_proj = linear("in_proj", N, W);
    const char* temb_names[5] = {"temb.down1", "temb.down2", "temb.mid", "temb.up2", "temb.up1"};
    for (std::size_t i = 0; i < 5; ++i) lay.temb[i] = linear(temb_names[i], E, W);

    for (std::size_t i = 0; i < config_.blocks_per_level; ++i)
        lay.down1_blocks.push_back(block("down1.block" + std::to_string(i), ch[0], ch[0]));
    const std::size_t s1 = config_.stride(0), s2 = config_.stride(1);
    lay.down1 = {conv("down1.conv", ch[0], ch[1], s1, s1, 0), linear("down1.nin", W, W), s1, len[1]};
    for (std::size_t i = 0; i < config_.blocks_per_level; ++i)
        lay.down2_blocks.push_back(block("down2.block" + std::to_string(i), ch[1], ch[1]));
    lay.down2 = {conv("down2.conv", ch[1], ch[2], s2, s2, 0), linear("down2.nin", W, W), s2, len[2]};

    lay.mid_blocks.push_back(block("mid.block0", ch[2], ch[2]));
    lay.mid_blocks.push_back(block("mid.squeeze", ch[2], config_.bottleneck_channels));
    lay.mid_blocks.push_back(block("mid.block2", ch[2], ch[2]));

    lay.up2 = {conv("up2.conv", ch[2], ch[1], K, 1, P), linear("up2.nin", W, W), s2, len[1]};
    lay.merge2 = conv("up2.merge", 2 * ch[1], ch[1], 1, 1, 0);
    for (std::size_t i = 0; i < config_.blocks_per_level; ++i)
        lay.up2_blocks.push_back(block("up2.block" + std::to_string(i), ch[1], ch[1]));
    lay.up1 = {conv("up1.conv", ch[1], ch[0], K, 1, P), linear("up1.nin", W, W), s1, len[0]};
    lay.merge1 = conv("up1.merge", 2 * ch[0], ch[0], 1, 1, 0);
    for (std::size_t i = 0; i < config_.blocks_per_level; ++i)
        lay.up1_blocks.push_back(block("up1.block" + std::to_string(i), ch[0], ch[0]));

    lay.out_proj = linear("out_proj", W, N);
}

Denoiser::~Denoiser() = default;
Denoiser::Denoiser(Denoiser&&) noexcept = default;
Denoiser& Denoiser::operator=(Denoiser&&) noexcept = default;

Denoiser::CachePtr Denoiser::make_cache() const { return CachePtr(new Cache()); }
void Denoiser::CacheDeleter::operator()(Cache* c) const noexcept { delete c; }

DenoiserParameters Denoiser::init(Rng& rng, bool zero_output) const {
    DenoiserParameters params;
    params.config = config_;
    for (const auto& s : layout_->shapes) {
        ParamArray a{s.name, s.shape, {}};
        std::size_t n = 1;
        for (auto d : s.shape) n *= d;
        a.values.assign(n, 0.0);
        const bool is_weight = s.name.ends_with(".w");
        const bool is_gain = s.name.ends_with(".ln.g");
        if (is_gain) {
            std::fill(a.values.begin(), a.values.end(), 1.0);
        } else if (is_weight && !(zero_output && s.name == "out_proj.w")) {
            // Linear weights are (in, out); conv weights are (kernel, out, in).
            const std::size_t fan_in = s.shape.size() == 2 ? s.shape[0] : s.shape[0] * s.shape[2];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : a.values) v = (2.0 * rng.uniform() - 1.0) * bound;
        }
        params.arrays.push_back(std::move(a));
    }
    return params;
}

std::size_t Denoiser::parameter_count() const {
    std::size_t total = 0;
    for (const auto& s : layout_->shapes) {
        std::size_t n = 1;
        for (auto d : s.shape) n *= d;
        total += n;
    }
    return total;
}

namespace {

Tensor block_fwd(const Tensor& h, const Block& blk, const std::vector<ParamArray>& p, BlockCache* c) {
    NormCache ln;
    Tensor a = norm_fwd(h, blk.ln, p, c ? &ln : nullptr);
    Tensor b1 = conv_fwd(a, blk.c1, a.dim(1), p);
    Tensor c1 = silu_fwd(b1);
    Tensor b2 = conv_fwd(c1, blk.c2, c1.dim(1), p);
    Tensor c2 = silu_fwd(b2);
    Tensor out = linear_fwd(c2, blk.mix, p);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += h[i];
    if (c) {
        c->ln = std::move(ln);
        c->a = std::move(a);
        c->b1 = std::move(b1);
        c->c1 = std::move(c1);
        c->b2 = std::move(b2);
        c->c2 = std::move(c2);
    }
    return out;
}

Tensor block_bwd(const Tensor& dout, const Block& blk, const BlockCache& c, const std::vector<ParamArray>& p,
                 std::vector<ParamArray>& g) {
    Tensor dc2 = linear_bwd(c.c2, dout, blk.mix, p, g);
    Tensor db2 = silu_bwd(c.b2, dc2);
    Tensor dc1 = conv_bwd(c.c1, db2, blk.c2, p, g);
    Tensor db1 = silu_bwd(c.b1, dc1);
    Tensor da = conv_bwd(c.a, db1, blk.c1, p, g);
    Tensor dh = norm_bwd(c.ln, da, blk.ln, p, g);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dout[i];
    return dh;
}

Tensor down_fwd(const Tensor& h, const Resample& r, const std::vector<ParamArray>& p, ResampleCache* c) {
    Tensor z = conv_fwd(h, r.conv, r.out_len, p);
    Tensor s = silu_fwd(z);
    Tensor out = linear_fwd(s, r.nin, p);
    if (c) {
        c->in_shape = h.shape();
        c->conv_in = h;
        c->z = std::move(z);
        c->s = std::move(s);
    }
    return out;
}

Tensor down_bwd(const Tensor& dout, const Resample& r, const ResampleCache& c, const std::vector<ParamArray>& p,
                std::vector<ParamArray>& g) {
    Tensor ds = linear_bwd(c.s, dout, r.nin, p, g);
    Tensor dz = silu_bwd(c.z, ds);
    return conv_bwd(c.conv_in, dz, r.conv, p, g);
}

Tensor up_fwd(const Tensor& h, const Resample& r, const std::vector<ParamArray>& p, ResampleCache* c) {
    Tensor u = stretch_fwd(h, r.stride, r.out_len);
    Tensor z = conv_fwd(u, r.conv, r.out_len, p);
    Tensor s = silu_fwd(z);
    Tensor out = linear_fwd(s, r.nin, p);
    if (c) {
        c->in_shape = h.shape();
        c->conv_in = std::move(u);
        c->z = std::move(z);
        c->s = std::move(s);
    }
    return out;
}

Tensor up_bwd(const Tensor& dout, const Resample& r, const ResampleCache& c, const std::vector<ParamArray>& p,
              std::vector<ParamArray>& g) {
    Tensor ds = linear_bwd(c.s, dout, r.nin, p, g);
    Tensor dz = silu_bwd(c.z, ds);
    Tensor du = conv_bwd(c.conv_in, dz, r.conv, p, g);
    return stretch_bwd(c.in_shape, du, r.stride);
}

void add_embedding(Tensor& h, const Tensor& emb, const Linear& l, const std::vector<ParamArray>& p) {
    const Tensor e = linear_fwd(emb, l, p);  // B x 1 x 1 x W
    const std::size_t B = h.dim(0), W = h.dim(3), per = h.dim(1) * h.dim(2);
    for (std::size_t b = 0; b < B; ++b) {
        const double* eb = e.slice(b, 0);
        double* hb = h.slice(b, 0);
        for (std::size_t r = 0; r < per; ++r)
            for (std::size_t i = 0; i < W; ++i) hb[r * W + i] += eb[i];
    }
}

void embedding_bwd(const Tensor& dh, const Tensor& emb, const Linear& l, const std::vector<ParamArray>& p,
                   std::vector<ParamArray>& g) {
    const std::size_t B = dh.dim(0), W = dh.dim(3), per = dh.dim(1) * dh.dim(2);
    Tensor de({B, 1, 1, W});
    for (std::size_t b = 0; b < B; ++b) {
        const double* d = dh.slice(b, 0);
        double* o = de.slice(b, 0);
        for (std::size_t r = 0; r < per; ++r)
            for (std::size_t i = 0; i < W; ++i) o[i] += d[r * W + i];
    }
    linear_bwd(emb, de, l, p, g, false);
}

Tensor::Shape batch_channel_length_width(const Tensor::Shape& s) { return {s[0], s[2], s[1], s[3]}; }

}  // namespace

Tensor Denoiser::forward(const DenoiserParameters& params, const Tensor& xt, std::span<const std::size_t> steps,
                         Cache* cache) const {
    const auto& cfg = config_;
    const auto& lay = *layout_;
    const auto& p = params.arrays;
    if (p.size() != lay.shapes.size()) throw ShapeError("parameter set does not match denoiser layout");
    if (xt.dim(1) != 1 || xt.dim(2) != cfg.lengths[0] || xt.dim(3) != cfg.input_width)
        throw ShapeError("denoiser input " + shape_string(xt.shape()) + " does not match config (L=" +
                         std::to_string(cfg.lengths[0]) + ", N=" + std::to_string(cfg.input_width) + ")");
    const std::size_t B = xt.dim(0);
    if (steps.size() != B) throw ShapeError("denoiser needs one noise level per batch element");

    Tensor emb({B, 1, 1, cfg.embed_dim});
    for (std::size_t b = 0; b < B; ++b) {
        const auto e = sinusoidal_embed(steps[b], cfg.embed_dim);
        std::copy(e.begin(), e.end(), emb.slice(b, 0));
    }

    Tensor x(act(B, cfg.lengths[0], 1, cfg.input_width));
    std::copy(xt.values().begin(), xt.values().end(), x.values().begin());

    auto record = [&](const char* name, const Tensor& t) {
        if (cache) cache->stages.emplace_back(name, batch_channel_length_width(t.shape()));
    };
    if (cache) {
        cache->stages.clear();
        cache->batch = B;
        cache->down1.assign(lay.down1_blocks.size(), {});
        cache->down2.assign(lay.down2_blocks.size(), {});
        cache->mid.assign(lay.mid_blocks.size(), {});
        cache->up2.assign(lay.up2_blocks.size(), {});
        cache->up1.assign(lay.up1_blocks.size(), {});
    }

    Tensor h = linear_fwd(x, lay.in_proj, p);
    record("projected", h);
    add_embedding(h, emb, lay.temb[0], p);
    for (std::size_t i = 0; i < lay.down1_blocks.size(); ++i)
        h = block_fwd(h, lay.down1_blocks[i], p, cache ? &cache->down1[i] : nullptr);
    check_finite(h, "level-1 down blocks");
    Tensor skip1 = h;

    h = down_fwd(skip1, lay.down1, p, cache ? &cache->rd1 : nullptr);
    record("level2", h);
    add_embedding(h, emb, lay.temb[1], p);
    for (std::size_t i = 0; i < lay.down2_blocks.size(); ++i)
        h = block_fwd(h, lay.down2_blocks[i], p, cache ? &cache->down2[i] : nullptr);
    check_finite(h, "level-2 down blocks");
    Tensor skip2 = h;

    h = down_fwd(skip2, lay.down2, p, cache ? &cache->rd2 : nullptr);
    record("level3", h);
    add_embedding(h, emb, lay.temb[2], p);
    for (std::size_t i = 0; i < lay.mid_blocks.size(); ++i)
        h = block_fwd(h, lay.mid_blocks[i], p, cache ? &cache->mid[i] : nullptr);
    check_finite(h, "bottleneck");

    h = up_fwd(h, lay.up2, p, cache ? &cache->ru2 : nullptr);
    Tensor cat2 = concat_fwd(h, skip2);
    h = conv_fwd(cat2, lay.merge2, cat2.dim(1), p);
    record("up2", h);
    add_embedding(h, emb, lay.temb[3], p);
    for (std::size_t i = 0; i < lay.up2_blocks.size(); ++i)
        h = block_fwd(h, lay.up2_blocks[i], p, cache ? &cache->up2[i] : nullptr);
    check_finite(h, "level-2 up blocks");

    h = up_fwd(h, lay.up1, p, cache ? &cache->ru1 : nullptr);
    Tensor cat1 = concat_fwd(h, skip1);
    h = conv_fwd(cat1, lay.merge1, cat1.dim(1), p);
    record("up1", h);
    add_embedding(h, emb, lay.temb[4], p);
    for (std::size_t i = 0; i < lay.up1_blocks.size(); ++i)
        h = block_fwd(h, lay.up1_blocks[i], p, cache ? &cache->up1[i] : nullptr);
    check_finite(h, "level-1 up blocks");

    Tensor y = linear_fwd(h, lay.out_proj, p);
    check_finite(y, "output projection");
    record("output", y);

    if (cache) {
        cache->emb = std::move(emb);
        cache->x = std::move(x);
        cache->h_out = std::move(h);
        cache->cat2 = std::move(cat2);
        cache->cat1 = std::move(cat1);
    }
    Tensor out(xt.shape());
    std::copy(y.values().begin(), y.values().end(), out.values().begin());
    return out;
}

void Denoiser::backward(const DenoiserParameters& params, const Cache& c, const Tensor& grad_out,
                        DenoiserParameters& grads) const {
    const auto& lay = *layout_;
    const auto& p = params.arrays;
    auto& g = grads.arrays;
    if (c.batch == 0 || c.h_out.empty()) throw UsageError("backward called without a cached forward pass");
    if (g.size() != p.size()) throw ShapeError("gradient set does not match parameters");
    if (grad_out.dim(0) != c.batch || grad_out.size() != c.x.size())
        throw ShapeError("output gradient shape does not match cached forward pass");

    Tensor dy(c.x.shape()[0] == 0 ? Tensor::Shape{} : Tensor::Shape{c.batch, config_.lengths[0], 1, config_.input_width});
    std::copy(grad_out.values().begin(), grad_out.values().end(), dy.values().begin());

    Tensor dh = linear_bwd(c.h_out, dy, lay.out_proj, p, g);
    for (std::size_t i = lay.up1_blocks.size(); i-- > 0;) dh = block_bwd(dh, lay.up1_blocks[i], c.up1[i], p, g);
    embedding_bwd(dh, c.emb, lay.temb[4], p, g);
    Tensor dcat = conv_bwd(c.cat1, dh, lay.merge1, p, g);
    Tensor dup, dskip1;
    concat_bwd(dcat, config_.channels[0], dup, dskip1);
    dh = up_bwd(dup, lay.up1, c.ru1, p, g);

    for (std::size_t i = lay.up2_blocks.size(); i-- > 0;) dh = block_bwd(dh, lay.up2_blocks[i], c.up2[i], p, g);
    embedding_bwd(dh, c.emb, lay.temb[3], p, g);
    dcat = conv_bwd(c.cat2, dh, lay.merge2, p, g);
    Tensor dskip2;
    concat_bwd(dcat, config_.channels[1], dup, dskip2);
    dh = up_bwd(dup, lay.up2, c.ru2, p, g);

    for (std::size_t i = lay.mid_blocks.size(); i-- > 0;) dh = block_bwd(dh, lay.mid_blocks[i], c.mid[i], p, g);
    embedding_bwd(dh, c.emb, lay.temb[2], p, g);
    dh = down_bwd(dh, lay.down2, c.rd2, p, g);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dskip2[i];

    for (std::size_t i = lay.down2_blocks.size(); i-- > 0;)
        dh = block_bwd(dh, lay.down2_blocks[i], c.down2[i], p, g);
    embedding_bwd(dh, c.emb, lay.temb[1], p, g);
    dh = down_bwd(dh, lay.down1, c.rd1, p, g);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dskip1[i];

    for (std::size_t i = lay.down1_blocks.size(); i-- > 0;)
        dh = block_bwd(dh, lay.down1_blocks[i], c.down1[i], p, g);
    embedding_bwd(dh, c.emb, lay.temb[0], p, g);
    linear_bwd(c.x, dh, lay.in_proj, p, g, false);
}

std::vector<std::pair<std::string, Tensor::Shape>> Denoiser::stage_shapes(const Cache& cache) {
    return cache.stages;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'I', 'X', 'D', 'I', 'F', 'F', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::string& out, const T& v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw IoError("truncated checkpoint");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const DenoiserParameters& params, const nlohmann::json& extra) {
    std::string out(kMagic, sizeof kMagic);
    put(out, kCheckpointVersion);
    nlohmann::json header = {{"denoiser", params.config.to_json()}, {"extra", extra}};
    const std::string hs = header.dump();
    put(out, static_cast<std::uint64_t>(hs.size()));
    out += hs;
    put(out, static_cast<std::uint64_t>(params.arrays.size()));
    for (const auto& a : params.arrays) {
        put(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) put(out, static_cast<std::uint64_t>(d));
        put(out, static_cast<std::uint64_t>(a.values.size()));
        out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(double));
    }
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw IoError("not a mixdiff checkpoint");
    std::size_t pos = sizeof kMagic;
    const auto version = take<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto hlen = take<std::uint64_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw IoError("truncated checkpoint header");
    const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    Checkpoint ck;
    ck.params.config = DenoiserConfig::from_json(header.at("denoiser"));
    ck.extra = header.value("extra", nlohmann::json::object());
    const auto count = take<std::uint64_t>(bytes, pos);
    for (std::uint64_t i = 0; i < count; ++i) {
        ParamArray a;
        const auto nlen = take<std::uint32_t>(bytes, pos);
        if (pos + nlen > bytes.size()) throw IoError("truncated checkpoint");
        a.name = std::string(bytes.substr(pos, nlen));
        pos += nlen;
        const auto ndim = take<std::uint32_t>(bytes, pos);
        std::size_t expect = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(static_cast<std::size_t>(take<std::uint64_t>(bytes, pos)));
            expect *= a.shape.back();
        }
        const auto n = take<std::uint64_t>(bytes, pos);
        if (n != expect) throw IoError("array '" + a.name + "' size does not match its shape");
        if (pos + n * sizeof(double) > bytes.size()) throw IoError("truncated checkpoint");
        a.values.resize(n);
        std::memcpy(a.values.data(), bytes.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        ck.params.arrays.push_back(std::move(a));
    }
    // Validate against the layout implied by the stored config.
    Denoiser model(ck.params.config);
    Rng rng(0);
    const auto ref = model.init(rng);
    if (ref.arrays.size() != ck.params.arrays.size()) throw IoError("checkpoint arrays do not match config");
    for (std::size_t i = 0; i < ref.arrays.size(); ++i) {
        if (ref.arrays[i].name != ck.params.arrays[i].name || ref.arrays[i].shape != ck.params.arrays[i].shape)
            throw IoError("checkpoint array '" + ck.params.arrays[i].name + "' does not match config");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserParameters& params,
                     const nlohmann::json& extra) {
    write_file_atomic(path, serialize_checkpoint(params, extra));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace mixdiff
