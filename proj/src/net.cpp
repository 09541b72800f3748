#include "momshoot/net.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "momshoot/errors.hpp"
#include "momshoot/field_io.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::Map;

// ---------------------------------------------------------------- NetConfig

NetConfig NetConfig::defaults_for_rank(int rank) {
    NetConfig c;
    c.rank = rank;
    c.decoders = rank;
    return c;
}

void NetConfig::validate() const {
    if (rank != 2 && rank != 3) throw InvalidArgument("net: rank must be 2 or 3");
    if (patch_size < 1 || patch_size % 2 == 0) throw InvalidArgument("net: patch size must be odd");
    if (encoder_features.empty()) throw InvalidArgument("net: need at least one encoder block");
    for (int f : encoder_features)
        if (f < 1) throw InvalidArgument("net: feature counts must be >= 1");
    if (convs_per_block < 1) throw InvalidArgument("net: convs_per_block must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("net: kernel must be odd");
    if (pool < 2) throw InvalidArgument("net: pool must be >= 2");
    if (decoders != rank) throw InvalidArgument("net: one decoder per spatial dimension is required");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("net: dropout_p must be in [0,1)");
    int e = patch_size;
    for (std::size_t b = 0; b < encoder_features.size(); ++b) {
        e /= pool;
        if (e < 1) throw InvalidArgument("net: patch too small for the number of pooling stages");
    }
}

std::vector<int> NetConfig::block_extents() const {
    std::vector<int> e{patch_size};
    for (std::size_t b = 0; b < encoder_features.size(); ++b) e.push_back(e.back() / pool);
    return e;
}

std::size_t NetConfig::patch_volume() const {
    std::size_t v = 1;
    for (int a = 0; a < rank; ++a) v *= static_cast<std::size_t>(patch_size);
    return v;
}

std::string NetConfig::serialize() const {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, dropout_p);
    std::ostringstream ss;
    ss << "rank=" << rank << " patch=" << patch_size << " features=" << join_ints(encoder_features)
       << " convs_per_block=" << convs_per_block << " kernel=" << kernel << " pool=" << pool
       << " decoders=" << decoders << " dropout_p=" << std::string(buf, r.ptr);
    return ss.str();
}

NetConfig NetConfig::parse(const std::string &line) {
    const HeaderTokens kv = parse_header_tokens("NETCONFIG v1 " + line, "NETCONFIG");
    auto one = [&](const char *key) { return parse_ints(header_value(kv, key)).at(0); };
    NetConfig c;
    c.rank = one("rank");
    c.patch_size = one("patch");
    c.encoder_features = parse_ints(header_value(kv, "features"));
    c.convs_per_block = one("convs_per_block");
    c.kernel = one("kernel");
    c.pool = one("pool");
    c.decoders = one("decoders");
    const std::string &p = header_value(kv, "dropout_p");
    auto r = std::from_chars(p.data(), p.data() + p.size(), c.dropout_p);
    if (r.ec != std::errc() || r.ptr != p.data() + p.size()) throw InvalidArgument("net: bad dropout_p '" + p + "'");
    if (kv.size() != 8) throw InvalidArgument("net: unexpected keys in config line");
    c.validate();
    return c;
}

// ---------------------------------------------------------------- primitives

namespace nn {

Tensor::Tensor(int channels_, std::array<int, 3> dims_, double fill)
    : channels(channels_), dims(dims_), data(std::size_t(channels_) * dims_[0] * dims_[1] * dims_[2], fill) {}

ConvLayer::ConvLayer(int rank_, int kernel_, int in_, int out_, bool activation_)
    : rank(rank_), kernel(kernel_), in(in_), out(out_), activation(activation_) {
    weight.assign(std::size_t(out) * in * kernel_volume(), 0.0);
    bias.assign(out, 0.0);
    if (activation) slope.assign(out, 0.0);
}

std::size_t ConvLayer::kernel_volume() const noexcept {
    return rank == 3 ? std::size_t(kernel) * kernel * kernel : std::size_t(kernel) * kernel;
}

namespace {

// col rows enumerate (channel, kz, ky, kx); columns enumerate output nodes.
void im2col(const Tensor &x, int rank, int k, std::vector<double> &col) {
    const int kd = rank == 3 ? k : 1, r = k / 2, rd = kd / 2;
    const auto [D, H, W] = x.dims;
    const std::size_t S = x.spatial();
    col.assign(std::size_t(x.channels) * kd * k * k * S, 0.0);
    std::size_t row = 0;
    for (int c = 0; c < x.channels; ++c)
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx, ++row) {
                    double *dst = col.data() + row * S;
                    for (int z = 0; z < D; ++z) {
                        const int sz = z + dz - rd;
                        if (sz < 0 || sz >= D) continue;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + dy - r;
                            if (sy < 0 || sy >= H) continue;
                            const int x0 = std::max(0, r - dx), x1 = std::min(W, W + r - dx);
                            const double *src = &x.data[c * S + (std::size_t(sz) * H + sy) * W];
                            double *out = dst + (std::size_t(z) * H + y) * W;
                            for (int xx = x0; xx < x1; ++xx) out[xx] = src[xx + dx - r];
                        }
                    }
                }
}

void col2im(const std::vector<double> &col, int rank, int k, Tensor &dx) {
    const int kd = rank == 3 ? k : 1, r = k / 2, rd = kd / 2;
    const auto [D, H, W] = dx.dims;
    const std::size_t S = dx.spatial();
    std::size_t row = 0;
    for (int c = 0; c < dx.channels; ++c)
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < k; ++dy)
                for (int ddx = 0; ddx < k; ++ddx, ++row) {
                    const double *src = col.data() + row * S;
                    for (int z = 0; z < D; ++z) {
                        const int sz = z + dz - rd;
                        if (sz < 0 || sz >= D) continue;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + dy - r;
                            if (sy < 0 || sy >= H) continue;
                            const int x0 = std::max(0, r - ddx), x1 = std::min(W, W + r - ddx);
                            double *dst = &dx.data[c * S + (std::size_t(sz) * H + sy) * W];
                            const double *in = src + (std::size_t(z) * H + y) * W;
                            for (int xx = x0; xx < x1; ++xx) dst[xx + ddx - r] += in[xx];
                        }
                    }
                }
}

Tensor conv_from_col(const std::vector<double> &col, const ConvLayer &layer, std::array<int, 3> dims) {
    Tensor y(layer.out, dims);
    const auto S = static_cast<Eigen::Index>(y.spatial());
    const auto K = static_cast<Eigen::Index>(layer.in * layer.kernel_volume());
    Map<const RowMat> Wm(layer.weight.data(), layer.out, K);
    Map<const RowMat> C(col.data(), K, S);
    Map<RowMat> Y(y.data.data(), layer.out, S);
    Y.noalias() = Wm * C;
    Y.colwise() += Map<const Eigen::VectorXd>(layer.bias.data(), layer.out);
    return y;
}

void check_conv_shapes(const Tensor &x, const ConvLayer &layer) {
    if (x.channels != layer.in) throw InvalidArgument("conv: input channel count does not match the layer");
    if (layer.weight.size() != std::size_t(layer.out) * layer.in * layer.kernel_volume() ||
        layer.bias.size() != std::size_t(layer.out))
        throw InvalidArgument("conv: layer parameter sizes are inconsistent");
    if (layer.rank == 2 && x.dims[0] != 1) throw InvalidArgument("conv: 2D layer applied to a 3D tensor");
}

} // namespace

Tensor conv(const Tensor &x, const ConvLayer &layer) {
    check_conv_shapes(x, layer);
    std::vector<double> col;
    im2col(x, layer.rank, layer.kernel, col);
    return conv_from_col(col, layer, x.dims);
}

Tensor prelu(const Tensor &x, std::span<const double> slope) {
    if (slope.size() != std::size_t(x.channels)) throw InvalidArgument("prelu: one slope per channel required");
    Tensor y = x;
    for (int c = 0; c < x.channels; ++c)
        for (double &v : y.channel(c))
            if (!(v > 0.0)) v *= slope[c];
    return y;
}

Pooled maxpool_with_indices(const Tensor &x, int pool, int rank) {
    if (pool < 1) throw InvalidArgument("maxpool: pool must be >= 1");
    const int pd = rank == 3 ? pool : 1;
    const std::array<int, 3> od{x.dims[0] / pd, x.dims[1] / pool, x.dims[2] / pool};
    if (od[0] < 1 || od[1] < 1 || od[2] < 1) throw InvalidArgument("maxpool: input smaller than the window");
    Pooled p{Tensor(x.channels, od), std::vector<std::size_t>(std::size_t(x.channels) * od[0] * od[1] * od[2]),
             x.dims};
    const int H = x.dims[1], W = x.dims[2];
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c)
        for (int z = 0; z < od[0]; ++z)
            for (int y = 0; y < od[1]; ++y)
                for (int xx = 0; xx < od[2]; ++xx, ++o) {
                    std::size_t best = (std::size_t(z * pd) * H + y * pool) * W + xx * pool;
                    double bv = x.data[c * x.spatial() + best];
                    for (int a = 0; a < pd; ++a)
                        for (int b = 0; b < pool; ++b)
                            for (int e = 0; e < pool; ++e) {
                                const std::size_t s = (std::size_t(z * pd + a) * H + y * pool + b) * W + xx * pool + e;
                                const double v = x.data[c * x.spatial() + s];
                                if (v > bv) {
                                    bv = v;
                                    best = s;
                                }
                            }
                    p.pooled.data[o] = bv;
                    p.indices[o] = best;
                }
    return p;
}

Tensor max_unpool(const Tensor &pooled, std::span<const std::size_t> indices, std::array<int, 3> output_dims) {
    if (indices.size() != pooled.data.size()) throw InvalidArgument("unpool: index count does not match values");
    Tensor y(pooled.channels, output_dims);
    const std::size_t ps = pooled.spatial(), ys = y.spatial();
    for (int c = 0; c < pooled.channels; ++c)
        for (std::size_t i = 0; i < ps; ++i) {
            const std::size_t idx = indices[c * ps + i];
            if (idx >= ys) throw InvalidArgument("unpool: index out of range");
            y.data[c * ys + idx] = pooled.data[c * ps + i];
        }
    return y;
}

} // namespace nn

// ---------------------------------------------------------------- weights

using nn::ConvLayer;
using nn::Tensor;

NetworkWeights NetworkWeights::zeros(const NetConfig &config) {
    config.validate();
    NetworkWeights w{config, {}, {}};
    const auto &f = config.encoder_features;
    const int nb = static_cast<int>(f.size()), cpb = config.convs_per_block;
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < cpb; ++c)
            w.encoder.emplace_back(config.rank, config.kernel, c == 0 ? (b == 0 ? 2 : f[b - 1]) : f[b], f[b], true);
    for (int d = 0; d < config.decoders; ++d) {
        std::vector<ConvLayer> dec;
        for (int b = nb - 1; b >= 0; --b)
            for (int c = 0; c < cpb; ++c) {
                const bool last_in_block = c == cpb - 1;
                const int out = last_in_block ? (b == 0 ? 1 : f[b - 1]) : f[b];
                dec.emplace_back(config.rank, config.kernel, f[b], out, !(b == 0 && last_in_block));
            }
        w.decoders.push_back(std::move(dec));
    }
    return w;
}

NetworkWeights NetworkWeights::initialize(const NetConfig &config, std::uint64_t seed) {
    NetworkWeights w = zeros(config);
    std::mt19937_64 rng(seed);
    auto init = [&](ConvLayer &l) {
        const double s = 1.0 / std::sqrt(double(l.in * l.kernel_volume()));
        std::uniform_real_distribution<double> u(-s, s);
        for (double &v : l.weight) v = u(rng);
        std::fill(l.slope.begin(), l.slope.end(), 0.25);
    };
    for (auto &l : w.encoder) init(l);
    for (auto &dec : w.decoders)
        for (auto &l : dec) init(l);
    return w;
}

void NetworkWeights::for_each_tensor(const std::function<void(std::span<double>)> &f) {
    auto visit = [&](ConvLayer &l) {
        f(l.weight);
        f(l.bias);
        if (l.activation) f(l.slope);
    };
    for (auto &l : encoder) visit(l);
    for (auto &dec : decoders)
        for (auto &l : dec) visit(l);
}

void NetworkWeights::for_each_tensor(const std::function<void(std::span<const double>)> &f) const {
    const_cast<NetworkWeights *>(this)->for_each_tensor([&](std::span<double> s) { f(s); });
}

std::size_t NetworkWeights::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::span<const double> s) { n += s.size(); });
    return n;
}

bool NetworkWeights::all_finite() const {
    bool ok = true;
    for_each_tensor([&](std::span<const double> s) {
        for (double v : s) ok = ok && std::isfinite(v);
    });
    return ok;
}

void write_weights(std::ostream &os, const NetworkWeights &w) {
    os << "MOMSHOOT-NET v1 " << w.config.serialize() << '\n';
    w.for_each_tensor([&](std::span<const double> s) { write_f32(os, s); });
    if (!os) throw Error("failed writing network weights");
}

void write_weights(const std::string &path, const NetworkWeights &w) {
    auto os = open_output(path);
    write_weights(os, w);
}

NetworkWeights read_weights(std::istream &is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("empty weight file");
    const std::string magic = "MOMSHOOT-NET v1 ";
    if (line.rfind(magic, 0) != 0) throw InvalidArgument("not a MOMSHOOT-NET v1 file");
    NetworkWeights w = NetworkWeights::zeros(NetConfig::parse(line.substr(magic.size())));
    w.for_each_tensor([&](std::span<double> s) { read_f32(is, s); });
    if (!w.all_finite()) throw InvalidArgument("weight file contains non-finite values");
    return w;
}

NetworkWeights read_weights(const std::string &path) {
    auto is = open_input(path);
    return read_weights(is);
}

// ---------------------------------------------------------------- forward / backward

namespace {

class DropoutStream {
public:
    explicit DropoutStream(std::uint64_t seed) : state_(seed) {}
    double uniform() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return static_cast<double>(z >> 11) * 0x1p-53;
    }

private:
    std::uint64_t state_;
};

struct ConvTrace {
    std::vector<double> col;
    std::array<int, 3> in_dims;
    std::vector<double> z;    // pre-activation
    std::vector<double> mask; // dropout multipliers, empty when off
};

struct Trace {
    std::vector<ConvTrace> encoder;
    std::vector<nn::Pooled> pools;
    std::vector<std::vector<ConvTrace>> decoders;
};

Tensor conv_block(const Tensor &x, const ConvLayer &layer, double p, DropoutStream *rng, ConvTrace *trace) {
    std::vector<double> col;
    nn::im2col(x, layer.rank, layer.kernel, col);
    Tensor y = nn::conv_from_col(col, layer, x.dims);
    if (trace) {
        trace->in_dims = x.dims;
        trace->col = std::move(col);
        if (layer.activation) trace->z = y.data;
    }
    if (!layer.activation) return y;
    const std::size_t S = y.spatial();
    for (int c = 0; c < y.channels; ++c) {
        const double a = layer.slope[c];
        for (std::size_t i = 0; i < S; ++i) {
            double &v = y.data[c * S + i];
            if (!(v > 0.0)) v *= a;
        }
    }
    if (rng && p > 0.0) {
        const double keep = 1.0 / (1.0 - p);
        std::vector<double> mask(y.data.size());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = rng->uniform() < p ? 0.0 : keep;
            y.data[i] *= mask[i];
        }
        if (trace) trace->mask = std::move(mask);
    }
    return y;
}

std::vector<double> run_forward(const NetworkWeights &w, std::span<const double> input, DropoutMode dropout,
                                Trace *trace) {
    const NetConfig &cfg = w.config;
    const int s = cfg.patch_size;
    const std::array<int, 3> dims{cfg.rank == 3 ? s : 1, s, s};
    const std::size_t vol = cfg.patch_volume();
    if (input.size() != 2 * vol) throw InvalidArgument("forward: input must hold 2 layers of patch_size^rank values");
    Tensor x(2, dims);
    std::copy(input.begin(), input.end(), x.data.begin());

    DropoutStream stream(dropout.seed);
    DropoutStream *rng = dropout.sampled ? &stream : nullptr;
    const double p = cfg.dropout_p;
    const int nb = static_cast<int>(cfg.encoder_features.size()), cpb = cfg.convs_per_block;
    if (trace) {
        trace->encoder.resize(w.encoder.size());
        trace->decoders.assign(w.decoders.size(), std::vector<ConvTrace>(w.decoders[0].size()));
        trace->pools.clear();
    }
    std::vector<nn::Pooled> pools;
    for (int b = 0; b < nb; ++b) {
        for (int c = 0; c < cpb; ++c) {
            const int li = b * cpb + c;
            x = conv_block(x, w.encoder[li], p, rng, trace ? &trace->encoder[li] : nullptr);
        }
        pools.push_back(nn::maxpool_with_indices(x, cfg.pool, cfg.rank));
        x = pools.back().pooled;
    }
    std::vector<double> out(w.decoders.size() * vol);
    for (std::size_t d = 0; d < w.decoders.size(); ++d) {
        Tensor y = x;
        for (int i = 0; i < nb * cpb; ++i) {
            const int b = nb - 1 - i / cpb;
            if (i % cpb == 0) y = nn::max_unpool(y, pools[b].indices, pools[b].input_dims);
            y = conv_block(y, w.decoders[d][i], p, rng, trace ? &trace->decoders[d][i] : nullptr);
        }
        std::copy(y.data.begin(), y.data.end(), out.begin() + d * vol);
    }
    if (trace) trace->pools = std::move(pools);
    return out;
}

// Backpropagates dy through one conv block, accumulating parameter gradients; returns d(input).
Tensor conv_block_backward(Tensor dy, const ConvLayer &layer, const ConvTrace &t, ConvLayer &g) {
    const std::size_t S = dy.spatial();
    if (layer.activation) {
        if (!t.mask.empty())
            for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= t.mask[i];
        for (int c = 0; c < dy.channels; ++c) {
            const double a = layer.slope[c];
            double ga = 0.0;
            for (std::size_t i = 0; i < S; ++i) {
                const std::size_t k = c * S + i;
                const double z = t.z[k];
                if (!(z > 0.0)) {
                    ga += z * dy.data[k];
                    dy.data[k] *= a;
                }
            }
            g.slope[c] += ga;
        }
    }
    const auto K = static_cast<Eigen::Index>(layer.in * layer.kernel_volume());
    const auto Si = static_cast<Eigen::Index>(S);
    Map<const RowMat> dY(dy.data.data(), layer.out, Si);
    Map<const RowMat> C(t.col.data(), K, Si);
    Map<RowMat> dW(g.weight.data(), layer.out, K);
    dW.noalias() += dY * C.transpose();
    for (int c = 0; c < layer.out; ++c) {
        double sum = 0.0;
        for (const double v : dy.channel(c)) sum += v;
        g.bias[c] += sum;
    }
    Map<const RowMat> Wm(layer.weight.data(), layer.out, K);
    std::vector<double> dcol(std::size_t(K) * S);
    Map<RowMat>(dcol.data(), K, Si).noalias() = Wm.transpose() * dY;
    Tensor dx(layer.in, t.in_dims);
    nn::col2im(dcol, layer.rank, layer.kernel, dx);
    return dx;
}

void check_same_layout(const NetworkWeights &w, const NetworkWeights &g) {
    if (!(w.config == g.config)) throw InvalidArgument("gradient buffer layout does not match the network");
}

} // namespace

std::vector<double> forward(const NetworkWeights &w, std::span<const double> input, DropoutMode dropout) {
    return run_forward(w, input, dropout, nullptr);
}

double l1_loss_and_gradient(const NetworkWeights &w, std::span<const double> input, std::span<const double> target,
                            DropoutMode dropout, NetworkWeights &grad, double scale) {
    check_same_layout(w, grad);
    const NetConfig &cfg = w.config;
    const std::size_t vol = cfg.patch_volume();
    if (target.size() != std::size_t(cfg.decoders) * vol)
        throw InvalidArgument("loss: target must hold one layer per decoder");
    Trace trace;
    const std::vector<double> out = run_forward(w, input, dropout, &trace);
    double loss = 0.0;
    std::vector<double> dout(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = out[i] - target[i];
        loss += std::abs(r);
        dout[i] = r > 0.0 ? scale : (r < 0.0 ? -scale : 0.0);
    }

    const int nb = static_cast<int>(cfg.encoder_features.size()), cpb = cfg.convs_per_block;
    const int s = cfg.patch_size;
    const std::array<int, 3> dims{cfg.rank == 3 ? s : 1, s, s};
    const nn::Pooled &deepest = trace.pools.back();
    Tensor dcode(deepest.pooled.channels, deepest.pooled.dims);
    for (std::size_t d = 0; d < w.decoders.size(); ++d) {
        Tensor dy(1, dims);
        std::copy(dout.begin() + d * vol, dout.begin() + (d + 1) * vol, dy.data.begin());
        for (int i = nb * cpb - 1; i >= 0; --i) {
            dy = conv_block_backward(std::move(dy), w.decoders[d][i], trace.decoders[d][i], grad.decoders[d][i]);
            if (i % cpb == 0) {
                // Gather through the unpooling scatter.
                const nn::Pooled &pl = trace.pools[nb - 1 - i / cpb];
                Tensor dp(pl.pooled.channels, pl.pooled.dims);
                const std::size_t ps = dp.spatial(), ys = dy.spatial();
                for (int c = 0; c < dp.channels; ++c)
                    for (std::size_t k = 0; k < ps; ++k) dp.data[c * ps + k] = dy.data[c * ys + pl.indices[c * ps + k]];
                dy = std::move(dp);
            }
        }
        for (std::size_t k = 0; k < dcode.data.size(); ++k) dcode.data[k] += dy.data[k];
    }
    Tensor dx = std::move(dcode);
    for (int b = nb - 1; b >= 0; --b) {
        const nn::Pooled &pl = trace.pools[b];
        Tensor dpre(dx.channels, pl.input_dims);
        const std::size_t ps = dx.spatial(), ys = dpre.spatial();
        for (int c = 0; c < dx.channels; ++c)
            for (std::size_t k = 0; k < ps; ++k) dpre.data[c * ys + pl.indices[c * ps + k]] += dx.data[c * ps + k];
        dx = std::move(dpre);
        for (int c = cpb - 1; c >= 0; --c) {
            const int li = b * cpb + c;
            dx = conv_block_backward(std::move(dx), w.encoder[li], trace.encoder[li], grad.encoder[li]);
        }
    }
    return loss;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("train: learning_rate must be > 0");
    if (!(decay > 0.0 && decay < 1.0)) throw InvalidArgument("train: decay must be in (0,1)");
    if (epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
    if (!(rmsprop_epsilon > 0.0)) throw InvalidArgument("train: rmsprop_epsilon must be > 0");
    if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
}

TrainResult train(const std::vector<PatchBatch> &batches, const NetConfig &config, const TrainConfig &tc,
                  const EpochCallback &on_epoch) {
    config.validate();
    return train(batches, NetworkWeights::initialize(config, tc.rng_seed), tc, on_epoch);
}

TrainResult train(const std::vector<PatchBatch> &batches, NetworkWeights weights, const TrainConfig &tc,
                  const EpochCallback &on_epoch) {
    tc.validate();
    const NetConfig &cfg = weights.config;
    cfg.validate();
    struct Example {
        std::size_t batch, patch;
    };
    std::vector<Example> examples;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const PatchBatch &pb = batches[b];
        if (!pb.has_targets()) throw InvalidArgument("train: batch without momentum targets");
        if (pb.rank() != cfg.rank) throw InvalidArgument("train: batch rank does not match the network");
        for (int s : pb.grid.spec.size)
            if (s != cfg.patch_size) throw InvalidArgument("train: batch patch size does not match the network");
        for (std::size_t i = 0; i < pb.count(); ++i) examples.push_back({b, i});
    }
    if (examples.empty()) throw InvalidArgument("train: no training patches");

    const double out_values = double(cfg.decoders) * double(cfg.patch_volume());
    NetworkWeights cache = NetworkWeights::zeros(cfg);
    const std::size_t B = static_cast<std::size_t>(tc.batch_size);
    std::vector<NetworkWeights> grads(std::min(B, examples.size()), NetworkWeights::zeros(cfg));
    std::vector<double> losses(grads.size());
    TrainResult result{std::move(weights), {}};
    NetworkWeights &w = result.weights;
    const bool sampled = cfg.dropout_p > 0.0;

    std::vector<std::size_t> order(examples.size());
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(mix_seed(tc.rng_seed, 2 * std::uint64_t(epoch) + 1));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const std::uint64_t epoch_seed = mix_seed(tc.rng_seed, 2 * std::uint64_t(epoch) + 2);
        double epoch_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += B, ++batch_index) {
            const std::size_t n = std::min(B, order.size() - start);
            const double scale = 1.0 / (double(n) * out_values);
            parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t i) {
                NetworkWeights &g = grads[i];
                g.for_each_tensor([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
                const std::size_t pos = start + static_cast<std::size_t>(i);
                const Example &ex = examples[order[pos]];
                const PatchBatch &pb = batches[ex.batch];
                const DropoutMode mode = sampled ? DropoutMode::sample(mix_seed(epoch_seed, pos)) : DropoutMode::off();
                losses[i] = l1_loss_and_gradient(w, pb.input(ex.patch), pb.target(ex.patch), mode, g, scale);
            }, 1);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) batch_loss += losses[i];
            if (!std::isfinite(batch_loss)) throw DivergenceError(epoch, batch_index);
            epoch_sum += batch_loss;
            for (std::size_t i = 1; i < n; ++i) {
                std::vector<std::span<const double>> src;
                grads[i].for_each_tensor([&](std::span<const double> s) { src.push_back(s); });
                std::size_t t = 0;
                grads[0].for_each_tensor([&](std::span<double> s) {
                    for (std::size_t k = 0; k < s.size(); ++k) s[k] += src[t][k];
                    ++t;
                });
            }
            std::vector<std::span<double>> gs, cs;
            grads[0].for_each_tensor([&](std::span<double> s) { gs.push_back(s); });
            cache.for_each_tensor([&](std::span<double> s) { cs.push_back(s); });
            std::size_t t = 0;
            w.for_each_tensor([&](std::span<double> s) {
                for (std::size_t k = 0; k < s.size(); ++k) {
                    const double g = gs[t][k];
                    double &c = cs[t][k];
                    c = tc.decay * c + (1.0 - tc.decay) * g * g;
                    s[k] -= tc.learning_rate * g / (std::sqrt(c) + tc.rmsprop_epsilon);
                }
                ++t;
            });
            if (!w.all_finite()) throw DivergenceError(epoch, batch_index);
        }
        const double mean = epoch_sum / (double(examples.size()) * out_values);
        result.epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return result;
}

// ---------------------------------------------------------------- prediction

Prediction predict_image(const NetworkWeights &w, const ScalarField &moving, const ScalarField &target,
                         const PatchSpec &spec, double threshold, DropoutMode dropout) {
    const NetConfig &cfg = w.config;
    if (moving.geometry().rank() != cfg.rank) throw InvalidArgument("predict: image rank does not match the network");
    for (int s : spec.size)
        if (s != cfg.patch_size) throw InvalidArgument("predict: patch size does not match the network");
    const PatchGrid grid = plan_grid(moving.geometry(), spec);
    const PatchBatch kept = prune(extract(moving, target, grid), threshold);
    const std::size_t out_vol = std::size_t(cfg.decoders) * cfg.patch_volume();
    std::vector<double> predictions(kept.count() * out_vol);
    parallel_for(0, static_cast<std::int64_t>(kept.count()), [&](std::int64_t i) {
        const DropoutMode mode =
            dropout.sampled ? DropoutMode::sample(mix_seed(dropout.seed, kept.indices[i])) : DropoutMode::off();
        const auto out = forward(w, kept.input(i), mode);
        std::copy(out.begin(), out.end(), predictions.begin() + i * out_vol);
    }, 1);
    return {assemble(predictions, kept.indices, grid), grid.count(), kept.count()};
}

} // namespace momshoot
