#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/patch.hpp"

namespace momshoot {

struct NetConfig {
    int rank = 2;
    int patch_size = 15;
    std::vector<int> encoder_features{16, 32};
    int convs_per_block = 3;
    int kernel = 3;
    int pool = 2;
    int decoders = 2;
    double dropout_p = 0.3;

    static NetConfig defaults_for_rank(int rank);
    void validate() const;
    // Spatial extent entering each block, followed by the code extent.
    std::vector<int> block_extents() const;
    std::size_t patch_volume() const;
    std::string serialize() const;
    static NetConfig parse(const std::string &line);
    bool operator==(const NetConfig &) const = default;
};

namespace nn {

// Channel-major feature map; 2D maps use dims {1, H, W}.
struct Tensor {
    int channels = 0;
    std::array<int, 3> dims{1, 1, 1};
    std::vector<double> data;

    Tensor() = default;
    Tensor(int channels, std::array<int, 3> dims, double fill = 0.0);
    std::size_t spatial() const noexcept { return std::size_t(dims[0]) * dims[1] * dims[2]; }
    std::span<double> channel(int c) { return std::span<double>(data).subspan(c * spatial(), spatial()); }
    std::span<const double> channel(int c) const {
        return std::span<const double>(data).subspan(c * spatial(), spatial());
    }
    double &at(int c, int z, int y, int x) { return data[c * spatial() + (std::size_t(z) * dims[1] + y) * dims[2] + x]; }
    double at(int c, int z, int y, int x) const {
        return data[c * spatial() + (std::size_t(z) * dims[1] + y) * dims[2] + x];
    }
};

struct ConvLayer {
    int rank = 2;
    int kernel = 3;
    int in = 0;
    int out = 0;
    bool activation = true;     // PReLU (and dropout) after the convolution
    std::vector<double> weight; // out x in x kernel^rank
    std::vector<double> bias;   // out
    std::vector<double> slope;  // out when activation, else empty

    ConvLayer() = default;
    ConvLayer(int rank, int kernel, int in, int out, bool activation);
    std::size_t kernel_volume() const noexcept;
};

// Zero-padded same-size cross-correlation plus bias.
Tensor conv(const Tensor &x, const ConvLayer &layer);
Tensor prelu(const Tensor &x, std::span<const double> slope);

struct Pooled {
    Tensor pooled;
    std::vector<std::size_t> indices; // per pooled value: flat spatial index of the argmax in its input channel
    std::array<int, 3> input_dims;
};
// Max over pool^rank windows with step `pool`; floor(n / pool) windows per axis; first maximum wins ties.
Pooled maxpool_with_indices(const Tensor &x, int pool, int rank);
// Scatters values to the recorded positions of a tensor with `output_dims`, zeros elsewhere.
Tensor max_unpool(const Tensor &pooled, std::span<const std::size_t> indices, std::array<int, 3> output_dims);

} // namespace nn

struct NetworkWeights {
    NetConfig config;
    std::vector<nn::ConvLayer> encoder;
    std::vector<std::vector<nn::ConvLayer>> decoders;

    // All-zero parameters with the layout fixed by the config.
    static NetworkWeights zeros(const NetConfig &config);
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, PReLU slopes 0.25.
    static NetworkWeights initialize(const NetConfig &config, std::uint64_t seed);

    // Every parameter tensor in declaration order: encoder layers, then each decoder;
    // per layer weight, bias, slope.
    void for_each_tensor(const std::function<void(std::span<double>)> &f);
    void for_each_tensor(const std::function<void(std::span<const double>)> &f) const;
    std::size_t parameter_count() const;
    bool all_finite() const;
};

void write_weights(std::ostream &os, const NetworkWeights &w);
void write_weights(const std::string &path, const NetworkWeights &w);
NetworkWeights read_weights(std::istream &is);
NetworkWeights read_weights(const std::string &path);

// Dropout is either off or sampled from a stream keyed by `seed`.
struct DropoutMode {
    bool sampled = false;
    std::uint64_t seed = 0;

    static DropoutMode off() { return {}; }
    static DropoutMode sample(std::uint64_t seed) { return {true, seed}; }
};

// input: 2 x volume (moving, target). Returns decoders x volume.
std::vector<double> forward(const NetworkWeights &w, std::span<const double> input, DropoutMode dropout = {});

// Sum over output values of |forward - target|, accumulating scale * d(sum)/d(params) into `grad`
// (which must share the layout of `w`).
double l1_loss_and_gradient(const NetworkWeights &w, std::span<const double> input, std::span<const double> target,
                            DropoutMode dropout, NetworkWeights &grad, double scale = 1.0);

struct TrainConfig {
    double learning_rate = 0.0005;
    double decay = 0.1;
    int epochs = 10;
    double rmsprop_epsilon = 1e-8;
    int batch_size = 32;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct TrainResult {
    NetworkWeights weights;
    std::vector<double> epoch_loss; // mean absolute error per output value
};

using EpochCallback = std::function<void(int epoch, double loss)>;

TrainResult train(const std::vector<PatchBatch> &batches, const NetConfig &config, const TrainConfig &tc,
                  const EpochCallback &on_epoch = {});
// Continues from given weights.
TrainResult train(const std::vector<PatchBatch> &batches, NetworkWeights initial, const TrainConfig &tc,
                  const EpochCallback &on_epoch = {});

struct Prediction {
    VectorField m0;
    std::size_t patches = 0;
    std::size_t kept = 0;
};

// plan_grid -> extract -> prune -> forward per kept patch -> assemble.
// Sampled dropout draws each patch from the stream mix_seed(seed, patch index).
Prediction predict_image(const NetworkWeights &w, const ScalarField &moving, const ScalarField &target,
                         const PatchSpec &spec, double threshold, DropoutMode dropout = {});

} // namespace momshoot
