#ifndef PREFLAB_NN_CORE_HPP
#define PREFLAB_NN_CORE_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace preflab {

// Row-major dense matrix of doubles. All training math runs at 64-bit
// precision so cross-seed variance studies are free of precision confounds.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

enum class OutputActivation : int { Identity = 0, Tanh = 1 };

enum class InitScheme : int {
    DataDriven = 0,
    KaimingUniform = 1,
    XavierUniform = 2,
    Orthonormal = 3,
    Zeros = 4,
    Ones = 5,
};

// CLI string forms: data-driven, kaiming-uniform, xavier-uniform,
// orthonormal, zeros, ones. Throws std::invalid_argument on anything else.
InitScheme parse_init_scheme(const std::string& name);
std::string to_string(InitScheme scheme);

// Fully connected net with rectified-linear hidden units and a configurable
// output activation. weights[k] has shape dims[k+1] x dims[k].
struct DenseNet {
    std::vector<int> dims;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    OutputActivation output_activation = OutputActivation::Identity;

    int num_layers() const { return static_cast<int>(weights.size()); }
    int input_dim() const { return dims.front(); }
    int output_dim() const { return dims.back(); }
};

struct ForwardCache {
    // Input is kept either as explicit one-hot indices (ascending) or as a
    // dense vector; exactly one of the two is populated.
    std::vector<int> sparse_input;
    std::vector<double> dense_input;
    std::vector<std::vector<double>> pre;   // pre-activations per layer
    std::vector<std::vector<double>> post;  // activations per layer; back() is the output
};

// Parameter-shaped gradient container.
struct NetGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

NetGrads make_zero_grads(const DenseNet& net);
void zero_grads(NetGrads& grads);
void scale_grads(NetGrads& grads, double factor);

// Weight init for the named scheme. Zeros/Ones apply to biases too; the
// random schemes zero their biases. DataDriven is not a weight scheme here:
// its Eq.-style regression fit lives in the reward model, so asking for it
// directly is an error.
DenseNet init_weights(InitScheme scheme, const std::vector<int>& dims,
                      OutputActivation output_activation, std::mt19937_64& rng);

std::vector<double> forward(const DenseNet& net, std::span<const double> x,
                            ForwardCache* cache = nullptr);

// Same arithmetic as forward() on a one-hot sum input: `active` lists the
// indices whose value is 1. Bit-identical to the dense path.
std::vector<double> forward_sparse(const DenseNet& net, std::span<const int> active,
                                   ForwardCache* cache = nullptr);

// Reverse-mode gradients of the scalar loss whose output gradient is grad_y.
// Accumulates into `grads` (callers zero it when they want a fresh result).
void backward(const DenseNet& net, const ForwardCache& cache,
              std::span<const double> grad_y, NetGrads& grads);
NetGrads backward(const DenseNet& net, const ForwardCache& cache,
                  std::span<const double> grad_y);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    long t = 0;
    std::vector<Matrix> m_w, v_w;
    std::vector<std::vector<double>> m_b, v_b;
};

AdamState make_adam(const DenseNet& net, AdamConfig cfg = {});

// Standard bias-corrected Adam; increments t by exactly one.
void adam_step(DenseNet& net, const NetGrads& grads, AdamState& state);

// Scalar loss of the network output, with its analytic output gradient.
struct ScalarLoss {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> grad;
};

// Compares backward() against central finite differences for every
// parameter and returns the maximum error |g_fd - g_bp| / max(1, |g_fd|,
// |g_bp|). The unit floor makes the result well defined at zero-gradient
// points.
double grad_check(const DenseNet& net, const ScalarLoss& loss,
                  std::span<const double> x, double h = 1e-5);

// Textual checkpoint: layer dims followed by row-major parameter arrays,
// doubles in shortest round-trip form. Debug aid for reproducibility.
void save_checkpoint(const DenseNet& net, std::ostream& out);
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(std::istream& in);
DenseNet load_checkpoint(const std::string& path);

// Splittable seeding: every run owns one root seed and derives independent
// streams from it in a fixed order. Stream ids used by the run loop:
//   0 network weights, 1 environment/agent behavior, 2 query sessions.
inline constexpr std::uint64_t kStreamWeights = 0;
inline constexpr std::uint64_t kStreamEnvironment = 1;
inline constexpr std::uint64_t kStreamQueries = 2;

std::uint64_t derive_stream_seed(std::uint64_t root_seed, std::uint64_t stream);
std::mt19937_64 make_stream_rng(std::uint64_t root_seed, std::uint64_t stream);

}  // namespace preflab

#endif
